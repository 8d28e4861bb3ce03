"""Finite-dimensional domains: boxes with seam identifications.

A ``SeamManifold`` is a closed coordinate box together with optional affine
identifications between opposite facets.  Each seam carries the affine point
map and the linear frame transition used to glue tangent frames across the
identification; generator loops of the fundamental group are declared as
piecewise-linear waypoint paths.  This finitely encodes the domains the
degree computations need: plain boxes (contractible), cylinders, and the
orientation-reversing band with the identification (0, r) ~ (pi, -r).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import minimize_scalar

from .errors import OutOfDomain, SchemaError

FACET_TOL = 1e-9


@dataclass(frozen=True)
class Seam:
    """Affine identification of a source facet with a target facet."""

    source_axis: int
    source_end: str            # "lo" | "hi"
    target_axis: int
    target_end: str
    matrix: np.ndarray         # point map x -> matrix @ x + offset
    offset: np.ndarray
    transition: np.ndarray     # frame transition (derivative of the point map)

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=float) + self.offset

    def apply_inverse(self, x):
        return np.linalg.solve(self.matrix, np.asarray(x, dtype=float) - self.offset)

    def to_json(self):
        return {
            "source": {"axis": self.source_axis, "end": self.source_end},
            "target": {"axis": self.target_axis, "end": self.target_end},
            "map": {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()},
            "transition": self.transition.tolist(),
        }


@dataclass(frozen=True)
class PathLeg:
    """Straight segment, optionally followed by a seam hop to the next leg."""

    start: np.ndarray
    end: np.ndarray
    crossing: np.ndarray | None = None   # frame transition applied at the hop

    @property
    def length(self):
        return float(np.linalg.norm(self.end - self.start))


@dataclass(frozen=True)
class ManifoldPath:
    """Piecewise-linear path through box coordinates with seam crossings."""

    legs: tuple

    @property
    def length(self):
        return sum(leg.length for leg in self.legs)

    def accumulated_transition(self) -> np.ndarray:
        """Ordered product of the crossed frame transitions."""
        d = self.legs[0].start.shape[0]
        acc = np.eye(d)
        for leg in self.legs:
            if leg.crossing is not None:
                acc = leg.crossing @ acc
        return acc

    def point(self, s: float):
        """Point at normalized arc length s in [0, 1]."""
        total = self.length
        if total == 0.0:
            return self.legs[0].start.copy()
        target = min(max(s, 0.0), 1.0) * total
        run = 0.0
        for leg in self.legs:
            if run + leg.length >= target or leg is self.legs[-1]:
                u = 0.0 if leg.length == 0 else (target - run) / leg.length
                return leg.start + u * (leg.end - leg.start)
            run += leg.length
        return self.legs[-1].end.copy()

    def sample(self, s: float):
        """(point, accumulated transition of crossings strictly before s)."""
        total = self.length
        target = min(max(s, 0.0), 1.0) * total
        d = self.legs[0].start.shape[0]
        acc = np.eye(d)
        run = 0.0
        for i, leg in enumerate(self.legs):
            last = i == len(self.legs) - 1
            if run + leg.length >= target or last:
                u = 0.0 if leg.length == 0 else (target - run) / leg.length
                u = min(u, 1.0)
                return leg.start + u * (leg.end - leg.start), acc
            run += leg.length
            if leg.crossing is not None:
                acc = leg.crossing @ acc
        return self.legs[-1].end.copy(), acc

    def reversed(self) -> "ManifoldPath":
        legs = []
        prev_cross = None
        for leg in reversed(self.legs):
            cross = None if prev_cross is None else np.linalg.inv(prev_cross)
            legs.append(PathLeg(leg.end.copy(), leg.start.copy(), cross))
            prev_cross = leg.crossing
        return ManifoldPath(tuple(legs))


@dataclass(frozen=True)
class SeamManifold:
    """Box domain with seam identifications and declared generator loops."""

    box: np.ndarray                       # (dim, 2) closed intervals
    seams: tuple = ()
    generators: tuple = ()                # tuples of waypoints (arrays)

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or (box[:, 1] <= box[:, 0]).any():
            raise SchemaError("box must be a list of [lo, hi] intervals with lo < hi")
        object.__setattr__(self, "box", box)
        for seam in self.seams:
            if abs(np.linalg.det(seam.transition)) < 1e-12:
                raise SchemaError("seam frame transition must be invertible")
            self._check_seam_bijection(seam)
        for gen in self.generators:
            if not self._loop_closes(gen):
                raise SchemaError("generator loop does not close after seam identification")

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))

    def _facet_value(self, axis, end):
        return self.box[axis, 0] if end == "lo" else self.box[axis, 1]

    def _check_seam_bijection(self, seam):
        """Sampled check that the point map sends source facet onto target facet."""
        rng = np.random.default_rng(7)
        for _ in range(16):
            x = self.box[:, 0] + rng.random(self.dim) * (self.box[:, 1] - self.box[:, 0])
            x[seam.source_axis] = self._facet_value(seam.source_axis, seam.source_end)
            y = seam.apply(x)
            tv = self._facet_value(seam.target_axis, seam.target_end)
            if abs(y[seam.target_axis] - tv) > 1e-7 * (1 + abs(tv)):
                raise SchemaError(
                    f"seam map sends {x} to {y}, off the target facet "
                    f"(axis {seam.target_axis} {seam.target_end})"
                )
            if not self.contains(y, tol=1e-7):
                raise SchemaError(f"seam image {y} leaves the box")

    def contains(self, x, tol=FACET_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        scale = np.maximum(1.0, np.abs(self.box).max(axis=1))
        return bool(
            (x >= self.box[:, 0] - tol * scale).all()
            and (x <= self.box[:, 1] + tol * scale).all()
        )

    def require_inside(self, x):
        if not self.contains(x):
            raise OutOfDomain(f"point {np.asarray(x)} outside the domain box")

    def on_facet(self, x, axis, end, tol=1e-7) -> bool:
        v = self._facet_value(axis, end)
        return abs(float(x[axis]) - v) <= tol * (1 + abs(v))

    def normalize(self, x) -> np.ndarray:
        """Canonical representative: pull target-facet points back through seams."""
        x = np.asarray(x, dtype=float).copy()
        for seam in self.seams:
            if self.on_facet(x, seam.target_axis, seam.target_end):
                x = seam.apply_inverse(x)
        return x

    def same_point(self, x, y, tol) -> bool:
        return bool(np.linalg.norm(self.normalize(x) - self.normalize(y)) <= tol)

    def _loop_closes(self, waypoints) -> bool:
        start, end = np.asarray(waypoints[0]), np.asarray(waypoints[-1])
        if np.allclose(start, end):
            return True
        for seam in self.seams:
            if self.on_facet(end, seam.target_axis, seam.target_end) and np.allclose(
                seam.apply_inverse(end), start, atol=1e-7
            ):
                return True
            if self.on_facet(end, seam.source_axis, seam.source_end) and np.allclose(
                seam.apply(end), start, atol=1e-7
            ):
                return True
        return False

    # -- paths --------------------------------------------------------------

    def connect(self, x, y) -> ManifoldPath:
        """Deterministic path from x to y: the shortest among the direct
        segment and single-crossing routes through each declared seam."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.require_inside(x)
        self.require_inside(y)
        candidates = [ManifoldPath((PathLeg(x, y),))]
        for seam in self.seams:
            candidates.append(self._route_through(x, y, seam, forward=True))
            candidates.append(self._route_through(x, y, seam, forward=False))
        candidates = [c for c in candidates if c is not None]
        return min(candidates, key=lambda p: p.length)

    def _route_through(self, x, y, seam, forward) -> ManifoldPath | None:
        """Two-leg route crossing the seam once (forward: source -> target)."""
        d = self.dim
        axis = seam.source_axis if forward else seam.target_axis
        end = seam.source_end if forward else seam.target_end
        facet_val = self._facet_value(axis, end)
        free = [i for i in range(d) if i != axis]
        if not free:
            return None
        hop = seam.apply if forward else seam.apply_inverse
        trans = seam.transition if forward else np.linalg.inv(seam.transition)

        def cost(params):
            p = np.empty(d)
            p[axis] = facet_val
            p[free] = params
            q = hop(p)
            return np.linalg.norm(x - p) + np.linalg.norm(q - y)

        if len(free) == 1:
            lo, hi = self.box[free[0]]
            res = minimize_scalar(lambda c: cost(np.array([c])), bounds=(lo, hi), method="bounded")
            best = np.array([res.x])
        else:
            # coordinate-wise bounded search, refined once
            best = np.array([(self.box[i, 0] + self.box[i, 1]) / 2 for i in free])
            for _ in range(2):
                for j, i in enumerate(free):
                    lo, hi = self.box[i]
                    res = minimize_scalar(
                        lambda c: cost(np.concatenate([best[:j], [c], best[j + 1 :]])),
                        bounds=(lo, hi),
                        method="bounded",
                    )
                    best[j] = res.x
        p = np.empty(d)
        p[axis] = facet_val
        p[free] = best
        q = hop(p)
        if not self.contains(q, tol=1e-6):
            return None
        return ManifoldPath((PathLeg(x, p, trans.copy()), PathLeg(q, y)))

    def generator_loops(self) -> list:
        """Declared pi_1 generators as closed ManifoldPaths."""
        loops = []
        for waypoints in self.generators:
            loops.append(self.path_from_waypoints(waypoints))
        return loops

    def path_from_waypoints(self, waypoints) -> ManifoldPath:
        """Straight legs between waypoints; a consecutive pair that is a seam
        identification becomes a hop (frame transition on the previous leg)
        instead of a leg.  A final hop closing the loop is never folded: the
        holonomy is read off the endpoint operators instead."""
        pts = [np.asarray(w, dtype=float) for w in waypoints]
        legs = []
        for i in range(len(pts) - 1):
            a, b = pts[i], pts[i + 1]
            trans = None if np.allclose(a, b) else self._hop_transition(a, b)
            if trans is not None:
                if legs:
                    last = legs.pop()
                    legs.append(PathLeg(last.start, last.end, trans))
                continue
            legs.append(PathLeg(a, b, None))
        return ManifoldPath(tuple(legs))

    def _hop_transition(self, at, nxt):
        """Frame transition when the path jumps from `at` to its seam image."""
        for seam in self.seams:
            if self.on_facet(at, seam.source_axis, seam.source_end) and np.allclose(
                seam.apply(at), nxt, atol=1e-7
            ):
                return seam.transition.copy()
            if self.on_facet(at, seam.target_axis, seam.target_end) and np.allclose(
                seam.apply_inverse(at), nxt, atol=1e-7
            ):
                return np.linalg.inv(seam.transition)
        return None

    # -- constructors and serialization --------------------------------------

    def to_json(self):
        return {
            "dim": self.dim,
            "box": self.box.tolist(),
            "seams": [s.to_json() for s in self.seams],
            "generators": [[w.tolist() for w in gen] for gen in self.generators],
        }

    def __eq__(self, other):
        if not isinstance(other, SeamManifold):
            return NotImplemented
        if self.dim != other.dim or not np.allclose(self.box, other.box):
            return False
        if len(self.seams) != len(other.seams):
            return False
        for s, t in zip(self.seams, other.seams):
            if (
                (s.source_axis, s.source_end, s.target_axis, s.target_end)
                != (t.source_axis, t.source_end, t.target_axis, t.target_end)
                or not np.allclose(s.matrix, t.matrix)
                or not np.allclose(s.offset, t.offset)
                or not np.allclose(s.transition, t.transition)
            ):
                return False
        return True

    def __hash__(self):
        return hash((self.dim, self.box.tobytes(), len(self.seams)))

    @property
    def is_contractible(self) -> bool:
        return len(self.seams) == 0

    @property
    def is_circle_type(self) -> bool:
        """One seam, one declared generator: homotopy type of a circle."""
        return len(self.seams) == 1 and len(self.generators) == 1

    @property
    def is_supported_homotopy_type(self) -> bool:
        return self.is_contractible or self.is_circle_type


def box_manifold(bounds) -> SeamManifold:
    return SeamManifold(np.asarray(bounds, dtype=float))


def band_manifold(r_extent: float = 8.0, extra_axes=(), generator_extra=None) -> SeamManifold:
    """The orientation-reversing band [0, pi] x [-r, r] (optionally crossed
    with extra interval axes), with the identification (0, r) ~ (pi, -r) and
    its standard generator loop.  ``generator_extra`` places the loop at the
    given coordinates on the extra axes (defaults to their midpoints)."""
    pi = float(np.pi)
    dims = 2 + len(extra_axes)
    bounds = [[0.0, pi], [-r_extent, r_extent]] + [list(ax) for ax in extra_axes]
    matrix = np.eye(dims)
    matrix[1, 1] = -1.0
    offset = np.zeros(dims)
    offset[0] = pi
    seam = Seam(0, "lo", 0, "hi", matrix, offset, matrix.copy())
    if generator_extra is None:
        generator_extra = [0.5 * (lo + hi) for lo, hi in extra_axes]
    extra = [float(c) for c in generator_extra]
    start = np.array([0.0, -pi] + extra)
    end = np.array([pi, pi] + extra)
    return SeamManifold(np.asarray(bounds), (seam,), ((start, end),))


def cylinder_manifold(length: float, r_extent: float = 8.0, flip: bool = False) -> SeamManifold:
    """[0, L] x [-r, r] with the ends identified (flip=True reverses the
    transverse frame, giving the band with circumference L)."""
    matrix = np.eye(2)
    if flip:
        matrix[1, 1] = -1.0
    offset = np.array([length, 0.0])
    seam = Seam(0, "lo", 0, "hi", matrix, offset, matrix.copy())
    mid = 1.0 if flip else 0.0
    start = np.array([0.0, -mid])
    end = np.array([length, mid])
    return SeamManifold(
        np.array([[0.0, length], [-r_extent, r_extent]]), (seam,), ((start, end),)
    )


def manifold_from_dict(data: dict) -> SeamManifold:
    """Build a SeamManifold from the TOML [manifold] table."""
    try:
        box = np.asarray(data["box"], dtype=float)
    except KeyError:
        raise SchemaError("[manifold] needs a box = [[lo, hi], ...]") from None
    dim = int(data.get("dim", box.shape[0]))
    if box.shape != (dim, 2):
        raise SchemaError(f"box shape {box.shape} does not match dim {dim}")
    seams = []
    for s in data.get("seams", []):
        try:
            seams.append(
                Seam(
                    int(s["source"]["axis"]),
                    str(s["source"]["end"]),
                    int(s["target"]["axis"]),
                    str(s["target"]["end"]),
                    np.asarray(s["map"]["matrix"], dtype=float),
                    np.asarray(s["map"]["offset"], dtype=float),
                    np.asarray(s["transition"], dtype=float),
                )
            )
        except KeyError as exc:
            raise SchemaError(f"seam table missing key {exc}") from None
    generators = []
    for g in data.get("generators", []):
        waypoints = g["waypoints"] if isinstance(g, dict) else g
        generators.append(tuple(np.asarray(w, dtype=float) for w in waypoints))
    return SeamManifold(box, tuple(seams), tuple(generators))
