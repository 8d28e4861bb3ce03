"""Degree invariants: preimage counting, parity transport, |deg|.

At index zero the preimage of a regular value is a finite set; its parity
is the mod-2 degree, and for orientable maps the points split into two
classes by transporting the differential's determinant sign along
connecting paths, giving the absolute degree as the difference of class
sizes.  Root finding is a multistart damped Newton over a uniform seed
grid whose solution count must be stable under one grid refinement.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    IndexNonZero,
    NoRegularValueFound,
    NotOrientable,
    SingularEndpoint,
    UnstableCount,
)
from .geometry import ManifoldPath, SeamManifold
from .maps import MapSpec, require_proper
from .operators import ComputableOperator
from .paths import OperatorPath, Parity, find_crossings, parity

TAU_ROOT = 1e-10
TAU_REG = 1e-8
DELTA_SEP_REL = 1e-6
DEFAULT_GRID = 32
DEFAULT_ATTEMPTS = 64
NEWTON_MAX_ITER = 60
LOOP_SAMPLES = 129


@dataclass
class PreimagePoint:
    position: np.ndarray
    head: np.ndarray                 # Jacobian at the point
    residual: float
    min_singular: float

    @property
    def operator(self) -> ComputableOperator:
        return ComputableOperator(self.head)


@dataclass
class PreimageSet:
    """Solutions of F(x) = y with their differentials."""

    value: np.ndarray
    points: list
    grid: int
    refined_grid: int

    @property
    def residuals(self):
        return [p.residual for p in self.points]

    def count(self) -> int:
        return len(self.points)

    def is_regular(self, tau: float = TAU_REG) -> bool:
        return all(p.min_singular > tau for p in self.points)

    def to_json(self):
        return {
            "value": list(self.value),
            "count": self.count(),
            "points": [
                {
                    "x": list(p.position),
                    "residual": p.residual,
                    "min_singular": p.min_singular,
                }
                for p in self.points
            ],
            "verified_grid": self.refined_grid,
        }


def _seed_grid(domain: SeamManifold, per_axis: int) -> np.ndarray:
    axes = [
        np.linspace(lo, hi, per_axis + 1)[:-1] + (hi - lo) / (2 * per_axis)
        for lo, hi in domain.box
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _run_newton(spec: MapSpec, y, seeds, jobs: int = 1):
    lo, hi = spec.domain.box[:, 0], spec.domain.box[:, 1]
    args = (spec.tape, spec.f_indices, spec.j_indices)
    if jobs <= 1 or seeds.shape[0] < 4 * jobs:
        return _kernels.newton_batch(*args, seeds, y, lo, hi, NEWTON_MAX_ITER, TAU_ROOT)
    chunks = np.array_split(seeds, jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(
            pool.map(
                lambda c: _kernels.newton_batch(*args, c, y, lo, hi, NEWTON_MAX_ITER, TAU_ROOT),
                chunks,
            )
        )
    pts = np.concatenate([r[0] for r in results])
    ok = np.concatenate([r[1] for r in results])
    return pts, ok


def _dedup(domain: SeamManifold, points: np.ndarray, sep: float) -> np.ndarray:
    """Deduplicate at `sep`, identifying seam facet representatives first."""
    if points.shape[0] == 0:
        return points
    normalized = np.stack([domain.normalize(p) for p in points])
    order = np.lexsort(normalized.T[::-1])
    normalized = normalized[order]
    reps = []
    for p in normalized:
        if all(np.linalg.norm(p - q) > sep for q in reps):
            reps.append(p)
    return np.asarray(reps)


def solve_preimage(
    spec: MapSpec, y, grid: int | None = None, jobs: int = 1
) -> PreimageSet:
    """All solutions of F(x) = y in the domain box; the count must be stable
    under one x2 grid refinement."""
    if spec.index != 0:
        raise IndexNonZero(
            f"solve_preimage needs an index-0 map, got index {spec.index}; "
            "positive-index maps go to pontryagin_inspect"
        )
    y = np.asarray(y, dtype=float)
    per_axis = grid or DEFAULT_GRID
    sep = DELTA_SEP_REL * spec.domain.diameter

    counts = []
    solutions = None
    for depth, n in enumerate((per_axis, per_axis * 2)):
        seeds = _seed_grid(spec.domain, n)
        pts, ok = _run_newton(spec, y, seeds, jobs=jobs)
        pts = pts[ok]
        inside = np.array([spec.domain.contains(p, tol=1e-9) for p in pts], dtype=bool)
        pts = pts[inside] if pts.shape[0] else pts
        uniq = _dedup(spec.domain, pts, sep)
        counts.append(uniq.shape[0])
        solutions = uniq
    if counts[0] != counts[1]:
        raise UnstableCount(
            f"preimage count changed under grid refinement: {counts[0]} -> {counts[1]}"
        )

    points = []
    for x in solutions:
        head = spec.jacobian_at(x)
        res = float(np.linalg.norm(spec.evaluate_batch(x[None, :])[0] - y))
        smin = float(np.linalg.svd(head, compute_uv=False).min()) if head.size else 0.0
        points.append(PreimagePoint(x, head, res, smin))
    return PreimageSet(y, points, per_axis, per_axis * 2)


def _preimage_cloud(spec: MapSpec, y, grid: int | None = None) -> np.ndarray:
    """Converged, deduplicated solution samples for any index >= 0 map
    (Gauss-Newton pseudo-inverse steps when underdetermined)."""
    y = np.asarray(y, dtype=float)
    per_axis = grid or max(8, DEFAULT_GRID // (2 ** max(spec.dim - 2, 0)))
    seeds = _seed_grid(spec.domain, per_axis)
    lo, hi = spec.domain.box[:, 0], spec.domain.box[:, 1]
    pts, ok = _kernels.newton_batch(
        spec.tape, spec.f_indices, spec.j_indices, seeds, y, lo, hi,
        NEWTON_MAX_ITER, TAU_ROOT, force_numpy=spec.index != 0,
    )
    pts = pts[ok]
    if pts.shape[0] == 0:
        return pts.reshape(0, spec.dim)
    inside = np.array([spec.domain.contains(p, tol=1e-9) for p in pts])
    pts = pts[inside]
    sep = DELTA_SEP_REL * spec.domain.diameter
    if spec.index > 0:
        sep = max(sep, spec.domain.diameter / 400.0)
    return _dedup(spec.domain, pts, sep)


def sample_regular_value(
    spec: MapSpec,
    region=None,
    attempts: int = DEFAULT_ATTEMPTS,
    rng=None,
    grid: int | None = None,
    jobs: int = 1,
):
    """Draw values until one passes the regularity margin at every
    discovered preimage point.  Returns (value, PreimageSet | cloud)."""
    if spec.index < 0:
        raise IndexNonZero("regular-value sampling needs index >= 0")
    rng = np.random.default_rng(0) if rng is None else rng
    region = np.asarray(region if region is not None else spec.default_value_region(), dtype=float)
    nearest_failure = None
    for _ in range(attempts):
        y = region[:, 0] + rng.random(spec.codomain_dim) * (region[:, 1] - region[:, 0])
        if spec.index == 0:
            try:
                pre = solve_preimage(spec, y, grid=grid, jobs=jobs)
            except UnstableCount as exc:
                nearest_failure = (y, str(exc))
                continue
            bad = [p for p in pre.points if p.min_singular <= TAU_REG]
            if bad:
                nearest_failure = (y, f"min singular value {bad[0].min_singular:.3e}")
                continue
            if any(p.residual > 100 * TAU_ROOT for p in pre.points):
                nearest_failure = (y, "residual tolerance")
                continue
            return y, pre
        cloud = _preimage_cloud(spec, y, grid=grid)
        if cloud.shape[0]:
            smins = [
                float(np.linalg.svd(spec.jacobian_at(x), compute_uv=False).min())
                for x in cloud
            ]
            if min(smins) <= TAU_REG:
                nearest_failure = (y, f"surjectivity margin {min(smins):.3e}")
                continue
        return y, cloud
    raise NoRegularValueFound(
        f"no regular value in {attempts} attempts; nearest failure: {nearest_failure}"
    )


def deg2(
    spec: MapSpec,
    seed: int = 0,
    grid: int | None = None,
    checks: int = 3,
    jobs: int = 1,
) -> int:
    """Caccioppoli-Smale mod-2 degree: preimage parity at a regular value,
    re-checked for value independence."""
    if spec.index != 0:
        raise IndexNonZero(f"deg2 needs index 0, got {spec.index}")
    require_proper(spec)
    rng = np.random.default_rng(seed)
    parities = []
    for _ in range(max(1, checks)):
        _, pre = sample_regular_value(spec, rng=rng, grid=grid, jobs=jobs)
        parities.append(pre.count() % 2)
    if len(set(parities)) != 1:
        raise UnstableCount(f"mod-2 count disagrees across regular values: {parities}")
    return parities[0]


# ---------------------------------------------------------------------------
# parity transport along manifold paths


def transport_operator_path(
    spec: MapSpec, path: ManifoldPath, samples: int = LOOP_SAMPLES
) -> OperatorPath:
    """The differential along a manifold path as an index-0 operator path.

    Frame transitions of interior seam crossings are folded in (keeping the
    head continuous); a final closing identification is never folded, so a
    loop's holonomy shows up in the endpoint operators.
    """
    if spec.index != 0:
        raise IndexNonZero("parity transport needs an index-0 map")

    def head(t: float) -> np.ndarray:
        x, acc = path.sample(float(t))
        return spec.jacobian_at(x) @ acc

    ts = np.linspace(0.0, 1.0, samples)
    heads = np.stack([head(t) for t in ts])
    return OperatorPath(ts, heads, refiner=head)


def loop_parity(spec: MapSpec, loop: ManifoldPath, samples: int = LOOP_SAMPLES) -> Parity:
    return parity(transport_operator_path(spec, loop, samples))


def orientation_signature(spec: MapSpec, samples: int = LOOP_SAMPLES) -> list:
    """Parity of the differential along each declared generator loop.

    A loop whose basepoint is critical is retried from shifted basepoints
    before giving up.
    """
    sig = []
    for loop in spec.domain.generator_loops():
        sig.append(int(_loop_parity_shifted(spec, loop, samples)))
    return sig


def _loop_parity_shifted(spec: MapSpec, loop: ManifoldPath, samples: int) -> Parity:
    try:
        return loop_parity(spec, loop, samples)
    except SingularEndpoint:
        pass
    holonomy = _loop_holonomy(spec.domain, loop)
    for shift in (0.13, 0.31, 0.47, 0.71):
        op_path = _shifted_loop_path(spec, loop, holonomy, shift, samples)
        try:
            return parity(op_path)
        except SingularEndpoint:
            continue
    raise SingularEndpoint(
        "generator loop basepoint (and shifted basepoints) are critical points"
    )


def _loop_holonomy(domain: SeamManifold, loop: ManifoldPath) -> np.ndarray:
    """Accumulated transition around the loop including the closing hop."""
    acc = loop.accumulated_transition()
    start = loop.legs[0].start
    end = loop.legs[-1].end
    if not np.allclose(start, end):
        closing = domain._hop_transition(end, start)
        if closing is not None:
            acc = closing @ acc
    return acc


def _shifted_loop_path(spec, loop, holonomy, shift, samples) -> OperatorPath:
    """Operator path around the loop starting at parameter `shift`."""
    x0, acc0 = loop.sample(shift)
    acc0_inv = np.linalg.inv(acc0)

    def head(u: float) -> np.ndarray:
        s = shift + u
        if s <= 1.0:
            x, acc = loop.sample(s)
            rel = acc @ acc0_inv
        else:
            x, acc = loop.sample(s - 1.0)
            rel = acc @ holonomy @ acc0_inv
        return spec.jacobian_at(x) @ rel

    ts = np.linspace(0.0, 1.0, samples)
    heads = np.stack([head(t) for t in ts])
    return OperatorPath(ts, heads, refiner=head)


def generator_crossings(spec: MapSpec, samples: int = LOOP_SAMPLES):
    """Per-generator parity with located determinant sign crossings."""
    out = []
    for loop in spec.domain.generator_loops():
        op_path = transport_operator_path(spec, loop, samples)
        p = parity(op_path)
        locations = find_crossings(op_path, subdivisions=max(256, samples))
        out.append({"parity": int(p), "crossings": locations})
    return out


# ---------------------------------------------------------------------------
# absolute degree


def point_pair_parity(spec: MapSpec, x0, x1, samples: int = 33) -> Parity:
    """Parity of df transported along the canonical connecting path."""
    path = spec.domain.connect(np.asarray(x0, float), np.asarray(x1, float))
    return parity(transport_operator_path(spec, path, samples))


def abs_degree(
    spec: MapSpec, seed: int = 0, grid: int | None = None, jobs: int = 1
) -> int:
    """Absolute degree ||X+| - |X-|| of an orientable index-0 map."""
    if spec.index != 0:
        raise IndexNonZero(f"abs_degree needs index 0, got {spec.index}")
    require_proper(spec)
    sig = orientation_signature(spec)
    if any(sig):
        raise NotOrientable(
            f"orientation signature {sig} is nonzero; use deg2 for this map"
        )
    rng = np.random.default_rng(seed)
    _, pre = sample_regular_value(spec, rng=rng, grid=grid, jobs=jobs)
    return abs_degree_of_preimage(spec, pre)


def abs_degree_of_preimage(spec: MapSpec, pre: PreimageSet) -> int:
    if pre.count() == 0:
        return 0
    base = pre.points[0]
    plus, minus = 1, 0
    for p in pre.points[1:]:
        eps = point_pair_parity(spec, base.position, p.position)
        if eps == Parity.TRIVIAL:
            plus += 1
        else:
            minus += 1
    return abs(plus - minus)


# ---------------------------------------------------------------------------
# positive index: Pontryagin data for inspection


@dataclass
class PontryaginReport:
    value: np.ndarray
    points: np.ndarray
    kernel_dims: list
    residuals: list
    expected_kernel_dim: int

    @property
    def all_kernel_dims_match(self) -> bool:
        return all(k == self.expected_kernel_dim for k in self.kernel_dims)

    def to_json(self):
        return {
            "value": list(self.value),
            "count": int(self.points.shape[0]),
            "kernel_dims": self.kernel_dims,
            "expected_kernel_dim": self.expected_kernel_dim,
            "max_residual": max(self.residuals, default=0.0),
        }


def pontryagin_inspect(
    spec: MapSpec, y, samples: int = 200, seed: int = 0, grid: int | None = None
) -> PontryaginReport:
    """Sample the preimage manifold of a positive-index map: a point cloud
    grown by continuation along the kernel directions, each point verified
    to carry an n-dimensional kernel.  Inspection only."""
    if spec.index < 1:
        raise IndexNonZero(f"pontryagin_inspect needs index >= 1, got {spec.index}")
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    cloud = list(_preimage_cloud(spec, y, grid=grid))
    step = spec.domain.diameter / 120.0
    lo, hi = spec.domain.box[:, 0], spec.domain.box[:, 1]
    tries = 0
    while cloud and len(cloud) < samples and tries < 20 * samples:
        tries += 1
        x = cloud[rng.integers(len(cloud))]
        J = spec.jacobian_at(x)
        _, s, vt = np.linalg.svd(J)
        null = vt[np.sum(s > TAU_REG) :]
        if null.shape[0] == 0:
            break
        direction = null.T @ rng.normal(size=null.shape[0])
        norm = np.linalg.norm(direction)
        if norm == 0:
            continue
        seed_pt = np.clip(x + step * direction / norm, lo, hi)
        pts, ok = _kernels.newton_batch(
            spec.tape, spec.f_indices, spec.j_indices, seed_pt[None, :], y,
            lo, hi, 20, TAU_ROOT, force_numpy=True,
        )
        if ok[0] and spec.domain.contains(pts[0], tol=1e-9):
            p = pts[0]
            if all(np.linalg.norm(p - q) > step / 4 for q in cloud):
                cloud.append(p)
    points = np.asarray(cloud) if cloud else np.zeros((0, spec.dim))
    kernel_dims, residuals = [], []
    for x in points:
        J = spec.jacobian_at(x)
        s = np.linalg.svd(J, compute_uv=False) if J.size else np.zeros(0)
        rank = int(np.sum(s > TAU_REG))
        kernel_dims.append(spec.dim - rank)
        residuals.append(float(np.linalg.norm(spec.evaluate_batch(x[None, :])[0] - y)))
    return PontryaginReport(y, points, kernel_dims, residuals, spec.index)
