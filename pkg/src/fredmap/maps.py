"""Cylinder maps: an expression-defined finite part plus an identity tail.

A map specification couples a ``SeamManifold`` domain (dimension d), k
smooth component expressions in the variables ``x1..xd``, and an optional
properness certificate.  The induced map on the sequence model acts by the
components on the head coordinates and by the identity on the tail, so its
differential at any point is a head-plus-tail operator with head equal to
the (symbolically computed) Jacobian, and its Fredholm index is d - k
everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import _kernels
from .errors import (
    CertificateViolated,
    PropernessUncertified,
    SchemaError,
    SeamIncompatibility,
    SmoothnessDomainError,
)
from .expr import Expr, compile_tape, guarded_subexpressions, parse_expression
from .geometry import SeamManifold, manifold_from_dict
from .operators import ComputableOperator

TAU_SEAM = 1e-9
TAU_FD = 1e-6
SEAM_SAMPLES = 100
SMOOTHNESS_GRID = 9
DEFAULT_VALUE_SPAN = 2.0


@dataclass(frozen=True)
class PropernessCertificate:
    """Radius function R(rho) and margin: asserts |F(x)| >= rho when |x| >= R(rho)."""

    radius: Expr
    margin: float
    radius_text: str = ""

    def radius_at(self, rho: float) -> float:
        return float(self.radius.evaluate({"rho": float(rho)}))


@dataclass
class CertificateReport:
    passed: bool
    rungs: list
    worst_margin: float
    witness: np.ndarray | None = None

    def to_json(self):
        return {
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "rungs": self.rungs,
            "witness": None if self.witness is None else list(self.witness),
        }


@dataclass(frozen=True, eq=False)
class MapSpec:
    """Validated cylinder map: domain, components, and certificates."""

    domain: SeamManifold
    codomain_dim: int
    components: tuple
    properness: PropernessCertificate | None = None
    name: str = ""
    value_region: np.ndarray | None = None
    component_texts: tuple = ()

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def index(self) -> int:
        return self.dim - self.codomain_dim

    @property
    def variables(self) -> list:
        return [f"x{i + 1}" for i in range(self.dim)]

    @cached_property
    def jacobian_exprs(self):
        return tuple(
            tuple(comp.diff(v).simplified() for v in self.variables)
            for comp in self.components
        )

    @cached_property
    def tape(self):
        flat = list(self.components)
        for row in self.jacobian_exprs:
            flat.extend(row)
        return compile_tape(flat, self.variables)

    @property
    def f_indices(self):
        return np.arange(self.codomain_dim, dtype=np.int64)

    @property
    def j_indices(self):
        k, d = self.codomain_dim, self.dim
        return np.arange(k, k + k * d, dtype=np.int64)

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.domain.require_inside(x)
        out = _kernels.eval_batch(self.tape, x[None, :])[0]
        return out[: self.codomain_dim].copy()

    def evaluate_batch(self, X) -> np.ndarray:
        out = _kernels.eval_batch(self.tape, X)
        return out[:, : self.codomain_dim]

    def jacobian_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = _kernels.eval_batch(self.tape, x[None, :])[0]
        return out[self.codomain_dim :].reshape(self.codomain_dim, self.dim)

    def jacobian_batch(self, X) -> np.ndarray:
        out = _kernels.eval_batch(self.tape, X)
        return out[:, self.codomain_dim :].reshape(-1, self.codomain_dim, self.dim)

    def differential(self, x) -> ComputableOperator:
        self.domain.require_inside(x)
        return ComputableOperator(self.jacobian_at(x))

    def fd_jacobian(self, x, h: float = 1e-6) -> np.ndarray:
        """Central finite differences; the independent oracle for the
        symbolic Jacobian."""
        x = np.asarray(x, dtype=float)
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            fp = _kernels.eval_batch(self.tape, (x + e)[None, :])[0][: self.codomain_dim]
            fm = _kernels.eval_batch(self.tape, (x - e)[None, :])[0][: self.codomain_dim]
            cols.append((fp - fm) / (2 * h))
        return np.stack(cols, axis=1)

    def default_value_region(self) -> np.ndarray:
        if self.value_region is not None:
            return self.value_region
        k = self.codomain_dim
        return np.stack(
            [-DEFAULT_VALUE_SPAN * np.ones(k), DEFAULT_VALUE_SPAN * np.ones(k)], axis=1
        )

    def to_json(self):
        data = {
            "name": self.name,
            "manifold": self.domain.to_json(),
            "codomain_dim": self.codomain_dim,
            "components": list(self.component_texts)
            if self.component_texts
            else [str(c) for c in self.components],
            "index": self.index,
        }
        if self.properness is not None:
            data["properness"] = {
                "radius": self.properness.radius_text or str(self.properness.radius),
                "margin": self.properness.margin,
            }
        return data


# ---------------------------------------------------------------------------
# parsing and validation


def parse_map(text: str, name: str = "") -> MapSpec:
    """Parse a TOML map description and validate it."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"TOML parse error: {exc}") from None
    return map_from_dict(data, name=name)


def parse_map_file(path) -> MapSpec:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: TOML parse error: {exc}") from None
    return map_from_dict(data, name=data.get("name", str(path)))


def map_from_dict(data: dict, name: str = "") -> MapSpec:
    if "manifold" not in data:
        raise SchemaError("missing [manifold] table")
    if "map" not in data:
        raise SchemaError("missing [map] table")
    domain = manifold_from_dict(data["manifold"])
    table = data["map"]
    texts = table.get("components")
    if texts is None:
        raise SchemaError("[map] needs components = [\"expr\", ...]")
    codomain_dim = int(table.get("codomain_dim", len(texts)))
    if codomain_dim != len(texts):
        raise SchemaError(
            f"codomain_dim {codomain_dim} != number of components {len(texts)}"
        )
    variables = [f"x{i + 1}" for i in range(domain.dim)]
    components = tuple(
        parse_expression(t, variables, line=i + 1) for i, t in enumerate(texts)
    )

    properness = None
    if "properness" in data:
        ptab = data["properness"]
        radius_text = ptab.get("radius")
        if radius_text is None:
            raise SchemaError("[properness] needs radius = \"expr in rho\"")
        radius = parse_expression(radius_text, ["rho"])
        properness = PropernessCertificate(
            radius=radius,
            margin=float(ptab.get("margin", 0.1)),
            radius_text=radius_text,
        )

    value_region = None
    if "degree" in data and "value_region" in data["degree"]:
        value_region = np.asarray(data["degree"]["value_region"], dtype=float)
        if value_region.shape != (codomain_dim, 2):
            raise SchemaError(
                f"value_region shape {value_region.shape} != ({codomain_dim}, 2)"
            )

    spec = MapSpec(
        domain=domain,
        codomain_dim=codomain_dim,
        components=components,
        properness=properness,
        name=name or data.get("name", ""),
        value_region=value_region,
        component_texts=tuple(texts),
    )
    check_smoothness(spec)
    check_seam_compatibility(spec)
    return spec


def _sample_grid(domain: SeamManifold, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in domain.box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def check_smoothness(spec: MapSpec):
    """Guard divisions and square roots over an odd sample grid: any zero,
    near-zero, or sign change of a denominator (or a non-positive sqrt
    argument) on the box is rejected."""
    guards = []
    for i, comp in enumerate(spec.components):
        for kind, sub in guarded_subexpressions(comp):
            guards.append((i, kind, sub))
    if not guards:
        return
    per_axis = SMOOTHNESS_GRID if spec.dim <= 3 else 5
    grid = _sample_grid(spec.domain, per_axis)
    tape = compile_tape([g[2] for g in guards], spec.variables)
    values = _kernels.eval_batch(tape, grid)
    scale = max(1.0, float(np.abs(spec.domain.box).max()))
    for col, (i, kind, sub) in enumerate(guards):
        v = values[:, col]
        if kind == "div":
            if np.abs(v).min() < 1e-9 * scale or (v.min() < 0.0 < v.max()):
                raise SmoothnessDomainError(
                    f"component {i + 1}: denominator '{sub}' vanishes on the box"
                )
        else:  # sqrt
            if v.min() < 1e-12:
                raise SmoothnessDomainError(
                    f"component {i + 1}: sqrt argument '{sub}' is not strictly positive on the box"
                )


def check_seam_compatibility(spec: MapSpec, samples: int = SEAM_SAMPLES):
    """F(seam(x)) must equal F(x) on the seam facet, and the Jacobian must
    transform by the declared frame transition."""
    rng = np.random.default_rng(11)
    box = spec.domain.box
    for seam in spec.domain.seams:
        pts = box[:, 0] + rng.random((samples, spec.dim)) * (box[:, 1] - box[:, 0])
        pts[:, seam.source_axis] = (
            box[seam.source_axis, 0] if seam.source_end == "lo" else box[seam.source_axis, 1]
        )
        mapped = pts @ seam.matrix.T + seam.offset
        fv = spec.evaluate_batch(pts)
        fw = spec.evaluate_batch(mapped)
        err = np.abs(fv - fw).max()
        scale = max(1.0, float(np.abs(fv).max()))
        if err > TAU_SEAM * scale * 10:
            raise SeamIncompatibility(
                f"|F(seam(x)) - F(x)| = {err:.3e} exceeds tolerance on seam facet"
            )
        jv = spec.jacobian_batch(pts)
        jw = spec.jacobian_batch(mapped)
        jerr = np.abs(jw @ seam.transition - jv).max()
        jscale = max(1.0, float(np.abs(jv).max()))
        if jerr > 1e-7 * jscale:
            raise SeamIncompatibility(
                f"Jacobian does not transform by the seam transition (err {jerr:.3e})"
            )


# ---------------------------------------------------------------------------
# properness


def certify_properness(
    spec: MapSpec, probes: int = 64, seed: int = 0, raise_on_fail: bool = False
) -> CertificateReport:
    """Sample |x| = R(rho) spheres for a dyadic rho ladder and confirm
    |F(x)| >= rho - slack, slack being the declared margin."""
    if spec.properness is None:
        raise PropernessUncertified(f"map '{spec.name}' carries no properness record")
    cert = spec.properness
    box = spec.domain.box
    max_radius = float(np.linalg.norm(np.abs(box).max(axis=1)))
    rungs = []
    worst = math.inf
    witness = None
    rng = np.random.default_rng(seed)
    ladder = [0.25 * 2.0**j for j in range(0, 12)]
    tested = 0
    for rho in ladder:
        radius = cert.radius_at(rho)
        if radius > max_radius:
            continue
        points = _sphere_points_in_box(box, radius, probes, rng)
        if points.shape[0] == 0:
            continue
        tested += 1
        values = spec.evaluate_batch(points)
        norms = np.linalg.norm(values, axis=1)
        margin = float(norms.min() - rho)
        worst = min(worst, margin)
        ok = margin >= -cert.margin
        rungs.append(
            {"rho": rho, "radius": radius, "probes": int(points.shape[0]),
             "worst_margin": margin, "passed": bool(ok)}
        )
        if not ok and witness is None:
            witness = points[int(np.argmin(norms))]
    passed = witness is None and tested > 0
    if tested == 0:
        # box too small to place any probe sphere: vacuous but flagged
        rungs.append({"rho": None, "radius": None, "probes": 0,
                      "worst_margin": None, "passed": True})
        passed = True
        worst = math.inf
    report = CertificateReport(passed=passed, rungs=rungs,
                               worst_margin=None if worst is math.inf else worst,
                               witness=witness)
    if raise_on_fail and not passed:
        raise CertificateViolated(
            f"properness certificate of '{spec.name}' fails at {witness}",
            witness=witness,
        )
    return report


def _sphere_points_in_box(box, radius, count, rng):
    """Up to `count` points with |x| = radius inside the box."""
    dim = box.shape[0]
    points = []
    attempts = 0
    while len(points) < count and attempts < 60 * count:
        attempts += count
        dirs = rng.normal(size=(count, dim))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        cand = dirs * radius
        inside = (cand >= box[:, 0]).all(axis=1) & (cand <= box[:, 1]).all(axis=1)
        points.extend(cand[inside])
    return np.asarray(points[:count]) if points else np.zeros((0, dim))


def require_proper(spec: MapSpec, probes: int = 64, seed: int = 0) -> CertificateReport:
    report = certify_properness(spec, probes=probes, seed=seed, raise_on_fail=False)
    if not report.passed:
        raise CertificateViolated(
            f"properness certificate of '{spec.name}' fails", witness=report.witness
        )
    return report
