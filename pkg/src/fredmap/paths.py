"""Paths of index-zero operators and their parity class.

A path with invertible endpoints represents a relative homotopy class; the
group of such classes is Z_2.  Within the head-plus-tail operator model the
finite determinant is a continuous function vanishing exactly on the
singular stratum, so a transverse crossing flips its sign and the class of
a path is read off the endpoint determinant signs.  ``crossing_count`` is
the independent diagnostic: it locates the sign changes by adaptive
subdivision and must agree with the endpoint comparison mod 2.

Loops presented in chart coordinates that close through a frame change
G (+) identity-tail get no special treatment: the change is an invertible
operator, the invertibles are connected, and the glued loop's class equals
the relative class of the open path.  With det(G) < 0 the endpoint signs
differ and the class is the nontrivial one; this is exactly how the
orientation-reversing band loop acquires its twist.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import NoConvergence, SingularEndpoint, SingularJoint
from .operators import ComputableOperator

EPS_DET_REL = 1e-8
MAX_SUBDIVISION_DEPTH = 18


class Parity(IntEnum):
    TRIVIAL = 0
    NONTRIVIAL = 1

    def __xor__(self, other):
        return Parity(int(self) ^ int(other))

    __rxor__ = __xor__

    def combine(self, other: "Parity") -> "Parity":
        return Parity(int(self) ^ int(other))


@dataclass(frozen=True)
class OperatorPath:
    """Sampled path t -> index-0 operator, piecewise-linear in head entries.

    ``refiner`` optionally supplies the exact head at any t, making
    resampling exact instead of interpolated.
    """

    times: np.ndarray            # strictly increasing, 0 .. 1
    heads: np.ndarray            # (n, m, m) common head size
    refiner: object = None       # optional callable t -> (m, m) head

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        heads = np.asarray(self.heads, dtype=float)
        if times.ndim != 1 or heads.ndim != 3 or heads.shape[0] != times.shape[0]:
            raise ValueError("need matching times (n,) and heads (n, m, m)")
        if heads.shape[1] != heads.shape[2]:
            raise ValueError("operator path requires square (index-0) heads")
        if times.shape[0] < 2 or (np.diff(times) <= 0).any():
            raise ValueError("times must be strictly increasing with at least 2 samples")
        if abs(times[0]) > 1e-12 or abs(times[-1] - 1.0) > 1e-12:
            raise ValueError("path parameter must run from 0 to 1")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "heads", heads)

    @classmethod
    def from_operators(cls, samples, refiner=None) -> "OperatorPath":
        """Build from [(t, ComputableOperator), ...], padding to a common head."""
        times = np.array([t for t, _ in samples], dtype=float)
        ops = [op for _, op in samples]
        m = max(op.a for op in ops)
        for op in ops:
            if op.index != 0:
                raise ValueError("path operators must have index 0")
        heads = np.stack([op.padded_to(m).head for op in ops])
        return cls(times, heads, refiner)

    @property
    def head_size(self) -> int:
        return self.heads.shape[1]

    def head_at(self, t: float) -> np.ndarray:
        if self.refiner is not None:
            return np.asarray(self.refiner(float(t)), dtype=float)
        t = min(max(float(t), 0.0), 1.0)
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        i = min(max(i, 0), len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        u = (t - t0) / (t1 - t0)
        return (1 - u) * self.heads[i] + u * self.heads[i + 1]

    def operator_at(self, t: float) -> ComputableOperator:
        return ComputableOperator(self.head_at(t))

    def det_at(self, t: float) -> float:
        return float(np.linalg.det(self.head_at(t)))

    def det_margin(self) -> float:
        """Invertibility margin: EPS_DET_REL scaled by the determinant's
        natural size max(1, |entries|)^m."""
        scale = max(1.0, float(np.abs(self.heads).max()))
        return EPS_DET_REL * scale**self.head_size

    def endpoint_dets(self) -> tuple[float, float]:
        return self.det_at(0.0), self.det_at(1.0)

    def reversed(self) -> "OperatorPath":
        refiner = None
        if self.refiner is not None:
            inner = self.refiner
            refiner = lambda t: inner(1.0 - t)
        return OperatorPath(
            1.0 - self.times[::-1], self.heads[::-1].copy(), refiner
        )

    def refined(self, factor: int = 2) -> "OperatorPath":
        """Resample at `factor` times the node density."""
        ts = []
        for i in range(len(self.times) - 1):
            seg = np.linspace(self.times[i], self.times[i + 1], factor + 1)[:-1]
            ts.extend(seg)
        ts.append(1.0)
        ts = np.array(ts)
        heads = np.stack([self.head_at(t) for t in ts])
        return OperatorPath(ts, heads, self.refiner)

    def to_json(self):
        data = {
            "samples": [
                {"t": float(t), "op": ComputableOperator(h).to_json()}
                for t, h in zip(self.times, self.heads)
            ]
        }
        return data

    @classmethod
    def from_json(cls, data) -> "OperatorPath":
        samples = [
            (s["t"], ComputableOperator.from_json(s["op"])) for s in data["samples"]
        ]
        return cls.from_operators(samples)


def _require_invertible_endpoints(path: OperatorPath):
    margin = path.det_margin()
    d0, d1 = path.endpoint_dets()
    if abs(d0) <= margin:
        raise SingularEndpoint(f"|det| = {abs(d0):.3e} <= margin {margin:.3e} at t = 0")
    if abs(d1) <= margin:
        raise SingularEndpoint(f"|det| = {abs(d1):.3e} <= margin {margin:.3e} at t = 1")
    return d0, d1


def parity(path: OperatorPath) -> Parity:
    """Class of the path in the relative fundamental group: nontrivial iff
    the endpoint determinant signs differ."""
    d0, d1 = _require_invertible_endpoints(path)
    return Parity.NONTRIVIAL if (d0 < 0) != (d1 < 0) else Parity.TRIVIAL


def crossing_count(path: OperatorPath, subdivisions: int = 64) -> int:
    """Number of determinant sign changes over an adaptive subdivision,
    refined until stable between consecutive depths."""
    _require_invertible_endpoints(path)
    prev = None
    n = max(8, subdivisions)
    for _ in range(MAX_SUBDIVISION_DEPTH):
        ts = np.linspace(0.0, 1.0, n + 1)
        dets = np.array([path.det_at(t) for t in ts])
        signs = np.sign(dets)
        # a zero sample counts as a crossing site; nudge by averaging neighbours
        for i in np.nonzero(signs == 0)[0]:
            signs[i] = signs[i - 1] if i > 0 else signs[i + 1]
        count = int((signs[:-1] != signs[1:]).sum())
        if prev is not None and count == prev:
            return count
        prev = count
        n *= 2
    raise NoConvergence(
        "sign-change count did not stabilize (path may be tangent to the "
        "singular stratum); fall back to parity()"
    )


def find_crossings(path: OperatorPath, subdivisions: int = 256, tol: float = 1e-10):
    """Locations of the determinant sign changes, bisected to `tol` in t."""
    ts = np.linspace(0.0, 1.0, max(16, subdivisions) + 1)
    dets = np.array([path.det_at(t) for t in ts])
    roots = []
    for i in range(len(ts) - 1):
        a, b = ts[i], ts[i + 1]
        fa, fb = dets[i], dets[i + 1]
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb < 0:
            while b - a > tol:
                m = 0.5 * (a + b)
                fm = path.det_at(m)
                if fm == 0.0:
                    a = b = m
                    break
                if fa * fm < 0:
                    b, fb = m, fm
                else:
                    a, fa = m, fm
            roots.append(0.5 * (a + b))
    return roots


def concatenate(p: OperatorPath, q: OperatorPath, joint=None) -> OperatorPath:
    """Concatenate two paths through a joint that stays invertible.

    The joint is an OperatorPath from p's end operator to q's start operator
    (constant interpolation through padded heads by default).  Its samples
    must all clear the determinant margin, otherwise SingularJoint.
    """
    m = max(p.head_size, q.head_size)
    ph = np.stack([_pad_head(h, m) for h in p.heads])
    qh = np.stack([_pad_head(h, m) for h in q.heads])
    if joint is None:
        j_times = np.linspace(0.0, 1.0, 9)
        j_heads = np.stack([(1 - u) * ph[-1] + u * qh[0] for u in j_times])
        joint = OperatorPath(j_times, j_heads)
    margin = max(p.det_margin(), q.det_margin(), joint.det_margin())
    for t in np.linspace(0.0, 1.0, 33):
        if abs(joint.det_at(t)) <= margin:
            raise SingularJoint(
                f"joint determinant {joint.det_at(t):.3e} within margin at t = {t:.3f}"
            )
    jh = np.stack([_pad_head(h, m) for h in joint.heads])
    times = np.concatenate(
        [p.times / 3.0, 1.0 / 3.0 + joint.times / 3.0, 2.0 / 3.0 + q.times / 3.0]
    )
    heads = np.concatenate([ph, jh, qh])
    keep = np.concatenate([[True], np.diff(times) > 1e-12])
    return OperatorPath(times[keep], heads[keep])


def _pad_head(head, m):
    k = head.shape[0]
    if k == m:
        return head
    out = np.eye(m)
    out[:k, :k] = head
    return out


def straight_line_path(op0: ComputableOperator, op1: ComputableOperator, samples: int = 9) -> OperatorPath:
    """Linear interpolation between two operators (padded to a common head)."""
    m = max(op0.a, op1.a)
    h0, h1 = op0.padded_to(m).head, op1.padded_to(m).head
    ts = np.linspace(0.0, 1.0, samples)
    heads = np.stack([(1 - u) * h0 + u * h1 for u in ts])
    return OperatorPath(ts, heads)
