"""Fredholm operators on the sequence model, given by finite head blocks.

An operator is stored as a dense real ``b x a`` matrix acting on the first
``a`` coordinates of the sequence space, followed by a shifted identity on
the tail: ``e_i -> sum_j head[j, i] e_j`` for ``i <= a`` and
``e_{a+k} -> e_{b+k}`` for ``k >= 1``.  Every such operator is Fredholm with
index ``a - b``; when ``a == b`` it admits the finite determinant
``det(head)``, which is invariant under identity padding and vanishes exactly
on the singular stratum.  That determinant sign is the parity mechanism used
throughout the package.
"""

from __future__ import annotations

import numpy as np

from .errors import IllConditioned, IndexNonZero

# Rank cut: singular values below TAU_RANK * s_max count as zero.  Values
# within a factor RANK_AMBIGUITY_FACTOR of the cut make the rank ambiguous.
TAU_RANK = 1e-9
RANK_AMBIGUITY_FACTOR = 10.0


class ComputableOperator:
    """Head-plus-shifted-identity-tail operator on the sequence space."""

    __slots__ = ("head", "a", "b")

    def __init__(self, head):
        head = np.atleast_2d(np.asarray(head, dtype=float))
        if head.ndim != 2:
            raise ValueError("head must be a 2-d matrix")
        self.head = head.copy()
        self.head.setflags(write=False)
        self.b, self.a = self.head.shape

    def __repr__(self):
        return f"ComputableOperator(a={self.a}, b={self.b})"

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @property
    def index(self) -> int:
        return self.a - self.b

    def padded(self, p: int) -> "ComputableOperator":
        """Same operator written with a head enlarged by ``p`` identity slots."""
        if p < 0:
            raise ValueError("pad count must be non-negative")
        if p == 0:
            return self
        out = np.zeros((self.b + p, self.a + p))
        out[: self.b, : self.a] = self.head
        out[self.b :, self.a :] = np.eye(p)
        return ComputableOperator(out)

    def padded_to(self, a: int) -> "ComputableOperator":
        """Pad so the domain head size becomes ``a``."""
        if a < self.a:
            raise ValueError(f"cannot shrink head from {self.a} to {a}")
        return self.padded(a - self.a)

    def singular_values(self):
        if self.head.size == 0:
            return np.zeros(0)
        return np.linalg.svd(self.head, compute_uv=False)

    def rank(self) -> int:
        s = self.singular_values()
        if s.size == 0 or s[0] == 0.0:
            return 0
        cut = TAU_RANK * s[0]
        near = (s > cut / RANK_AMBIGUITY_FACTOR) & (s < cut * RANK_AMBIGUITY_FACTOR)
        if near.any():
            raise IllConditioned(
                f"singular values {s[near]} straddle the rank cut {cut:.3e}"
            )
        return int((s > cut).sum())

    def kernel_cokernel_dims(self) -> tuple[int, int]:
        r = self.rank()
        return self.a - r, self.b - r

    def determinant(self) -> float:
        if self.a != self.b:
            raise IndexNonZero(
                f"determinant needs a square head, got {self.b}x{self.a} (index {self.index})"
            )
        if self.a == 0:
            return 1.0
        return float(np.linalg.det(self.head))

    def is_invertible(self, margin: float = 0.0) -> bool:
        if self.a != self.b:
            return False
        return abs(self.determinant()) > margin

    def compose(self, other: "ComputableOperator") -> "ComputableOperator":
        """Return self o other, padding heads until they align."""
        t, s = other, self
        if t.b < s.a:
            t = t.padded(s.a - t.b)
        elif t.b > s.a:
            s = s.padded(t.b - s.a)
        return ComputableOperator(s.head @ t.head)

    def canonical(self) -> "ComputableOperator":
        """Trim trailing identity rows/columns down to the minimal head."""
        head = self.head
        while (
            head.shape[0] > 0
            and head.shape[1] > 0
            and head[-1, -1] == 1.0
            and not head[-1, :-1].any()
            and not head[:-1, -1].any()
        ):
            head = head[:-1, :-1]
        return ComputableOperator(head)

    def __eq__(self, other):
        if not isinstance(other, ComputableOperator):
            return NotImplemented
        p, q = self.canonical(), other.canonical()
        return p.a == q.a and p.b == q.b and np.allclose(p.head, q.head)

    def __hash__(self):
        c = self.canonical()
        return hash((c.a, c.b, c.head.tobytes()))

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "head": self.head.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "ComputableOperator":
        head = np.asarray(data["head"], dtype=float)
        if head.shape != (data["b"], data["a"]):
            raise ValueError(
                f"head shape {head.shape} disagrees with (b={data['b']}, a={data['a']})"
            )
        return cls(head)


def index(op: ComputableOperator) -> int:
    return op.index


def kernel_cokernel_dims(op: ComputableOperator) -> tuple[int, int]:
    return op.kernel_cokernel_dims()


def determinant(op: ComputableOperator) -> float:
    return op.determinant()


def stabilized_square(head) -> np.ndarray:
    """Pad a rectangular head to a square block with identity slots.

    For ``b > a`` (negative index) the missing columns are filled with the
    trailing identity columns; for ``a > b`` the missing rows likewise.  The
    determinant sign of this block is the parity detector for paths of
    non-zero-index operators; it coincides with the plain determinant when
    the head is already square.
    """
    head = np.atleast_2d(np.asarray(head, dtype=float))
    b, a = head.shape
    if a == b:
        return head
    n = max(a, b)
    out = np.eye(n)
    out[:b, :a] = head
    return out
