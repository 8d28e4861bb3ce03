"""Zero-dimensional framed point sets and the cobordism move calculus.

A framed point set abstracts the Pontryagin data of an index-0 map: a
finite set of points, the pairwise Z_2 transport parity between them, the
orientation signature of the framing over the domain's generators, and an
opaque tag for any framing-class data beyond orientability.  Three moves
generate framed cobordism in dimension zero: cancelling a pair (opposite
classes when orientable, any pair when not), the global framing flip that
swaps the two class labels, and isotopy/relabeling.  ``cobordant`` decides
equivalence in closed form; ``oracle_cobordant`` re-derives the answer by
breadth-first search over the moves and must agree.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace

from .errors import (
    CocycleViolation,
    DomainMismatch,
    NotOrientable,
    PairNotCancellable,
    SearchBudgetExceeded,
)


@dataclass(frozen=True)
class CobordismMove:
    kind: str                    # "CancelPair" | "InsertPair" | "FramingHomotopy" | "Isotopy"
    operands: tuple = ()


@dataclass(frozen=True)
class FramedPointSet:
    """Finite point set with pairwise transport parity.

    ``parity`` maps frozenset({i, j}) -> 0/1 for distinct point ids; missing
    pairs default to 0.  ``label_parity`` records global framing flips: it
    swaps which equivalence class is called X+ without touching the pairwise
    data (a flip toggles every point's transport class simultaneously).
    """

    points: tuple                      # ids (hashable, typically str/int)
    parity: tuple = ()                 # ((i, j, eps), ...)
    orientation_signature: tuple = ()
    tag: str = ""
    label_parity: int = 0
    positions: tuple = ()              # optional coordinates, same order as points

    def __post_init__(self):
        seen = {}
        for i, j, eps in self.parity:
            if i == j and eps:
                raise CocycleViolation(f"parity of a point with itself must be 0 (id {i})")
            key = frozenset((i, j))
            if seen.get(key, eps) != eps:
                raise CocycleViolation(f"conflicting parity entries for pair {i}, {j}")
            seen[key] = eps
        object.__setattr__(self, "_pairs", seen)

    # -- queries --------------------------------------------------------------

    @property
    def orientable(self) -> bool:
        return not any(self.orientation_signature)

    def eps(self, i, j) -> int:
        if i == j:
            return 0
        return self._pairs.get(frozenset((i, j)), 0)

    def size(self) -> int:
        return len(self.points)

    def partition(self):
        """(X+, X-) by transport class relative to the first point; the
        global flip bit swaps the labels."""
        if not self.points:
            return (), ()
        base = self.points[0]
        plus = tuple(p for p in self.points if self.eps(base, p) == 0)
        minus = tuple(p for p in self.points if self.eps(base, p) == 1)
        if self.label_parity:
            plus, minus = minus, plus
        return plus, minus

    def class_sizes(self):
        plus, minus = self.partition()
        return len(plus), len(minus)

    def to_json(self):
        data = {
            "points": list(self.points),
            "parity": [[i, j, e] for (i, j, e) in self.parity],
            "orientation_signature": list(self.orientation_signature),
            "tag": self.tag,
        }
        if self.positions:
            data["positions"] = [list(map(float, p)) for p in self.positions]
        return data

    @classmethod
    def from_json(cls, data) -> "FramedPointSet":
        return cls(
            points=tuple(data["points"]),
            parity=tuple((i, j, int(e)) for i, j, e in data.get("parity", [])),
            orientation_signature=tuple(int(v) for v in data.get("orientation_signature", [])),
            tag=data.get("tag", ""),
            positions=tuple(tuple(p) for p in data.get("positions", [])),
        )


@dataclass
class ValidationReport:
    ok: bool
    message: str
    plus: tuple = ()
    minus: tuple = ()


def validate(s: FramedPointSet) -> ValidationReport:
    """Check the invariants; in the orientable case the parity relation must
    be a Z_2 cocycle (path independence), and the X+/X- partition is
    computed."""
    for i, j, _ in s.parity:
        missing = [p for p in (i, j) if p not in s.points]
        if missing:
            return ValidationReport(False, f"parity references unknown ids {missing}")
    if s.orientable:
        for a, b, c in itertools.combinations(s.points, 3):
            if s.eps(a, c) != s.eps(a, b) ^ s.eps(b, c):
                raise CocycleViolation(
                    f"eps({a},{c}) != eps({a},{b}) xor eps({b},{c}): "
                    "transport parity is path-dependent"
                )
        plus, minus = s.partition()
        return ValidationReport(True, "ok", plus, minus)
    return ValidationReport(True, "ok (non-orientable: pairwise parity ignored)")


def abs_degree(s: FramedPointSet) -> int:
    """||X+| - |X-||; defined in the orientable case only."""
    if not s.orientable:
        raise NotOrientable(
            f"orientation signature {list(s.orientation_signature)} is nonzero"
        )
    validate(s)
    p, m = s.class_sizes()
    return abs(p - m)


def cancel_pair(s: FramedPointSet, i, j) -> FramedPointSet:
    """Remove a cobordant pair: opposite transport classes when orientable
    (an arc joining same-class boundary points would need a nontrivial
    framing path), any distinct pair when non-orientable."""
    if i == j or i not in s.points or j not in s.points:
        raise PairNotCancellable(f"need two distinct existing points, got {i}, {j}")
    if s.orientable and s.eps(i, j) != 1:
        raise PairNotCancellable(
            f"orientable cancellation needs eps({i},{j}) = 1, got 0"
        )
    keep = tuple(p for p in s.points if p not in (i, j))
    parity = tuple((a, b, e) for (a, b, e) in s.parity if i not in (a, b) and j not in (a, b))
    positions = ()
    if s.positions:
        positions = tuple(
            pos for p, pos in zip(s.points, s.positions) if p not in (i, j)
        )
    return replace(s, points=keep, parity=parity, positions=positions)


def insert_pair(s: FramedPointSet, i, j) -> FramedPointSet:
    """Inverse of cancel_pair: add a fresh cancellable pair."""
    if i == j or i in s.points or j in s.points:
        raise PairNotCancellable(f"need two fresh distinct ids, got {i}, {j}")
    base = s.points[0] if s.points else None
    parity = list(s.parity)
    parity.append((i, j, 1))
    if base is not None:
        # new pair splits across the existing classes: i joins the base class
        parity.append((base, i, 0))
        parity.append((base, j, 1))
        for p in s.points[1:]:
            parity.append((p, i, s.eps(base, p)))
            parity.append((p, j, s.eps(base, p) ^ 1))
    positions = s.positions
    if positions:
        positions = positions + ((0.0,) * len(positions[0]),) * 2
    return replace(s, points=s.points + (i, j), parity=tuple(parity), positions=positions)


def global_framing_flip(s: FramedPointSet) -> FramedPointSet:
    """Compose the framing homotopy with a nontrivial loop of operators:
    every point's transport class toggles, so X+ and X- swap labels.  The
    pairwise parity and abs_degree are unchanged."""
    return replace(s, label_parity=s.label_parity ^ 1)


def normal_form(s: FramedPointSet) -> FramedPointSet:
    return normal_form_trace(s)[0]


def normal_form_trace(s: FramedPointSet):
    """Reduce to the canonical representative, recording the moves.

    Orientable: cancel opposite-class pairs until one class is empty,
    leaving |deg| mutually equivalent points.  Non-orientable: cancel
    arbitrary pairs down to |X| mod 2 points.
    """
    validate(s)
    moves = []
    current = s
    if current.orientable:
        while True:
            plus, minus = current.partition()
            if not plus or not minus:
                break
            i, j = plus[0], minus[0]
            current = cancel_pair(current, i, j)
            moves.append(CobordismMove("CancelPair", (i, j)))
    else:
        while current.size() >= 2:
            i, j = current.points[0], current.points[1]
            current = cancel_pair(current, i, j)
            moves.append(CobordismMove("CancelPair", (i, j)))
    if current.label_parity:
        current = global_framing_flip(current)
        moves.append(CobordismMove("FramingHomotopy", ("flip",)))
    return current, moves


@dataclass
class CobordismVerdict:
    equivalent: bool
    reason: str

    def __bool__(self):
        return self.equivalent

    def to_json(self):
        return {"cobordant": self.equivalent, "reason": self.reason}


def cobordant(s0: FramedPointSet, s1: FramedPointSet) -> CobordismVerdict:
    """Closed-form decision: framing classes must match (signature and tag),
    then equal abs_degree (orientable) or equal point parity (not)."""
    if len(s0.orientation_signature) != len(s1.orientation_signature):
        raise DomainMismatch(
            "point sets live over domains with different generator counts"
        )
    validate(s0)
    validate(s1)
    if tuple(s0.orientation_signature) != tuple(s1.orientation_signature):
        return CobordismVerdict(
            False,
            f"orientation signatures differ: {list(s0.orientation_signature)} "
            f"vs {list(s1.orientation_signature)}",
        )
    if s0.tag != s1.tag:
        return CobordismVerdict(
            False, f"framing class tags differ: {s0.tag!r} vs {s1.tag!r}"
        )
    if s0.orientable:
        d0, d1 = abs_degree(s0), abs_degree(s1)
        if d0 != d1:
            return CobordismVerdict(False, f"absolute degrees differ: {d0} vs {d1}")
        return CobordismVerdict(True, f"orientable with equal absolute degree {d0}")
    if s0.size() % 2 != s1.size() % 2:
        return CobordismVerdict(
            False, f"point counts differ mod 2: {s0.size()} vs {s1.size()}"
        )
    return CobordismVerdict(
        True, f"non-orientable with equal mod-2 count {s0.size() % 2}"
    )


def _canonical_state(s: FramedPointSet):
    """Hashable state modulo isotopy/relabeling: unordered class sizes when
    orientable, point count mod structure when not."""
    if s.orientable:
        p, m = s.class_sizes()
        return ("or", min(p, m), max(p, m))
    return ("no", s.size())


def _state_neighbours(state, max_points):
    kind = state[0]
    out = []
    if kind == "or":
        _, a, b = state
        if a >= 1 and b >= 1:
            out.append(("or", a - 1, b - 1))              # cancel opposite pair
        if a + b + 2 <= max_points:
            out.append(("or", min(a + 1, b + 1), max(a + 1, b + 1)))  # insert pair
        out.append(state)                                  # flip: class sizes unordered
    else:
        _, n = state
        if n >= 2:
            out.append(("no", n - 2))
        if n + 2 <= max_points:
            out.append(("no", n + 2))
    return out


def oracle_cobordant(
    s0: FramedPointSet, s1: FramedPointSet, max_moves: int = 16
) -> bool:
    """Independent re-derivation of `cobordant` by breadth-first search over
    the moves (cancel, insert, flip, relabel) on canonical states."""
    if s0.size() > 6 or s1.size() > 6:
        raise SearchBudgetExceeded("oracle limited to point sets of size <= 6")
    if len(s0.orientation_signature) != len(s1.orientation_signature):
        raise DomainMismatch(
            "point sets live over domains with different generator counts"
        )
    validate(s0)
    validate(s1)
    # moves never change the framing homotopy class data
    if tuple(s0.orientation_signature) != tuple(s1.orientation_signature):
        return False
    if s0.tag != s1.tag:
        return False
    start = _canonical_state(s0)
    target = _canonical_state(s1)
    max_points = s0.size() + s1.size() + 2
    seen = {start: 0}
    queue = deque([start])
    truncated = False
    while queue:
        state = queue.popleft()
        depth = seen[state]
        if state == target:
            return True
        if depth >= max_moves:
            truncated = True
            continue
        for nxt in _state_neighbours(state, max_points):
            if nxt not in seen:
                seen[nxt] = depth + 1
                queue.append(nxt)
    if truncated:
        raise SearchBudgetExceeded(
            f"move search truncated at max_moves = {max_moves} without reaching the target"
        )
    return False
