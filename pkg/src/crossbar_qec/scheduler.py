"""Parallel shuttle and interaction scheduling.

Shuttles are described by a flow matrix over the symbols r, l, e (actions)
and re, le, * (wildcards). Columns of the matrix are compared after padding
them onto a common diagonal-pair axis: position ``p`` of a padded column is
``display_row + column``, with display rows counted from the top. That sum is
the same for every crossing lying between the same two diagonal lines. A column that equals (up to wildcards) the
composition of already chosen commuting columns shares their time-steps.

Two-qubit interaction requests are scheduled by a rank decomposition of the
tilted requirement matrix over Z2 (CPHASE) or Z4 (sqrt-SWAP).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import BoardState, SiteCoord, in_bounds
from .isa import D, DerivedOp, GridOp, H, TimeStep, V

Move = tuple[int, int, int]


class SchedulerError(ValueError):
    pass


class InvalidMove(SchedulerError):
    pass


class NoWitness(SchedulerError):
    pass


class UnoccupiedSite(SchedulerError):
    pass


# Left-right monoid ---------------------------------------------------------


class FlowSymbol(enum.Enum):
    R = "r"
    L = "l"
    E = "e"
    RE = "re"
    LE = "le"
    STAR = "*"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "FlowSymbol":
        text = text.strip()
        if text == "star":
            return cls.STAR
        return cls(text)

    @property
    def is_action(self) -> bool:
        return self in ACTIONS


R, L, E, RE, LE, STAR = FlowSymbol
ACTIONS = (R, L, E)

_WILDCARD_PAIRS = {
    frozenset({STAR, R}),
    frozenset({STAR, L}),
    frozenset({STAR, E}),
    frozenset({STAR, RE}),
    frozenset({STAR, LE}),
    frozenset({RE, R}),
    frozenset({RE, E}),
    frozenset({LE, L}),
    frozenset({LE, E}),
}


def compose(a: FlowSymbol, b: FlowSymbol) -> FlowSymbol:
    """``a o b``: apply ``b`` first, then ``a``. The later non-identity action wins."""
    if not (a.is_action and b.is_action):
        raise SchedulerError(f"composition is defined on r, l, e only (got {a}, {b})")
    return b if a is E else a


def eq_wildcard(a: FlowSymbol, b: FlowSymbol) -> bool:
    return a is b or frozenset({a, b}) in _WILDCARD_PAIRS


def theta(a: FlowSymbol) -> FlowSymbol:
    """Collapse wildcards to the identity action."""
    return a if a.is_action else E


PHI = {R: 1, L: -1, E: 0}


# Flow matrix ----------------------------------------------------------------


@dataclass(frozen=True)
class FlowMatrix:
    """Flow symbols indexed ``[row][col]`` with row 0 the bottom grid row.

    ``axis`` is ``"HS"`` for horizontal shuttles; vertical problems are stored
    transposed (rows are grid columns, columns are horizontal barriers).
    """

    entries: tuple[tuple[FlowSymbol, ...], ...]
    axis: str = "HS"

    @property
    def n_rows(self) -> int:
        return len(self.entries)

    @property
    def n_cols(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    def printed(self) -> list[list[str]]:
        """Rows top first, as the matrix is drawn."""
        return [[str(s) for s in row] for row in reversed(self.entries)]

    def column(self, j: int) -> tuple[FlowSymbol, ...]:
        """Column ``j`` in drawn order (top row first)."""
        return tuple(self.entries[r][j] for r in reversed(range(self.n_rows)))

    @classmethod
    def from_printed(cls, rows: Sequence[Sequence[str]], axis: str = "HS") -> "FlowMatrix":
        parsed = [tuple(FlowSymbol.parse(x) for x in row) for row in rows]
        if len({len(r) for r in parsed}) > 1:
            raise SchedulerError("ragged flow matrix")
        return cls(tuple(reversed(parsed)), axis)

    def __str__(self) -> str:
        return "\n".join(" ".join(f"{s:>2}" for s in row) for row in self.printed())


def _transpose_move(m: Move) -> Move:
    i, j, k = m
    return (j, i, k)


def _transpose_board(board: BoardState) -> BoardState:
    return BoardState(board.n, {q: SiteCoord(s.col, s.row) for q, s in board.registry.items()})


def _hs_sites(m: Move) -> tuple[SiteCoord, SiteCoord]:
    i, j, k = m
    a, b = SiteCoord(i, j), SiteCoord(i, j + 1)
    return (a, b) if k == 1 else (b, a)


def validate_moves(
    board: BoardState, moves: Iterable[Move], axis: str = "HS", strict: bool = True, interact: bool = False
) -> list[Move]:
    """Check a move list and return it in horizontal (possibly transposed) form.

    With ``interact`` every requested flow must join two occupied dots.
    """
    if axis not in ("HS", "VS"):
        raise SchedulerError(f"axis must be HS or VS, got {axis!r}")
    hmoves = [_transpose_move(m) if axis == "VS" else tuple(m) for m in moves]
    occ = _transpose_board(board).occupied if axis == "VS" else board.occupied
    crossings: set[tuple[int, int]] = set()
    dests: set[SiteCoord] = set()
    for m in hmoves:
        i, j, k = m
        if k not in (-1, 1):
            raise InvalidMove(f"direction must be +1 or -1 in {m}")
        src, dst = _hs_sites(m)
        if not (in_bounds(src, board.n) and in_bounds(dst, board.n)):
            raise InvalidMove(f"move {m} leaves the grid")
        if (i, j) in crossings:
            raise InvalidMove(f"two moves share crossing {(i, j)}")
        crossings.add((i, j))
        if strict and src not in occ:
            raise InvalidMove(f"move {m} starts at empty site {tuple(src)}")
        if interact and dst not in occ:
            raise UnoccupiedSite(f"interaction {m} needs both dots occupied")
        if strict and not interact and dst in occ:
            raise InvalidMove(f"move {m} ends at occupied site {tuple(dst)}")
        if dst in dests:
            raise InvalidMove(f"two moves end at {tuple(dst)}")
        dests.add(dst)
    return hmoves


def build_flow_matrix(
    board: BoardState,
    moves: Iterable[Move],
    axis: str = "HS",
    *,
    strict: bool = True,
    conservative: bool = False,
    interact: bool = False,
) -> FlowMatrix:
    """Six-case flow matrix of a move request.

    With ``conservative`` a site counts as occupied if it is occupied now or
    is the destination of a requested move, so wildcards never allow an
    action that could touch a qubit at any point of the schedule.
    """
    hmoves = validate_moves(board, moves, axis, strict, interact)
    occ = set(_transpose_board(board).occupied if axis == "VS" else board.occupied)
    if conservative and not interact:
        occ |= {_hs_sites(m)[1] for m in hmoves}
    n = board.n
    requested = {(i, j): (R if k == 1 else L) for i, j, k in hmoves}
    rows = []
    for r in range(n):
        row = []
        for c in range(n - 1):
            if (r, c) in requested:
                row.append(requested[(r, c)])
                continue
            a, b = SiteCoord(r, c) in occ, SiteCoord(r, c + 1) in occ
            row.append({(True, True): E, (False, True): RE, (True, False): LE, (False, False): STAR}[(a, b)])
        rows.append(tuple(row))
    return FlowMatrix(tuple(rows), axis)


# Padding and commutation ------------------------------------------------------


@dataclass(frozen=True)
class PaddedColumn:
    symbols: tuple[FlowSymbol, ...]
    offset: int

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, t: int) -> FlowSymbol:
        return self.symbols[t]


def pad(v: Sequence[FlowSymbol], i: int, length: int | None = None, fill: FlowSymbol = STAR) -> PaddedColumn:
    """Place drawn-order column ``v`` at displacement ``i`` in a ``fill`` vector."""
    if length is None:
        length = 2 * len(v) - 1
    if i < 0 or i + len(v) > length:
        raise SchedulerError(f"column of length {len(v)} at offset {i} does not fit length {length}")
    out = [fill] * length
    out[i : i + len(v)] = list(v)
    return PaddedColumn(tuple(out), i)


def theta_column(p: PaddedColumn) -> PaddedColumn:
    return PaddedColumn(tuple(theta(s) for s in p.symbols), p.offset)


def commute(p: PaddedColumn, q: PaddedColumn) -> bool:
    """Componentwise composition agrees in both orders (wildcards read as e)."""
    for a, b in zip(p.symbols, q.symbols):
        a, b = theta(a), theta(b)
        if compose(a, b) is not compose(b, a):
            return False
    return True


def compose_columns(cols: Sequence[PaddedColumn]) -> tuple[FlowSymbol, ...]:
    """Componentwise composition; the first column is applied first."""
    if not cols:
        raise SchedulerError("nothing to compose")
    acc = [E] * len(cols[0])
    for c in cols:
        acc = [compose(theta(x), a) for a, x in zip(acc, c.symbols)]
    return tuple(acc)


def columns_eq(a: Sequence[FlowSymbol], b: Sequence[FlowSymbol]) -> bool:
    return len(a) == len(b) and all(eq_wildcard(x, y) for x, y in zip(a, b))


@dataclass(frozen=True)
class SubroutineKind:
    name: str
    k: int = 1

    def __post_init__(self) -> None:
        if self.name not in ("simple", "kcomm", "greedy", "line"):
            raise SchedulerError(f"unknown subroutine {self.name!r}")
        if self.name == "kcomm" and self.k < 1:
            raise SchedulerError("k must be at least 1")

    @classmethod
    def parse(cls, text: str) -> "SubroutineKind":
        if text.startswith("kcomm:"):
            try:
                return cls("kcomm", int(text.split(":", 1)[1]))
            except ValueError as exc:
                raise SchedulerError(f"bad k in {text!r}") from exc
        return cls(text)

    def __str__(self) -> str:
        return f"kcomm:{self.k}" if self.name == "kcomm" else self.name


SIMPLE = SubroutineKind("simple")
GREEDY = SubroutineKind("greedy")
LINE = SubroutineKind("line")


def KCommuting(k: int) -> SubroutineKind:
    return SubroutineKind("kcomm", k)


_SETS = {
    R: frozenset({R}),
    L: frozenset({L}),
    E: frozenset({E}),
    RE: frozenset({R, E}),
    LE: frozenset({L, E}),
    STAR: frozenset({R, L, E}),
}
_FROM_SET = {v: k for k, v in _SETS.items()}


def meet(a: FlowSymbol, b: FlowSymbol) -> FlowSymbol | None:
    """Most permissive symbol allowing only actions allowed by both, or None."""
    return _FROM_SET.get(_SETS[a] & _SETS[b])


def _allow(x: FlowSymbol) -> FlowSymbol:
    # a witness member may also idle where another member performs the action
    return _FROM_SET[_SETS[x] | {E}]


def _compatible(s: Sequence[FlowSymbol], v: PaddedColumn) -> bool:
    return all(meet(x, _allow(y)) is not None for x, y in zip(s, v.symbols))


def _required(v: PaddedColumn) -> set[int]:
    return {t for t, x in enumerate(v.symbols) if x in (R, L)}


def _covers(members: Sequence[Sequence[FlowSymbol]], v: PaddedColumn, need: set[int]) -> bool:
    return all(any(v.symbols[t] in _SETS[m[t]] for m in members) for t in need)


def _commute(a: Sequence[FlowSymbol], b: Sequence[FlowSymbol]) -> bool:
    # wildcard members count as every action they still allow
    return not any(
        (R in _SETS[x] and L in _SETS[y]) or (L in _SETS[x] and R in _SETS[y]) for x, y in zip(a, b)
    )


def _find_witness(
    S: Sequence[Sequence[FlowSymbol]], v: PaddedColumn, kind: SubroutineKind
) -> list[int] | None:
    """Indices into ``S`` of a commuting subset composing to ``v``, or None."""
    need = _required(v)
    if not need:
        return []
    cand = [a for a, s in enumerate(S) if _compatible(s, v)]
    if kind.name in ("simple", "line"):
        limit = 1
    elif kind.name == "kcomm":
        limit = kind.k
    else:
        limit = None
    if limit is not None:
        for size in range(1, min(limit, len(cand)) + 1):
            for combo in itertools.combinations(cand, size):
                if not _covers([S[a] for a in combo], v, need):
                    continue
                if all(_commute(S[a], S[b]) for a, b in itertools.combinations(combo, 2)):
                    return list(combo)
        return None
    for seed in cand:
        clique = [seed]
        for a in cand:
            if a != seed and all(_commute(S[a], S[b]) for b in clique):
                clique.append(a)
        if _covers([S[a] for a in clique], v, need):
            clique.sort()
            pruned = list(clique)
            for a in clique:
                trial = [b for b in pruned if b != a]
                if _covers([S[b] for b in trial], v, need):
                    pruned = trial
            return pruned
    return None


def _as_members(S: Sequence[PaddedColumn]) -> list[tuple[FlowSymbol, ...]]:
    return [tuple(theta(x) if x in (RE, LE) else x for x in c.symbols) for c in S]


def check_independence(S: Sequence[PaddedColumn], v: PaddedColumn, kind: SubroutineKind) -> bool:
    """True when no admissible commuting subset of ``S`` composes to ``v``.

    Members of ``S`` are promoted columns: r, l, e are fixed actions and
    ``*`` marks positions still free to take any action.
    """
    return _find_witness(_as_members(S), v, kind) is None


def dependence_set(S: Sequence[PaddedColumn], v: PaddedColumn, kind: SubroutineKind) -> list[PaddedColumn]:
    found = _find_witness(_as_members(S), v, kind)
    if found is None:
        raise NoWitness("column is independent of the given set")
    return [S[a] for a in found]


def promote(v: Sequence[FlowSymbol], i: int, length: int, extend: bool = False) -> PaddedColumn:
    """Column added to the independent set: wildcards become e.

    With ``extend`` every wildcard stays as the set of actions it allows,
    inside the window and outside, so later dependants can narrow it.
    """
    inner = list(v) if extend else [theta(x) for x in v]
    return pad(inner, i, length, STAR if extend else E)


def _attach(S: list[list[FlowSymbol]], witness: Sequence[int], v: PaddedColumn) -> None:
    """Narrow the witness members so that each realises its share of ``v``."""
    for t, x in enumerate(v.symbols):
        if x in (R, L):
            holders = [a for a in witness if S[a][t] is x]
            if not holders:
                holders = [next(a for a in witness if x in _SETS[S[a][t]])]
            for a in witness:
                S[a][t] = x if a in holders else meet(S[a][t], _allow(x))
        else:
            for a in witness:
                S[a][t] = meet(S[a][t], _allow(x))


# Column planning ---------------------------------------------------------------


@dataclass(frozen=True)
class ShuttleStep:
    """One parallel step: the promoted column ``seed`` applied on ``columns``."""

    seed: int
    columns: tuple[int, ...]
    actions: tuple[FlowSymbol, ...]

    def moves(self, n_rows: int) -> list[Move]:
        """(row, col, k) tuples with a nonzero action, in flow-matrix coordinates."""
        out = []
        for j in self.columns:
            for r in range(n_rows):
                a = self.actions[(n_rows - 1 - r) + j]
                if a is not E:
                    out.append((r, j, PHI[a]))
        return sorted(out)


def plan_columns(F: FlowMatrix, kind: SubroutineKind = SIMPLE, extend: bool = False) -> list[ShuttleStep]:
    """Promote independent columns and attach dependants to them."""
    n_rows, n_cols = F.n_rows, F.n_cols
    length = n_rows + n_cols
    if kind.name == "line":
        steps = []
        for j in range(n_cols):
            if _required(pad(F.column(j), j, length)):
                steps.append(ShuttleStep(j, (j,), promote(F.column(j), j, length).symbols))
        return steps
    S: list[list[FlowSymbol]] = []
    seeds: list[int] = []
    deps: dict[int, list[int]] = {}
    for i in range(n_cols):
        v = pad(F.column(i), i, length)
        if not _required(v):
            continue
        witness = _find_witness(S, v, kind)
        if witness is None:
            S.append(list(promote(F.column(i), i, length, extend).symbols))
            seeds.append(i)
            deps[i] = [len(S) - 1]
        else:
            _attach(S, witness, v)
            deps[i] = witness
    steps = []
    for a, seed in enumerate(seeds):
        cols = tuple(j for j in sorted(deps) if a in deps[j])
        actions = tuple(E if E in _SETS[x] else x for x in S[a])
        steps.append(ShuttleStep(seed, cols, actions))
    return steps


def _levels(actions: Sequence[FlowSymbol], n: int, columns: Sequence[int]) -> dict[int, int]:
    """Diagonal levels realising ``actions`` at the given barrier columns.

    Position ``p`` of the action vector is the pair of diagonals
    ``(p - n + 1, p - n + 2)``. Only diagonals next to a used action are set.
    """
    level = {-(n - 1): 0}
    for d in range(-(n - 1), n - 1):
        a = actions[d + n - 1] if d + n - 1 < len(actions) else E
        level[d + 1] = level[d] + {R: -1, L: 1, E: 0}[a]
    used: set[int] = set()
    for j in columns:
        for r in range(n):
            p = (n - 1 - r) + j
            if actions[p] is not E:
                d = j - r
                used.update((d, d + 1))
    if not used:
        return {}
    lo = min(level[d] for d in used)
    return {d: level[d] - lo for d in sorted(used)}


def realise(step: ShuttleStep, n: int, axis: str = "HS") -> TimeStep:
    """Grid-level time-step for a planned step on an ``n`` x ``n`` grid."""
    levels = _levels(step.actions, n, step.columns)
    ops: set[GridOp] = set()
    for j in step.columns:
        ops.add(V(j) if axis == "HS" else H(j))
    for d, t in levels.items():
        ops.add(D(d if axis == "HS" else -d, t))
    tags = []
    for r, j, k in step.moves(n):
        tags.append(DerivedOp("HS", r, j, k) if axis == "HS" else DerivedOp("VS", j, r, k))
    return TimeStep(frozenset(ops), tuple(tags), "shuttle")


def schedule_shuttles(
    board: BoardState,
    moves: Iterable[Move],
    kind: SubroutineKind = SIMPLE,
    axis: str = "HS",
    extend: bool = False,
) -> list[TimeStep]:
    """Parallel shuttle steps achieving ``moves`` (all along one axis)."""
    moves = list(moves)
    F = build_flow_matrix(board, moves, axis, conservative=True)
    wanted = {tuple(m) for m in moves}
    steps = []
    for plan in plan_columns(F, kind, extend):
        base = realise(plan, board.n, axis)
        # keep only requested crossings; other nonzero actions have no source qubit
        tags = tuple(d for d in base.tag if (d.i, d.j, d.k) in wanted)
        steps.append(TimeStep(base.ops, tags, base.op_class))
    return steps


def schedule_directed(
    board: BoardState,
    pairs: Iterable[Move],
    op_class: str,
    axis: str = "VS",
    kind: SubroutineKind = SIMPLE,
) -> list[TimeStep]:
    """Steps driving a flow across each crossing ``pairs`` between two occupied dots.

    Each flow is realised exactly once. In a gate step it becomes an
    interaction and in a measurement step a readout of the source dot.
    """
    if op_class not in ("sqrtswap", "cphase", "measurement"):
        raise SchedulerError(f"unsupported class {op_class!r}")
    if op_class == "measurement" and axis != "HS":
        raise SchedulerError("measurement flows run along rows")
    pairs = list(pairs)
    F = build_flow_matrix(board, pairs, axis, interact=True)
    wanted = {(i, j) for i, j, _ in pairs}
    steps = []
    for plan in plan_columns(F, kind, extend=True):
        base = realise(plan, board.n, axis)
        tags = []
        for d in base.tag:
            if (d.i, d.j) not in wanted:
                continue
            if op_class == "measurement":
                src, _ = d.sites()
                tags.append(DerivedOp("M", src.row, src.col, d.k))
            else:
                tags.append(DerivedOp("HI" if d.kind == "HS" else "VI", d.i, d.j))
        steps.append(TimeStep(base.ops, tuple(tags), op_class))
    return steps


def line_by_line_schedule(board: BoardState, moves: Iterable[Move], axis: str = "HS") -> list[TimeStep]:
    return schedule_shuttles(board, moves, LINE, axis)


# Move-list text format ------------------------------------------------------------


def parse_moves(text: str) -> list[Move]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise SchedulerError(f"line {lineno}: expected 'i j k'")
        try:
            out.append(tuple(int(x) for x in parts))
        except ValueError as exc:
            raise SchedulerError(f"line {lineno}: non-integer field") from exc
    return out


def serialize_moves(moves: Iterable[Move]) -> str:
    return "".join(f"{i} {j} {k}\n" for i, j, k in moves)


# Interaction scheduling -------------------------------------------------------


@dataclass(frozen=True)
class InteractionMatrix:
    """Required gate multiplicities, tilted so rows are diagonal pairs.

    Row ``p`` and column ``c`` address the crossing at barrier ``c`` between
    diagonals ``p - n + 1`` and ``p - n + 2``.
    """

    modulus: int
    required: np.ndarray
    dontcare: np.ndarray

    def __post_init__(self) -> None:
        if self.modulus not in (2, 4):
            raise SchedulerError("ring must be Z2 or Z4")
        req = np.asarray(self.required, dtype=np.int64) % self.modulus
        dc = np.asarray(self.dontcare, dtype=bool)
        if req.shape != dc.shape:
            raise SchedulerError("required and dontcare masks differ in shape")
        if np.any(req[dc] != 0):
            raise SchedulerError("required must vanish on don't-care entries")
        object.__setattr__(self, "required", req)
        object.__setattr__(self, "dontcare", dc)


@dataclass(frozen=True)
class Rectangle:
    rows: tuple[int, ...]
    cols: tuple[int, ...]


def rank_mod2(mat: np.ndarray) -> int:
    m = (np.asarray(mat, dtype=np.int64) % 2).copy()
    rank = 0
    rows, cols = m.shape if m.ndim == 2 else (0, 0)
    for c in range(cols):
        piv = next((r for r in range(rank, rows) if m[r, c]), None)
        if piv is None:
            continue
        m[[rank, piv]] = m[[piv, rank]]
        for r in range(rows):
            if r != rank and m[r, c]:
                m[r] ^= m[rank]
        rank += 1
    return rank


def _factor_mod2(mat: np.ndarray) -> list[Rectangle]:
    """Write a 0/1 matrix as an XOR of ``rank`` rectangles (row space in reduced echelon form)."""
    m = np.asarray(mat, dtype=np.int64) % 2
    red = m.copy()
    n_rows, n_cols = red.shape
    pivots: list[int] = []
    rank = 0
    for c in range(n_cols):
        piv = next((r for r in range(rank, n_rows) if red[r, c]), None)
        if piv is None:
            continue
        red[[rank, piv]] = red[[piv, rank]]
        for r in range(n_rows):
            if r != rank and red[r, c]:
                red[r] ^= red[rank]
        pivots.append(c)
        rank += 1
    out = []
    for b, pc in enumerate(pivots):
        rows = tuple(int(x) for x in np.flatnonzero(m[:, pc]))
        cols = tuple(int(x) for x in np.flatnonzero(red[b]))
        out.append(Rectangle(rows, cols))
    return out


def _apply(rects: Sequence[Rectangle], shape: tuple[int, int], modulus: int) -> np.ndarray:
    acc = np.zeros(shape, dtype=np.int64)
    for rc in rects:
        acc[np.ix_(rc.rows, rc.cols)] += 1
    return acc % modulus


def _complete_dontcares(req: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Greedy completion over Z2: copy a compatible earlier row, else zeros, then flip-search."""
    out = req.copy()
    rows = out.shape[0]
    for r in range(rows):
        if not dc[r].any():
            continue
        care = ~dc[r]
        for q in range(r):
            if np.array_equal(out[q][care], out[r][care]):
                out[r] = np.where(care, out[r], out[q])
                break
    best = rank_mod2(out)
    improved = True
    while improved and best > 0:
        improved = False
        for idx in zip(*np.nonzero(dc)):
            out[idx] ^= 1
            rk = rank_mod2(out)
            if rk < best:
                best = rk
                improved = True
            else:
                out[idx] ^= 1
    return out


def decompose(im: InteractionMatrix) -> list[Rectangle]:
    """Rectangles whose summed applications equal ``required`` modulo the ring."""
    req = im.required.copy()
    if req.size == 0 or not req.any():
        return []
    if im.modulus == 2:
        full = _complete_dontcares(req, im.dontcare) if im.dontcare.any() else req
        return _factor_mod2(full)
    low = req % 2
    if im.dontcare.any():
        low = _complete_dontcares(low, im.dontcare)
    rects = _factor_mod2(low)
    rest = (req - _apply(rects, req.shape, 4)) % 4
    rest[im.dontcare] = 0
    high = _factor_mod2(rest // 2)
    return rects + high + high


def tilt(n: int, sites: Iterable[tuple[int, int]], occupied: Iterable[tuple[int, int]] | None = None,
         modulus: int = 2) -> InteractionMatrix:
    """Tilted requirement matrix for horizontal crossings ``(row, col)``."""
    rows, cols = 2 * n - 1, n - 1
    req = np.zeros((rows, cols), dtype=np.int64)
    for r, c in sites:
        req[(n - 1 - r) + c, c] += 1
    dc = np.ones((rows, cols), dtype=bool)
    occ = set(map(tuple, occupied)) if occupied is not None else None
    for c in range(cols):
        for r in range(n):
            p = (n - 1 - r) + c
            if occ is None or ((r, c) in occ and (r, c + 1) in occ):
                dc[p, c] = False
    req[dc] = 0
    return InteractionMatrix(modulus, req % modulus, dc)


def _safe_direction(view: BoardState, p: int, cols: Sequence[int], n: int) -> FlowSymbol:
    """Gradient direction on diagonal pair ``p`` that moves the fewest lone qubits."""
    moves_if = {R: 0, L: 0}
    for c in cols:
        r = (n - 1) - p + c
        if not 0 <= r < n:
            continue
        left, right = view.is_occupied((r, c)), view.is_occupied((r, c + 1))
        if left and not right:
            moves_if[R] += 1
        elif right and not left:
            moves_if[L] += 1
    return R if moves_if[R] <= moves_if[L] else L


def schedule_interactions(
    board: BoardState, sites: Iterable[tuple[int, int]], kind: str = "cphase"
) -> list[TimeStep]:
    """Parallel HI (cphase) or VI (sqrtswap) steps realising each crossing once (mod the ring)."""
    if kind not in ("cphase", "sqrtswap"):
        raise SchedulerError(f"kind must be cphase or sqrtswap, got {kind!r}")
    axis = "HS" if kind == "cphase" else "VS"
    sites = [tuple(s) for s in sites]
    view = board if axis == "HS" else _transpose_board(board)
    hsites = sites if axis == "HS" else [(j, i) for i, j in sites]
    for r, c in hsites:
        for s in ((r, c), (r, c + 1)):
            if not in_bounds(s, board.n) or not view.is_occupied(s):
                raise UnoccupiedSite(f"crossing {(r, c)} needs both dots occupied")
    n = board.n
    im = tilt(n, hsites, view.occupied, 2 if kind == "cphase" else 4)
    steps = []
    for rect in decompose(im):
        actions = [E] * (2 * n - 1)
        for p in rect.rows:
            actions[p] = _safe_direction(view, p, rect.cols, n)
        ops: set[GridOp] = set()
        tags = []
        for c in rect.cols:
            ops.add(V(c) if axis == "HS" else H(c))
            for r in range(n):
                if actions[(n - 1 - r) + c] is not E:
                    tags.append(DerivedOp("HI", r, c) if axis == "HS" else DerivedOp("VI", c, r))
        for d, t in _levels(actions, n, rect.cols).items():
            ops.add(D(d if axis == "HS" else -d, t))
        steps.append(TimeStep(frozenset(ops), tuple(tags), kind))
    return steps
