"""Dot-grid model: occupancy, column classes and named board configurations.

Rows are indexed from the bottom (row 0) and columns from the left (col 0).
Horizontal crossing (i, j) joins sites (i, j) and (i, j+1) across vertical
barrier j; vertical crossing (i, j) joins (i, j) and (i+1, j) across
horizontal barrier i. Diagonal line index of a site is ``col - row``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .isa import ControlProgram


class GridError(ValueError):
    """Raised for malformed boards or unsupported configuration requests."""


class SiteCoord(NamedTuple):
    row: int
    col: int


def diagonal(site: tuple[int, int]) -> int:
    """Index of the diagonal control line passing through ``site``."""
    return site[1] - site[0]


class ColumnClass(enum.Enum):
    R = "R"
    B = "B"


def column_class(col: int) -> ColumnClass:
    return ColumnClass.R if col % 2 == 0 else ColumnClass.B


class Configuration(enum.Enum):
    IDLE = "idle"
    SQUARE_RIGHT = "square_right"
    SQUARE_LEFT = "square_left"
    TRIANGLE_RIGHT = "triangle_right"
    TRIANGLE_LEFT = "triangle_left"
    MEASUREMENT = "measurement"


def in_bounds(site: tuple[int, int], n: int) -> bool:
    return 0 <= site[0] < n and 0 <= site[1] < n


@dataclass(frozen=True)
class BoardState:
    """Occupancy of an ``n`` x ``n`` grid plus a stable qubit-id registry."""

    n: int
    registry: Mapping[int, SiteCoord] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise GridError(f"grid side must be positive, got {self.n}")
        reg = {int(q): SiteCoord(*s) for q, s in self.registry.items()}
        seen: set[SiteCoord] = set()
        for q, s in reg.items():
            if not in_bounds(s, self.n):
                raise GridError(f"qubit {q} at {tuple(s)} is outside the {self.n}x{self.n} grid")
            if s in seen:
                raise GridError(f"site {tuple(s)} holds two qubits")
            seen.add(s)
        object.__setattr__(self, "registry", dict(sorted(reg.items())))

    @classmethod
    def from_sites(cls, n: int, sites: Iterable[tuple[int, int]]) -> "BoardState":
        """Board with ids assigned in row-major order of the occupied sites."""
        ordered = sorted({SiteCoord(*s) for s in sites})
        return cls(n, {q: s for q, s in enumerate(ordered)})

    @classmethod
    def from_matrix(cls, occupancy: np.ndarray) -> "BoardState":
        occ = np.asarray(occupancy, dtype=bool)
        if occ.ndim != 2 or occ.shape[0] != occ.shape[1]:
            raise GridError("occupancy must be a square matrix")
        rows, cols = np.nonzero(occ)
        return cls.from_sites(occ.shape[0], zip(rows.tolist(), cols.tolist()))

    @property
    def occupied(self) -> frozenset[SiteCoord]:
        return frozenset(self.registry.values())

    @property
    def occupancy(self) -> np.ndarray:
        """Boolean matrix indexed ``[row, col]`` with row 0 at the bottom."""
        occ = np.zeros((self.n, self.n), dtype=bool)
        for r, c in self.registry.values():
            occ[r, c] = True
        return occ

    def __len__(self) -> int:
        return len(self.registry)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoardState):
            return NotImplemented
        return self.n == other.n and self.registry == other.registry

    def __hash__(self) -> int:
        return hash((self.n, tuple(self.registry.items())))

    def is_occupied(self, site: tuple[int, int]) -> bool:
        return SiteCoord(*site) in self._by_site

    def qubit_at(self, site: tuple[int, int]) -> int | None:
        return self._by_site.get(SiteCoord(*site))

    def site_of(self, qubit: int) -> SiteCoord:
        return self.registry[qubit]

    @property
    def _by_site(self) -> dict[SiteCoord, int]:
        cache = self.__dict__.get("_site_cache")
        if cache is None:
            cache = {s: q for q, s in self.registry.items()}
            object.__setattr__(self, "_site_cache", cache)
        return cache

    def relocate(self, moves: Mapping[int, tuple[int, int]]) -> "BoardState":
        """Return a new board with the given qubits placed at new sites."""
        reg = dict(self.registry)
        for q, s in moves.items():
            reg[q] = SiteCoord(*s)
        return BoardState(self.n, reg)

    def same_occupancy(self, other: "BoardState") -> bool:
        return self.n == other.n and self.occupied == other.occupied

    def sites(self) -> Iterator[SiteCoord]:
        for r in range(self.n):
            for c in range(self.n):
                yield SiteCoord(r, c)

    def render(self) -> str:
        rows = []
        for r in reversed(range(self.n)):
            rows.append("".join("q" if self.is_occupied((r, c)) else "." for c in range(self.n)))
        return "\n".join(rows)


# Board text format -------------------------------------------------------


def serialize_board(board: BoardState, with_ids: bool = True) -> str:
    lines = [f"N={board.n}", board.render()] if board.n else [f"N={board.n}"]
    if with_ids:
        lines.extend(f"id {q} {s.row} {s.col}" for q, s in board.registry.items())
    return "\n".join(lines) + "\n"


def parse_board(text: str) -> BoardState:
    lines = [ln.rstrip("\r") for ln in text.splitlines()]
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("N="):
        raise GridError("line 1: expected 'N=<n>'")
    try:
        n = int(lines[0][2:])
    except ValueError as exc:
        raise GridError(f"line 1: bad side length {lines[0][2:]!r}") from exc
    if len(lines) < n + 1:
        raise GridError(f"expected {n} grid rows, found {len(lines) - 1}")
    grid_rows = lines[1 : n + 1]
    sites = []
    for k, row_text in enumerate(grid_rows):
        if len(row_text) != n or set(row_text) - {".", "q"}:
            raise GridError(f"line {k + 2}: expected {n} characters from '.q'")
        row = n - 1 - k
        sites.extend(SiteCoord(row, c) for c, ch in enumerate(row_text) if ch == "q")
    id_lines = lines[n + 1 :]
    if not id_lines:
        return BoardState.from_sites(n, sites)
    reg: dict[int, SiteCoord] = {}
    for k, ln in enumerate(id_lines, start=n + 2):
        parts = ln.split()
        if len(parts) != 4 or parts[0] != "id":
            raise GridError(f"line {k}: expected 'id <k> <row> <col>'")
        q, r, c = (int(x) for x in parts[1:])
        if q in reg:
            raise GridError(f"line {k}: duplicate id {q}")
        reg[q] = SiteCoord(r, c)
    if set(reg.values()) != set(sites):
        raise GridError("id map does not match the occupied cells")
    return BoardState(n, reg)


# Configurations ----------------------------------------------------------

Move = tuple[int, int, int]


def _lset(n: int, clauses: Iterable[tuple[int | None, int | None, int, int, int]]) -> list[Move]:
    """Members (i, j, k) of an L-set given as residue clauses.

    Each clause is ``(i_parity, j_parity, modulus, residue, k)`` where the
    residue applies to ``i + j``; ``None`` parities are unconstrained.
    """
    out = []
    for i in range(n):
        for j in range(n):
            for pi, pj, mod, res, k in clauses:
                if (pi is None or i % 2 == pi) and (pj is None or j % 2 == pj) and (i + j) % mod == res:
                    out.append((i, j, k))
    return sorted(set(out))


def _residue_lset(n: int, clauses: Iterable[tuple[int, int, int, int, int]]) -> list[Move]:
    """Members (i, j, k) with ``i % m == a`` and ``j % m == b`` for clauses (m, a, b, k)."""
    out = []
    for m, a, b, k in clauses:
        out.extend((i, j, k) for i in range(n) for j in range(n) if i % m == a and j % m == b)
    return sorted(out)


def square_right_lset(n: int) -> list[Move]:
    return _lset(n, [(1, 1, 4, 2, 1), (0, 1, 4, 3, -1)])


def square_left_lset(n: int) -> list[Move]:
    return _lset(n, [(0, 0, 4, 2, 1), (1, 0, 4, 1, -1)])


def triangle_right_lset(n: int) -> list[Move]:
    return _lset(n, [(0, 1, 4, 3, 1)])


def triangle_left_lset(n: int) -> list[Move]:
    return _lset(n, [(0, 0, 4, 2, -1)])


def measurement_lsets(n: int) -> list[tuple[str, list[Move]]]:
    """The three steps leading from idle to the measurement configuration."""
    return [
        ("HS", _residue_lset(n, [(4, 1, 2, -1)])),
        ("HS", _residue_lset(n, [(4, 3, 1, 1)])),
        ("VS", _lset(n, [(0, 1, 4, 1, -1)])),
    ]


def crossing_sites(axis: str, move: Move) -> tuple[SiteCoord, SiteCoord]:
    """(source, destination) sites of a horizontal or vertical shuttle."""
    i, j, k = move
    a = SiteCoord(i, j)
    b = SiteCoord(i, j + 1) if axis == "HS" else SiteCoord(i + 1, j)
    return (a, b) if k == 1 else (b, a)


def restrict(axis: str, moves: Iterable[Move], n: int) -> list[Move]:
    """Drop L-set members whose crossing leaves the grid."""
    return [m for m in moves if all(in_bounds(s, n) for s in crossing_sites(axis, m))]


def invert(moves: Iterable[Move]) -> list[Move]:
    return [(i, j, -k) for i, j, k in moves]


def _transition_chain(n: int) -> dict[tuple[Configuration, Configuration], list[tuple[str, list[Move]]]]:
    C = Configuration
    forward = {
        (C.IDLE, C.SQUARE_RIGHT): [("HS", square_right_lset(n))],
        (C.IDLE, C.SQUARE_LEFT): [("HS", square_left_lset(n))],
        (C.SQUARE_RIGHT, C.TRIANGLE_RIGHT): [("HS", triangle_right_lset(n))],
        (C.SQUARE_LEFT, C.TRIANGLE_LEFT): [("HS", triangle_left_lset(n))],
        (C.IDLE, C.MEASUREMENT): measurement_lsets(n),
    }
    table = {}
    for (a, b), steps in forward.items():
        steps = [(ax, restrict(ax, mv, n)) for ax, mv in steps]
        table[(a, b)] = steps
        table[(b, a)] = [(ax, invert(mv)) for ax, mv in reversed(steps)]
    return table


_MIN_SIDE = {
    Configuration.IDLE: 2,
    Configuration.SQUARE_RIGHT: 4,
    Configuration.SQUARE_LEFT: 4,
    Configuration.TRIANGLE_RIGHT: 4,
    Configuration.TRIANGLE_LEFT: 4,
    Configuration.MEASUREMENT: 4,
}

_PARENT = {
    Configuration.SQUARE_RIGHT: Configuration.IDLE,
    Configuration.SQUARE_LEFT: Configuration.IDLE,
    Configuration.MEASUREMENT: Configuration.IDLE,
    Configuration.TRIANGLE_RIGHT: Configuration.SQUARE_RIGHT,
    Configuration.TRIANGLE_LEFT: Configuration.SQUARE_LEFT,
}


def idle_sites(n: int) -> set[SiteCoord]:
    return {SiteCoord(r, c) for r in range(n) for c in range(n) if (r + c) % 2 == 0}


def apply_moves(sites: set[SiteCoord], axis: str, moves: Iterable[Move]) -> set[SiteCoord]:
    out = set(sites)
    for m in moves:
        src, dst = crossing_sites(axis, m)
        out.discard(src)
        out.add(dst)
    return out


def pattern(n: int, config: Configuration) -> frozenset[SiteCoord]:
    """Occupied sites of ``config`` on an ``n`` x ``n`` grid."""
    if n < _MIN_SIDE[config]:
        raise GridError(f"{config.value} needs n >= {_MIN_SIDE[config]}, got {n}")
    sites = idle_sites(n)
    if config is Configuration.IDLE:
        return frozenset(sites)
    parent = _PARENT[config]
    sites = set(pattern(n, parent))
    for axis, moves in _transition_chain(n)[(parent, config)]:
        sites = apply_moves(sites, axis, moves)
    return frozenset(sites)


def new_board(n: int, config: Configuration = Configuration.IDLE) -> BoardState:
    if n < 2:
        raise GridError(f"grid side must be at least 2, got {n}")
    return BoardState.from_sites(n, pattern(n, config))


def is_configuration(board: BoardState, config: Configuration) -> bool:
    if board.n < _MIN_SIDE[config]:
        return False
    return board.occupied == pattern(board.n, config)


def transition_moves(src: Configuration, dst: Configuration, n: int) -> list[tuple[str, list[Move]]]:
    """L-sets (with axis) realising a supported configuration transition."""
    if src is dst:
        return []
    table = _transition_chain(n)
    if (src, dst) not in table:
        raise GridError(f"unsupported transition {src.value} -> {dst.value}")
    for cfg in (src, dst):
        if n < _MIN_SIDE[cfg]:
            raise GridError(f"{cfg.value} needs n >= {_MIN_SIDE[cfg]}, got {n}")
    return table[(src, dst)]


def configuration_program(src: Configuration, dst: Configuration, n: int) -> "ControlProgram":
    """Parallel-shuttle program taking ``src`` to ``dst`` (one step per L-set)."""
    from .isa import ControlProgram, DerivedOp, merge_parallel

    steps = []
    for axis, moves in transition_moves(src, dst, n):
        ops = [DerivedOp(axis, i, j, k) for i, j, k in moves]
        steps.append(merge_parallel(ops, n=n, op_class="shuttle"))
    return ControlProgram(tuple(steps))
