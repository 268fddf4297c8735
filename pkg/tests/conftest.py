from __future__ import annotations

import random
from pathlib import Path

import pytest

from crossbar_qec.grid import BoardState, SiteCoord, crossing_sites

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


def matrix_fixture(name: str) -> list[list[str]]:
    return [ln.split() for ln in fixture_text(name).splitlines() if ln.strip() and not ln.startswith("#")]


def random_instance(rng: random.Random, n_lo: int = 4, n_hi: int = 12):
    """Random board plus a valid move set of at most ``n`` moves along one axis."""
    n = rng.randint(n_lo, n_hi)
    density = rng.random()
    sites = [(r, c) for r in range(n) for c in range(n) if rng.random() < density]
    board = BoardState.from_sites(n, sites)
    axis = rng.choice(["HS", "VS"])
    occ = set(board.occupied)
    moves, dests, srcs, crossings = [], set(), set(), set()
    for _ in range(rng.randint(0, n)):
        for _attempt in range(20):
            i, j, k = rng.randrange(n), rng.randrange(n - 1), rng.choice((1, -1))
            if axis == "VS":
                i, j = j, i
            src, dst = crossing_sites(axis, (i, j, k))
            if src in occ and dst not in occ and dst not in dests and src not in srcs and (i, j) not in crossings:
                moves.append((i, j, k))
                dests.add(dst)
                srcs.add(src)
                crossings.add((i, j))
                break
    return board, moves, axis


def expected_board(board: BoardState, moves, axis: str) -> BoardState:
    reg = dict(board.registry)
    for m in moves:
        src, dst = crossing_sites(axis, m)
        reg[board.qubit_at(src)] = SiteCoord(*dst)
    return BoardState(board.n, reg)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240611)
