from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossbar_qec import simulator
from crossbar_qec.grid import (
    BoardState,
    ColumnClass,
    Configuration,
    GridError,
    SiteCoord,
    column_class,
    configuration_program,
    diagonal,
    is_configuration,
    new_board,
    parse_board,
    serialize_board,
    square_right_lset,
    transition_moves,
)

C = Configuration
TRANSITIONS = [
    (C.IDLE, C.SQUARE_RIGHT),
    (C.IDLE, C.SQUARE_LEFT),
    (C.SQUARE_RIGHT, C.TRIANGLE_RIGHT),
    (C.SQUARE_LEFT, C.TRIANGLE_LEFT),
    (C.IDLE, C.MEASUREMENT),
]


def test_idle_n4_is_checkerboard():
    b = new_board(4)
    assert len(b) == 8
    assert b.is_occupied((0, 0))
    assert all(b.is_occupied((r, c)) == ((r + c) % 2 == 0) for r in range(4) for c in range(4))


def test_idle_n2():
    assert new_board(2).occupied == {SiteCoord(0, 0), SiteCoord(1, 1)}


def test_ids_row_major():
    b = new_board(4)
    assert list(b.registry.values()) == sorted(b.registry.values())


def test_new_board_rejects_small_measurement():
    with pytest.raises(GridError):
        new_board(3, C.MEASUREMENT)
    with pytest.raises(GridError):
        new_board(1)


def test_is_configuration_examples():
    b = new_board(4)
    assert is_configuration(b, C.IDLE)
    assert not is_configuration(b, C.SQUARE_RIGHT)


def test_column_class_and_diagonal():
    assert column_class(0) is ColumnClass.R
    assert column_class(3) is ColumnClass.B
    assert diagonal((2, 5)) == 3


def test_board_validation():
    with pytest.raises(GridError):
        BoardState(3, {0: SiteCoord(0, 0), 1: SiteCoord(0, 0)})
    with pytest.raises(GridError):
        BoardState(3, {0: SiteCoord(3, 0)})


def test_from_matrix_roundtrip():
    occ = np.zeros((5, 5), dtype=bool)
    occ[1, 2] = occ[4, 0] = True
    b = BoardState.from_matrix(occ)
    assert np.array_equal(b.occupancy, occ)


def test_serialization_roundtrip_and_errors():
    b = new_board(8, C.MEASUREMENT)
    text = serialize_board(b)
    assert text.startswith("N=8\n")
    assert parse_board(text) == b
    assert serialize_board(parse_board(text)) == text
    with pytest.raises(GridError):
        parse_board("N=2\nq.\n")
    with pytest.raises(GridError):
        parse_board("N=2\nqx\n..\n")
    with pytest.raises(GridError):
        parse_board("N=2\nq.\n..\nid 0 0 0\n")


def test_top_row_is_printed_first():
    b = BoardState.from_sites(3, [(2, 0)])
    assert serialize_board(b, with_ids=False).splitlines()[1] == "q.."


def test_square_right_lset_matches_residues():
    for i, j, k in square_right_lset(8):
        if k == 1:
            assert i % 2 == 1 and j % 2 == 1 and (i + j) % 4 == 2
        else:
            assert i % 2 == 0 and j % 2 == 1 and (i + j) % 4 == 3


def test_identity_transition_is_empty():
    assert len(configuration_program(C.IDLE, C.IDLE, 8)) == 0


def test_unsupported_transition():
    with pytest.raises(GridError):
        transition_moves(C.SQUARE_RIGHT, C.SQUARE_LEFT, 8)


def test_measurement_program_axes():
    axes = [ax for ax, _ in transition_moves(C.IDLE, C.MEASUREMENT, 8)]
    assert axes == ["HS", "HS", "VS"]


@pytest.mark.parametrize("n", [4, 8, 12])
@pytest.mark.parametrize("src,dst", TRANSITIONS + [(b, a) for a, b in TRANSITIONS])
def test_transition_replay(n, src, dst):
    board = new_board(n, src)
    rep = simulator.run(configuration_program(src, dst, n), board)
    assert rep.clean, rep.event_text()
    assert is_configuration(rep.final_board, dst)
    assert len(rep.final_board) == len(board)


@pytest.mark.parametrize("n", [8, 12])
@pytest.mark.parametrize("src,dst", TRANSITIONS)
def test_transition_round_trip(n, src, dst):
    board = new_board(n, src)
    there = simulator.run(configuration_program(src, dst, n), board).final_board
    back = simulator.run(configuration_program(dst, src, n), there).final_board
    assert back == board


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.data())
def test_serialization_property(n, data):
    cells = data.draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))))
    b = BoardState.from_sites(n, cells)
    assert parse_board(serialize_board(b)) == b
    assert parse_board(serialize_board(b, with_ids=False)) == b
