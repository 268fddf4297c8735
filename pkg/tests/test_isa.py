from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossbar_qec import simulator
from crossbar_qec.grid import BoardState, Configuration, configuration_program
from crossbar_qec.isa import (
    AssemblySyntaxError,
    ControlProgram,
    D,
    DerivedOp,
    H,
    HS,
    IsaError,
    LineConflict,
    M,
    Rotation,
    TimeStep,
    V,
    VS,
    expand,
    merge_parallel,
    parse_program,
    program_records,
    serialize_program,
)


def test_expand_hs():
    assert expand(HS(1, 0, 1)) == {V(0), D(-1, 1), D(0, 0)}


def test_expand_vs():
    assert expand(VS(0, 0, 1)) == {H(0), D(0, 1), D(-1, 0)}


def test_expand_measurement_uses_its_crossing():
    assert expand(M(2, 1, 1)) == expand(HS(2, 1, 1))
    assert expand(M(2, 1, -1)) == expand(HS(2, 0, -1))


def test_expand_rejects_bad_level_and_range():
    with pytest.raises(IsaError):
        expand(HS(0, 0, 1), base_level=0)
    with pytest.raises(IsaError):
        expand(HS(0, 3, 1), n=4)


@pytest.mark.parametrize("op", [HS(1, 0, 1), HS(2, 1, -1), VS(0, 0, 1), VS(1, 2, -1)])
def test_single_shuttle_opens_one_flow(op):
    flows = simulator.resolve_flows(TimeStep(expand(op)), 4)
    src, dst = op.sites()
    assert [(f.source, f.destination) for f in flows] == [(src, dst)]


def test_merge_parallel_shares_lines():
    ts = merge_parallel([HS(0, 0, 1), HS(2, 2, 1)], n=8)
    assert ts.ops == {V(0), V(2), D(0, 1), D(1, 0)}
    assert ts.op_class == "shuttle"


def test_merge_parallel_empty():
    assert merge_parallel([]).ops == frozenset()


def test_merge_parallel_conflict():
    with pytest.raises(LineConflict):
        merge_parallel([HS(0, 0, 1), HS(0, 1, 1)], n=4)


def test_timestep_conflicting_diagonal():
    with pytest.raises(LineConflict):
        TimeStep(frozenset({D(0, 1), D(0, 2)}))


def test_derived_op_validation():
    with pytest.raises(IsaError):
        DerivedOp("HS", 0, 0, 0)
    with pytest.raises(IsaError):
        DerivedOp("HI", 0, 0, 1)
    with pytest.raises(IsaError):
        DerivedOp("XX", 0, 0)


def test_parse_simple_line():
    prog = parse_program("V 0 & D 0 1 & D 1 0\n")
    assert prog.steps[0].ops == {V(0), D(0, 1), D(1, 0)}


def test_serialize_empty():
    assert serialize_program(ControlProgram()) == ""


def test_syntax_error_position():
    with pytest.raises(AssemblySyntaxError) as exc:
        parse_program("V 0\nV 0 & X 3\n")
    assert exc.value.line == 2


def test_semantic_error():
    with pytest.raises(AssemblySyntaxError, match="semantic"):
        parse_program("D 0 1 & D 0 2\n")


def test_measurement_program_golden_roundtrip():
    prog = configuration_program(Configuration.IDLE, Configuration.MEASUREMENT, 8)
    text = serialize_program(prog)
    assert parse_program(text) == prog
    assert serialize_program(parse_program(text)) == text


def test_labels_rotations_and_records():
    ts = TimeStep(frozenset({V(1)}), (HS(0, 1, 1),), "shuttle", "step3", (Rotation("R", "H"),))
    prog = ControlProgram((ts,))
    text = serialize_program(prog)
    assert text.startswith("@shuttle @step3 ")
    assert parse_program(text) == prog
    rec = json.loads(program_records(prog))
    assert rec["class"] == "shuttle" and rec["derived_ops"] == ["HS 0 1 1"]


def test_tallies_count_classes():
    prog = ControlProgram((TimeStep(op_class="zwait"), TimeStep(op_class="zwait"), TimeStep(op_class="global")))
    t = prog.tallies()
    assert t["zwait"] == 2 and t["global"] == 1 and t["shuttle"] == 0


shuttles = st.builds(
    lambda kind, i, j, k: DerivedOp(kind, i, j, k),
    st.sampled_from(["HS", "VS"]),
    st.integers(0, 5),
    st.integers(0, 5),
    st.sampled_from([-1, 1]),
)


@settings(max_examples=200, deadline=None)
@given(shuttles, shuttles)
def test_expand_injective(a, b):
    if a != b:
        assert expand(a) != expand(b)


@settings(max_examples=100, deadline=None)
@given(st.lists(shuttles, max_size=4))
def test_merge_parallel_order_insensitive(ops):
    try:
        fwd = merge_parallel(ops, n=8)
    except LineConflict:
        with pytest.raises(LineConflict):
            merge_parallel(list(reversed(ops)), n=8)
        return
    assert merge_parallel(list(reversed(ops)), n=8) == fwd


@settings(max_examples=100, deadline=None)
@given(st.lists(shuttles, max_size=4), st.sampled_from([None, "shuttle", "zwait"]))
def test_roundtrip_property(ops, cls):
    try:
        ts = merge_parallel(ops, n=8, op_class=cls)
    except LineConflict:
        return
    prog = ControlProgram((ts, TimeStep()))
    assert parse_program(serialize_program(prog)) == prog


def test_single_flow_on_empty_board_moves_one_qubit():
    b = BoardState.from_sites(4, [(1, 0)])
    nb, events = simulator.step(b, merge_parallel([HS(1, 0, 1)], n=4))
    assert nb.site_of(0) == (1, 1)
    assert [e.kind for e in events] == ["Shuttle"]
