"""Deterministic executor for control programs.

Flows are resolved from the control-line settings alone and then applied to
the pre-step occupancy. Every unexpected outcome becomes an event instead of
an exception so compiled programs can be audited.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .grid import BoardState, SiteCoord, column_class, diagonal
from .isa import GATE_CLASSES, OP_CLASSES, ControlProgram, DerivedOp, TimeStep

DIRECTIONS = {"right": (0, 1), "left": (0, -1), "up": (1, 0), "down": (-1, 0)}
ANOMALIES = ("Collision", "FlowConflict", "Spurious")


@dataclass(frozen=True, order=True)
class Flow:
    source: SiteCoord
    direction: str

    @property
    def crossing(self) -> SiteCoord:
        return self.source

    @property
    def destination(self) -> SiteCoord:
        dr, dc = DIRECTIONS[self.direction]
        return SiteCoord(self.source.row + dr, self.source.col + dc)


@dataclass(frozen=True)
class SimEvent:
    """One simulation event.

    ``kind`` is Shuttle, Gate, Measure, Collision, FlowConflict or Spurious;
    a Spurious event wraps the unintended event in ``inner``.
    """

    kind: str
    sites: tuple[SiteCoord, ...] = ()
    qubits: tuple[int, ...] = ()
    detail: str = ""
    inner: "SimEvent | None" = None

    def __str__(self) -> str:
        if self.kind == "Spurious" and self.inner is not None:
            return f"Spurious {self.inner}"
        parts = [self.kind]
        if self.detail:
            parts.append(self.detail)
        if self.qubits:
            parts.append("q=" + ",".join(str(q) for q in self.qubits))
        if self.sites:
            parts.append("at=" + ";".join(f"{s.row},{s.col}" for s in self.sites))
        return " ".join(parts)


@dataclass
class SimReport:
    events: list[list[SimEvent]] = field(default_factory=list)
    gate_log: dict[int, list[tuple[int, str, int | None]]] = field(default_factory=dict)
    tallies: dict[str, int] = field(default_factory=dict)
    final_board: BoardState | None = None
    residence_log: dict[int, int] = field(default_factory=dict)

    def count(self, kind: str) -> int:
        return sum(1 for evs in self.events for e in evs if e.kind == kind)

    @property
    def anomalies(self) -> list[tuple[int, SimEvent]]:
        return [(k, e) for k, evs in enumerate(self.events) for e in evs if e.kind in ANOMALIES]

    @property
    def clean(self) -> bool:
        return not self.anomalies

    def event_text(self) -> str:
        return "".join(f"step={k} {e}\n" for k, evs in enumerate(self.events) for e in evs)

    def tallies_csv(self) -> str:
        return "class,count\n" + "".join(f"{c},{n}\n" for c, n in self.tallies.items())


def resolve_flows(step: TimeStep, n: int) -> set[Flow]:
    """Crossings with a lowered barrier and a unit gradient between set diagonals.

    Diagonals absent from the step are left floating and never take part in a
    flow.
    """
    levels = step.levels
    vs, hs = step.barriers
    flows: set[Flow] = set()
    for j in vs:
        for r in range(n):
            a, b = SiteCoord(r, j), SiteCoord(r, j + 1)
            la, lb = levels.get(diagonal(a)), levels.get(diagonal(b))
            if la is None or lb is None:
                continue
            if la - lb == 1:
                flows.add(Flow(a, "right"))
            elif lb - la == 1:
                flows.add(Flow(b, "left"))
    for i in hs:
        for c in range(n):
            a, b = SiteCoord(i, c), SiteCoord(i + 1, c)
            la, lb = levels.get(diagonal(a)), levels.get(diagonal(b))
            if la is None or lb is None:
                continue
            if la - lb == 1:
                flows.add(Flow(a, "up"))
            elif lb - la == 1:
                flows.add(Flow(b, "down"))
    return {f for f in flows if 0 <= f.destination.row < n and 0 <= f.destination.col < n}


def _intended(intent: Iterable[DerivedOp]) -> tuple[set[tuple[SiteCoord, SiteCoord]], set[frozenset]]:
    moves: set[tuple[SiteCoord, SiteCoord]] = set()
    pairs: set[frozenset] = set()
    for op in intent:
        if op.kind in ("HS", "VS", "M"):
            moves.add(op.sites())
        elif op.kind in ("HI", "VI"):
            pairs.add(frozenset(op.sites()))
    return moves, pairs


def step(
    board: BoardState, ts: TimeStep, intent: Sequence[DerivedOp] | None = None
) -> tuple[BoardState, list[SimEvent]]:
    """Apply one time-step to ``board`` using pre-state semantics."""
    intent = ts.tag if intent is None else tuple(intent)
    want_moves, want_pairs = _intended(intent)
    events: list[SimEvent] = []
    gate_step = ts.op_class in GATE_CLASSES
    measure_step = ts.op_class == "measurement"

    def emit(ev: SimEvent, expected: bool) -> None:
        events.append(ev if expected else SimEvent("Spurious", inner=ev))

    candidates: dict[SiteCoord, list[SiteCoord]] = {}
    gate_pairs: set[frozenset] = set()
    for f in sorted(resolve_flows(ts, board.n)):
        src, dst = f.source, f.destination
        q = board.qubit_at(src)
        if q is None:
            continue
        other = board.qubit_at(dst)
        if other is None:
            candidates.setdefault(dst, []).append(src)
        elif gate_step:
            gate_pairs.add(frozenset((src, dst)))
        elif measure_step:
            emit(SimEvent("Measure", (src, dst), (q, other)), (src, dst) in want_moves)
        else:
            events.append(SimEvent("Collision", (dst,), (q, other), f"from={src.row},{src.col}"))
    for pair in sorted(gate_pairs, key=sorted):
        a, b = sorted(pair)
        kind = ts.op_class
        emit(SimEvent("Gate", (a, b), (board.qubit_at(a), board.qubit_at(b)), kind), pair in want_pairs)
    moved: dict[int, SiteCoord] = {}
    for dst in sorted(candidates):
        srcs = candidates[dst]
        if len(srcs) > 1:
            events.append(SimEvent("FlowConflict", (dst,), tuple(board.qubit_at(s) for s in srcs)))
            continue
        src = srcs[0]
        q = board.qubit_at(src)
        moved[q] = dst
        emit(SimEvent("Shuttle", (src, dst), (q,)), (src, dst) in want_moves)
    return board.relocate(moved), events


def run(
    program: ControlProgram,
    board: BoardState,
    intents: Sequence[Sequence[DerivedOp]] | None = None,
) -> SimReport:
    """Fold :func:`step` over ``program`` and collect logs and tallies."""
    home = {q: column_class(s.col) for q, s in board.registry.items()}
    report = SimReport(
        gate_log={q: [] for q in board.registry},
        tallies={c: 0 for c in OP_CLASSES},
        residence_log={q: 0 for q in board.registry},
    )
    counts: Counter[str] = Counter()
    cur = board
    for k, ts in enumerate(program.steps):
        intent = intents[k] if intents is not None else None
        nxt, events = step(cur, ts, intent)
        counts[ts.op_class or "unclassified"] += 1
        for ev in events:
            base = ev.inner if ev.kind == "Spurious" else ev
            if base is None:
                continue
            if base.kind == "Shuttle":
                report.gate_log[base.qubits[0]].append((k, "shuttle", None))
            elif base.kind == "Gate":
                a, b = base.qubits
                report.gate_log[a].append((k, base.detail, b))
                report.gate_log[b].append((k, base.detail, a))
            elif base.kind == "Measure":
                a, b = base.qubits
                report.gate_log[a].append((k, "measure", b))
                report.gate_log[b].append((k, "measure", a))
        for rot in ts.rotations:
            for q, s in cur.registry.items():
                if column_class(s.col).value == rot.column_class:
                    report.gate_log[q].append((k, rot.gate, None))
        if ts.op_class == "zwait":
            for q, s in cur.registry.items():
                if column_class(s.col) != home[q]:
                    report.gate_log[q].append((k, "zwait", None))
        for q, s in nxt.registry.items():
            if column_class(s.col) != home[q]:
                report.residence_log[q] += 1
        report.events.append(events)
        cur = nxt
    for c, v in counts.items():
        report.tallies[c] = v
    report.final_board = cur
    return report
