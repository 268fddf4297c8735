"""Layouts, cycle compilation and Clifford-level verification of QEC codes.

Every compiled sub-step goes through the scheduler, and the result is replayed
on the simulator while it is built, so compiled programs are free of
anomalies by construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import simulator
from .grid import BoardState, SiteCoord, column_class, in_bounds
from .isa import ControlProgram, DerivedOp, Rotation, TimeStep, merge_parallel
from .scheduler import SIMPLE, schedule_directed, schedule_shuttles


class QecError(ValueError):
    pass


class UnsupportedCode(QecError):
    pass


class CompileError(QecError):
    pass


class VerificationError(QecError):
    def __init__(self, face: "Face", message: str) -> None:
        super().__init__(f"{face.name}: {message}")
        self.face = face


class StructureMismatch(VerificationError):
    pass


class NondeterministicOutcome(VerificationError):
    pass


class Family(enum.Enum):
    SURFACE = "surface"
    COLOR666 = "color666"
    COLOR488 = "color488"


class Role(enum.Enum):
    DATA = "data"
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    EMPTY = "empty"


class Mode(enum.Enum):
    IDEAL_PARALLEL = "parallel"
    LINE_BY_LINE = "line"


class Cycle(enum.Enum):
    X = "x"
    Z = "z"
    FULL = "full"


@dataclass(frozen=True)
class CodeSpec:
    family: Family
    distance: int

    def __post_init__(self) -> None:
        d = self.distance
        if not isinstance(d, int) or d < 3 or d % 2 == 0:
            raise UnsupportedCode(f"distance must be an odd integer >= 3, got {d!r}")
        if self.family is not Family.SURFACE and d not in _COLOR_PATCHES[self.family]:
            supported = ", ".join(str(k) for k in sorted(_COLOR_PATCHES[self.family]))
            raise UnsupportedCode(f"{self.family.value} is available for d in {{{supported}}}, got {d}")


@dataclass(frozen=True)
class Face:
    """One stabilizer: its basis, measuring ancilla and data support."""

    name: str
    basis: str
    ancilla: SiteCoord
    support: tuple[SiteCoord, ...]
    tile: str = ""


@dataclass(frozen=True)
class Readout:
    """Measurement geometry of one ancilla at (i, j).

    The reference qubit sits at (i, j + 2s); the ancilla is read out from
    (i, j + u) after the data qubit at (i - 1, j + u) steps aside.
    """

    ancilla: SiteCoord
    s: int
    u: int

    @property
    def reference(self) -> SiteCoord:
        return SiteCoord(self.ancilla.row, self.ancilla.col + 2 * self.s)

    def touched(self) -> frozenset[SiteCoord]:
        i, j, s, u = self.ancilla.row, self.ancilla.col, self.s, self.u
        return frozenset(
            SiteCoord(*p)
            for p in [(i - 1, j), (i - 1, j + u), (i - 1, j + 2 * u), (i, j), (i, j + s), (i, j + 2 * s), (i, j + u)]
        )


@dataclass
class CodeLayout:
    spec: CodeSpec
    n: int
    faces: tuple[Face, ...]
    roles: dict[SiteCoord, Role]
    readouts: dict[str, dict[SiteCoord, Readout]]
    shifts: tuple[str, ...]
    tiles: dict[str, dict[Role, SiteCoord]] = field(default_factory=dict)

    @property
    def data(self) -> list[SiteCoord]:
        return sorted(s for s, r in self.roles.items() if r is Role.DATA)

    @property
    def board(self) -> BoardState:
        return BoardState.from_sites(self.n, sorted(s for s, r in self.roles.items() if r is not Role.EMPTY))

    def role_at(self, site: tuple[int, int]) -> Role:
        return self.roles.get(SiteCoord(*site), Role.EMPTY)

    def faces_of(self, basis: str) -> list[Face]:
        return [f for f in self.faces if f.basis == basis]

    def check_matrix(self, basis: str) -> np.ndarray:
        index = {s: k for k, s in enumerate(self.data)}
        mat = np.zeros((len(self.faces_of(basis)), len(index)), dtype=np.uint8)
        for a, f in enumerate(self.faces_of(basis)):
            for s in f.support:
                mat[a, index[s]] = 1
        return mat


# Layouts -------------------------------------------------------------------


def _surface_faces(d: int) -> list[Face]:
    data = {SiteCoord(2 * a, 2 * b) for a in range(1, d + 1) for b in range(1, d + 1)}
    faces = []
    for r in range(1, 2 * d + 2, 2):
        for c in range(1, 2 * d + 2, 2):
            basis = "Z" if (r + c) % 4 == 2 else "X"
            interior = 3 <= r <= 2 * d - 1 and 3 <= c <= 2 * d - 1
            z_rim = r in (1, 2 * d + 1) and 3 <= c <= 2 * d - 1 and basis == "Z"
            x_rim = c in (1, 2 * d + 1) and 3 <= r <= 2 * d - 1 and basis == "X"
            if not (interior or z_rim or x_rim):
                continue
            support = tuple(sorted(s for s in (SiteCoord(r + dr, c + dc) for dr in (-1, 1) for dc in (-1, 1)) if s in data))
            faces.append(Face(f"{basis}@{r},{c}", basis, SiteCoord(r, c), support))
    return faces


# Color-code patches in brick coordinates. A vertex (x, y) sits at grid site
# (2y, 2x) before translation. Tiles list their vertices; the ancilla lies at
# the odd row and column given relative to the same origin.
_COLOR_PATCHES: dict[Family, dict[int, list[tuple[str, tuple[tuple[int, int], ...], tuple[int, int], str]]]] = {
    Family.COLOR666: {
        3: [
            ("hex", ((0, 0), (1, 0), (0, 1), (1, 1)), (3, 1), "A"),
            ("hex", ((0, -1), (1, -1), (0, 0), (1, 0)), (-1, 1), "A"),
            ("hex", ((-1, 0), (0, -1), (0, 0), (0, 1)), (1, -1), "A"),
        ],
    },
    Family.COLOR488: {
        3: [
            ("square", ((0, 0), (1, 0), (0, 1), (1, 1)), (1, 1), "D"),
            ("octagon", ((0, 1), (1, 1), (0, 2), (1, 2)), (5, 1), "A"),
            ("octagon", ((1, 0), (1, 1), (1, 2), (2, 1)), (1, 3), "A"),
        ],
    },
}

_SHIFTS = {Family.SURFACE: (), Family.COLOR666: ("even",), Family.COLOR488: ("even", "odd")}


def _assign_readouts(n: int, ancillas: Sequence[SiteCoord], blocked: set[SiteCoord]) -> dict[SiteCoord, Readout]:
    """Pick a distinct reference site two columns away from every ancilla."""
    options: dict[SiteCoord, list[int]] = {}
    for a in ancillas:
        opts = []
        for s in (1, -1):
            ref = SiteCoord(a.row, a.col + 2 * s)
            if in_bounds(ref, n) and ref not in blocked:
                opts.append(s)
        if not opts:
            raise CompileError(f"no readout site for ancilla {tuple(a)}")
        options[a] = opts
    # Augmenting-path matching; earlier options are preferred.
    owner: dict[SiteCoord, SiteCoord] = {}

    def claim(a: SiteCoord, seen: set[SiteCoord]) -> bool:
        for s in options[a]:
            ref = SiteCoord(a.row, a.col + 2 * s)
            if ref in seen:
                continue
            seen.add(ref)
            if ref not in owner or claim(owner[ref], seen):
                owner[ref] = a
                return True
        return False

    for a in sorted(ancillas):
        if not claim(a, set()):
            raise CompileError(f"readout sites exhausted at ancilla {tuple(a)}")
    out = {}
    for ref, a in owner.items():
        u = 1 if a.col + 2 < n else -1
        out[a] = Readout(a, (ref.col - a.col) // 2, u)
    return dict(sorted(out.items()))


def _color_layout(spec: CodeSpec) -> tuple[int, list[Face], dict[SiteCoord, Role], dict[str, dict[Role, SiteCoord]]]:
    tiles = _COLOR_PATCHES[spec.family][spec.distance]
    verts = sorted({v for _, vs, _, _ in tiles for v in vs})
    raw_data = [(2 * y, 2 * x) for x, y in verts]
    raw_anc = [anc for _, _, anc, _ in tiles]
    rows = [r for r, _ in raw_data + raw_anc]
    cols = [c for _, c in raw_data + raw_anc]
    # Margins: a free row below every ancilla for readout, room for the row
    # shifts, and two columns either side of ancillas for reference qubits.
    low_row = min(rows) - 1
    dr = -low_row + (1 if "odd" in _SHIFTS[spec.family] else 0)
    dr += dr % 2
    dc = 2 - min(cols)
    dc += dc % 2
    top_row = max(rows) + dr + 2
    right_col = max(cols) + dc + 3
    n = max(top_row, right_col)
    n += (-n) % 4
    roles: dict[SiteCoord, Role] = {SiteCoord(r + dr, c + dc): Role.DATA for r, c in raw_data}
    faces = []
    tile_roles: dict[str, dict[Role, SiteCoord]] = {}
    for k, ((kind, vs, _, role), anc_raw) in enumerate(zip(tiles, raw_anc)):
        anc = SiteCoord(anc_raw[0] + dr, anc_raw[1] + dc)
        roles[anc] = Role[role]
        support = tuple(sorted(SiteCoord(2 * y + dr, 2 * x + dc) for x, y in vs))
        name = f"{kind}{k}"
        tile_roles[name] = {Role[role]: anc}
        for basis in ("X", "Z"):
            faces.append(Face(f"{basis}@{anc.row},{anc.col}", basis, anc, support, name))
    return n, faces, roles, tile_roles


def code_layout(spec: CodeSpec) -> CodeLayout:
    """Full layout: faces, roles, readout geometry per half-cycle."""
    if spec.family is Family.SURFACE:
        d = spec.distance
        n = 2 * d + 2
        faces = _surface_faces(d)
        roles = {SiteCoord(2 * a, 2 * b): Role.DATA for a in range(1, d + 1) for b in range(1, d + 1)}
        for f in faces:
            roles[f.ancilla] = Role.A
        tiles: dict[str, dict[Role, SiteCoord]] = {}
    else:
        n, faces, roles, tiles = _color_layout(spec)
    readouts: dict[str, dict[SiteCoord, Readout]] = {}
    for basis in ("X", "Z"):
        movers = sorted({f.ancilla for f in faces if f.basis == basis})
        readouts[basis] = _assign_readouts(n, movers, set(movers))
    ref_role = {}
    for basis, table in readouts.items():
        for a, ro in table.items():
            ref = ro.reference
            if ref not in roles:
                ref_role[ref] = Role.C if roles[a] is Role.D else Role.B
                for name, tr in tiles.items():
                    if tr.get(roles[a]) == a:
                        tr[ref_role[ref]] = ref
    roles.update(ref_role)
    if any((s.row + s.col) % 2 for s in roles):
        raise CompileError("layout leaves the idle pattern")
    return CodeLayout(spec, n, tuple(faces), roles, readouts, _SHIFTS[spec.family], tiles)


def layout(spec: CodeSpec) -> tuple[BoardState, dict[SiteCoord, Role]]:
    """Idle board and role map of a code."""
    lay = code_layout(spec)
    return lay.board, dict(lay.roles)


# CNOT templates ------------------------------------------------------------


@dataclass(frozen=True)
class GateApp:
    gate: str
    qubits: tuple[str, ...]


def cnot_template(kind: str) -> list[GateApp]:
    """Native gate sequence realising a CNOT (roles "control" and "target")."""
    c, t = ("control",), ("target",)
    if kind == "viaCPHASE":
        return [GateApp("H", t), GateApp("CPHASE", c + t), GateApp("H", t)]
    if kind == "viaSqrtSwap":
        return [
            GateApp("Sdg", c),
            GateApp("ZHSdg", t),
            GateApp("SQRTSWAP", c + t),
            GateApp("Z", c),
            GateApp("SQRTSWAP", c + t),
            GateApp("H", t),
        ]
    raise QecError(f"unknown template {kind!r}")


_H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
_S = np.diag([1, 1j])
_Z = np.diag([1, -1])
_ONE_QUBIT = {"H": _H, "Z": _Z, "Sdg": _S.conj().T, "S": _S}
_TWO_QUBIT = {
    "SQRTSWAP": np.array(
        [[1, 0, 0, 0], [0, (1 + 1j) / 2, (1 - 1j) / 2, 0], [0, (1 - 1j) / 2, (1 + 1j) / 2, 0], [0, 0, 0, 1]]
    ),
    "CPHASE": np.diag([1, 1, 1, -1]),
}


def _one_qubit(name: str) -> np.ndarray:
    # Compound names apply left to right in time: ZHSdg is Z, then H, then Sdg.
    m = np.eye(2)
    rest = name
    while rest:
        for g in ("Sdg", "H", "S", "Z"):
            if rest.startswith(g):
                m = _ONE_QUBIT[g] @ m
                rest = rest[len(g) :]
                break
        else:
            raise QecError(f"unknown gate {name!r}")
    return m


def template_unitary(kind: str) -> np.ndarray:
    """4x4 unitary of a template on (control, target), control most significant."""
    u = np.eye(4, dtype=complex)
    for app in cnot_template(kind):
        if app.gate in _TWO_QUBIT:
            g = _TWO_QUBIT[app.gate]
        elif app.qubits == ("control",):
            g = np.kron(_one_qubit(app.gate), np.eye(2))
        else:
            g = np.kron(np.eye(2), _one_qubit(app.gate))
        u = g @ u
    return u


# Compilation --------------------------------------------------------------


@dataclass(frozen=True)
class HalfPlan:
    """Program range of one half-cycle and the faces it measures."""

    basis: str
    start: int
    stop: int
    faces: tuple[Face, ...]
    opening: int
    closing: int


@dataclass(frozen=True)
class CyclePlan:
    spec: CodeSpec
    cycle: Cycle
    mode: Mode
    program: ControlProgram
    board: BoardState
    halves: tuple[HalfPlan, ...]

    @property
    def step_annotations(self) -> tuple[int, ...]:
        return tuple(int(s.label.removeprefix("step")) for s in self.program.steps)


@dataclass(frozen=True)
class _Job:
    ancilla: int
    sigma: int
    slots: tuple[int | None, ...]
    dance: bool


class _Builder:
    def __init__(self, board: BoardState, mode: Mode) -> None:
        self.board = board
        self.mode = mode
        self.steps: list[TimeStep] = []

    def emit(self, steps: Iterable[TimeStep], label: int) -> None:
        for ts in steps:
            nxt, events = simulator.step(self.board, ts)
            bad = [e for e in events if e.kind in simulator.ANOMALIES]
            if bad:
                raise CompileError(f"step {len(self.steps)} ({ts.op_class}): {bad[0]}")
            self.board = nxt
            self.steps.append(ts.with_label(f"step{label}"))

    def site(self, q: int) -> SiteCoord:
        return self.board.site_of(q)

    def shuttle(self, moves: Sequence[tuple[int, SiteCoord]], label: int) -> None:
        """Move qubits to adjacent sites; each call covers one logical parallel step."""
        by_axis: dict[str, list[tuple[int, int, int]]] = {"HS": [], "VS": []}
        for q, dst in moves:
            src = self.site(q)
            dr, dc = dst.row - src.row, dst.col - src.col
            if abs(dr) + abs(dc) != 1:
                raise CompileError(f"qubit {q} cannot jump from {tuple(src)} to {tuple(dst)}")
            if dr == 0:
                by_axis["HS"].append((src.row, min(src.col, dst.col), dc))
            else:
                by_axis["VS"].append((min(src.row, dst.row), src.col, dr))
        for axis in ("HS", "VS"):
            if by_axis[axis]:
                self.emit(schedule_shuttles(self.board, by_axis[axis], SIMPLE, axis, extend=True), label)
        for q, dst in moves:
            if self.site(q) != dst:
                raise CompileError(f"qubit {q} did not reach {tuple(dst)}")

    def interact(self, pairs: Sequence[tuple[int, int]], label: int) -> None:
        if not pairs:
            return
        cross = []
        for a, b in pairs:
            sa, sb = self.site(a), self.site(b)
            if sa.col != sb.col or abs(sa.row - sb.row) != 1:
                raise CompileError(f"qubits {a} and {b} are not vertical neighbours")
            cross.append((min(sa.row, sb.row), sa.col))
        # Either flow direction across an occupied pair gives the gate.
        options = [schedule_directed(self.board, [(i, j, k) for i, j in cross], "sqrtswap", "VS") for k in (1, -1)]
        self.emit(min(options, key=len), label)

    def measure(self, pairs: Sequence[tuple[int, int]], label: int) -> None:
        cross = []
        for a, ref in pairs:
            sa, sr = self.site(a), self.site(ref)
            k = sr.col - sa.col
            if sa.row != sr.row or abs(k) != 1:
                raise CompileError(f"qubits {a} and {ref} are not horizontal neighbours")
            cross.append((sa.row, sa.col if k == 1 else sa.col - 1, k))
        self.emit(schedule_directed(self.board, cross, "measurement", "HS"), label)

    def zwait(self, label: int) -> None:
        self.emit([TimeStep(op_class="zwait")], label)

    def rotate(self, rotations: Sequence[Rotation], label: int) -> None:
        self.emit([TimeStep(op_class="global", rotations=tuple(rotations))], label)


def _groups(jobs: Sequence[_Job], b: _Builder) -> list[list[_Job]]:
    if b.mode is Mode.IDEAL_PARALLEL:
        return [list(jobs)] if jobs else []
    cols: dict[int, list[_Job]] = {}
    for j in jobs:
        cols.setdefault(b.site(j.ancilla).col, []).append(j)
    return [cols[c] for c in sorted(cols)]


def _cnot_stage(b: _Builder, jobs: Sequence[_Job], labels: dict[int, list[int]]) -> None:
    """Run the CNOT phases of one stage.

    ``labels[sigma]`` holds step numbers for (out, in, slot..., back).
    Phases run for sigma = +1 then -1; in line mode each column runs on its
    own. The last CNOT of every column omits its trailing wait.
    """
    key = (lambda j: b.site(j.ancilla).col) if b.mode is Mode.LINE_BY_LINE else (lambda j: 0)
    last_phase: dict[int, int] = {}
    for j in jobs:
        last_phase[key(j)] = -1 if any(x.sigma == -1 and key(x) == key(j) for x in jobs) else 1
    for sigma in (1, -1):
        lab = labels[sigma]
        for group in _groups([j for j in jobs if j.sigma == sigma], b):
            g_key = key(group[0])
            homes = {j.ancilla: b.site(j.ancilla) for j in group}
            out, dance = [], []
            for j in group:
                a = homes[j.ancilla]
                out.append((j.ancilla, SiteCoord(a.row, a.col + sigma)))
                if j.dance:
                    q = b.board.qubit_at(SiteCoord(a.row + 1, a.col + sigma))
                    if q is not None:
                        dance.append((q, SiteCoord(a.row + 1, a.col), SiteCoord(a.row + 1, a.col + sigma)))
            b.shuttle(out + [(q, dst) for q, dst, _ in dance], lab[0])
            b.shuttle([(q, back) for q, _, back in dance], lab[1])
            n_slots = max(len(j.slots) for j in group)
            used = [t for t in range(n_slots) if any(t < len(j.slots) and j.slots[t] is not None for j in group)]
            for t in used:
                pairs = [(j.ancilla, j.slots[t]) for j in group if t < len(j.slots) and j.slots[t] is not None]
                b.interact(pairs, lab[2 + t])
                b.zwait(lab[2 + t])
                b.interact(pairs, lab[2 + t])
                if not (t == used[-1] and sigma == last_phase[g_key]):
                    b.zwait(lab[2 + t])
            b.shuttle([(j.ancilla, homes[j.ancilla]) for j in group], lab[-1])


def _shift(b: _Builder, kind: str, label: int) -> None:
    """Swap row pairs (2k, 2k+1) for "even" or (2k-1, 2k) for "odd"; self-inverse."""
    moves = []
    for q, s in b.board.registry.items():
        up = (s.row % 2 == 0) == (kind == "even")
        moves.append((q, SiteCoord(s.row + (1 if up else -1), s.col)))
    b.shuttle(moves, label)


def _jobs(b: _Builder, faces: Sequence[Face], offsets: Sequence[int], dance: bool) -> list[_Job]:
    """Jobs for partners at the given row offsets, one slot per offset."""
    jobs = []
    seen: dict[SiteCoord, list[Face]] = {}
    for f in faces:
        seen.setdefault(f.ancilla, []).append(f)
    for anc, fs in sorted(seen.items()):
        support = set(fs[0].support)
        for sigma in (1, -1):
            slots = []
            for dr in offsets:
                p = SiteCoord(anc.row + dr, anc.col + sigma)
                slots.append(b.board.qubit_at(p) if p in support else None)
            if any(x is not None for x in slots):
                jobs.append(_Job(b.board.qubit_at(anc), sigma, tuple(slots), dance))
    return jobs


def _measure_stage(b: _Builder, lay: CodeLayout, basis: str, faces: Sequence[Face], labels: dict[str, int]) -> None:
    table = lay.readouts[basis]
    ros = [table[a] for a in sorted({f.ancilla for f in faces})]
    anc = {r.ancilla: b.board.qubit_at(r.ancilla) for r in ros}
    ref = {r.ancilla: b.board.qubit_at(r.reference) for r in ros}
    lab = labels["config"]
    parked = {r.ancilla: {SiteCoord(r.ancilla.row - 1, r.ancilla.col), SiteCoord(r.ancilla.row, r.ancilla.col + r.s)} for r in ros}
    per_row: list[list[list[Readout]]] = []
    for i in sorted({r.ancilla.row for r in ros}):
        mine: list[list[Readout]] = []
        for r in (x for x in ros if x.ancilla.row == i):
            for bt in mine:
                if not (r.touched() & set().union(*(x.touched() for x in bt))):
                    bt.append(r)
                    break
            else:
                mine.append([r])
        per_row.append(mine)
    if b.mode is Mode.LINE_BY_LINE:
        # One readout per ancilla column: a single vertical barrier carries every
        # measurement flow, so rows never open flows on each other.
        by_col: dict[int, list[Readout]] = {}
        for r in ros:
            by_col.setdefault(r.ancilla.col, []).append(r)
        batches = []
        for col in sorted(by_col):
            mine = []
            for r in sorted(by_col[col], key=lambda x: x.ancilla.row):
                for bt in mine:
                    if r.u == bt[0].u and not (r.touched() & set().union(*(x.touched() for x in bt))):
                        bt.append(r)
                        break
                else:
                    mine.append([r])
            batches.extend(mine)
    else:
        depth = max((len(m) for m in per_row), default=0)
        batches = [[r for m in per_row if k < len(m) for r in m[k]] for k in range(depth)]
    # One shared preparation when no batch disturbs another's parked qubits.
    shared = all(
        not (r.touched() & parked[x.ancilla])
        for k, bt in enumerate(batches)
        for r in bt
        for other in batches[:k] + batches[k + 1 :]
        for x in other
    )

    def park(group: Sequence[Readout]) -> None:
        b.shuttle([(anc[r.ancilla], SiteCoord(r.ancilla.row - 1, r.ancilla.col)) for r in group], lab)
        b.shuttle([(ref[r.ancilla], SiteCoord(r.ancilla.row, r.ancilla.col + r.s)) for r in group], lab)

    def prepare(group: Sequence[Readout]) -> None:
        park(group)
        b.rotate([Rotation("B", "MeasPrep")], lab)

    if shared:
        for group in batches if b.mode is Mode.LINE_BY_LINE else [ros]:
            park(group)
        b.rotate([Rotation("B", "MeasPrep")], lab)
    for bt in batches:
        if not shared:
            prepare(bt)
        data_moves = []
        for r in bt:
            i, j, u = r.ancilla.row, r.ancilla.col, r.u
            q = b.board.qubit_at(SiteCoord(i - 1, j + u))
            if q is not None:
                data_moves.append((q, SiteCoord(i - 1, j + 2 * u), SiteCoord(i - 1, j + u)))
        b.shuttle([(q, dst) for q, dst, _ in data_moves], lab)
        b.shuttle([(anc[r.ancilla], SiteCoord(r.ancilla.row - 1, r.ancilla.col + r.u)) for r in bt], lab)
        b.shuttle([(ref[r.ancilla], r.ancilla) for r in bt], lab)
        up = [(anc[r.ancilla], SiteCoord(r.ancilla.row, r.ancilla.col + r.u)) for r in bt]
        b.shuttle(up, labels["read"])
        b.measure([(anc[r.ancilla], ref[r.ancilla]) for r in bt], labels["read"])
        b.shuttle([(anc[r.ancilla], SiteCoord(r.ancilla.row - 1, r.ancilla.col + r.u)) for r in bt], labels["read"])
        lab_r = labels["return"]
        b.shuttle(
            [(anc[r.ancilla], SiteCoord(r.ancilla.row - 1, r.ancilla.col)) for r in bt]
            + [(ref[r.ancilla], SiteCoord(r.ancilla.row, r.ancilla.col + r.s)) for r in bt],
            lab_r,
        )
        b.shuttle([(q, back) for q, _, back in data_moves] + [(ref[r.ancilla], r.reference) for r in bt], lab_r)
        b.shuttle([(anc[r.ancilla], r.ancilla) for r in bt], lab_r)


_OPEN = {"Z": (Rotation("R", "Sdg"), Rotation("B", "ZHSdg")), "X": (Rotation("R", "ZHSdg"), Rotation("B", "Sdg"))}
_CLOSE = {"Z": (Rotation("R", "Z"), Rotation("B", "H")), "X": (Rotation("R", "H"), Rotation("B", "Z"))}


def _labels(family: Family) -> dict:
    """Step numbers for every sub-step of a half-cycle."""
    if family is Family.SURFACE:
        return {
            "open": 2,
            "stages": [{1: [3, 4, 5, 6, 7], -1: [8, 9, 10, 11, 12]}],
            "shift": [],
            "close": 13,
            "config": 15,
            "read": 16,
            "return": 17,
        }
    if family is Family.COLOR666:
        return {
            "open": 1,
            "stages": [{1: [1, 1, 1, 1, 1], -1: [1, 1, 1, 1, 1]}, {1: [3, 4, 5, 6], -1: [7, 8, 9, 10]}],
            "shift": [(2, 11)],
            "close": 12,
            "config": 13,
            "read": 14,
            "return": 15,
        }
    return {
        "open": 1,
        "stages": [
            {1: [1, 1, 1, 1, 1], -1: [1, 1, 1, 1, 1]},
            {1: [3, 4, 5, 6], -1: [7, 8, 9, 10]},
            {1: [13, 14, 15, 16], -1: [17, 18, 19, 20]},
        ],
        "shift": [(2, 11), (12, 21)],
        "close": 22,
        "config": 24,
        "read": 25,
        "return": 26,
    }


def _half(b: _Builder, lay: CodeLayout, basis: str) -> HalfPlan:
    labels = _labels(lay.spec.family)
    faces = tuple(lay.faces_of(basis))
    start = len(b.steps)
    opening = len(b.steps)
    b.rotate(_OPEN[basis], labels["open"])
    stage_offsets: list[tuple[list[int], bool, tuple[str, int, int] | None]] = [([1, -1], True, None)]
    for kind, (lab_in, lab_out) in zip(lay.shifts, labels["shift"]):
        stage_offsets.append(([-3] if kind == "even" else [3], False, (kind, lab_in, lab_out)))
    for (offsets, dance, shift), lab in zip(stage_offsets, labels["stages"]):
        if shift is not None:
            if not _jobs(b, faces, offsets, dance):
                continue
            _shift(b, shift[0], shift[1])
            jobs = _jobs_shifted(b, faces, offsets, shift[0])
            _cnot_stage(b, jobs, lab)
            _shift(b, shift[0], shift[2])
        else:
            _cnot_stage(b, _jobs(b, faces, offsets, dance), lab)
    closing = len(b.steps)
    b.rotate(_CLOSE[basis], labels["close"])
    _measure_stage(b, lay, basis, faces, labels)
    return HalfPlan(basis, start, len(b.steps), faces, opening, closing)


def _jobs_shifted(b: _Builder, faces: Sequence[Face], offsets: Sequence[int], kind: str) -> list[_Job]:
    """Jobs after a row shift: far partners now sit one row from the ancilla."""
    jobs = []
    by_anc: dict[SiteCoord, Face] = {}
    for f in faces:
        by_anc.setdefault(f.ancilla, f)
    home = {q: s for q, s in _unshifted(b.board, kind).items()}
    at_home = {s: q for q, s in home.items()}
    for anc, f in sorted(by_anc.items()):
        support = set(f.support)
        qa = at_home[anc]
        for sigma in (1, -1):
            slots = []
            for dr in offsets:
                p = SiteCoord(anc.row + dr, anc.col + sigma)
                slots.append(at_home[p] if p in support else None)
            if any(x is not None for x in slots):
                jobs.append(_Job(qa, sigma, tuple(slots), False))
    return jobs


def _unshifted(board: BoardState, kind: str) -> dict[int, SiteCoord]:
    out = {}
    for q, s in board.registry.items():
        # Invert the shift: sites that moved up came from the row below.
        came_up = (s.row % 2 == 1) == (kind == "even")
        out[q] = SiteCoord(s.row - 1 if came_up else s.row + 1, s.col)
    return out


def compile_cycle(spec: CodeSpec, cycle: Cycle = Cycle.FULL, mode: Mode = Mode.LINE_BY_LINE) -> CyclePlan:
    """Compile the X, Z or full stabilizer cycle of a code into a control program."""
    lay = code_layout(spec)
    board = lay.board
    b = _Builder(board, mode)
    halves = []
    order = {Cycle.X: ["X"], Cycle.Z: ["Z"], Cycle.FULL: ["X", "Z"]}[cycle]
    for basis in order:
        halves.append(_half(b, lay, basis))
    if b.board != board:
        raise CompileError("cycle does not return the board to idle")
    return CyclePlan(spec, cycle, mode, ControlProgram(tuple(b.steps)), board, tuple(halves))


# Stand-alone procedures ------------------------------------------------------


def line_by_line_measure(board: BoardState, rows: Iterable[int] | None = None) -> ControlProgram:
    """Row-by-row readout on a board in the measurement configuration.

    Row i = 1 (mod 4) lifts the qubits at (i - 1, j), j = 1 (mod 4), reads
    them against their right neighbour and lowers them again; row i = 3
    (mod 4) does the same at j = 3 (mod 4) against the left neighbour.
    """
    from .grid import Configuration, is_configuration

    if not is_configuration(board, Configuration.MEASUREMENT):
        raise QecError("board is not in the measurement configuration")
    n = board.n
    rows = range(n - 1) if rows is None else rows
    steps: list[TimeStep] = []
    cur = board
    for i in rows:
        if i % 4 not in (1, 3):
            continue
        res, k = (1, 1) if i % 4 == 1 else (3, -1)
        cols = [j for j in range(n) if j % 4 == res and in_bounds((i, j + k), n) and cur.is_occupied((i - 1, j))]
        if not cols:
            continue
        phase = [
            [merge_parallel([DerivedOp("VS", i - 1, j, 1) for j in cols], n=n, op_class="shuttle")],
            [merge_parallel([DerivedOp("M", i, j, k)], n=n, op_class="measurement") for j in cols],
            [merge_parallel([DerivedOp("VS", i - 1, j, -1) for j in cols], n=n, op_class="shuttle")],
        ]
        for group in phase:
            for ts in group:
                cur, _ = simulator.step(cur, ts)
                steps.append(ts.with_label(f"row{i}"))
    return ControlProgram(tuple(steps))


def selective_flip(board: BoardState, targets: Iterable[tuple[int, int]]) -> ControlProgram:
    """Apply X to ``targets`` only: park the rest of their column class aside, rotate, return."""
    targets = {SiteCoord(*t) for t in targets}
    if not targets:
        return ControlProgram()
    classes = {column_class(t.col) for t in targets}
    if len(classes) != 1:
        raise QecError("targets straddle both column classes")
    if any(not board.is_occupied(t) for t in targets):
        raise QecError("every target must hold a qubit")
    if any((s.row + s.col) % 2 for s in board.occupied):
        raise QecError("board is not in an idle pattern")
    cls = classes.pop()
    others = sorted((s for s in board.occupied if column_class(s.col) is cls and s not in targets), reverse=True)
    claimed: set[SiteCoord] = set()
    moves: list[tuple[int, SiteCoord]] = []
    for s in others:
        for dc in (1, -1):
            dst = SiteCoord(s.row, s.col + dc)
            if in_bounds(dst, board.n) and dst not in claimed and not board.is_occupied(dst):
                claimed.add(dst)
                moves.append((board.qubit_at(s), dst))
                break
        else:
            raise QecError(f"no parking site next to {tuple(s)}")
    b = _Builder(board, Mode.LINE_BY_LINE)
    b.shuttle(moves, 1)
    b.rotate([Rotation(cls.value, "X")], 2)
    b.shuttle([(q, board.site_of(q)) for q, _ in moves], 3)
    return ControlProgram(tuple(s.with_label(None) for s in b.steps))


# Clifford tableau ----------------------------------------------------------


class CliffordState:
    """Stabilizer tableau with destabilizers (Aaronson-Gottesman form)."""

    def __init__(self, n: int) -> None:
        self.n = n
        self.x = np.zeros((2 * n + 1, n), dtype=bool)
        self.z = np.zeros((2 * n + 1, n), dtype=bool)
        self.r = np.zeros(2 * n + 1, dtype=bool)
        idx = np.arange(n)
        self.x[idx, idx] = True
        self.z[n + idx, idx] = True

    def h(self, a: int) -> None:
        self.r ^= self.x[:, a] & self.z[:, a]
        self.x[:, a], self.z[:, a] = self.z[:, a].copy(), self.x[:, a].copy()

    def s(self, a: int) -> None:
        self.r ^= self.x[:, a] & self.z[:, a]
        self.z[:, a] ^= self.x[:, a]

    def x_gate(self, a: int) -> None:
        self.r ^= self.z[:, a]

    def z_gate(self, a: int) -> None:
        self.r ^= self.x[:, a]

    def cnot(self, c: int, t: int) -> None:
        if c == t:
            raise QecError("control equals target")
        x, z = self.x, self.z
        self.r ^= x[:, c] & z[:, t] & ~(x[:, t] ^ z[:, c])
        x[:, t] ^= x[:, c]
        z[:, c] ^= z[:, t]

    def _rowsum(self, h: int, i: int) -> None:
        x1, z1 = self.x[i].astype(int), self.z[i].astype(int)
        x2, z2 = self.x[h].astype(int), self.z[h].astype(int)
        g = np.where(
            (x1 == 1) & (z1 == 1),
            z2 - x2,
            np.where(x1 == 1, z2 * (2 * x2 - 1), np.where(z1 == 1, x2 * (1 - 2 * z2), 0)),
        )
        total = 2 * int(self.r[h]) + 2 * int(self.r[i]) + int(g.sum())
        self.r[h] = total % 4 == 2
        self.x[h] ^= self.x[i]
        self.z[h] ^= self.z[i]

    def measure(self, a: int) -> tuple[int, bool]:
        """Measure Z on qubit ``a``; returns (outcome bit, deterministic).

        Random outcomes are resolved to 0 so runs stay reproducible.
        """
        n = self.n
        hits = np.nonzero(self.x[n : 2 * n, a])[0]
        if len(hits):
            p = n + int(hits[0])
            for i in range(2 * n):
                if i != p and self.x[i, a]:
                    self._rowsum(i, p)
            self.x[p - n], self.z[p - n], self.r[p - n] = self.x[p].copy(), self.z[p].copy(), self.r[p]
            self.x[p] = False
            self.z[p] = False
            self.z[p, a] = True
            self.r[p] = False
            return 0, False
        s = 2 * n
        self.x[s] = False
        self.z[s] = False
        self.r[s] = False
        for i in range(n):
            if self.x[i, a]:
                self._rowsum(s, i + n)
        return int(self.r[s]), True

    def stabilizers(self) -> list[tuple[np.ndarray, np.ndarray, bool]]:
        n = self.n
        return [(self.x[i].copy(), self.z[i].copy(), bool(self.r[i])) for i in range(n, 2 * n)]

    def is_valid(self) -> bool:
        """Generators commute pairwise and are independent."""
        n = self.n
        x, z = self.x[n : 2 * n].astype(np.uint8), self.z[n : 2 * n].astype(np.uint8)
        sym = (x @ z.T + z @ x.T) % 2
        if sym.any():
            return False
        return _rank_mod2(np.hstack([x, z])) == n


def _rank_mod2(mat: np.ndarray) -> int:
    m = mat.copy() % 2
    rank = 0
    rows, cols = m.shape
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


def _rref_mod2(mat: np.ndarray) -> tuple[np.ndarray, list[int]]:
    m = mat.copy() % 2
    pivots = []
    rank = 0
    for c in range(m.shape[1]):
        piv = next((r for r in range(rank, m.shape[0]) if m[r, c]), None)
        if piv is None:
            continue
        m[[rank, piv]] = m[[piv, rank]]
        for r in range(m.shape[0]):
            if r != rank and m[r, c]:
                m[r] ^= m[rank]
        pivots.append(c)
        rank += 1
    return m[:rank], pivots


# Verification --------------------------------------------------------------


@dataclass(frozen=True)
class FaceResult:
    face: Face
    partners: tuple[SiteCoord, ...]
    outcome: str
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"


@dataclass(frozen=True)
class VerificationReport:
    results: tuple[FaceResult, ...]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def failures(self) -> list[FaceResult]:
        """Faces that failed a check; faces skipped after a failure elsewhere are excluded."""
        return [r for r in self.results if r.outcome in ("StructureMismatch", "NondeterministicOutcome")]

    def raise_for_failure(self) -> None:
        for r in self.results:
            if r.outcome == "StructureMismatch":
                raise StructureMismatch(r.face, r.detail)
            if r.outcome == "NondeterministicOutcome":
                raise NondeterministicOutcome(r.face, r.detail)

    def text(self) -> str:
        lines = [f"faces={len(self.results)} ok={sum(r.ok for r in self.results)}"]
        for r in self.results:
            sup = " ".join(f"{s.row},{s.col}" for s in r.face.support)
            line = f"face={r.face.name} support={sup} outcome={r.outcome}"
            if r.detail:
                line += f" detail={r.detail}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def _sandwiches(log: Sequence[tuple[int, str, int | None]]) -> tuple[list[tuple[int, int]], str]:
    """(partner, step of closing half) for each sqrtswap-wait-sqrtswap pattern."""
    out = []
    k = 0
    entries = [e for e in log if e[1] in ("sqrtswap", "zwait")]
    while k < len(entries):
        step, name, partner = entries[k]
        if name != "sqrtswap":
            k += 1
            continue
        m = k + 1
        while m < len(entries) and entries[m][1] == "zwait":
            m += 1
        if m == k + 1 or m >= len(entries) or entries[m][1] != "sqrtswap" or entries[m][2] != partner:
            return out, f"bare sqrtswap with qubit {partner} at step {step}"
        out.append((partner, entries[m][0]))
        k = m + 1
    return out, ""


def verify_cycle(plan: CyclePlan, spec: CodeSpec | None = None, strict: bool = False) -> VerificationReport:
    """Structural and tableau-level check of every face measured by ``plan``."""
    spec = plan.spec if spec is None else spec
    if spec != plan.spec:
        raise QecError("plan was compiled for a different code")
    lay = code_layout(spec)
    board = plan.board
    report = simulator.run(plan.program, board)
    sandwich_at: dict[tuple[int, frozenset], tuple[HalfPlan, Face]] = {}
    results: dict[tuple[int, str], FaceResult] = {}
    for h_idx, half in enumerate(plan.halves):
        for f in half.faces:
            qa = board.qubit_at(f.ancilla)
            log = [e for e in report.gate_log[qa] if half.start <= e[0] < half.stop]
            found, problem = _sandwiches(log)
            partners = tuple(sorted(board.site_of(p) for p, _ in found))
            if problem:
                results[(h_idx, f.name)] = FaceResult(f, partners, "StructureMismatch", problem)
                continue
            if partners != tuple(sorted(f.support)):
                detail = "partners " + " ".join(f"{s.row},{s.col}" for s in partners)
                results[(h_idx, f.name)] = FaceResult(f, partners, "StructureMismatch", detail)
                continue
            for p, k in found:
                sandwich_at[(k, frozenset((qa, p)))] = (half, f)
            results[(h_idx, f.name)] = FaceResult(f, partners, "pending")
    if all(r.outcome == "pending" for r in results.values()):
        _semantic(plan, lay, board, sandwich_at, results)
    else:
        for key, r in results.items():
            if r.outcome == "pending":
                results[key] = FaceResult(r.face, r.partners, "skipped", "structure check failed elsewhere")
    out = VerificationReport(tuple(results[k] for k in sorted(results, key=lambda k: (k[0], k[1]))))
    if strict:
        out.raise_for_failure()
    return out


def _semantic(
    plan: CyclePlan,
    lay: CodeLayout,
    board: BoardState,
    sandwich_at: dict[tuple[int, frozenset], tuple[HalfPlan, Face]],
    results: dict[tuple[int, str], FaceResult],
) -> None:
    nq = len(board)
    state = CliffordState(nq)
    data_q = [board.qubit_at(s) for s in lay.data]
    hx = lay.check_matrix("X")
    rref, pivots = _rref_mod2(hx)
    for row, p in zip(rref, pivots):
        state.h(data_q[p])
        for c in np.nonzero(row)[0]:
            if c != p:
                state.cnot(data_q[p], data_q[int(c)])
    half_of = {}
    for h_idx, half in enumerate(plan.halves):
        for k in range(half.start, half.stop):
            half_of[k] = h_idx
    cur = board
    for k, ts in enumerate(plan.program.steps):
        nxt, events = simulator.step(cur, ts)
        h_idx = half_of.get(k)
        half = plan.halves[h_idx] if h_idx is not None else None
        if half is not None and k in (half.opening, half.closing) and half.basis == "X":
            for q in sorted({board.qubit_at(f.ancilla) for f in half.faces}):
                state.h(q)
        for ev in events:
            if ev.kind == "Gate":
                hit = sandwich_at.get((k, frozenset(ev.qubits)))
                if hit is None:
                    continue
                _, f = hit
                qa = board.qubit_at(f.ancilla)
                partner = next(q for q in ev.qubits if q != qa)
                if f.basis == "Z":
                    state.cnot(partner, qa)
                else:
                    state.cnot(qa, partner)
            elif ev.kind == "Measure" and half is not None:
                q = ev.qubits[0]
                for f in half.faces:
                    if board.qubit_at(f.ancilla) != q:
                        continue
                    bit, det = state.measure(q)
                    key = (h_idx, f.name)
                    prev = results[key]
                    if not det:
                        results[key] = FaceResult(f, prev.partners, "NondeterministicOutcome", f"step {k}")
                    elif bit:
                        results[key] = FaceResult(f, prev.partners, "NondeterministicOutcome", f"outcome -1 at step {k}")
                    elif prev.outcome == "pending":
                        results[key] = FaceResult(f, prev.partners, "ok")
                    break
        cur = nxt
    for key, r in results.items():
        if r.outcome == "pending":
            results[key] = FaceResult(r.face, r.partners, "NondeterministicOutcome", "never measured")


def delete_cnot(plan: CyclePlan, face: Face | str, partner: tuple[int, int]) -> CyclePlan:
    """Mutant plan with the interaction pair (face ancilla, partner) removed from one half."""
    faces = [(h, f) for h, half in enumerate(plan.halves) for f in half.faces]
    if isinstance(face, str):
        match = [(h, f) for h, f in faces if f.name == face]
    else:
        match = [(h, f) for h, f in faces if f == face]
    if not match:
        raise QecError(f"face {face} not in plan")
    h_idx, f = match[0]
    half = plan.halves[h_idx]
    qa = plan.board.qubit_at(f.ancilla)
    qp = plan.board.qubit_at(SiteCoord(*partner))
    if qp is None:
        raise QecError(f"no qubit at {partner}")
    steps = list(plan.program.steps)
    boards = [plan.board]
    for ts in steps:
        boards.append(simulator.step(boards[-1], ts)[0])
    targets = []
    for k in range(half.start, half.stop):
        if steps[k].op_class != "sqrtswap":
            continue
        _, events = simulator.step(boards[k], steps[k])
        if any(e.kind == "Gate" and set(e.qubits) == {qa, qp} for e in events):
            targets.append(k)
    if not targets:
        raise QecError(f"no interaction between {f.name} and {partner}")
    halves = list(plan.halves)
    for k in reversed(targets):
        board = boards[k]
        a, p = board.site_of(qa), board.site_of(qp)
        gone = (min(a.row, p.row), a.col)
        keep = [(op.i, op.j, 1) for op in steps[k].tag if (op.i, op.j) != gone]
        new = schedule_directed(board, keep, "sqrtswap", "VS") if keep else []
        new = [ts.with_label(steps[k].label) for ts in new]
        steps[k : k + 1] = new
        delta = len(new) - 1
        halves = [
            HalfPlan(
                hp.basis,
                hp.start + (delta if hp.start > k else 0),
                hp.stop + (delta if hp.stop > k else 0),
                hp.faces,
                hp.opening + (delta if hp.opening > k else 0),
                hp.closing + (delta if hp.closing > k else 0),
            )
            for hp in halves
        ]
    return CyclePlan(plan.spec, plan.cycle, plan.mode, ControlProgram(tuple(steps)), plan.board, tuple(halves))


def qubit_totals(plan: CyclePlan, site: tuple[int, int]) -> dict[str, int]:
    """Per-qubit operation counts over the whole plan."""
    board = plan.board
    q = board.qubit_at(SiteCoord(*site))
    if q is None:
        raise QecError(f"no qubit at {site}")
    rep = simulator.run(plan.program, board)
    out = {"sqrtswap": 0, "zwait": 0, "shuttle": 0, "global": 0, "measurement": 0}
    globals_ = {s.gate for s in (r for ts in plan.program for r in ts.rotations)}
    for _, name, _ in rep.gate_log[q]:
        if name == "measure":
            out["measurement"] += 1
        elif name in globals_:
            out["global"] += 1
        elif name in out:
            out[name] += 1
    return out
