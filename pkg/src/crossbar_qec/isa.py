"""Crossbar instruction set: grid opcodes, derived opcodes and programs.

A ``TimeStep`` is one simultaneous setting of control lines. Steps carry the
derived operations they are meant to realise (their intent) and an
operation-class label used for time accounting.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .grid import BoardState, SiteCoord, crossing_sites, diagonal

DEFAULT_BASE_LEVEL = 1
DEFAULT_MAX_LEVEL = 3

OP_CLASSES = ("shuttle", "sqrtswap", "cphase", "zwait", "global", "measurement")
GATE_CLASSES = ("sqrtswap", "cphase")
SHUTTLE_KINDS = ("HS", "VS", "M")
DERIVED_KINDS = ("HS", "VS", "M", "HI", "VI", "HC", "VC")


class IsaError(ValueError):
    """Base class for instruction-set errors."""


class LineConflict(IsaError):
    """Two operations demand incompatible settings of one control line."""


class AssemblySyntaxError(IsaError):
    def __init__(self, line: int, col: int, message: str) -> None:
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True, order=True)
class GridOp:
    """``V i`` / ``H i`` lower a barrier; ``D i t`` sets diagonal ``i`` to level ``t``."""

    kind: str
    index: int
    level: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("V", "H", "D"):
            raise IsaError(f"unknown grid opcode {self.kind!r}")
        if (self.kind == "D") != (self.level is not None):
            raise IsaError("only D opcodes carry a level")
        if self.level is not None and self.level < 0:
            raise IsaError(f"negative potential level {self.level}")

    def check_range(self, n: int) -> None:
        lo, hi = (-(n - 1), n - 1) if self.kind == "D" else (0, n - 2)
        if not lo <= self.index <= hi:
            raise IsaError(f"{self} index outside [{lo}, {hi}] for n={n}")

    def __str__(self) -> str:
        if self.kind == "D":
            return f"D {self.index} {self.level}"
        return f"{self.kind} {self.index}"


def V(i: int) -> GridOp:
    return GridOp("V", i)


def H(i: int) -> GridOp:
    return GridOp("H", i)


def D(i: int, t: int) -> GridOp:
    return GridOp("D", i, t)


@dataclass(frozen=True, order=True)
class DerivedOp:
    """Derived opcode ``kind(i, j[, k])``.

    HS/VS/M carry a direction ``k`` in {-1, +1}; the interaction opcodes
    HI/VI/HC/VC address the crossing (i, j) and use ``k = 0``.
    """

    kind: str
    i: int
    j: int
    k: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DERIVED_KINDS:
            raise IsaError(f"unknown derived opcode {self.kind!r}")
        if self.kind in SHUTTLE_KINDS:
            if self.k not in (-1, 1):
                raise IsaError(f"{self.kind} needs k in {{-1, +1}}, got {self.k}")
        elif self.k != 0:
            raise IsaError(f"{self.kind} takes no direction")

    @property
    def axis(self) -> str:
        return "VS" if self.kind in ("VS", "VI", "VC") else "HS"

    def sites(self) -> tuple[SiteCoord, SiteCoord]:
        """(source, destination) for shuttles and measurements; the pair otherwise."""
        if self.kind == "M":
            return SiteCoord(self.i, self.j), SiteCoord(self.i, self.j + self.k)
        if self.kind in ("HS", "VS"):
            return crossing_sites(self.kind, (self.i, self.j, self.k))
        return crossing_sites(self.axis, (self.i, self.j, 1))

    def as_shuttle(self) -> "DerivedOp":
        """The HS/VS whose flow realises this op (identity for HS/VS)."""
        if self.kind == "M":
            return DerivedOp("HS", self.i, self.j if self.k == 1 else self.j - 1, self.k)
        if self.kind in ("HI", "VI"):
            return DerivedOp(self.axis, self.i, self.j, 1)
        return self

    def __str__(self) -> str:
        if self.kind in SHUTTLE_KINDS:
            return f"{self.kind} {self.i} {self.j} {self.k}"
        return f"{self.kind} {self.i} {self.j}"


def HS(i: int, j: int, k: int) -> DerivedOp:
    return DerivedOp("HS", i, j, k)


def VS(i: int, j: int, k: int) -> DerivedOp:
    return DerivedOp("VS", i, j, k)


def M(i: int, j: int, k: int) -> DerivedOp:
    return DerivedOp("M", i, j, k)


def HI(i: int, j: int) -> DerivedOp:
    return DerivedOp("HI", i, j)


def VI(i: int, j: int) -> DerivedOp:
    return DerivedOp("VI", i, j)


@dataclass(frozen=True)
class Rotation:
    """A global single-qubit rotation applied to every qubit of one column class."""

    column_class: str
    gate: str

    def __post_init__(self) -> None:
        if self.column_class not in ("R", "B"):
            raise IsaError(f"column class must be R or B, got {self.column_class!r}")
        if not re.fullmatch(r"[A-Za-z]+", self.gate):
            raise IsaError(f"bad gate name {self.gate!r}")


@dataclass(frozen=True)
class TimeStep:
    ops: frozenset[GridOp] = frozenset()
    tag: tuple[DerivedOp, ...] = ()
    op_class: str | None = None
    label: str | None = None
    rotations: tuple[Rotation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", frozenset(self.ops))
        object.__setattr__(self, "rotations", tuple(self.rotations))
        classes = [r.column_class for r in self.rotations]
        if len(set(classes)) != len(classes):
            raise IsaError("at most one global rotation per column class")
        object.__setattr__(self, "tag", tuple(sorted(set(self.tag))))
        if self.op_class is not None and self.op_class not in OP_CLASSES:
            raise IsaError(f"unknown operation class {self.op_class!r}")
        if self.label is not None and not re.fullmatch(r"[A-Za-z0-9_.\-]+", self.label):
            raise IsaError(f"bad step label {self.label!r}")
        levels: dict[int, int] = {}
        for op in self.ops:
            if op.kind == "D":
                if levels.setdefault(op.index, op.level) != op.level:
                    raise LineConflict(f"diagonal {op.index} set to {levels[op.index]} and {op.level}")

    @property
    def barriers(self) -> tuple[list[int], list[int]]:
        """Lowered (vertical, horizontal) barrier indices."""
        vs = sorted(op.index for op in self.ops if op.kind == "V")
        hs = sorted(op.index for op in self.ops if op.kind == "H")
        return vs, hs

    @property
    def levels(self) -> dict[int, int]:
        return {op.index: op.level for op in self.ops if op.kind == "D"}

    def with_label(self, label: str | None) -> "TimeStep":
        return TimeStep(self.ops, self.tag, self.op_class, label, self.rotations)

    def check_range(self, n: int) -> None:
        for op in self.ops:
            op.check_range(n)


@dataclass(frozen=True)
class ControlProgram:
    steps: tuple[TimeStep, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[TimeStep]:
        return iter(self.steps)

    def __getitem__(self, k: int) -> TimeStep:
        return self.steps[k]

    def __add__(self, other: "ControlProgram") -> "ControlProgram":
        return ControlProgram(self.steps + tuple(other.steps))

    @property
    def classes(self) -> list[str | None]:
        return [s.op_class for s in self.steps]

    def labelled(self, label: str) -> "ControlProgram":
        return ControlProgram(tuple(s.with_label(label) for s in self.steps))

    def tallies(self) -> dict[str, int]:
        out = {c: 0 for c in OP_CLASSES}
        for s in self.steps:
            key = s.op_class or "unclassified"
            out[key] = out.get(key, 0) + 1
        return out


def concat(programs: Iterable[ControlProgram]) -> ControlProgram:
    steps: list[TimeStep] = []
    for p in programs:
        steps.extend(p.steps)
    return ControlProgram(tuple(steps))


# Expansion -----------------------------------------------------------------


def expand(op: DerivedOp, base_level: int = DEFAULT_BASE_LEVEL, n: int | None = None) -> frozenset[GridOp]:
    """Grid operations realising one HS/VS/M/HI/VI.

    The source diagonal sits at ``base_level`` and the destination diagonal
    one level lower. Interactions use the rightward/upward gradient.
    """
    if op.kind in ("HC", "VC"):
        raise IsaError(f"{op.kind} is a multi-step template; compile it instead of expanding")
    if base_level - 1 < 0:
        raise IsaError(f"base level {base_level} leaves no room for a gradient")
    sh = op.as_shuttle()
    src, dst = sh.sites()
    barrier = V(sh.j) if sh.kind == "HS" else H(sh.i)
    out = frozenset({barrier, D(diagonal(src), base_level), D(diagonal(dst), base_level - 1)})
    if n is not None:
        for s in (src, dst):
            if not (0 <= s.row < n and 0 <= s.col < n):
                raise IsaError(f"{op} touches site {tuple(s)} outside the {n}x{n} grid")
        for g in out:
            g.check_range(n)
    return out


def merge_parallel(
    ops: Iterable[DerivedOp],
    board: BoardState | None = None,
    *,
    n: int | None = None,
    op_class: str | None = None,
    base_level: int = DEFAULT_BASE_LEVEL,
    label: str | None = None,
) -> TimeStep:
    """Union of the expansions of ``ops`` as one time-step."""
    ops = list(ops)
    side = board.n if board is not None else n
    grid: set[GridOp] = set()
    levels: dict[int, tuple[int, DerivedOp]] = {}
    for op in ops:
        for g in expand(op, base_level, side):
            if g.kind == "D":
                prev = levels.setdefault(g.index, (g.level, op))
                if prev[0] != g.level:
                    raise LineConflict(
                        f"diagonal {g.index} needed at level {prev[0]} by {prev[1]} and {g.level} by {op}"
                    )
            grid.add(g)
    if op_class is None and ops:
        kinds = {o.kind for o in ops}
        if kinds <= {"HS", "VS"}:
            op_class = "shuttle"
        elif kinds == {"M"}:
            op_class = "measurement"
        elif kinds == {"VI"}:
            op_class = "sqrtswap"
        elif kinds == {"HI"}:
            op_class = "cphase"
    return TimeStep(frozenset(grid), tuple(ops), op_class, label)


# Assembly text ---------------------------------------------------------------

_GRID_RE = re.compile(r"^(V|H)\s+(-?\d+)$|^D\s+(-?\d+)\s+(-?\d+)$")
_DERIVED_RE = re.compile(r"^(HS|VS|M|HI|VI|HC|VC)\s+(-?\d+)\s+(-?\d+)(?:\s+(-?\d+))?$")


def _serialize_step(step: TimeStep) -> str:
    parts: list[str] = []
    if step.op_class is not None:
        parts.append(f"@{step.op_class}")
    if step.label is not None:
        parts.append(f"@{step.label}")
    body = " & ".join(str(g) for g in sorted(step.ops))
    if body:
        parts.append(body)
    if step.rotations:
        parts.append("! " + " , ".join(f"{r.column_class} {r.gate}" for r in step.rotations))
    if step.tag:
        parts.append("| " + " ; ".join(str(d) for d in step.tag))
    return " ".join(parts) if parts else "nop"


def serialize_program(program: ControlProgram) -> str:
    return "".join(_serialize_step(s) + "\n" for s in program.steps)


def _parse_step(text: str, lineno: int) -> TimeStep:
    col = 1
    rest = text
    op_class = None
    label = None
    rotations: list[Rotation] = []
    tag: list[DerivedOp] = []
    if rest.strip() == "nop":
        return TimeStep()
    m = re.match(r"^\s*", rest)
    col += m.end()
    rest = rest[m.end() :]
    labels = []
    while rest.startswith("@"):
        m = re.match(r"@([A-Za-z0-9_.\-]+)\s*", rest)
        if not m:
            raise AssemblySyntaxError(lineno, col, "malformed label")
        labels.append(m.group(1))
        col += m.end()
        rest = rest[m.end() :]
    if labels and labels[0] in OP_CLASSES:
        op_class = labels.pop(0)
    if len(labels) > 1:
        raise AssemblySyntaxError(lineno, 1, "at most one class label and one step label")
    if labels:
        label = labels[0]
    if "|" in rest:
        idx = rest.index("|")
        tag_text = rest[idx + 1 :]
        for chunk in tag_text.split(";"):
            m = _DERIVED_RE.match(chunk.strip())
            if not m:
                raise AssemblySyntaxError(lineno, col + idx + 1, f"bad derived opcode {chunk.strip()!r}")
            kind, a, b, k = m.groups()
            try:
                tag.append(DerivedOp(kind, int(a), int(b), int(k) if k is not None else 0))
            except IsaError as exc:
                raise AssemblySyntaxError(lineno, col + idx + 1, str(exc)) from exc
        rest = rest[:idx]
    if "!" in rest:
        idx = rest.index("!")
        for chunk in rest[idx + 1 :].split(","):
            rot = chunk.split()
            if len(rot) != 2:
                raise AssemblySyntaxError(lineno, col + idx, "rotation needs '<class> <gate>'")
            try:
                rotations.append(Rotation(rot[0], rot[1]))
            except IsaError as exc:
                raise AssemblySyntaxError(lineno, col + idx, str(exc)) from exc
        rest = rest[:idx]
    ops: list[GridOp] = []
    if rest.strip():
        offset = col
        for chunk in rest.split("&"):
            token = chunk.strip()
            m = _GRID_RE.match(token)
            if not m:
                raise AssemblySyntaxError(lineno, offset, f"bad grid opcode {token!r}")
            if m.group(1):
                ops.append(GridOp(m.group(1), int(m.group(2))))
            else:
                try:
                    ops.append(D(int(m.group(3)), int(m.group(4))))
                except IsaError as exc:
                    raise AssemblySyntaxError(lineno, offset, str(exc)) from exc
            offset += len(chunk) + 1
    if len(set(ops)) != len(ops):
        raise AssemblySyntaxError(lineno, 1, "repeated grid opcode")
    try:
        return TimeStep(frozenset(ops), tuple(tag), op_class, label, tuple(rotations))
    except IsaError as exc:
        raise AssemblySyntaxError(lineno, 1, f"semantic error: {exc}") from exc


def parse_program(text: str) -> ControlProgram:
    steps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        steps.append(_parse_step(line, lineno))
    return ControlProgram(tuple(steps))


# Structured records --------------------------------------------------------


def step_record(step: TimeStep) -> dict:
    rec: dict = {
        "class": step.op_class,
        "grid_ops": [str(g) for g in sorted(step.ops)],
        "derived_ops": [str(d) for d in step.tag],
    }
    if step.label is not None:
        rec["label"] = step.label
    if step.rotations:
        rec["rotations"] = [{"class": r.column_class, "gate": r.gate} for r in step.rotations]
    return rec


def program_records(program: ControlProgram) -> str:
    """One JSON object per line, one line per step."""
    return "".join(json.dumps(step_record(s), sort_keys=True) + "\n" for s in program.steps)


__all__ = [
    "AssemblySyntaxError",
    "ControlProgram",
    "D",
    "DerivedOp",
    "GridOp",
    "H",
    "HI",
    "HS",
    "IsaError",
    "LineConflict",
    "M",
    "OP_CLASSES",
    "Rotation",
    "TimeStep",
    "V",
    "VI",
    "VS",
    "concat",
    "expand",
    "merge_parallel",
    "parse_program",
    "program_records",
    "serialize_program",
]
