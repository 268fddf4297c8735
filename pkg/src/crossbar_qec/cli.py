"""Command-line entry point.

Exit codes: 0 success, 1 domain error (anomalies, failed faces, invalid
moves, unsupported codes), 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, grid, isa, qec, scheduler, simulator

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
CODES = {"surface": qec.Family.SURFACE, "color666": qec.Family.COLOR666, "color488": qec.Family.COLOR488}
MODES = {"parallel": qec.Mode.IDEAL_PARALLEL, "line": qec.Mode.LINE_BY_LINE}
CYCLES = {"x": qec.Cycle.X, "z": qec.Cycle.Z, "full": qec.Cycle.FULL}


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _write(path: str | None, text: str) -> None:
    if path is None:
        return
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _spec(args: argparse.Namespace) -> qec.CodeSpec:
    return qec.CodeSpec(CODES[args.code], args.distance)


def cmd_compile(args: argparse.Namespace) -> int:
    plan = qec.compile_cycle(_spec(args), CYCLES[args.cycle], MODES[args.mode])
    _write(args.out, isa.serialize_program(plan.program))
    if args.board_out:
        _write(args.board_out, grid.serialize_board(plan.board))
    tallies = plan.program.tallies()
    sys.stdout.write("class,count\n" + "".join(f"{c},{n}\n" for c, n in tallies.items() if c in isa.OP_CLASSES))
    sys.stdout.write(f"steps={len(plan.program.steps)} max_annotation={max(plan.step_annotations, default=0)}\n")
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    board = grid.parse_board(_read(args.board))
    try:
        moves = scheduler.parse_moves(_read(args.moves))
    except scheduler.SchedulerError as exc:
        raise UsageError(str(exc)) from exc
    kind = scheduler.SubroutineKind.parse(args.subroutine)
    steps = scheduler.schedule_shuttles(board, moves, kind, args.axis, extend=args.extend)
    _write(args.out, isa.serialize_program(isa.ControlProgram(tuple(steps))))
    sys.stdout.write(f"steps={len(steps)} subroutine={kind}\n")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    board = grid.parse_board(_read(args.board))
    program = isa.parse_program(_read(args.program))
    for ts in program.steps:
        ts.check_range(board.n)
    report = simulator.run(program, board)
    if args.trace:
        sys.stdout.write(report.event_text())
    sys.stdout.write(report.tallies_csv())
    sys.stdout.write(f"steps={len(program.steps)} anomalies={len(report.anomalies)}\n")
    if args.final_board and report.final_board is not None:
        _write(args.final_board, grid.serialize_board(report.final_board))
    for k, ev in report.anomalies:
        sys.stderr.write(f"step={k} {ev}\n")
    return EXIT_DOMAIN if report.anomalies else EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    spec = _spec(args)
    plan = qec.compile_cycle(spec, qec.Cycle.FULL, MODES[args.mode])
    report = qec.verify_cycle(plan, spec)
    text = report.text()
    sys.stdout.write(text if args.detail else text.splitlines()[0] + "\n")
    return EXIT_OK if report.ok else EXIT_DOMAIN


def cmd_analyze(args: argparse.Namespace) -> int:
    params = analysis.ErrorParams.parse(_read(args.params)) if args.params else analysis.ErrorParams()
    counts = analysis.CountModel(swap_shuttle_zwait=not args.direct_pairing)
    points = analysis.sweep(params, counts, args.dmin, args.dmax, fixed_slope=args.fixed_slope)
    _write(args.out or "-", analysis.curve_csv(points))
    if args.out not in (None, "-"):
        opt = analysis.optimal_distance(params, counts, args.dmax, fixed_slope=args.fixed_slope)
        sys.stdout.write(f"points={len(points)} optimal_d={opt}\n")
    flagged = analysis.warnings(points)
    if flagged:
        sys.stderr.write("warning: probabilities above 1 at d=" + ",".join(map(str, flagged)) + "\n")
    return EXIT_OK


def cmd_board(args: argparse.Namespace) -> int:
    if args.input:
        board = grid.parse_board(_read(args.input))
    elif args.code:
        if args.distance is None:
            raise UsageError("--distance is required with --code")
        board = qec.code_layout(_spec(args)).board
    elif args.config:
        if args.n is None:
            raise UsageError("--n is required with --config")
        board = grid.new_board(args.n, grid.Configuration(args.config))
    else:
        raise UsageError("one of --in, --code or --config is required")
    if args.format == "matrix":
        occ = np.flipud(board.occupancy) if board.n else board.occupancy
        text = "".join(" ".join(str(int(v)) for v in row) + "\n" for row in occ)
    else:
        text = grid.serialize_board(board, with_ids=args.format == "text")
    _write(args.out or "-", text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossbar-qec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def code_flags(sp: argparse.ArgumentParser, required: bool = True) -> None:
        sp.add_argument("--code", choices=sorted(CODES), required=required)
        sp.add_argument("--distance", type=int, required=required)

    c = sub.add_parser("compile", help="compile one error-correction cycle")
    code_flags(c)
    c.add_argument("--cycle", choices=sorted(CYCLES), default="full")
    c.add_argument("--mode", choices=sorted(MODES), default="line")
    c.add_argument("--out", help="program file, or - for standard output")
    c.add_argument("--board-out", help="also write the initial board")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("schedule", help="schedule a set of shuttles")
    s.add_argument("--board", required=True)
    s.add_argument("--moves", required=True)
    s.add_argument("--subroutine", default="simple", help="simple, kcomm:K, greedy or line")
    s.add_argument("--axis", choices=("HS", "VS"), default="HS")
    s.add_argument("--extend", action="store_true", help="keep don't-care entries as wildcards")
    s.add_argument("--out", help="schedule file, or - for standard output")
    s.set_defaults(func=cmd_schedule)

    m = sub.add_parser("simulate", help="replay a program on a board")
    m.add_argument("--board", required=True)
    m.add_argument("--program", required=True)
    m.add_argument("--trace", action="store_true")
    m.add_argument("--final-board")
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="check every stabilizer face of a compiled cycle")
    code_flags(v)
    v.add_argument("--mode", choices=sorted(MODES), default="line")
    v.add_argument("--detail", action="store_true", help="print one line per face")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("analyze", help="logical-error curve over odd distances")
    a.add_argument("--params")
    a.add_argument("--dmin", type=int, default=3)
    a.add_argument("--dmax", type=int, default=199)
    a.add_argument("--out")
    a.add_argument(
        "--fixed-slope",
        "--paper-verbatim",
        dest="fixed_slope",
        action="store_true",
        help="replace decoherence with a fixed slope of 2.8e-5 per unit distance",
    )
    a.add_argument("--direct-pairing", action="store_true", help="use the per-qubit averages as is: 10 for shuttling, 3.5 for Z-by-waiting")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("board", help="produce or convert board files")
    b.add_argument("--in", dest="input")
    code_flags(b, required=False)
    b.add_argument("--config", choices=[c.value for c in grid.Configuration])
    b.add_argument("--n", type=int)
    b.add_argument("--format", choices=("text", "plain", "matrix"), default="text")
    b.add_argument("--out")
    b.set_defaults(func=cmd_board)
    return p


PARSE_ERRORS = (UsageError, grid.GridError, isa.AssemblySyntaxError, analysis.AnalysisError)
DOMAIN_ERRORS = (scheduler.SchedulerError, qec.QecError, isa.IsaError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "schedule":
            scheduler.SubroutineKind.parse(args.subroutine)
    except scheduler.SchedulerError as exc:
        parser.error(str(exc))
    try:
        return args.func(args)
    except PARSE_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except DOMAIN_ERRORS as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
