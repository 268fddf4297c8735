"""Timing and error model for a distance-d surface-code cycle.

All functions are plain arithmetic, so passing :class:`fractions.Fraction`
parameters yields exact rational results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .qec import CyclePlan

CLASSES = ("sqrtswap", "shuttle", "zwait", "global", "measurement")
PARAM_KEYS = {
    "p_sw": "p_sw",
    "p_sh": "p_sh",
    "p_z": "p_z",
    "p_gl": "p_gl",
    "p_m": "p_m",
    "tau_sw_ns": "tau_sw",
    "tau_sh_ns": "tau_sh",
    "tau_z_ns": "tau_z",
    "tau_gl_ns": "tau_gl",
    "tau_m_ns": "tau_m",
    "t2_ns": "t2",
    "p_th": "p_th",
}
CSV_HEADER = "d,tau_total_ns,p_dec,p_tot,p_logical"
FIXED_SLOPE = Fraction(28, 10**6)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorParams:
    """Per-operation error probabilities, durations in ns, T2 and threshold."""

    p_sw: Real = Fraction(1, 1000)
    p_sh: Real = Fraction(1, 1000)
    p_z: Real = Fraction(1, 1000)
    p_gl: Real = Fraction(1, 1000)
    p_m: Real = Fraction(1, 1000)
    tau_sw: Real = 20
    tau_sh: Real = 10
    tau_z: Real = 100
    tau_gl: Real = 1000
    tau_m: Real = 100
    t2: Real = 10**9
    p_th: Real = Fraction(57, 10000)
    steps_per_cycle_factor: int = 8

    def __post_init__(self) -> None:
        for name in ("p_sw", "p_sh", "p_z", "p_gl", "p_m", "p_th"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise AnalysisError(f"{name}={v} outside [0,1]")
        for name in ("tau_sw", "tau_sh", "tau_z", "tau_gl", "tau_m", "t2"):
            if not getattr(self, name) > 0:
                raise AnalysisError(f"{name} must be positive")
        if self.steps_per_cycle_factor <= 0:
            raise AnalysisError("steps_per_cycle_factor must be positive")

    @classmethod
    def parse(cls, text: str) -> "ErrorParams":
        """Read flat ``key = value`` lines; ``#`` starts a comment."""
        values: dict[str, Real] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (s.strip() for s in line.partition("="))
            if not sep or key not in PARAM_KEYS:
                raise AnalysisError(f"line {lineno}: cannot parse {raw!r}")
            try:
                values[PARAM_KEYS[key]] = Fraction(val)
            except ValueError as exc:
                raise AnalysisError(f"line {lineno}: bad number {val!r}") from exc
        return cls(**values)

    def dumps(self) -> str:
        return "".join(f"{k} = {getattr(self, a)}\n" for k, a in PARAM_KEYS.items())


@dataclass(frozen=True)
class CountModel:
    """Time-step coefficients per unit distance and per-qubit average gate counts.

    ``steps`` maps each class to its per-distance slope, except ``global``,
    which is a distance-independent constant. ``per_qubit`` holds the
    average number of operations of each class a qubit takes part in.
    """

    steps: dict[str, Real] = field(
        default_factory=lambda: {"sqrtswap": 16, "shuttle": 32, "zwait": 14, "global": 6, "measurement": 2}
    )
    per_qubit: dict[str, Real] = field(
        default_factory=lambda: {
            "sqrtswap": 8,
            "shuttle": 10,
            "zwait": Fraction(7, 2),
            "global": Fraction(9, 2),
            "measurement": 1,
        }
    )
    # When set, the shuttle and Z-by-waiting averages trade places in the
    # error sum, giving 3.5 to shuttling and 10 to Z-by-waiting.
    swap_shuttle_zwait: bool = True

    def operation_coefficients(self) -> dict[str, Real]:
        c = dict(self.per_qubit)
        if self.swap_shuttle_zwait:
            c["shuttle"], c["zwait"] = c["zwait"], c["shuttle"]
        return c

    @classmethod
    def from_plan(
        cls,
        plan: "CyclePlan",
        data_site: tuple[int, int] | None = None,
        ancilla_site: tuple[int, int] | None = None,
        swap_shuttle_zwait: bool = False,
    ) -> "CountModel":
        """Measure the model from a compiled surface-code cycle."""
        from .qec import Role, code_layout, qubit_totals

        d = plan.spec.distance
        tallies = plan.program.tallies()
        steps: dict[str, Real] = {c: Fraction(tallies.get(c, 0), d) for c in CLASSES}
        steps["global"] = tallies.get("global", 0)
        if data_site is None or ancilla_site is None:
            lay = code_layout(plan.spec)
            data = sorted(s for s, r in lay.roles.items() if r is Role.DATA)
            anc = sorted(f.ancilla for f in lay.faces if f.basis == "Z")
            data_site = data_site or tuple(data[len(data) // 2])
            ancilla_site = ancilla_site or tuple(anc[len(anc) // 2])
        a = qubit_totals(plan, data_site)
        b = qubit_totals(plan, ancilla_site)
        per_qubit = {c: Fraction(a[c] + b[c], 2) for c in CLASSES}
        return cls(steps=steps, per_qubit=per_qubit, swap_shuttle_zwait=swap_shuttle_zwait)


DEFAULT_COUNTS = CountModel()


@dataclass(frozen=True)
class CurvePoint:
    d: int
    tau_total: Real
    p_dec: Real
    p_tot: Real
    p_logical: Real

    @property
    def warning(self) -> bool:
        """True when a probability exceeds 1, which the model does not clamp."""
        return any(v > 1 for v in (self.p_dec, self.p_tot, self.p_logical))

    def csv_row(self) -> str:
        return f"{self.d},{_num(self.tau_total)},{_sci(self.p_dec)},{_sci(self.p_tot)},{_sci(self.p_logical)}"


def _num(x: Real) -> str:
    return f"{float(x):.6g}"


def _sci(x: Real) -> str:
    return f"{float(x):.5e}"


def _check_d(d: int, minimum: int = 0) -> None:
    if d < minimum:
        raise AnalysisError(f"distance {d} below {minimum}")


def tau_total(d: int, params: ErrorParams = ErrorParams(), counts: CountModel = DEFAULT_COUNTS) -> Real:
    """Cycle duration in ns."""
    _check_d(d)
    s = counts.steps
    return (
        s["sqrtswap"] * d * params.tau_sw
        + s["shuttle"] * d * params.tau_sh
        + s["zwait"] * d * params.tau_z
        + s["global"] * params.tau_gl
        + s["measurement"] * d * params.tau_m
    )


def p_dec(d: int, params: ErrorParams = ErrorParams(), counts: CountModel = DEFAULT_COUNTS) -> Real:
    """Decoherence-induced error probability of one cycle."""
    return Fraction(tau_total(d, params, counts)) / (2 * params.t2)


def p_operation(params: ErrorParams = ErrorParams(), counts: CountModel = DEFAULT_COUNTS) -> Real:
    """Distance-independent operation-induced error per qubit per cycle."""
    c = counts.operation_coefficients()
    return (
        c["sqrtswap"] * params.p_sw
        + c["shuttle"] * params.p_sh
        + c["zwait"] * params.p_z
        + c["global"] * params.p_gl
        + c["measurement"] * params.p_m
    )


def p_tot(
    d: int,
    params: ErrorParams = ErrorParams(),
    counts: CountModel = DEFAULT_COUNTS,
    fixed_slope: bool = False,
) -> Real:
    """Average error per qubit per cycle.

    With ``fixed_slope`` the decoherence term is replaced by an affine
    slope of 2.8e-5 per unit distance.
    """
    _check_d(d)
    slope = FIXED_SLOPE * d if fixed_slope else p_dec(d, params, counts)
    return p_operation(params, counts) + slope


def p_logical(
    d: int,
    params: ErrorParams = ErrorParams(),
    counts: CountModel = DEFAULT_COUNTS,
    fixed_slope: bool = False,
) -> Real:
    """Empirical logical error per cycle for odd ``d >= 3``."""
    if d < 3 or d % 2 == 0:
        raise AnalysisError(f"distance must be odd and at least 3, got {d}")
    ratio = p_tot(d, params, counts, fixed_slope) / (params.steps_per_cycle_factor * params.p_th)
    return Fraction(3, 100) * ratio ** ((d + 1) // 2)


def point(d: int, params: ErrorParams = ErrorParams(), counts: CountModel = DEFAULT_COUNTS, fixed_slope: bool = False) -> CurvePoint:
    return CurvePoint(
        d=d,
        tau_total=tau_total(d, params, counts),
        p_dec=FIXED_SLOPE * d if fixed_slope else p_dec(d, params, counts),
        p_tot=p_tot(d, params, counts, fixed_slope),
        p_logical=p_logical(d, params, counts, fixed_slope),
    )


def _odd_range(lo: int, hi: int) -> range:
    lo = max(3, lo + (lo % 2 == 0))
    return range(lo, hi + 1, 2)


def sweep(
    params: ErrorParams = ErrorParams(),
    counts: CountModel = DEFAULT_COUNTS,
    d_min: int = 3,
    d_max: int = 199,
    fixed_slope: bool = False,
) -> list[CurvePoint]:
    """Curve points for every odd d in ``[d_min, d_max]``."""
    if d_min > d_max:
        raise AnalysisError("d_min exceeds d_max")
    return [point(d, params, counts, fixed_slope) for d in _odd_range(d_min, d_max)]


def _log_pl(d: int, params: ErrorParams, counts: CountModel, fixed_slope: bool) -> float:
    ratio = p_tot(d, params, counts, fixed_slope) / (params.steps_per_cycle_factor * params.p_th)
    if ratio <= 0:
        return -math.inf
    return math.log(0.03) + (d + 1) // 2 * math.log(ratio)


def optimal_distance(
    params: ErrorParams = ErrorParams(), counts: CountModel = DEFAULT_COUNTS, d_max: int = 199, fixed_slope: bool = False
) -> int:
    """Odd d ≤ ``d_max`` minimizing the logical error; ties go to the smaller d."""
    ds = list(_odd_range(3, d_max))
    if not ds:
        raise AnalysisError("d_max below 3")
    return min(ds, key=lambda d: (_log_pl(d, params, counts, fixed_slope), d))


def crossing_distance(
    params: ErrorParams = ErrorParams(),
    counts: CountModel = DEFAULT_COUNTS,
    target: Real = Fraction(1, 10**20),
    d_max: int = 10**5,
    fixed_slope: bool = False,
) -> int | None:
    """Smallest odd d with logical error at most ``target``, scanning upward."""
    goal = math.log(target) if target > 0 else -math.inf
    for d in _odd_range(3, d_max):
        if _log_pl(d, params, counts, fixed_slope) <= goal:
            return d
    return None


def curve_csv(points: Iterable[CurvePoint]) -> str:
    return CSV_HEADER + "\n" + "".join(p.csv_row() + "\n" for p in points)


def warnings(points: Sequence[CurvePoint]) -> list[int]:
    """Distances whose probabilities exceed 1."""
    return [p.d for p in points if p.warning]
