"""Large-deviation measurements and bound checks on solved couplings.

All masses go through the log domain.  A "tail estimate" is the value of
``eps * log P_eps(set)`` at the smallest scheduled eps; traces also carry the
spread over their last five rows as a crude picture of the remaining
oscillation.  None of this computes a true limsup.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .blockmodel import TruncatedModel, entropy_H
from .rate import rate_band, rate_table
from .schrodinger import (
    LumpedCoupling, NonConvergence, SolverConfig, coupling_mass, solve, tv_to_diagonal,
)
from .sets import (
    Cls, FirstRBlocksComplement, Intersection, OffDiagonalHigh, SetDescriptor, SinglePair,
    Superlevel, pair_classes,
)


class InvalidDelta(ValueError):
    pass


# ---------------------------------------------------------------------------
# schedules and batched solves


@dataclass(frozen=True)
class Harmonic:
    """eps_n = 1/n for n_min <= n <= n_max."""

    n_max: int
    n_min: int = 1
    kind = "harmonic"

    def eps_values(self) -> list[float]:
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        return [1.0 / n for n in range(self.n_min, self.n_max + 1)]


@dataclass(frozen=True)
class Geometric:
    start: float
    ratio: float
    num: int
    kind = "geometric"

    def eps_values(self) -> list[float]:
        if not (self.start > 0 and 0 < self.ratio < 1 and self.num >= 1):
            raise ValueError("need start > 0, 0 < ratio < 1, num >= 1")
        return [self.start * self.ratio ** k for k in range(self.num)]


@dataclass(frozen=True)
class ExplicitEps:
    values: tuple[float, ...]
    kind = "explicit"

    def eps_values(self) -> list[float]:
        vals = list(self.values)
        if any(not v > 0 for v in vals) or any(u <= v for u, v in zip(vals, vals[1:])):
            raise ValueError("eps values must be positive and strictly decreasing")
        return vals


Schedule = Harmonic | Geometric | ExplicitEps


def default_threads() -> int:
    env = os.environ.get("EOTLAB_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def solve_schedule(model: TruncatedModel, eps_values: Iterable[float],
                   config: SolverConfig | None = None, threads: int | None = None,
                   solutions: dict | None = None) -> dict[float, LumpedCoupling]:
    """Solve at every eps (reusing entries already in ``solutions``)."""
    out = dict(solutions or {})
    todo = [e for e in dict.fromkeys(eps_values) if e not in out]
    threads = threads or default_threads()

    def one(eps):
        return solve(model, eps, config)[0]

    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, todo))
    else:
        results = [one(e) for e in todo]
    out.update(zip(todo, results))
    return out


# ---------------------------------------------------------------------------
# exponent traces


@dataclass(frozen=True)
class ExponentTrace:
    region: SetDescriptor
    rows: tuple[tuple[float, float, float], ...]  # (eps, logmass, eps * logmass)
    schedule_kind: str

    @property
    def tail_estimate(self) -> float:
        return self.rows[-1][2]

    def oscillation(self, last: int = 5) -> float:
        vals = [r[2] for r in self.rows[-last:] if np.isfinite(r[2])]
        return max(vals) - min(vals) if vals else 0.0

    def csv_rows(self) -> list[list[float]]:
        return [list(r) for r in self.rows]


def exponent_sweep(model: TruncatedModel, region: SetDescriptor, schedule: Schedule,
                   config: SolverConfig | None = None,
                   solutions: dict | None = None) -> ExponentTrace:
    eps_values = schedule.eps_values()
    sols = solve_schedule(model, eps_values, config, solutions=solutions)
    if solutions is not None:
        solutions.update(sols)
    rows = []
    for eps in eps_values:
        _, lm = coupling_mass(sols[eps], region)
        rows.append((eps, lm, eps * lm if np.isfinite(lm) else -math.inf))
    return ExponentTrace(region, tuple(rows), schedule.kind)


@dataclass(frozen=True)
class BetaTable:
    rows: tuple[tuple[int, float], ...]  # (R, tail estimate of F minus K_R)
    traces: tuple[ExponentTrace, ...] = field(repr=False, default=())

    @property
    def final(self) -> float:
        return self.rows[-1][1]

    def monotone(self, slack: float = 1e-9) -> bool:
        vals = [v for _, v in self.rows if np.isfinite(v)]
        return all(v <= u + slack for u, v in zip(vals, vals[1:]))


def beta_estimate(model: TruncatedModel, F: SetDescriptor, R_list: Sequence[int],
                  schedule: Schedule, config: SolverConfig | None = None,
                  solutions: dict | None = None) -> BetaTable:
    R_list = list(R_list)
    if any(u >= v for u, v in zip(R_list, R_list[1:])) or not R_list or R_list[-1] >= model.N:
        raise ValueError("R_list must be strictly increasing with max R < N")
    solutions = {} if solutions is None else solutions
    traces = [exponent_sweep(model, Intersection(F, FirstRBlocksComplement(R)), schedule,
                             config, solutions) for R in R_list]
    return BetaTable(tuple((R, t.tail_estimate) for R, t in zip(R_list, traces)), tuple(traces))


# ---------------------------------------------------------------------------
# bound reports


@dataclass(frozen=True)
class BoundReport:
    """lhs <= rhs + slack; ``scale`` says whether both sides are logs."""

    name: str
    lhs: float
    rhs: float
    slack: float = 0.0
    n: int | None = None
    eps: float | None = None
    scale: str = "linear"
    hard: bool = True
    details: tuple = ()

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs + self.slack)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
            "pass": self.passed, "n": self.n, "eps": self.eps, "scale": self.scale,
            "hard": self.hard, "details": [list(d) for d in self.details],
        }


LOG_SLACK = 1e-12


@dataclass(frozen=True)
class BlockQuantities:
    n: int
    eps: float
    log_d: float
    log_o: float
    log_r: float
    log_e: float
    log_delta: float
    log_F_n: float


def block_quantities(coupling: LumpedCoupling, n: int) -> BlockQuantities:
    model = coupling.model
    pc = pair_classes(model)
    clm = coupling.class_logmass()
    out_of_block = (pc.row_block == n) & (pc.col_block != n)
    high_row = pc.row == model.state_index(n, Cls.H)
    log_e = float(logsumexp(clm[out_of_block & high_row])) - math.log(model.m[n - 1])
    return BlockQuantities(
        n=n, eps=coupling.eps,
        log_d=coupling.log_pair_mass((n, 1), (n, 1)),
        log_o=coupling.log_pair_mass((n, 1), (n, 2)),
        log_r=coupling.log_pair_mass((n, 1), (n, 0)),
        log_e=log_e,
        log_delta=float(logsumexp(clm[out_of_block])),
        log_F_n=coupling_mass(coupling, OffDiagonalHigh(n))[1],
    )


def rowsum_residual(model: TruncatedModel, q: BlockQuantities) -> float:
    """Relative residual of mu((n,1)) = d + (m-1) o + r + e."""
    mn = model.m[q.n - 1]
    mu = model.w[q.n - 1] / (mn + 1)
    total = math.fsum([math.exp(q.log_d), (mn - 1) * math.exp(q.log_o),
                       math.exp(q.log_r), math.exp(q.log_e)])
    return abs(total - mu) / mu


@dataclass(frozen=True)
class BlockEstimateReport:
    reports: tuple[BoundReport, ...]
    quantities: tuple[BlockQuantities, ...]
    n0_b: int | None
    n0_c: int | None

    def by_name(self, prefix: str) -> list[BoundReport]:
        return [r for r in self.reports if r.name.startswith(prefix)]


def _threshold(reports: list[BoundReport]) -> int | None:
    """Smallest n from which every later report passes."""
    n0 = None
    for r in sorted(reports, key=lambda r: r.n, reverse=True):
        if not r.passed:
            break
        n0 = r.n
    return n0


def block_estimates_check(model: TruncatedModel, n_range: Iterable[int] | None = None,
                          config: SolverConfig | None = None,
                          solutions: dict | None = None,
                          rowsum_tol: float = 1e-10) -> BlockEstimateReport:
    """Check the eps_n = 1/n block bounds and their bookkeeping identities per block."""
    ns = list(n_range) if n_range is not None else list(range(1, model.N + 1))
    sols = solve_schedule(model, [1.0 / n for n in ns], config, solutions=solutions)
    if solutions is not None:
        solutions.update(sols)
    H = entropy_H(model)
    b, kappa = model.b, model.kappa
    reports, quants = [], []
    for n in ns:
        eps = 1.0 / n
        q = block_quantities(sols[eps], n)
        quants.append(q)
        mn, Ln, wn = model.m[n - 1], model.L[n - 1], model.w[n - 1]
        log_delta_bound = math.log(eps * H / (2 * Ln))
        common = dict(n=n, eps=eps, scale="log", slack=LOG_SLACK)
        reports += [
            BoundReport("a:delta", q.log_delta, log_delta_bound, **common),
            BoundReport("b:diag", math.log(wn / (4 * (mn + 1))), q.log_d, hard=False, **common),
            BoundReport("c:F_n", math.log(wn / 16) - (b - kappa) * n, q.log_F_n,
                        hard=False, **common),
            BoundReport("e:vs_delta", q.log_e, q.log_delta - math.log(mn), **common),
            BoundReport("e:bound", q.log_e, log_delta_bound - math.log(mn), **common),
            BoundReport("r:bound", q.log_r, math.log(wn / (mn * (mn + 1))), **common),
            BoundReport("rowsum", rowsum_residual(model, q), rowsum_tol, n=n, eps=eps),
        ]
    n0_b = _threshold([r for r in reports if r.name == "b:diag"])
    n0_c = _threshold([r for r in reports if r.name == "c:F_n"])
    return BlockEstimateReport(tuple(reports), tuple(quants), n0_b, n0_c)


def exp_tightness_witness(model: TruncatedModel, R: int, schedule: Schedule,
                          config: SolverConfig | None = None,
                          solutions: dict | None = None) -> BoundReport:
    """P_eps(K_R^c) >= mu(blocks > R) at every scheduled eps.

    The slack is the solver's marginal tolerance relative to the bound, since the
    first marginal is only matched to that accuracy.
    """
    if not 0 <= R < model.N:
        raise ValueError("need 0 <= R < N")
    config = config or SolverConfig()
    trace = exponent_sweep(model, FirstRBlocksComplement(R), schedule, config, solutions)
    bound = math.fsum(model.w[R:])
    worst = min(math.exp(lm) for _, lm, _ in trace.rows)
    return BoundReport(
        f"tightness:R={R}", bound, worst, slack=config.marginal_tol * bound,
        details=tuple((eps, math.exp(lm), elm) for eps, lm, elm in trace.rows),
    )


# ---------------------------------------------------------------------------
# total variation trace


@dataclass(frozen=True)
class TVTrace:
    rows: tuple[tuple[float, float, float], ...]  # (eps, tv, eps * H / a)

    @property
    def bound_ok(self) -> bool:
        return all(tv <= bnd for _, tv, bnd in self.rows)

    def decreasing(self, slack: float = 1e-12) -> bool:
        tvs = [r[1] for r in self.rows]
        return all(v <= u + slack for u, v in zip(tvs, tvs[1:]))


def tv_trace(model: TruncatedModel, schedule: Schedule, config: SolverConfig | None = None,
             solutions: dict | None = None) -> TVTrace:
    eps_values = schedule.eps_values()
    sols = solve_schedule(model, eps_values, config, solutions=solutions)
    if solutions is not None:
        solutions.update(sols)
    H = entropy_H(model)
    # the smallest off-diagonal cost is a (min over a, b and the cross-block costs)
    c0 = min(model.a, model.b, 2 * min(model.L))
    return TVTrace(tuple((e, tv_to_diagonal(sols[e]), e * H / c0) for e in eps_values))


# ---------------------------------------------------------------------------
# large-deviation reports


def _inf_lo(model: TruncatedModel, region: SetDescriptor, kmax: int) -> float:
    cached = model.__dict__.get("_rate_tables", {}).get(kmax)
    if cached is not None:
        return min(cached[c].lo for c in region.resolve(model))
    pc = pair_classes(model)
    return min(rate_band(model, pc.representative(c), kmax).lo for c in region.resolve(model))


@dataclass(frozen=True)
class ViolationReport:
    measured: float
    oscillation: float
    inf_rate_lo: float
    margin: float
    verdict: str
    control_exponent: float
    control_rate_lo: float
    control_consistent: bool
    trace: ExponentTrace = field(repr=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "measured", "oscillation", "inf_rate_lo", "margin", "verdict",
            "control_exponent", "control_rate_lo", "control_consistent")}


def closed_set_violation_report(model: TruncatedModel, schedule: Schedule, kmax: int = 2,
                                margin: float = 0.15, config: SolverConfig | None = None,
                                solutions: dict | None = None) -> ViolationReport:
    """Measured F-exponent against -inf_F(rate lower bound), plus a single-rectangle control."""
    solutions = {} if solutions is None else solutions
    F = OffDiagonalHigh()
    trace = exponent_sweep(model, F, schedule, config, solutions)
    lo = _inf_lo(model, F, kmax)
    measured = trace.tail_estimate
    verdict = "exhibited" if measured >= -lo + margin else "inconclusive"
    N = model.N
    rect = SinglePair((N, 1), (N, 2))
    ctrl = exponent_sweep(model, rect, schedule, config, solutions).tail_estimate
    ctrl_lo = _inf_lo(model, rect, kmax)
    return ViolationReport(measured, trace.oscillation(), lo, margin, verdict, ctrl, ctrl_lo,
                           ctrl <= -ctrl_lo, trace)


@dataclass(frozen=True)
class SuperlevelReport:
    delta: float
    contains_F: bool
    indeterminate: tuple[str, ...]
    rows: tuple[tuple[int, float], ...]  # (R, tail estimate on superlevel minus K_R)
    estimate: float
    lower_target: float
    meets_lower_target: bool
    exceeds_minus_delta: bool

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "delta", "contains_F", "estimate", "lower_target", "meets_lower_target",
            "exceeds_minus_delta")}
        d["indeterminate_classes"] = list(self.indeterminate)
        d["rows"] = [list(r) for r in self.rows]
        return d


def superlevel_tail_check(model: TruncatedModel, delta: float, R_list: Sequence[int],
                          schedule: Schedule, kmax: int = 2, margin: float = 0.15,
                          config: SolverConfig | None = None,
                          solutions: dict | None = None) -> SuperlevelReport:
    a, b, kappa = model.a, model.b, model.kappa
    if not (b - kappa < delta < b - 2 * a):
        raise InvalidDelta(f"delta must lie in the open interval ({b - kappa}, {b - 2 * a})")
    solutions = {} if solutions is None else solutions
    pc = pair_classes(model)
    table = rate_table(model, kmax)
    sup = Superlevel(delta, {c: band.lo for c, band in table.items()})
    members = sup.resolve(model)
    contains_F = all(c in members for c in OffDiagonalHigh().resolve(model))
    indeterminate = tuple(pc.key_str(c) for c, band in table.items()
                          if band.lo <= delta < band.hi)
    rows = []
    for R in R_list:
        tr = exponent_sweep(model, Intersection(sup, FirstRBlocksComplement(R)), schedule,
                            config, solutions)
        rows.append((R, tr.tail_estimate))
    estimate = min(v for _, v in rows)
    target = -(b - kappa) - margin
    return SuperlevelReport(delta, contains_F, indeterminate, tuple(rows), estimate, target,
                            estimate >= target, estimate > -delta)


@dataclass(frozen=True)
class ContradictionReport:
    eps_rect: float
    rectangle_rows: tuple[tuple[int, float], ...]  # (block n, eps log P(R_{n,1,2}))
    rect_margin: float
    rectangles_near_minus_b: bool
    F_exponent: float
    F_margin: float
    F_meets_bound: bool
    gap: float

    @property
    def contradiction_exhibited(self) -> bool:
        return self.rectangles_near_minus_b and self.F_meets_bound and self.gap > 0

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "eps_rect", "rect_margin", "rectangles_near_minus_b", "F_exponent", "F_margin",
            "F_meets_bound", "gap")}
        d["rectangle_rows"] = [list(r) for r in self.rectangle_rows]
        d["contradiction_exhibited"] = self.contradiction_exhibited
        return d


def no_ldp_contradiction_report(model: TruncatedModel, schedule: Schedule,
                                eps_rect: float = 0.02, rect_margin: float = 0.1,
                                F_margin: float = 0.15, blocks: Sequence[int] | None = None,
                                config: SolverConfig | None = None,
                                solutions: dict | None = None) -> ContradictionReport:
    """Rectangle exponents near -b together with an F-exponent near -(b - kappa).

    Every off-diagonal high rectangle of block n lies in the same pair class, so
    sampling (n, 1, 2) per block covers all of them.
    """
    solutions = {} if solutions is None else solutions
    b, kappa = model.b, model.kappa
    blocks = list(blocks) if blocks is not None else list(range(1, model.N + 1))
    sol = solve_schedule(model, [eps_rect], config, solutions=solutions)[eps_rect]
    solutions[eps_rect] = sol
    rect_rows = tuple((n, eps_rect * sol.log_pair_mass((n, 1), (n, 2))) for n in blocks)
    near = all(abs(v + b) <= rect_margin for _, v in rect_rows)
    F_exp = exponent_sweep(model, OffDiagonalHigh(), schedule, config, solutions).tail_estimate
    meets = F_exp >= -(b - kappa) - F_margin
    return ContradictionReport(eps_rect, rect_rows, rect_margin, near, F_exp, F_margin, meets,
                               kappa - rect_margin - F_margin)


__all__ = [
    "Harmonic", "Geometric", "ExplicitEps", "InvalidDelta", "NonConvergence",
    "solve_schedule", "exponent_sweep", "ExponentTrace", "beta_estimate", "BetaTable",
    "BoundReport", "block_estimates_check", "block_quantities", "exp_tightness_witness",
    "tv_trace", "closed_set_violation_report", "superlevel_tail_check",
    "no_ldp_contradiction_report",
]
