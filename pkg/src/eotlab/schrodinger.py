"""Log-domain Sinkhorn for the discrete Schroedinger problem on lumped states.

The minimizer factorizes as ``P(x, y) = f(x) g(y) exp(-C(x, y)/eps) mu(x) mu(y)``
and is constant on pair classes, so the scaling iteration only needs one
potential per lumped state.  A dense label-by-label solver is kept alongside as
an independent check for tiny instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .blockmodel import TruncatedModel, label_cost
from .sets import OFF, Diagonal, SetDescriptor, pair_classes

DENSE_LABEL_LIMIT = 200


class NonConvergence(RuntimeError):
    def __init__(self, max_iter: int, defect: float, eps: float | None = None):
        self.max_iter = max_iter
        self.defect = defect
        self.eps = eps
        where = f" at eps={eps!r}" if eps is not None else ""
        super().__init__(f"no convergence{where} after {max_iter} iterations "
                         f"(log-marginal defect {defect:.3e})")


class NumericalOverflow(ArithmeticError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    marginal_tol: float = 1e-12
    max_iter: int = 100_000

    def __post_init__(self):
        if not self.marginal_tol > 0:
            raise ValueError("marginal_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class Potentials:
    logf: np.ndarray
    logg: np.ndarray


@dataclass(frozen=True, eq=False)
class LumpedCoupling:
    """Coupling stored as one log-mass per ordered label pair of each class."""

    model: TruncatedModel
    eps: float
    logmass: np.ndarray
    potentials: Potentials | None = None
    iterations: int = 0
    defect: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def classes(self):
        return pair_classes(self.model)

    @property
    def count(self) -> tuple[int, ...]:
        return self.classes.count

    def class_logmass(self) -> np.ndarray:
        """log of the total mass carried by each class."""
        return self.logmass + self.classes.logcount

    def log_pair_mass(self, x, y) -> float:
        return float(self.logmass[self.classes.class_of(x, y)])

    def pair_mass(self, x, y) -> float:
        return math.exp(self.log_pair_mass(x, y))

    def log_marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """log of row / column sums divided by the atom mass, per lumped state."""
        pc = self.classes
        nstate = 2 * self.model.N
        per_x = self.class_logmass() - self.model.state_logmult[pc.row]
        per_y = self.class_logmass() - self.model.state_logmult[pc.col]
        rows = np.array([logsumexp(per_x[pc.row == s]) for s in range(nstate)])
        cols = np.array([logsumexp(per_y[pc.col == s]) for s in range(nstate)])
        return rows - self.model.state_logmu, cols - self.model.state_logmu

    def marginal_defect(self) -> float:
        r, c = self.log_marginals()
        return float(max(np.max(np.abs(r)), np.max(np.abs(c))))

    def total_logmass(self) -> float:
        return float(logsumexp(self.class_logmass()))

    def to_dict(self) -> dict:
        pc = self.classes
        out = {
            "eps": self.eps,
            "iterations": self.iterations,
            "defect": self.defect,
            "classes": [
                {"key": pc.key_str(c), "count": pc.count[c], "logmass": float(self.logmass[c])}
                for c in range(len(pc))
            ],
        }
        if self.potentials is not None:
            out["potentials"] = {"logf": self.potentials.logf.tolist(),
                                 "logg": self.potentials.logg.tolist()}
        return out

    def csv_rows(self) -> list[list]:
        pc = self.classes
        return [[pc.key_str(c), pc.count[c], float(pc.cost[c]), float(self.logmass[c])]
                for c in range(len(pc))]


def row_kernel(model: TruncatedModel, eps: float) -> np.ndarray:
    """log sum_{y in class t} exp(-C(x, y)/eps) for a fixed x in class s.

    By the symmetry of the cost the same matrix drives the column update.
    """
    pc = pair_classes(model)
    nstate = 2 * model.N
    per_x = pc.logcount - model.state_logmult[pc.row] - pc.cost / eps
    W = np.full((nstate, nstate), -np.inf)
    for c in range(len(pc)):
        s, t = pc.row[c], pc.col[c]
        W[s, t] = np.logaddexp(W[s, t], per_x[c])
    return W


def _check_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericalOverflow(f"non-finite values in {what}")


def solve(model: TruncatedModel, eps: float, config: SolverConfig | None = None,
          init: Potentials | None = None) -> tuple[LumpedCoupling, Potentials]:
    """Entropic minimizer on the lumped state space.

    One sweep updates logf then logg, after which both are replaced by their
    average.  The average is the symmetric fixed point (the model is invariant
    under swapping the two coordinates) and it removes the antisymmetric
    block-scaling mode that plain alternation only damps at rate ~exp(-L/eps).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    config = config or SolverConfig()
    W = row_kernel(model, eps)
    _check_finite(W, "kernel")
    logmu = model.state_logmu
    nstate = 2 * model.N
    if init is None:
        logf, logg = np.zeros(nstate), np.zeros(nstate)
    else:
        logf, logg = np.array(init.logf, float), np.array(init.logg, float)

    def row_lse(v):
        return logsumexp(W + (v + logmu)[None, :], axis=1)

    defect = math.inf
    for it in range(1, config.max_iter + 1):
        logf = -row_lse(logg)
        logg = -row_lse(logf)
        logf = logg = 0.5 * (logf + logg)
        _check_finite(logf, "potentials")
        # row and column defects coincide once logf == logg
        defect = float(np.max(np.abs(logf + row_lse(logg))))
        if defect < config.marginal_tol:
            break
    else:
        raise NonConvergence(config.max_iter, defect, eps)

    pot = Potentials(logf.copy(), logg.copy())
    pc = pair_classes(model)
    logmass = (logf[pc.row] + logg[pc.col] - pc.cost / eps
               + logmu[pc.row] + logmu[pc.col])
    _check_finite(logmass, "class log-masses")
    return LumpedCoupling(model, eps, logmass, pot, it, defect), pot


def diagonal_coupling(model: TruncatedModel) -> LumpedCoupling:
    """The zero-cost diagonal plan mu(x) 1{x = y}, with eps recorded as 0."""
    pc = pair_classes(model)
    diag = Diagonal().resolve(model)
    logmass = np.full(len(pc), -np.inf)
    for c in diag:
        logmass[c] = model.state_logmu[pc.row[c]]
    return LumpedCoupling(model, 0.0, logmass)


def _masked_lse(logs: np.ndarray) -> float:
    return float(logsumexp(logs)) if len(logs) else -math.inf


def coupling_mass(coupling: LumpedCoupling, region: SetDescriptor) -> tuple[float, float]:
    """(mass, log mass) of a set; the log value stays exact when the mass underflows."""
    resolved = region.resolve(coupling.model)
    if not resolved:
        return 0.0, -math.inf
    idx = np.fromiter(resolved.keys(), int)
    logcnt = np.array([math.log(n) for n in resolved.values()])
    lm = _masked_lse(coupling.logmass[idx] + logcnt)
    return math.exp(lm), lm


def _charged(coupling: LumpedCoupling) -> np.ndarray:
    return np.isfinite(coupling.logmass)


def transport_cost(coupling: LumpedCoupling) -> float:
    pc = coupling.classes
    ch = _charged(coupling)
    mass = np.exp(coupling.class_logmass()[ch])
    return math.fsum(mass * pc.cost[ch])


def kl_to_product(coupling: LumpedCoupling) -> float:
    pc = coupling.classes
    ch = _charged(coupling)
    logmu = coupling.model.state_logmu
    logref = logmu[pc.row[ch]] + logmu[pc.col[ch]]
    mass = np.exp(coupling.class_logmass()[ch])
    return math.fsum(mass * (coupling.logmass[ch] - logref))


def j_functional(coupling: LumpedCoupling) -> float:
    return transport_cost(coupling) + coupling.eps * kl_to_product(coupling)


def log_offdiagonal_mass(coupling: LumpedCoupling) -> float:
    pc = coupling.classes
    off = (pc.row != pc.col) | (pc.kind == OFF)
    return _masked_lse(coupling.class_logmass()[off & _charged(coupling)])


def tv_to_diagonal(coupling: LumpedCoupling) -> float:
    """P({x != y}), which equals the TV distance to the diagonal plan."""
    return math.exp(log_offdiagonal_mass(coupling))


def cross_ratio_residual(coupling: LumpedCoupling, x1, x2, y1, y2) -> float:
    model, eps = coupling.model, coupling.eps
    lp = coupling.log_pair_mass
    c = lambda x, y: label_cost(model, model.check_label(x), model.check_label(y))
    lhs = lp(x1, y1) + lp(x2, y2) + (c(x1, y1) + c(x2, y2)) / eps
    rhs = lp(x1, y2) + lp(x2, y1) + (c(x1, y2) + c(x2, y1)) / eps
    return abs(lhs - rhs)


def od_log_residuals(coupling: LumpedCoupling) -> np.ndarray:
    """Per block: (log o - log d) + b/eps, which vanishes for the exact minimizer."""
    model = coupling.model
    out = []
    for n in range(1, model.N + 1):
        d = coupling.log_pair_mass((n, 1), (n, 1))
        o = coupling.log_pair_mass((n, 1), (n, 2))
        out.append(o - d + model.b / coupling.eps)
    return np.array(out)


def swap_residuals(coupling: LumpedCoupling) -> np.ndarray:
    """Per block: log P((n,0),(n,1)) - log P((n,1),(n,0))."""
    return np.array([
        coupling.log_pair_mass((n, 0), (n, 1)) - coupling.log_pair_mass((n, 1), (n, 0))
        for n in range(1, coupling.model.N + 1)
    ])


def factorization_residual(coupling: LumpedCoupling) -> float:
    pot = coupling.potentials
    pc = coupling.classes
    logmu = coupling.model.state_logmu
    rebuilt = (pot.logf[pc.row] + pot.logg[pc.col] - pc.cost / coupling.eps
               + logmu[pc.row] + logmu[pc.col])
    return float(np.max(np.abs(rebuilt - coupling.logmass)))


def tv_between(p: LumpedCoupling, q: LumpedCoupling) -> float:
    pc = p.classes
    diff = np.abs(np.exp(p.logmass) - np.exp(q.logmass))
    return 0.5 * math.fsum(np.array(pc.count, float) * diff)


# ---------------------------------------------------------------------------
# dense label-level oracle


@dataclass(frozen=True, eq=False)
class DenseCoupling:
    """Label-by-label coupling in the canonical label order of ``model.labels()``."""

    model: TruncatedModel
    eps: float
    labels: tuple
    logP: np.ndarray
    iterations: int = 0
    defect: float = 0.0

    @property
    def P(self) -> np.ndarray:
        return np.exp(self.logP)

    def index(self, x) -> int:
        return self.labels.index(tuple(x))


def dense_cost_matrix(model: TruncatedModel) -> np.ndarray:
    labels = model.labels()
    return np.array([[label_cost(model, x, y) for y in labels] for x in labels])


def dense_solve_oracle(model: TruncatedModel, eps: float,
                       config: SolverConfig | None = None) -> DenseCoupling:
    """Sinkhorn over the full label grid (at most 200 labels)."""
    if model.n_labels > DENSE_LABEL_LIMIT:
        raise TooLarge(f"{model.n_labels} labels exceeds the dense limit {DENSE_LABEL_LIMIT}")
    config = config or SolverConfig()
    labels = model.labels()
    logmu = np.array([math.log(model.w[n - 1]) - math.log(model.m[n - 1] + 1)
                      for n, _ in labels])
    logK = -dense_cost_matrix(model) / eps + logmu[:, None] + logmu[None, :]
    u = np.zeros(len(labels))
    v = np.zeros(len(labels))
    defect = math.inf
    for it in range(1, config.max_iter + 1):
        u = logmu - logsumexp(logK + v[None, :], axis=1)
        v = logmu - logsumexp(logK + u[:, None], axis=0)
        u = v = 0.5 * (u + v)
        logP = logK + u[:, None] + v[None, :]
        defect = max(np.max(np.abs(logsumexp(logP, axis=1) - logmu)),
                     np.max(np.abs(logsumexp(logP, axis=0) - logmu)))
        if defect < config.marginal_tol:
            break
    else:
        raise NonConvergence(config.max_iter, float(defect), eps)
    return DenseCoupling(model, eps, tuple(labels), logP, it, float(defect))


def expand_to_labels(coupling: LumpedCoupling) -> DenseCoupling:
    """Per-label view of a lumped coupling (tiny models only)."""
    model = coupling.model
    if model.n_labels > DENSE_LABEL_LIMIT:
        raise TooLarge("too many labels to expand")
    labels = model.labels()
    pc = coupling.classes
    logP = np.array([[coupling.logmass[pc.class_of(x, y)] for y in labels] for x in labels])
    return DenseCoupling(model, coupling.eps, tuple(labels), logP)


def aggregate_dense(dense: DenseCoupling) -> np.ndarray:
    """Total mass per pair class of a dense coupling."""
    pc = pair_classes(dense.model)
    out = np.zeros(len(pc))
    P = dense.P
    for a, x in enumerate(dense.labels):
        for b, y in enumerate(dense.labels):
            out[pc.class_of(x, y)] += P[a, b]
    return out


def tv_lumped_vs_dense(coupling: LumpedCoupling, dense: DenseCoupling) -> float:
    """TV between class totals of the two solutions."""
    lumped_tot = np.exp(coupling.class_logmass())
    return 0.5 * math.fsum(np.abs(lumped_tot - aggregate_dense(dense)))
