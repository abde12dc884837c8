"""Interval lift of the label model to a nonatomic one on a closed subset of R.

Label ``(n, i)`` becomes the unit interval ``[M_n + 3i, M_n + 3i + 1]`` with
``M_1 = 0`` and ``M_{n+1} = M_n + 3(m_n + 1)``.  Continuous couplings are kept
symbolically as block-constant (or grid-constant) densities, so every integral
below is a finite sum.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .blockmodel import Label, TruncatedModel, label_cost
from .rate import RateBand, rate_band
from .schrodinger import LumpedCoupling
from .sets import pair_classes

# exhaustive interval enumeration beyond this count falls back to the per-block formula
EXHAUSTIVE_GAP_LIMIT = 2_000_000


class OutsideSupport(ValueError):
    pass


class MissingConditional(KeyError):
    pass


@dataclass(frozen=True)
class LiftGeometry:
    model: TruncatedModel
    M: tuple[float, ...]  # M[0] = M_1, ..., M[N] = M_{N+1}

    def interval(self, x) -> tuple[float, float]:
        n, i = self.model.check_label(x)
        left = self.M[n - 1] + 3 * i
        return left, left + 1.0

    def length(self, x) -> float:
        lo, hi = self.interval(x)
        return hi - lo

    def to_dict(self) -> dict:
        return {
            "M": list(self.M),
            "blocks": [
                {"n": n, "first": list(self.interval((n, 0))),
                 "last": list(self.interval((n, self.model.m[n - 1])))}
                for n in range(1, self.model.N + 1)
            ],
        }


def min_gap(geometry: LiftGeometry) -> float:
    """Smallest distance between consecutive intervals, by enumeration when feasible."""
    model = geometry.model
    if model.n_labels <= EXHAUSTIVE_GAP_LIMIT:
        lefts = np.concatenate([geometry.M[n - 1] + 3.0 * np.arange(model.m[n - 1] + 1)
                                for n in range(1, model.N + 1)])
        rights = lefts + 1.0
        return float(np.min(lefts[1:] - rights[:-1]))
    gaps = [2.0]  # within a block: left ends 3 apart, length 1
    for n in range(1, model.N):
        gaps.append(geometry.interval((n + 1, 0))[0] - geometry.interval((n, model.m[n - 1]))[1])
    return min(gaps)


def build_geometry(model: TruncatedModel) -> LiftGeometry:
    M = [0.0]
    for mn in model.m:
        M.append(M[-1] + 3.0 * (mn + 1))
    geom = LiftGeometry(model, tuple(M))
    gap = min_gap(geom)
    if gap < 2.0:
        raise AssertionError(f"intervals closer than 2 (min gap {gap})")
    return geom


def label_of(geometry: LiftGeometry, x: float) -> Label | None:
    M = geometry.M
    if x < M[0]:
        return None
    n = bisect.bisect_right(M, x)  # M[n-1] <= x < M[n]
    if n > geometry.model.N:
        return None
    offset = x - M[n - 1]
    i = math.floor(offset / 3.0)
    if i > geometry.model.m[n - 1] or offset - 3 * i > 1.0:
        return None
    return Label(n, i)


@dataclass(frozen=True)
class LiftedCoupling:
    """Density base(a, b) on each unit rectangle I_a x I_b, uniform inside."""

    base: LumpedCoupling
    geometry: LiftGeometry

    def rectangle_logmass(self, alpha, beta) -> float:
        area = self.geometry.length(alpha) * self.geometry.length(beta)
        log_density = self.base.log_pair_mass(alpha, beta) - math.log(area)
        return log_density + math.log(area)

    def rectangle_mass(self, alpha, beta) -> float:
        return math.exp(self.rectangle_logmass(alpha, beta))

    def first_marginal_mass(self, alpha) -> float:
        """mu(I_alpha): sum over beta of the rectangle masses in the row of alpha."""
        model = self.base.model
        pc = pair_classes(model)
        s = pc.class_of(alpha, alpha)
        row = pc.row[s]
        sel = np.flatnonzero(pc.row == row)
        per_x = self.base.class_logmass()[sel] - model.state_logmult[row]
        return float(np.exp(per_x).sum())

    def transport_cost(self) -> float:
        """Integral of the rectangle-constant cost against the lifted density."""
        pc = pair_classes(self.base.model)
        total = []
        for c in range(len(pc)):
            x, y = pc.representative(c)
            total.append(pc.count[c] * label_cost(self.base.model, x, y)
                         * self.rectangle_mass(x, y))
        return math.fsum(total)


def lift(coupling: LumpedCoupling, geometry: LiftGeometry) -> LiftedCoupling:
    if geometry.model is not coupling.model:
        raise ValueError("geometry and coupling belong to different models")
    return LiftedCoupling(coupling, geometry)


def coarse_grain(lifted: LiftedCoupling) -> LumpedCoupling:
    """Rectangle masses read back as label masses."""
    base = lifted.base
    pc = pair_classes(base.model)
    logmass = np.array([lifted.rectangle_logmass(*pc.representative(c)) for c in range(len(pc))])
    return LumpedCoupling(base.model, base.eps, logmass)


def _label_masses(p) -> tuple[np.ndarray, np.ndarray]:
    """(mass per pair, multiplicity) arrays for a lumped or dense label coupling."""
    if isinstance(p, LumpedCoupling):
        return np.exp(p.logmass), np.array(p.count, float)
    return np.exp(p.logP).ravel(), np.ones(p.logP.size)


def _rect_areas(p, geometry: LiftGeometry) -> np.ndarray:
    if isinstance(p, LumpedCoupling):
        pc = pair_classes(p.model)
        reps = [pc.representative(c) for c in range(len(pc))]
    else:
        reps = [(x, y) for x in p.labels for y in p.labels]
    return np.array([geometry.length(x) * geometry.length(y) for x, y in reps])


def tv_isometry_check(p, q, geometry: LiftGeometry) -> tuple[float, float, float]:
    """TV of the lifted densities against TV of the label masses.

    ``p`` and ``q`` are both lumped or both dense couplings on ``geometry.model``.
    """
    if type(p) is not type(q):
        raise TypeError("compare couplings of the same representation")
    pm, mult = _label_masses(p)
    qm, _ = _label_masses(q)
    areas = _rect_areas(p, geometry)
    dens_diff = np.abs(pm / areas - qm / areas)
    lhs = 0.5 * math.fsum(mult * areas * dens_diff)
    rhs = 0.5 * math.fsum(mult * np.abs(pm - qm))
    return lhs, rhs, abs(lhs - rhs)


@dataclass(frozen=True)
class GridConditional:
    """Piecewise-constant conditional law on a G x G grid of one rectangle."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 2:
            raise ValueError("weights must be a G x G array with G >= 2")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)

    @property
    def G(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def uniform(cls, G: int) -> "GridConditional":
        return cls(np.full((G, G), 1.0 / G ** 2))

    @classmethod
    def checkerboard(cls, t: float) -> "GridConditional":
        return cls(np.array([[0.5 + t, 0.5 - t], [0.5 - t, 0.5 + t]]) / 2.0)

    def kl_to_uniform(self) -> float:
        w = self.weights[self.weights > 0]
        return math.fsum(w * np.log(w * self.G ** 2))


def _charged_pairs(p):
    """(key, log mass per pair, multiplicity, log mu_a + log mu_b) for charged pairs."""
    model = p.model
    if isinstance(p, LumpedCoupling):
        pc = pair_classes(model)
        logmu = model.state_logmu
        for c in range(len(pc)):
            if np.isfinite(p.logmass[c]):
                yield c, p.logmass[c], pc.count[c], logmu[pc.row[c]] + logmu[pc.col[c]]
    else:
        logmu = [math.log(model.w[n - 1]) - math.log(model.m[n - 1] + 1) for n, _ in p.labels]
        for a, x in enumerate(p.labels):
            for b, y in enumerate(p.labels):
                if np.isfinite(p.logP[a, b]):
                    yield (tuple(x), tuple(y)), p.logP[a, b], 1, logmu[a] + logmu[b]


def kl_chain_check(p, conditionals: Mapping) -> tuple[float, float, float]:
    """KL of a grid-piecewise-constant lift against its chain-rule decomposition.

    For dense couplings the conditionals are keyed by label pairs; for lumped
    couplings by class index (one conditional shared across the class).
    """
    direct, label_part, cond_part = [], [], []
    for key, lp, mult, logref in _charged_pairs(p):
        if key not in conditionals:
            raise MissingConditional(key)
        cond = conditionals[key]
        w = cond.weights[cond.weights > 0]
        pm = math.exp(lp)
        # cell masses against the reference cell masses mu_a mu_b / G^2
        log_cells = lp + np.log(w)
        log_ref_cells = logref - 2.0 * math.log(cond.G)
        direct.append(mult * math.fsum(np.exp(log_cells) * (log_cells - log_ref_cells)))
        label_part.append(mult * pm * (lp - logref))
        cond_part.append(mult * pm * cond.kl_to_uniform())
    lhs = math.fsum(direct)
    decomposed = math.fsum(label_part) + math.fsum(cond_part)
    return lhs, decomposed, abs(lhs - decomposed)


def uniform_conditionals(p, G: int = 2) -> dict:
    u = GridConditional.uniform(G)
    return {key: u for key, *_ in _charged_pairs(p)}


def rate_transfer(geometry: LiftGeometry, x: float, y: float, kmax: int = 2) -> RateBand:
    lx, ly = label_of(geometry, x), label_of(geometry, y)
    if lx is None or ly is None:
        raise OutsideSupport(f"point ({x}, {y}) lies outside the lifted support")
    return rate_band(geometry.model, (lx, ly), kmax)

