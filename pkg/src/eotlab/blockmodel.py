"""Finite truncation of the block counterexample model.

Block ``n`` holds one distinguished state ``(n, 0)`` and ``m_n`` interchangeable
high-multiplicity states ``(n, 1) .. (n, m_n)``.  Everything downstream works on
the ``2N`` lumped states (one per block and class) and never materializes the
individual labels unless a caller asks for them on a tiny instance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import zeta

ZETA3 = float(zeta(3.0))

# exp(kappa * n) must stay a finite double
MAX_KAPPA_N = 700.0


class InvalidParams(ValueError):
    pass


class InvalidOverride(ValueError):
    pass


class OutOfRange(IndexError):
    pass


class Cls(str, Enum):
    D = "D"  # distinguished point, i = 0
    H = "H"  # high-multiplicity points, i >= 1


class Label(NamedTuple):
    n: int
    i: int


@dataclass(frozen=True)
class ModelParams:
    a: float
    kappa: float
    b: float
    N: int

    def __post_init__(self):
        if not (0.0 < 2.0 * self.a < self.kappa < self.b):
            raise InvalidParams(
                f"parameters must satisfy 0 < 2a < kappa < b, got "
                f"a={self.a}, kappa={self.kappa}, b={self.b}"
            )
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParams(f"N must be an integer >= 2, got {self.N}")


@dataclass(frozen=True)
class SequenceOverride:
    """Explicit m, L and raw w sequences (all of length N) for oracle-sized instances."""

    m: Sequence[int] | None = None
    L: Sequence[float] | None = None
    w: Sequence[float] | None = None

    def to_dict(self) -> dict:
        return {k: (list(v) if v is not None else None) for k, v in
                (("m", self.m), ("L", self.L), ("w", self.w))}


@dataclass(frozen=True)
class LumpedState:
    n: int
    cls: Cls
    multiplicity: int


@dataclass(frozen=True, eq=False)
class TruncatedModel:
    params: ModelParams
    m: tuple[int, ...]
    L: tuple[float, ...]
    w: tuple[float, ...]
    renorm: float
    lumped: tuple[LumpedState, ...]
    override: SequenceOverride | None = field(default=None)

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def a(self) -> float:
        return self.params.a

    @property
    def b(self) -> float:
        return self.params.b

    @property
    def kappa(self) -> float:
        return self.params.kappa

    @property
    def n_labels(self) -> int:
        return sum(mn + 1 for mn in self.m)

    # lumped-state arrays, index s = 2 * (n - 1) + (0 for D, 1 for H)
    @cached_property
    def state_block(self) -> np.ndarray:
        return np.repeat(np.arange(1, self.N + 1), 2)

    @cached_property
    def state_is_high(self) -> np.ndarray:
        return np.tile(np.array([False, True]), self.N)

    @cached_property
    def state_logmult(self) -> np.ndarray:
        return np.array([math.log(s.multiplicity) for s in self.lumped])

    @cached_property
    def state_logmu(self) -> np.ndarray:
        """log of the atom mass w_n / (m_n + 1) for each lumped state."""
        return np.array([math.log(self.w[s.n - 1]) - math.log(self.m[s.n - 1] + 1)
                         for s in self.lumped])

    def state_index(self, n: int, cls: Cls) -> int:
        return 2 * (n - 1) + (1 if cls == Cls.H else 0)

    def check_label(self, x) -> Label:
        n, i = int(x[0]), int(x[1])
        if not 1 <= n <= self.N or not 0 <= i <= self.m[n - 1]:
            raise OutOfRange(f"label {tuple(x)} outside the truncated model")
        return Label(n, i)

    def labels(self) -> list[Label]:
        """All labels in canonical order; only sensible for tiny instances."""
        return [Label(n, i) for n in range(1, self.N + 1) for i in range(self.m[n - 1] + 1)]

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"a": p.a, "kappa": p.kappa, "b": p.b, "N": p.N},
            "override": self.override.to_dict() if self.override is not None else None,
            "m": list(self.m),
            "L": list(self.L),
            "w": list(self.w),
            "renorm": self.renorm,
            "lumped": [{"n": s.n, "cls": s.cls.value, "multiplicity": s.multiplicity}
                       for s in self.lumped],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TruncatedModel":
        params = ModelParams(**d["params"])
        ov = d.get("override")
        override = SequenceOverride(**ov) if ov is not None else None
        model = build_model(params, override)
        stored = (tuple(d["m"]), tuple(d["L"]), tuple(d["w"]), d["renorm"])
        if stored != (model.m, model.L, model.w, model.renorm):
            raise ValueError("stored sequences do not match a rebuild from params/override")
        return model

    @classmethod
    def from_json(cls, text: str) -> "TruncatedModel":
        return cls.from_dict(json.loads(text))


def default_m(kappa: float, n: int) -> int:
    if kappa * n > MAX_KAPPA_N:
        raise InvalidParams(f"kappa*n = {kappa * n} overflows exp (limit {MAX_KAPPA_N})")
    return max(2, math.floor(math.exp(kappa * n)))


def build_model(params: ModelParams, override: SequenceOverride | None = None) -> TruncatedModel:
    N = params.N
    ns = range(1, N + 1)
    ov = override or SequenceOverride()
    for name in ("m", "L", "w"):
        seq = getattr(ov, name)
        if seq is not None and len(seq) != N:
            raise InvalidOverride(f"override {name} has length {len(seq)}, expected N={N}")

    if ov.m is not None:
        if any(int(v) != v or v < 2 for v in ov.m):
            raise InvalidOverride("override m entries must be integers >= 2")
        m = tuple(int(v) for v in ov.m)
    else:
        m = tuple(default_m(params.kappa, n) for n in ns)

    if ov.L is not None:
        if any(not v > 0 for v in ov.L):
            raise InvalidOverride("override L entries must be positive")
        L = tuple(float(v) for v in ov.L)
    else:
        L = tuple(float(n ** 4) for n in ns)

    if ov.w is not None:
        if any(not v > 0 for v in ov.w):
            raise InvalidOverride("override w entries must be positive")
        w_raw = [float(v) for v in ov.w]
    else:
        w_raw = [n ** -3.0 / ZETA3 for n in ns]

    renorm = 1.0 / math.fsum(w_raw)
    w = tuple(v * renorm for v in w_raw)
    lumped = tuple(s for n in ns for s in (LumpedState(n, Cls.D, 1),
                                           LumpedState(n, Cls.H, m[n - 1])))
    return TruncatedModel(params, m, L, w, renorm, lumped, override)


def label_cost(model: TruncatedModel, x, y) -> float:
    """Ground cost between two labels (no validation)."""
    (n, i), (k, j) = x, y
    if n != k:
        return model.L[n - 1] + model.L[k - 1]
    if i == j:
        return 0.0
    if i == 0 or j == 0:
        return model.a
    return model.b


def cost(model: TruncatedModel, x, y) -> float:
    return label_cost(model, model.check_label(x), model.check_label(y))


def mu_mass(model: TruncatedModel, x) -> float:
    n, _ = model.check_label(x)
    return model.w[n - 1] / (model.m[n - 1] + 1)


def entropy_H(model: TruncatedModel) -> float:
    """Shannon entropy of the label marginal, summed blockwise."""
    return math.fsum(w * (math.log(m + 1) - math.log(w)) for w, m in zip(model.w, model.m))


@dataclass(frozen=True)
class AsymptoticsRow:
    n: int
    eps_over_Lw: float
    m_scaled: float
    log_w_over_n: float


@dataclass(frozen=True)
class AsymptoticsReport:
    rows: tuple[AsymptoticsRow, ...]
    eps_ratio_decreasing: bool
    m_scaled_gap_shrinking: bool
    log_w_decay: bool

    def to_dict(self) -> dict:
        return {
            "rows": [r.__dict__ for r in self.rows],
            "eps_ratio_decreasing": self.eps_ratio_decreasing,
            "m_scaled_gap_shrinking": self.m_scaled_gap_shrinking,
            "log_w_decay": self.log_w_decay,
        }


def sequence_asymptotics_report(params: ModelParams, N: int | None = None) -> AsymptoticsReport:
    """Tabulate eps_n / (L_n w_n), m_n e^{-kappa n} and log(w_n)/n for eps_n = 1/n.

    Uses the raw (zeta(3)-normalized) weights, not the truncated renormalization.
    """
    N = params.N if N is None else N
    rows = []
    for n in range(1, N + 1):
        w_raw = n ** -3.0 / ZETA3
        rows.append(AsymptoticsRow(
            n=n,
            eps_over_Lw=(1.0 / n) / (n ** 4 * w_raw),
            m_scaled=default_m(params.kappa, n) * math.exp(-params.kappa * n),
            log_w_over_n=math.log(w_raw) / n,
        ))
    ratios = [r.eps_over_Lw for r in rows]
    decreasing = all(u > v for u, v in zip(ratios, ratios[1:]))
    # |1 - m e^{-kappa n}| is bounded by e^{-kappa n} once the floor is active
    active = [r for r in rows if params.kappa * r.n >= 1.0]
    gaps = [1.0 - r.m_scaled for r in active]
    shrinking = all(0.0 <= g < math.exp(-params.kappa * r.n) + 1e-15 for g, r in zip(gaps, active))
    tail = [abs(r.log_w_over_n) for r in rows if r.n >= 3]
    decay = all(u > v for u, v in zip(tail, tail[1:]))
    return AsymptoticsReport(tuple(rows), decreasing, shrinking, decay)
