"""Certified bounds on the cycle rate function anchored at the diagonal support.

The limit plan of the block model is the diagonal coupling, so every auxiliary
point of a cycle is a diagonal pair ``(g, g)``.  Because the cost only sees the
block, the class and whether two high indices coincide, it is enough to draw
``g`` from a small alphabet per block: the distinguished point, the high indices
already used by the query point, and up to ``k - 1`` unused ("fresh") indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement, permutations
from typing import Sequence

import numpy as np

from .blockmodel import Label, TruncatedModel, label_cost
from .sets import SetDescriptor, pair_classes

DEFAULT_KMAX = 4
MAX_KMAX = 6
DEFAULT_NODE_CAP = 50_000_000


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class RateQuery:
    point: tuple[Label, Label]
    kmax: int = DEFAULT_KMAX

    def __post_init__(self):
        if self.kmax < 2:
            raise ValueError("kmax must be >= 2")


@dataclass(frozen=True)
class RateCertificate:
    value: float
    point: tuple[Label, Label]
    support: tuple[Label, ...]
    permutation: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.permutation)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "point": [list(p) for p in self.point],
            "support": [[list(g), list(g)] for g in self.support],
            "permutation": list(self.permutation),
        }


@dataclass(frozen=True)
class RateBand:
    lo: float
    hi: float
    certificate: RateCertificate


def cycle_bracket(model: TruncatedModel, point, support: Sequence, perm: Sequence[int]) -> float:
    """sum_i C(x_i, y_i) - sum_i C(x_i, y_perm(i)) with (x_1, y_1) = point, x_i = y_i = support."""
    xs = [point[0], *support]
    ys = [point[1], *support]
    own = math.fsum(label_cost(model, xs[i], ys[i]) for i in range(len(xs)))
    moved = math.fsum(label_cost(model, xs[i], ys[perm[i]]) for i in range(len(xs)))
    return own - moved


def replay(model: TruncatedModel, cert: RateCertificate) -> float:
    return cycle_bracket(model, cert.point, cert.support, cert.permutation)


def cost_matrix(model: TruncatedModel, nodes: Sequence[Label]) -> np.ndarray:
    """Ground cost between every pair of ``nodes``, vectorized."""
    n = np.array([u[0] for u in nodes])
    i = np.array([u[1] for u in nodes])
    L = np.asarray(model.L)[n - 1]
    same_block = n[:, None] == n[None, :]
    same_idx = i[:, None] == i[None, :]
    one_zero = (i[:, None] == 0) | (i[None, :] == 0)
    within = np.where(same_idx, 0.0, np.where(one_zero, model.a, model.b))
    return np.where(same_block, within, L[:, None] + L[None, :])


def support_alphabet(model: TruncatedModel, point, fresh: int) -> list[Label]:
    x, y = (model.check_label(p) for p in point)
    out = []
    for n in range(1, model.N + 1):
        out.append(Label(n, 0))
        used = sorted({p.i for p in (x, y) if p.n == n and p.i >= 1})
        out.extend(Label(n, i) for i in used)
        added, j = 0, 1
        while added < fresh and j <= model.m[n - 1]:
            if j not in used:
                out.append(Label(n, j))
                added += 1
            j += 1
    return out


def _enumeration_size(A: int, kmax: int) -> int:
    return sum(math.comb(A + k - 2, k - 1) * math.factorial(k) for k in range(2, kmax + 1))


def _search(model: TruncatedModel, point, kmax: int, node_cap: int) -> RateCertificate:
    x, y = model.check_label(point[0]), model.check_label(point[1])
    point = (x, y)
    alphabet = support_alphabet(model, point, kmax - 1)
    A = len(alphabet)
    size = _enumeration_size(A, kmax)
    if size > node_cap:
        raise BudgetExceeded(f"cycle enumeration needs {size} brackets (cap {node_cap})")

    nodes = [x, y, *alphabet]
    CM = cost_matrix(model, nodes)

    best = RateCertificate(0.0, point, (), ())
    best_val = -math.inf
    for k in range(2, kmax + 1):
        supp = np.array(list(combinations_with_replacement(range(A), k - 1))) + 2
        xs = np.column_stack([np.zeros(len(supp), int), supp])
        ys = np.column_stack([np.ones(len(supp), int), supp])
        perms = np.array(list(permutations(range(k))))
        own = CM[xs, ys].sum(axis=1)
        sub = CM[xs[:, :, None], ys[:, None, :]]            # (S, k, k)
        moved = sub[:, np.arange(k)[None, :], perms].sum(axis=2)  # (S, P)
        brackets = own[:, None] - moved
        top = brackets.max()
        # float sums may reorder ties; settle near-maximal candidates with exact replay
        near = np.flatnonzero(brackets.ravel() >= top - 1e-9)
        _, first = np.unique(brackets.ravel()[near], return_index=True)
        for si, pi in zip(*np.unravel_index(near[np.sort(first)], brackets.shape)):
            support = tuple(nodes[j] for j in supp[si])
            perm = tuple(int(v) for v in perms[pi])
            val = cycle_bracket(model, point, support, perm)
            if val > best_val:
                best_val = val
                best = RateCertificate(val, point, support, perm)
    return best


def two_point_bound(model: TruncatedModel, point) -> RateCertificate:
    return _search(model, point, 2, DEFAULT_NODE_CAP)


def cycle_search(model: TruncatedModel, query: RateQuery,
                 node_cap: int = DEFAULT_NODE_CAP) -> RateCertificate:
    if query.kmax > MAX_KMAX:
        raise BudgetExceeded(f"kmax={query.kmax} exceeds the factorial guard {MAX_KMAX}")
    return _search(model, query.point, query.kmax, node_cap)


def rate_upper_bound(model: TruncatedModel, point) -> float:
    x, y = model.check_label(point[0]), model.check_label(point[1])
    return label_cost(model, x, y)


def rate_band(model: TruncatedModel, point, kmax: int = DEFAULT_KMAX) -> RateBand:
    cert = cycle_search(model, RateQuery(tuple(point), kmax))
    hi = rate_upper_bound(model, point)
    if cert.value > hi:
        raise AssertionError(f"lower bound {cert.value} above upper bound {hi} at {point}")
    return RateBand(cert.value, hi, cert)


def rate_table(model: TruncatedModel, kmax: int = 2) -> dict[int, RateBand]:
    """Rate band at one representative of every pair class (the rate is class-invariant)."""
    pc = pair_classes(model)
    cache = model.__dict__.setdefault("_rate_tables", {})
    if kmax not in cache:
        cache[kmax] = {c: rate_band(model, pc.representative(c), kmax) for c in range(len(pc))}
    return cache[kmax]


def rate_csv_rows(model: TruncatedModel, region: SetDescriptor, kmax: int = 2) -> list[list]:
    pc = pair_classes(model)
    table = rate_table(model, kmax)
    rows = []
    for c in sorted(region.resolve(model)):
        x, y = pc.representative(c)
        band = table[c]
        rows.append([pc.key_str(c), f"{x.n}:{x.i}", f"{y.n}:{y.i}", band.lo, band.hi])
    return rows
