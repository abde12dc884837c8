"""Pair classes of the lumped label space and symbolic set descriptors.

A pair class is an orbit of ordered label pairs under the within-block
permutations of high-multiplicity indices.  For blocks ``n != k`` the class is
fixed by the two (block, class) tags; inside one block the (H, H) pairs split
into the diagonal ones and the off-diagonal ones.  Every descriptor resolves to
``{class index: number of pairs}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .blockmodel import Cls, Label, TruncatedModel

PLAIN, DIAG, OFF = 0, 1, 2
KIND_NAMES = {PLAIN: "", DIAG: "diag", OFF: "off"}


class ClassKey(NamedTuple):
    n: int
    cs: Cls
    k: int
    ct: Cls
    kind: int


class PairClasses:
    """Enumeration of pair classes for a model, with counts and costs."""

    def __init__(self, model: TruncatedModel):
        self.model = model
        rows, cols, kinds, counts, costs = [], [], [], [], []
        for s, ss in enumerate(model.lumped):
            for t, st in enumerate(model.lumped):
                if ss.n == st.n and ss.cls == Cls.H and st.cls == Cls.H:
                    mn = model.m[ss.n - 1]
                    for kind, count, c in ((DIAG, mn, 0.0), (OFF, mn * (mn - 1), model.b)):
                        rows.append(s); cols.append(t); kinds.append(kind)
                        counts.append(count); costs.append(c)
                    continue
                if ss.n != st.n:
                    c = model.L[ss.n - 1] + model.L[st.n - 1]
                elif ss.cls == st.cls:
                    c = 0.0
                else:
                    c = model.a
                rows.append(s); cols.append(t); kinds.append(PLAIN)
                counts.append(ss.multiplicity * st.multiplicity); costs.append(c)
        self.row = np.array(rows)
        self.col = np.array(cols)
        self.kind = np.array(kinds)
        self.count = tuple(counts)
        self.logcount = np.array([math.log(c) for c in counts])
        self.cost = np.array(costs)
        self.keys = tuple(
            ClassKey(model.lumped[s].n, model.lumped[s].cls, model.lumped[t].n,
                     model.lumped[t].cls, kd)
            for s, t, kd in zip(rows, cols, kinds)
        )
        self.index = {key: c for c, key in enumerate(self.keys)}
        self.row_block = model.state_block[self.row]
        self.col_block = model.state_block[self.col]

    def __len__(self) -> int:
        return len(self.keys)

    def class_of(self, x, y) -> int:
        x = self.model.check_label(x)
        y = self.model.check_label(y)
        cs = Cls.D if x.i == 0 else Cls.H
        ct = Cls.D if y.i == 0 else Cls.H
        kind = PLAIN
        if x.n == y.n and cs == Cls.H and ct == Cls.H:
            kind = DIAG if x.i == y.i else OFF
        return self.index[ClassKey(x.n, cs, y.n, ct, kind)]

    def representative(self, c: int) -> tuple[Label, Label]:
        key = self.keys[c]
        x = Label(key.n, 0 if key.cs == Cls.D else 1)
        j = 0 if key.ct == Cls.D else (2 if key.kind == OFF else 1)
        return x, Label(key.k, j)

    def key_str(self, c: int) -> str:
        k = self.keys[c]
        tail = f":{KIND_NAMES[k.kind]}" if k.kind != PLAIN else ""
        return f"({k.n},{k.cs.value})-({k.k},{k.ct.value}){tail}"


def pair_classes(model: TruncatedModel) -> PairClasses:
    cached = model.__dict__.get("_pair_classes")
    if cached is None:
        cached = PairClasses(model)
        model.__dict__["_pair_classes"] = cached
    return cached


def _full(pc: PairClasses, mask: np.ndarray) -> dict[int, int]:
    return {int(c): pc.count[c] for c in np.flatnonzero(mask)}


class SetDescriptor:
    def resolve(self, model: TruncatedModel) -> dict[int, int]:
        raise NotImplementedError

    def __or__(self, other: "SetDescriptor") -> "Union":
        return Union((self, other))

    def __and__(self, other: "SetDescriptor") -> "Intersection":
        return Intersection(self, other)


@dataclass(frozen=True)
class Everything(SetDescriptor):
    def resolve(self, model):
        pc = pair_classes(model)
        return _full(pc, np.ones(len(pc), bool))


@dataclass(frozen=True)
class Diagonal(SetDescriptor):
    def resolve(self, model):
        pc = pair_classes(model)
        same = pc.row == pc.col
        return _full(pc, same & (pc.kind != OFF))


@dataclass(frozen=True)
class OffDiagonalHigh(SetDescriptor):
    """Within-block off-diagonal high pairs; all blocks when ``block`` is None."""

    block: int | None = None

    def resolve(self, model):
        pc = pair_classes(model)
        mask = pc.kind == OFF
        if self.block is not None:
            if not 1 <= self.block <= model.N:
                raise ValueError(f"block {self.block} outside 1..{model.N}")
            mask &= pc.row_block == self.block
        return _full(pc, mask)


@dataclass(frozen=True)
class SinglePair(SetDescriptor):
    x: tuple[int, int]
    y: tuple[int, int]

    def resolve(self, model):
        return {pair_classes(model).class_of(self.x, self.y): 1}


@dataclass(frozen=True)
class BlockRectangle(SetDescriptor):
    n: int
    k: int

    def resolve(self, model):
        pc = pair_classes(model)
        return _full(pc, (pc.row_block == self.n) & (pc.col_block == self.k))


@dataclass(frozen=True)
class FirstRBlocks(SetDescriptor):
    """K_R: union of all rectangles B_n x B_k with n, k <= R."""

    R: int

    def resolve(self, model):
        pc = pair_classes(model)
        return _full(pc, (pc.row_block <= self.R) & (pc.col_block <= self.R))


@dataclass(frozen=True)
class FirstRBlocksComplement(SetDescriptor):
    R: int

    def resolve(self, model):
        pc = pair_classes(model)
        return _full(pc, (pc.row_block > self.R) | (pc.col_block > self.R))


@dataclass(frozen=True)
class Superlevel(SetDescriptor):
    """Classes whose tabulated rate lower bound exceeds ``delta``.

    ``table`` maps class index to the certified lower bound at that class.
    """

    delta: float
    table: Mapping[int, float]

    def __hash__(self):
        return hash((self.delta, tuple(sorted(self.table.items()))))

    def resolve(self, model):
        pc = pair_classes(model)
        missing = [c for c in range(len(pc)) if c not in self.table]
        if missing:
            raise ValueError(f"rate table misses {len(missing)} classes")
        return {c: pc.count[c] for c in range(len(pc)) if self.table[c] > self.delta}


@dataclass(frozen=True)
class Union(SetDescriptor):
    """Disjoint union; overlapping parts raise."""

    parts: tuple[SetDescriptor, ...]

    def resolve(self, model):
        if len(set(self.parts)) != len(self.parts):
            raise ValueError("union parts are not disjoint (repeated part)")
        pc = pair_classes(model)
        out: dict[int, int] = {}
        for part in self.parts:
            for c, cnt in part.resolve(model).items():
                out[c] = out.get(c, 0) + cnt
                if out[c] > pc.count[c]:
                    raise ValueError(f"union parts overlap on class {pc.key_str(c)}")
        return out


@dataclass(frozen=True)
class Intersection(SetDescriptor):
    """``a`` restricted to the classes of ``b``; ``b`` must consist of whole classes."""

    a: SetDescriptor
    b: SetDescriptor

    def resolve(self, model):
        pc = pair_classes(model)
        rb = self.b.resolve(model)
        if any(cnt != pc.count[c] for c, cnt in rb.items()):
            raise ValueError("intersection needs a class-level right operand")
        return {c: cnt for c, cnt in self.a.resolve(model).items() if c in rb}


@dataclass(frozen=True)
class Complement(SetDescriptor):
    a: SetDescriptor

    def resolve(self, model):
        pc = pair_classes(model)
        ra = self.a.resolve(model)
        if any(cnt != pc.count[c] for c, cnt in ra.items()):
            raise ValueError("complement needs a class-level operand")
        return {c: pc.count[c] for c in range(len(pc)) if c not in ra}
