"""Full chains of nested atoms and their decomposition into fat chains."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument, InvalidState
from .measures import MeasureTree
from .partition import PartitionTree, atom_id

DECAY_CEILING = 32.0


@dataclass
class FullChain:
    """``X_0 = Omega ⊃ X_1 ⊃ ...``; ``indices[n]`` is the index of ``X_n`` at level ``n``."""

    tree: PartitionTree
    indices: np.ndarray

    @property
    def length(self) -> int:
        return len(self.indices)

    @property
    def ids(self) -> list:
        return [int(atom_id(n, i)) for n, i in enumerate(self.indices)]

    def boxes(self) -> list:
        return [(self.tree.lower[n][i].copy(), self.tree.upper[n][i].copy())
                for n, i in enumerate(self.indices)]


def full_chain(tree: PartitionTree, point=None, leaf: Optional[int] = None,
               depth: Optional[int] = None) -> FullChain:
    """Chain from the root down to ``depth`` (default: tree depth) through a point or a leaf id."""
    depth = tree.max_depth if depth is None else depth
    if (point is None) == (leaf is None):
        raise InvalidArgument("give exactly one of point or leaf")
    if leaf is not None:
        level = int(np.floor(np.log2(leaf + 1)))
        if level != depth:
            raise InvalidArgument(f"atom {leaf} is not at level {depth}")
        index = leaf - ((1 << level) - 1)
    else:
        index = int(tree.locate(np.atleast_2d(point), depth)[0])
    return FullChain(tree, np.array([index >> (depth - n) for n in range(depth + 1)]))


@dataclass
class FatChainDecomposition:
    chain: FullChain
    cuts: list  # start level of every segment
    masses: np.ndarray = field(repr=False)
    measure_used: Optional[MeasureTree] = None

    @property
    def segments(self) -> list:
        ends = self.cuts[1:] + [self.chain.length]
        return [(a, b - 1) for a, b in zip(self.cuts, ends)]

    @property
    def largest(self) -> list:
        """Level of ``L_j`` (first atom) for every segment."""
        return [a for a, _ in self.segments]

    @property
    def smallest(self) -> list:
        return [b for _, b in self.segments]

    def lengths(self) -> list:
        return [b - a + 1 for a, b in self.segments]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "atom-id", "depth", "mass", "diam"])
        tree = self.chain.tree
        for s, (a, b) in enumerate(self.segments):
            for n in range(a, b + 1):
                i = self.chain.indices[n]
                w.writerow([s, int(atom_id(n, i)), n, repr(float(self.masses[n])),
                            repr(float(tree.diam(n)[i]))])


def _chain_masses(chain: FullChain, m: Optional[MeasureTree]) -> np.ndarray:
    tree = chain.tree
    out = np.empty(chain.length)
    for n, i in enumerate(chain.indices):
        out[n] = tree.mass[n][i] if m is None else m.masses(n)[i]
    return out


def decompose_fat(chain: FullChain, m: Optional[MeasureTree] = None) -> FatChainDecomposition:
    """Greedy cuts ``i_k = min{n > i_{k-1}: mu(X_n) < mu(X_{i_{k-1}}) / 2}``."""
    if chain.length == 0:
        raise InvalidArgument("empty chain")
    mass = _chain_masses(chain, m)
    if np.any(mass <= 0):
        raise InvalidState("zero-mass atom in chain")
    cuts = [0]
    for n in range(1, chain.length):
        if mass[n] < 0.5 * mass[cuts[-1]]:
            cuts.append(n)
    return FatChainDecomposition(chain, cuts, mass, m)


def check_diam_decay(decomp: FatChainDecomposition) -> float:
    """``max_l diam(L_l) sum_{j <= l} 1 / diam(X_j)``."""
    tree = decomp.chain.tree
    idx = decomp.chain.indices
    diam = np.array([tree.diam(n)[i] for n, i in enumerate(idx)])
    inv_small = np.cumsum(1.0 / diam[decomp.smallest])
    return float((diam[decomp.largest] * inv_small).max())


def decay_constants(tree: PartitionTree, m: Optional[MeasureTree] = None,
                    depth: Optional[int] = None) -> np.ndarray:
    """``C_decay`` for the chain of every atom at ``depth`` (vectorized sweep)."""
    depth = tree.max_depth if depth is None else depth
    leaves = np.arange(1 << depth)
    masses = np.stack([(tree.mass[n] if m is None else m.masses(n))[leaves >> (depth - n)]
                       for n in range(depth + 1)], axis=1)
    diams = np.stack([tree.diam(n)[leaves >> (depth - n)] for n in range(depth + 1)], axis=1)
    if np.any(masses <= 0):
        raise InvalidState("zero-mass atom in tree")
    start = np.zeros(len(leaves), dtype=int)
    start_mass = masses[:, 0].copy()
    inv_sum = np.zeros(len(leaves))
    best = np.zeros(len(leaves))
    rows = np.arange(len(leaves))
    for n in range(1, depth + 1):
        cut = masses[:, n] < 0.5 * start_mass
        # closing segment [start, n-1]: smallest atom is X_{n-1}
        inv_sum = np.where(cut, inv_sum + 1.0 / diams[:, n - 1], inv_sum)
        best = np.where(cut, np.maximum(best, diams[rows, start] * inv_sum), best)
        start = np.where(cut, n, start)
        start_mass = np.where(cut, masses[:, n], start_mass)
    inv_sum = inv_sum + 1.0 / diams[:, depth]
    return np.maximum(best, diams[rows, start] * inv_sum)
