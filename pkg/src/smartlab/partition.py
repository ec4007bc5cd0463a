"""Binary filtrations of axis-aligned boxes.

Atoms are stored level by level in heap order: the atom with index ``i`` at
depth ``n`` has children ``2i`` (lower half along the split axis) and
``2i + 1`` (upper half).  Its global id is ``2**n - 1 + i``.  The child with
the smaller Lebesgue mass is the *small* child ``A'``; ties go to the lower
child.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument

SPLIT_RULES = ("midpoint", "fixed_ratio", "seeded_random")


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise InvalidArgument("box bounds must be matching non-empty vectors")
        if not np.all(lo < hi):
            raise InvalidArgument(f"degenerate box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def diam(self) -> float:
        # longest side (sup-norm diameter); equivalent to the Euclidean one up to sqrt(d)
        return float(np.max(self.upper - self.lower))

    @property
    def width(self) -> float:
        # minimal distance between parallel supporting hyperplanes of a box
        return float(np.min(self.upper - self.lower))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    @classmethod
    def unit(cls, d: int = 1) -> "Box":
        return cls(np.zeros(d), np.ones(d))


@dataclass(frozen=True)
class SplitRule:
    """How an atom's longest axis is cut.

    ``ratio`` is the relative cut position for ``fixed_ratio``;
    ``ratio_range`` bounds the uniformly drawn position for ``seeded_random``
    (the cut is mirrored with probability 1/2).
    """

    kind: str = "midpoint"
    ratio: float = 0.5
    ratio_range: tuple = (0.25, 0.5)

    def __post_init__(self):
        if self.kind not in SPLIT_RULES:
            raise InvalidArgument(f"unknown split rule {self.kind!r}")

    @classmethod
    def midpoint(cls):
        return cls("midpoint")

    @classmethod
    def fixed_ratio(cls, rho: float):
        return cls("fixed_ratio", ratio=float(rho))

    @classmethod
    def seeded_random(cls, lo: float, hi: float):
        return cls("seeded_random", ratio_range=(float(lo), float(hi)))

    def describe(self) -> str:
        if self.kind == "fixed_ratio":
            return f"fixed_ratio({self.ratio!r})"
        if self.kind == "seeded_random":
            return f"seeded_random({self.ratio_range[0]!r},{self.ratio_range[1]!r})"
        return "midpoint"

    @classmethod
    def parse(cls, text: str) -> "SplitRule":
        text = text.strip()
        if text == "midpoint":
            return cls.midpoint()
        name, _, rest = text.partition("(")
        args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()]
        if name == "fixed_ratio" and len(args) == 1:
            return cls.fixed_ratio(args[0])
        if name == "seeded_random" and len(args) == 2:
            return cls.seeded_random(*args)
        raise InvalidArgument(f"cannot parse split rule {text!r}")


@dataclass(frozen=True)
class Atom:
    id: int
    depth: int
    index: int
    box: Box
    lebesgue_mass: float
    parent: Optional[int]
    children: Optional[tuple]  # (small_child_id, large_child_id)


def atom_id(depth: int, index) -> np.ndarray:
    return (1 << depth) - 1 + np.asarray(index)


def id_to_level(aid: int) -> tuple:
    depth = int(aid + 1).bit_length() - 1
    return depth, int(aid + 1 - (1 << depth))


@dataclass
class PartitionTree:
    """A complete binary filtration of depth ``max_depth`` over ``domain``.

    Per-level arrays: ``lower[n]``/``upper[n]`` of shape ``(2**n, d)``,
    ``mass[n]`` (Lebesgue, root normalized to 1), and for ``n < max_depth``
    the split axis, cut coordinate and whether the lower child is ``A'``.
    """

    domain: Box
    max_depth: int
    split_rule: SplitRule
    seed: int
    sibling_ratio_min: float
    lower: list = field(repr=False)
    upper: list = field(repr=False)
    mass: list = field(repr=False)
    split_axis: list = field(repr=False)
    split_at: list = field(repr=False)
    small_is_lower: list = field(repr=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def root(self) -> Atom:
        return self.atom(0)

    def n_atoms(self, level: int) -> int:
        return 1 << level

    @property
    def levels(self) -> list:
        return [atom_id(n, np.arange(1 << n)) for n in range(self.max_depth + 1)]

    def diam(self, level: int) -> np.ndarray:
        """Longest side of every atom (see :attr:`Box.diam`)."""
        return np.max(self.upper[level] - self.lower[level], axis=1)

    def width(self, level: int) -> np.ndarray:
        return np.min(self.upper[level] - self.lower[level], axis=1)

    def centers(self, level: int) -> np.ndarray:
        return 0.5 * (self.lower[level] + self.upper[level])

    def small_child(self, level: int) -> np.ndarray:
        """Index (at ``level + 1``) of the small child of every level atom."""
        i = np.arange(1 << level)
        return 2 * i + np.where(self.small_is_lower[level], 0, 1)

    def large_child(self, level: int) -> np.ndarray:
        i = np.arange(1 << level)
        return 2 * i + np.where(self.small_is_lower[level], 1, 0)

    def is_small(self, level: int) -> np.ndarray:
        """Boolean per atom at ``level >= 1``: is this atom its parent's ``A'``?"""
        if level == 0:
            return np.zeros(1, dtype=bool)
        i = np.arange(1 << level)
        lower_child = (i % 2) == 0
        return lower_child == self.small_is_lower[level - 1][i >> 1]

    def atom(self, aid: int) -> Atom:
        depth, index = id_to_level(aid)
        if depth > self.max_depth:
            raise InvalidArgument(f"atom id {aid} beyond depth {self.max_depth}")
        box = Box(self.lower[depth][index], self.upper[depth][index])
        parent = None if depth == 0 else int(atom_id(depth - 1, index >> 1))
        children = None
        if depth < self.max_depth:
            s = 2 * index + (0 if self.small_is_lower[depth][index] else 1)
            children = (int(atom_id(depth + 1, s)), int(atom_id(depth + 1, s ^ 1)))
        return Atom(int(aid), depth, index, box, float(self.mass[depth][index]), parent, children)

    def locate(self, points, level: Optional[int] = None) -> np.ndarray:
        """Index of the level-``level`` atom containing each point.

        Points on a cut belong to the upper child.
        """
        level = self.max_depth if level is None else level
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if x.shape[1] != self.dim:
            x = x.reshape(-1, self.dim)
        tol = 1e-12 * np.max(self.domain.upper - self.domain.lower)
        outside = np.any((x < self.domain.lower - tol) | (x > self.domain.upper + tol), axis=1)
        if np.any(outside):
            raise InvalidArgument(f"{int(outside.sum())} point(s) outside the domain")
        idx = np.zeros(len(x), dtype=np.int64)
        for n in range(level):
            ax = self.split_axis[n][idx]
            go_up = x[np.arange(len(x)), ax] >= self.split_at[n][idx]
            idx = 2 * idx + go_up
        return idx

    def ancestor(self, level: int, index, target: int) -> np.ndarray:
        return np.asarray(index) >> (level - target)

    def uniform_points(self, n: int, rng) -> np.ndarray:
        lo, hi = self.domain.lower, self.domain.upper
        return lo + (hi - lo) * rng.random((n, self.dim))


def _cut_ratios(rule: SplitRule, count: int, rng) -> np.ndarray:
    if rule.kind == "midpoint":
        return np.full(count, 0.5)
    if rule.kind == "fixed_ratio":
        return np.full(count, rule.ratio)
    lo, hi = rule.ratio_range
    rho = rng.uniform(lo, hi, count)
    flip = rng.random(count) < 0.5
    return np.where(flip, 1.0 - rho, rho)


def build_tree(
    domain: Box,
    depth: int,
    split_rule: SplitRule = SplitRule(),
    seed: int = 0,
    sibling_ratio_min: float = 1.0 / 3.0,
) -> PartitionTree:
    """Subdivide ``domain`` ``depth`` times, always cutting the longest axis."""
    if not isinstance(depth, (int, np.integer)) or depth < 0:
        raise InvalidArgument(f"depth must be a non-negative integer, got {depth!r}")
    if not 0.0 < sibling_ratio_min <= 0.5:
        raise InvalidArgument("sibling_ratio_min must lie in (0, 1/2]")
    if split_rule.kind == "fixed_ratio" and not sibling_ratio_min <= split_rule.ratio <= 0.5:
        raise InvalidArgument(
            f"fixed ratio {split_rule.ratio} outside [{sibling_ratio_min}, 1/2]")
    if split_rule.kind == "seeded_random":
        lo, hi = split_rule.ratio_range
        if not sibling_ratio_min <= lo <= hi <= 0.5:
            raise InvalidArgument(
                f"ratio range {split_rule.ratio_range} not inside [{sibling_ratio_min}, 1/2]")

    rng = np.random.default_rng(seed)
    d = domain.dim
    lower = [domain.lower[None, :].copy()]
    upper = [domain.upper[None, :].copy()]
    mass = [np.ones(1)]
    axes, cuts, small_lower = [], [], []
    for n in range(depth):
        lo, hi, m = lower[n], upper[n], mass[n]
        count = lo.shape[0]
        ext = hi - lo
        ax = np.argmax(ext, axis=1)
        rho = _cut_ratios(split_rule, count, rng)
        rows = np.arange(count)
        cut = lo[rows, ax] + rho * ext[rows, ax]
        m_lo = m * rho
        m_hi = m - m_lo

        new_lo = np.repeat(lo, 2, axis=0)
        new_hi = np.repeat(hi, 2, axis=0)
        new_hi[2 * rows, ax] = cut
        new_lo[2 * rows + 1, ax] = cut
        new_m = np.empty(2 * count)
        new_m[0::2] = m_lo
        new_m[1::2] = m_hi

        axes.append(ax)
        cuts.append(cut)
        small_lower.append(m_lo <= m_hi)
        lower.append(new_lo)
        upper.append(new_hi)
        mass.append(new_m)
    assert all(x.shape[1] == d for x in lower)
    return PartitionTree(domain, int(depth), split_rule, int(seed), float(sibling_ratio_min),
                         lower, upper, mass, axes, cuts, small_lower)


@dataclass
class ShapeReport:
    mass_over_diam_min: float
    mass_over_diam_max: float
    min_sibling_ratio: float
    min_width_over_diam: float
    kappa: float
    sibling_ratio_min: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_shape_regularity(tree: PartitionTree, kappa: float = 0.05) -> ShapeReport:
    """Empirical constants of the geometric conditions on the atoms.

    ``mass / diam**d`` over all atoms, the smallest sibling mass ratio
    ``|A'| / |A''|`` and the smallest ``w(A) / diam(A)``.
    """
    d = tree.dim
    scale = tree.domain.volume
    ratios, sib, wd = [], [], []
    for n in range(tree.max_depth + 1):
        diam = tree.diam(n)
        ratios.append(tree.mass[n] * scale / diam ** d)
        wd.append(tree.width(n) / diam)
        if n < tree.max_depth:
            small = tree.mass[n + 1][tree.small_child(n)]
            large = tree.mass[n + 1][tree.large_child(n)]
            sib.append(small / large)
    ratios = np.concatenate(ratios)
    wd = np.concatenate(wd)
    min_sib = float(np.min(np.concatenate(sib))) if sib else 1.0
    violations = []
    if min_sib < tree.sibling_ratio_min:
        violations.append(f"sibling ratio {min_sib:.6g} < {tree.sibling_ratio_min:.6g}")
    if wd.min() < kappa:
        violations.append(f"width/diam {wd.min():.6g} < kappa {kappa:.6g}")
    return ShapeReport(float(ratios.min()), float(ratios.max()), min_sib, float(wd.min()),
                       kappa, tree.sibling_ratio_min, violations)


def write_tree(tree: PartitionTree, fh) -> None:
    """One atom per line: ``id depth parent lower... upper... mass``."""
    fh.write(f"# tree d={tree.dim} depth={tree.max_depth} rule={tree.split_rule.describe()} "
             f"seed={tree.seed} sibling_ratio_min={tree.sibling_ratio_min!r}\n")
    fh.write("# domain " + " ".join(repr(float(v)) for v in tree.domain.lower) + " "
             + " ".join(repr(float(v)) for v in tree.domain.upper) + "\n")
    for n in range(tree.max_depth + 1):
        for i in range(1 << n):
            aid = (1 << n) - 1 + i
            parent = -1 if n == 0 else (1 << (n - 1)) - 1 + (i >> 1)
            coords = " ".join(repr(float(v)) for v in tree.lower[n][i])
            coords += " " + " ".join(repr(float(v)) for v in tree.upper[n][i])
            fh.write(f"{aid} {n} {parent} {coords} {float(tree.mass[n][i])!r}\n")


def read_tree(fh) -> PartitionTree:
    header = {}
    domain = None
    rows = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("# tree"):
            for tok in line[len("# tree"):].split():
                k, _, v = tok.partition("=")
                header[k] = v
        elif line.startswith("# domain"):
            vals = [float(v) for v in line[len("# domain"):].split()]
            half = len(vals) // 2
            domain = Box(vals[:half], vals[half:])
        elif not line.startswith("#"):
            rows.append(line.split())
    d = int(header["d"])
    depth = int(header["depth"])
    lower = [np.empty((1 << n, d)) for n in range(depth + 1)]
    upper = [np.empty((1 << n, d)) for n in range(depth + 1)]
    mass = [np.empty(1 << n) for n in range(depth + 1)]
    for row in rows:
        aid, n = int(row[0]), int(row[1])
        i = aid - ((1 << n) - 1)
        vals = [float(v) for v in row[3:]]
        lower[n][i] = vals[:d]
        upper[n][i] = vals[d:2 * d]
        mass[n][i] = vals[2 * d]
    axes, cuts, small_lower = [], [], []
    for n in range(depth):
        lo_child = upper[n + 1][0::2]
        diff = upper[n] - lo_child
        ax = np.argmax(diff, axis=1)
        axes.append(ax)
        cuts.append(lo_child[np.arange(1 << n), ax])
        small_lower.append(mass[n + 1][0::2] <= mass[n + 1][1::2])
    if domain is None:
        domain = Box(lower[0][0], upper[0][0])
    return PartitionTree(domain, depth, SplitRule.parse(header.get("rule", "midpoint")),
                         int(header.get("seed", 0)), float(header.get("sibling_ratio_min", 1 / 3)),
                         lower, upper, mass, axes, cuts, small_lower)
