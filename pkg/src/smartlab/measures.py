"""Measures with piecewise-constant densities, conditional expectations and
orthoprojections onto ``S_n``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import IllConditioned, InvalidArgument, InvalidState
from .partition import PartitionTree, atom_id
from .polyspace import (PiecewisePoly, PolyFunction, PolySpec, aggregate, cell_grid,
                        _degree, _values)

COND_GUARD = 1e12


@dataclass
class MeasureTree:
    """``dm = w dP`` with ``w`` constant on every atom of level ``resolution``."""

    tree: PartitionTree
    resolution: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not 0 <= self.resolution <= self.tree.max_depth:
            raise InvalidArgument(f"resolution {self.resolution} outside [0, {self.tree.max_depth}]")
        if self.weights.shape != (1 << self.resolution,):
            raise InvalidArgument("one weight per atom of the resolution level is required")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise InvalidArgument("weights must be finite and non-negative")

    @classmethod
    def lebesgue(cls, tree: PartitionTree) -> "MeasureTree":
        return cls(tree, 0, np.ones(1))

    @classmethod
    def from_masses(cls, tree: PartitionTree, level: int, masses) -> "MeasureTree":
        return cls(tree, level, np.asarray(masses, float) / tree.mass[level])

    @property
    def total_mass(self) -> float:
        return float(self.masses(0)[0])

    @property
    def is_lebesgue(self) -> bool:
        return bool(np.all(self.weights == 1.0))

    def density(self, level: int) -> np.ndarray:
        """Density on every atom of ``level`` (``level >= resolution``)."""
        if level < self.resolution:
            raise InvalidState(f"density is not constant on level {level} atoms "
                               f"(resolution {self.resolution})")
        return np.repeat(self.weights, 1 << (level - self.resolution))

    def masses(self, level: int) -> np.ndarray:
        if level >= self.resolution:
            return self.density(level) * self.tree.mass[level]
        return aggregate(self.weights * self.tree.mass[self.resolution], self.resolution, level)

    def refine(self, level: int) -> "MeasureTree":
        return MeasureTree(self.tree, level, self.density(level))

    def density_at_points(self, points) -> np.ndarray:
        return self.weights[self.tree.locate(points, self.resolution)]

    def sample_points(self, n: int, rng) -> np.ndarray:
        """Draw points from the normalized measure: descend by mass, then uniform in the cell."""
        level = self.resolution
        m = self.masses(level)
        p = m / m.sum()
        cells = rng.choice(len(p), size=n, p=p)
        lo, hi = self.tree.lower[level][cells], self.tree.upper[level][cells]
        return lo + (hi - lo) * rng.random((n, self.tree.dim))


def write_measure(m: MeasureTree, fh) -> None:
    fh.write(f"# measure resolution={m.resolution}\n")
    ids = atom_id(m.resolution, np.arange(1 << m.resolution))
    for aid, w in zip(ids, m.weights):
        fh.write(f"{int(aid)} {float(w)!r}\n")


def read_measure(tree: PartitionTree, fh) -> MeasureTree:
    resolution = None
    weights = {}
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("resolution="):
                    resolution = int(tok.split("=", 1)[1])
            continue
        aid, w = line.split()
        weights[int(aid)] = float(w)
    if resolution is None:
        raise InvalidArgument("measure file lacks a resolution header")
    base = (1 << resolution) - 1
    arr = np.empty(1 << resolution)
    for aid, w in weights.items():
        arr[aid - base] = w
    if len(weights) != len(arr):
        raise InvalidArgument("measure file is missing atoms")
    return MeasureTree(tree, resolution, arr)


# ---------------------------------------------------------------------------
# integrals, conditional expectations, projections
# ---------------------------------------------------------------------------

def _as_list(f):
    return list(f) if isinstance(f, (list, tuple)) else [f]


def _finest(factors, m: Optional[MeasureTree], level: int) -> int:
    levels = [f.level for f in factors if isinstance(f, PiecewisePoly)]
    return max(levels + [0 if m is None else m.resolution, level])


def cell_integrals(tree, factors, m: Optional[MeasureTree], fine: int, extra_degree: int = 0,
                   basis: Optional[tuple] = None) -> np.ndarray:
    """Integrals of the product of ``factors`` over every level-``fine`` cell.

    With ``basis=(space, level)`` the product is additionally multiplied by each
    local basis function of ``level`` atoms; the result then has a trailing
    axis of length ``space.dim``.
    """
    degree = sum(_degree(f) for f in factors) + extra_degree
    if basis is not None:
        degree += basis[0].coord_degree
    nodes, w = cell_grid(tree, fine, degree)
    integrand = w
    for f in factors:
        integrand = integrand * _values(f, tree, fine, nodes)
    if m is not None:
        integrand = integrand * m.density(fine)[:, None]
    if basis is None:
        return integrand.sum(axis=1)
    space, level = basis
    anc = np.arange(1 << fine) >> (fine - level)
    b = space.basis(tree, level, anc[:, None], nodes)
    return np.einsum("cq,cqk->ck", integrand, b)


def conditional_expectation(tree: PartitionTree, f, n: int,
                            m: Optional[MeasureTree] = None) -> PiecewisePoly:
    """``E_n`` of ``f`` (or of the product of a list of factors) under ``m``.

    Returns a piecewise constant at level ``n``.
    """
    factors = _as_list(f)
    fine = _finest(factors, m, n)
    ints = aggregate(cell_integrals(tree, factors, m, fine), fine, n)
    mass = tree.mass[n] if m is None else m.masses(n)
    if np.any(mass <= 0):
        raise InvalidState(f"zero-mass atom at level {n}")
    return PiecewisePoly.constant(tree, n, ints / mass)


def abs_cell_integrals(tree: PartitionTree, f: PiecewisePoly, m: Optional[MeasureTree],
                       fine: int, sub: int = 16) -> np.ndarray:
    """``int |f|`` over every level-``fine`` cell.

    Exact (closed form) for one-dimensional polynomials of degree <= 1;
    otherwise a composite Gauss rule with ``sub`` pieces per axis (the kink
    of ``|f|`` is the only source of error).
    """
    if fine < f.level:
        raise InvalidState("cells coarser than the function")
    dens = 1.0 if m is None else m.density(fine)
    if f.space.degree == 0:
        vals = f.values_at_cells(tree, fine, tree.centers(fine)[:, None, :])[:, 0]
        return np.abs(vals) * tree.mass[fine] * dens
    if tree.dim == 1 and f.space.degree == 1:
        ends = np.stack([tree.lower[fine], tree.upper[fine]], axis=1)  # (c, 2, 1)
        v = f.values_at_cells(tree, fine, ends)
        a, b = np.abs(v[:, 0]), np.abs(v[:, 1])
        same = v[:, 0] * v[:, 1] >= 0
        tot = a + b
        safe = np.where(tot > 0, tot, 1.0)
        mean = np.where(same, 0.5 * tot, 0.5 * (a * a + b * b) / safe)
        return mean * tree.mass[fine] * dens
    # composite rule: split each cell into sub**d boxes
    from .polyspace import gauss_rule, npts_for_degree
    import itertools
    ref_x, ref_w = gauss_rule(npts_for_degree(f.space.coord_degree + 1), tree.dim)
    offs = np.array(list(itertools.product(range(sub), repeat=tree.dim)), float)
    pts = ((offs[:, None, :] + ref_x[None]) / sub).reshape(-1, tree.dim)
    wts = np.tile(ref_w, len(offs)) / len(offs)
    lo, hi = tree.lower[fine], tree.upper[fine]
    nodes = lo[:, None, :] + (hi - lo)[:, None, :] * pts[None]
    vals = np.abs(f.values_at_cells(tree, fine, nodes))
    return (vals * wts).sum(axis=1) * tree.mass[fine] * dens


def project(tree: PartitionTree, f, n: int, m: Optional[MeasureTree] = None,
            space: Optional[PolySpec] = None) -> PiecewisePoly:
    """Orthoprojection of ``f`` onto ``S_n`` in ``L2(m)``.

    ``f`` is a :class:`PiecewisePoly`, a :class:`PolyFunction` or a list of
    factors whose product is projected.  ``space`` defaults to the space of
    the (first piecewise) factor.
    """
    factors = _as_list(f)
    if space is None:
        pw = [g for g in factors if isinstance(g, PiecewisePoly)]
        if not pw:
            raise InvalidArgument("a target space is required when projecting global polynomials")
        space = pw[0].space
    fine = _finest(factors, m, n)
    nodes, w = cell_grid(tree, fine, 2 * space.coord_degree)
    anc = np.arange(1 << fine) >> (fine - n)
    b = space.basis(tree, n, anc[:, None], nodes)
    dens = np.ones(1 << fine) if m is None else m.density(fine)
    gram = aggregate(np.einsum("cq,cqk,cql->ckl", w * dens[:, None], b, b), fine, n)
    rhs = aggregate(cell_integrals(tree, factors, m, fine, basis=(space, n)), fine, n)
    _guard(gram, where=f"project level {n}")
    coeffs = np.linalg.solve(gram, rhs[..., None])[..., 0]
    return PiecewisePoly(space, n, coeffs)


def _guard(gram: np.ndarray, where: str) -> None:
    cond = np.linalg.cond(gram)
    bad = ~np.isfinite(cond) | (cond > COND_GUARD)
    if np.any(bad):
        i = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise IllConditioned(f"{where}: Gram matrix of atom index {i} has condition "
                             f"number {cond[i]:.3g} > {COND_GUARD:.0e}")


def orthogonality_residuals(tree: PartitionTree, h: PiecewisePoly, level: int,
                            m: Optional[MeasureTree] = None) -> np.ndarray:
    """Per-atom ``max_b |int_A h b dm| / (||h||_{L2(A,m)} ||b||_{L2(A,m)})``.

    ``b`` runs over the local basis of ``h.space`` on the level-``level`` atoms;
    atoms where ``h`` vanishes get residual 0.
    """
    space = h.space
    fine = _finest([h], m, level)
    nodes, w = cell_grid(tree, fine, 2 * space.coord_degree)
    dens = np.ones(1 << fine) if m is None else m.density(fine)
    wd = w * dens[:, None]
    anc = np.arange(1 << fine) >> (fine - level)
    b = space.basis(tree, level, anc[:, None], nodes)
    hv = h.values_at_cells(tree, fine, nodes)
    hb = aggregate(np.einsum("cq,cq,cqk->ck", wd, hv, b), fine, level)
    hh = aggregate((wd * hv * hv).sum(axis=1), fine, level)
    bb = aggregate(np.einsum("cq,cqk->ck", wd, b * b), fine, level)
    denom = np.sqrt(hh)[:, None] * np.sqrt(bb)
    return np.where(denom > 0, np.abs(hb) / np.where(denom > 0, denom, 1.0), 0.0).max(axis=1)
