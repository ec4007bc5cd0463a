"""Smartingales: generation, verification, square functions and the associated
martingale ``M_n = E_n(g f_n)``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument, InvalidState
from .measures import (MeasureTree, abs_cell_integrals, cell_integrals,
                       orthogonality_residuals)
from .partition import PartitionTree
from .polyspace import (PiecewisePoly, PolyFunction, PolySpec, aggregate, cell_grid,
                        read_piecewise, sup_norms, write_piecewise)

RULES = ("rademacher_like", "gaussian_coeff", "haar")


@dataclass
class Smartingale:
    """Differences ``Delta f_k`` at the active steps; ``f_0 = 0``."""

    tree: PartitionTree
    space: PolySpec
    base_measure: MeasureTree
    steps: list
    diffs: dict = field(repr=False)
    bound_L: float
    sparsity: int = 0
    rule: str = "gaussian_coeff"
    seed: int = 0

    @property
    def depth(self) -> int:
        return self.tree.max_depth

    def diff(self, k: int) -> Optional[PiecewisePoly]:
        return self.diffs.get(k)

    def f(self, n: int) -> PiecewisePoly:
        """``f_n`` written at level ``n`` (telescoping sum of the differences)."""
        out = PiecewisePoly.zeros(self.space, n)
        for k in self.steps:
            if k <= n:
                out = out + self.diffs[k].prolong(self.tree, n)
        return out

    def scaled(self, factor: float) -> "Smartingale":
        return Smartingale(self.tree, self.space, self.base_measure, list(self.steps),
                           {k: v * factor for k, v in self.diffs.items()},
                           self.bound_L * abs(factor), self.sparsity, self.rule, self.seed)


def active_steps(depth: int, sparsity: int, last: Optional[int] = None) -> list:
    """``1, 1 + (sparsity + 1), ...`` up to ``last`` (default ``depth - sparsity``)."""
    if sparsity < 0:
        raise InvalidArgument("sparsity must be >= 0")
    last = depth - sparsity if last is None else last
    return list(range(1, min(last, depth) + 1, sparsity + 1))


def complement_basis(tree: PartitionTree, space: PolySpec, level: int,
                     m: Optional[MeasureTree] = None) -> np.ndarray:
    """Orthonormal basis of ``S(A')+S(A'') minus S(A)`` for every level-``level`` atom.

    Returns coefficients of shape ``(2**level, 2k, k)``: rows ``[:k]`` refer to
    the local basis of child ``2a``, rows ``[k:]`` to child ``2a + 1``;
    columns are the complement vectors, orthonormal in ``L2(m)``.
    """
    k = space.dim
    child = level + 1
    fine = max(child, 0 if m is None else m.resolution)
    nodes, w = cell_grid(tree, fine, 2 * space.coord_degree)
    if m is not None:
        w = w * m.density(fine)[:, None]
    cells = np.arange(1 << fine)
    bc = space.basis(tree, child, (cells >> (fine - child))[:, None], nodes)
    bp = space.basis(tree, level, (cells >> (fine - level))[:, None], nodes)
    gram_c = aggregate(np.einsum("cq,cqk,cql->ckl", w, bc, bc), fine, child)
    cross = aggregate(np.einsum("cq,cqk,cql->ckl", w, bc, bp), fine, child)
    n = 1 << level
    gram = np.zeros((n, 2 * k, 2 * k))
    gram[:, :k, :k] = gram_c[0::2]
    gram[:, k:, k:] = gram_c[1::2]
    x = np.concatenate([cross[0::2], cross[1::2]], axis=1)  # (n, 2k, k)
    chol = np.linalg.cholesky(gram)
    wmat = np.linalg.solve(chol, x)
    q, _ = np.linalg.qr(wmat, mode="complete")
    comp = q[:, :, k:]
    return np.linalg.solve(np.swapaxes(chol, 1, 2), comp)


def generate(tree: PartitionTree, space: PolySpec, sparsity: int = 0, L: float = 1.0,
             seed: int = 0, rule: str = "gaussian_coeff",
             base_measure: Optional[MeasureTree] = None, last_step: Optional[int] = None,
             sup_grid: int = 17) -> Smartingale:
    """Random smartingale with differences bounded by ``L``.

    Active steps are ``1, 2 + sparsity, ...`` up to ``last_step`` (default
    ``depth - sparsity``, which leaves room for the sparse change of measure).
    Every level is rescaled by one factor so that its largest atom sup-norm is
    ``L`` (a certified upper bound is used above degree 1).
    """
    if rule not in RULES:
        raise InvalidArgument(f"unknown rule {rule!r}; expected one of {RULES}")
    if L <= 0:
        raise InvalidArgument("L must be positive")
    m = base_measure or MeasureTree.lebesgue(tree)
    rng = np.random.default_rng(seed)
    k = space.dim
    diffs = {}
    steps = active_steps(tree.max_depth, sparsity, last_step)
    for i in steps:
        comp = complement_basis(tree, space, i - 1, m)
        n = comp.shape[0]
        if rule == "rademacher_like":
            draw = rng.choice([-1.0, 1.0], size=(n, k))
        elif rule == "gaussian_coeff":
            draw = rng.standard_normal((n, k))
        else:
            draw = np.zeros((n, k))
            draw[:, 0] = rng.choice([-1.0, 1.0], size=n)
        c = np.einsum("nij,nj->ni", comp, draw)
        coeffs = np.empty((2 * n, k))
        coeffs[0::2] = c[:, :k]
        coeffs[1::2] = c[:, k:]
        h = PiecewisePoly(space, i, coeffs)
        top = sup_norms(tree, h, grid=sup_grid, upper=True).max()
        if top > 0:
            h = h * (L / top)
        diffs[i] = h
    return Smartingale(tree, space, m, steps, diffs, float(L), sparsity, rule, seed)


def verify_smartingale(s: Smartingale, m: Optional[MeasureTree] = None) -> float:
    """Largest normalized orthogonality residual of ``Delta f_k`` against ``S_{k-1}``."""
    m = s.base_measure if m is None else m
    worst = 0.0
    for k in s.steps:
        worst = max(worst, float(orthogonality_residuals(s.tree, s.diffs[k], k - 1, m).max()))
    return worst


# ---------------------------------------------------------------------------
# conditional expectations of the differences (per-atom tables)
# ---------------------------------------------------------------------------

def _mass(tree, m, level):
    return tree.mass[level] if m is None else m.masses(level)


def _cond_exp_table(tree, factors, level, m):
    fine = max([level, 0 if m is None else m.resolution] + [f.level for f in factors
                                                           if isinstance(f, PiecewisePoly)])
    return aggregate(cell_integrals(tree, factors, m, fine), fine, level) / _mass(tree, m, level)


def sq_tables(s: Smartingale, m: Optional[MeasureTree] = None) -> dict:
    """``k -> (E_k (Delta f_k)^2, E_{k-1} (Delta f_k)^2)`` per-atom arrays."""
    m = s.base_measure if m is None else m
    out = {}
    for k in s.steps:
        h = s.diffs[k]
        ek = _cond_exp_table(s.tree, [h, h], k, m)
        fine = max(k, m.resolution)
        ints = aggregate(cell_integrals(s.tree, [h, h], m, fine), fine, k - 1)
        out[k] = (ek, ints / _mass(s.tree, m, k - 1))
    return out


def abs_tables(s: Smartingale, m: Optional[MeasureTree] = None) -> dict:
    """``k -> E_k |Delta f_k|`` per atom of level ``k``."""
    m = s.base_measure if m is None else m
    out = {}
    for k in s.steps:
        fine = max(k, m.resolution)
        ints = aggregate(abs_cell_integrals(s.tree, s.diffs[k], m, fine), fine, k)
        out[k] = ints / _mass(s.tree, m, k)
    return out


def square_function(s: Smartingale, n: int, m: Optional[MeasureTree] = None,
                    tables: Optional[dict] = None) -> PiecewisePoly:
    """``S_n^2 = sum_{k <= n} (E_k + E_{k-1}) (Delta f_k)^2`` as a level-``n`` constant."""
    if not 0 <= n <= s.depth:
        raise InvalidArgument(f"level {n} outside [0, {s.depth}]")
    tables = sq_tables(s, m) if tables is None else tables
    idx = np.arange(1 << n)
    total = np.zeros(1 << n)
    for k in s.steps:
        if k > n:
            break
        ek, ek1 = tables[k]
        total += ek[idx >> (n - k)] + ek1[idx >> (n - k + 1)]
    return PiecewisePoly.constant(s.tree, n, total)


@dataclass
class MartingaleView:
    """``M_n`` per atom of level ``n`` for ``n = 0..depth`` and ``Delta M_n``."""

    tree: PartitionTree
    measure: MeasureTree
    values: list = field(repr=False)
    diffs: list = field(repr=False)

    def residual(self) -> float:
        """Largest ``|E_{n-1} Delta M_n|`` relative to ``max |Delta M_n|``."""
        worst = 0.0
        for n in range(1, len(self.values)):
            dm = self.diffs[n]
            scale = np.abs(dm).max()
            if scale == 0:
                continue
            e = aggregate(dm * self.measure.masses(n), n, n - 1) / self.measure.masses(n - 1)
            worst = max(worst, float(np.abs(e).max() / scale))
        return worst

    def increment_constant(self, L: float) -> float:
        """Observed ``K`` in ``|Delta M_n| <= K L``."""
        return max(float(np.abs(d).max()) for d in self.diffs) / L


def associated_martingale(s: Smartingale, g: Optional[PolyFunction] = None,
                          m: Optional[MeasureTree] = None) -> MartingaleView:
    """``M_n = E_n(g f_n)`` under ``m`` (default: the base measure); ``g`` defaults to the space's g."""
    m = s.base_measure if m is None else m
    g = s.space.g if g is None else g
    tree = s.tree
    top = tree.max_depth
    fine = max(top, m.resolution)
    running = np.zeros(1 << fine)
    steps = set(s.steps)
    values, diffs = [], []
    for n in range(top + 1):
        if n in steps:
            running = running + cell_integrals(tree, [g, s.diffs[n]], m, fine)
        values.append(aggregate(running, fine, n) / m.masses(n))
        if n == 0:
            diffs.append(values[0].copy())
        else:
            diffs.append(values[n] - values[n - 1][np.arange(1 << n) >> 1])
    return MartingaleView(tree, m, values, diffs)


def martingale_square_function(mv: MartingaleView, n: int) -> PiecewisePoly:
    """``S_{M,n}^2 = sum_{k <= n} E_{k-1} |Delta M_k|^2`` at level ``n``."""
    idx = np.arange(1 << n)
    total = np.zeros(1 << n)
    m = mv.measure
    for k in range(1, n + 1):
        e = aggregate(mv.diffs[k] ** 2 * m.masses(k), k, k - 1) / m.masses(k - 1)
        total += e[idx >> (n - k + 1)]
    return PiecewisePoly.constant(mv.tree, n, total)


def sibling_bound_check(s: Smartingale, grid: int = 17) -> float:
    """``max ||Delta f||_{A''} mu(A) / (||Delta f||_{A'} mu(A'))`` over steps and atoms.

    Atoms where ``Delta f`` vanishes on ``A'`` are skipped.
    """
    worst = 0.0
    for k in s.steps:
        sup = sup_norms(s.tree, s.diffs[k], grid=grid)
        small = s.tree.small_child(k - 1)
        large = s.tree.large_child(k - 1)
        mass_k = s.base_measure.masses(k)
        mass_p = s.base_measure.masses(k - 1)
        num = sup[large] * mass_p
        den = sup[small] * mass_k[small]
        ok = den > 0
        if np.any(ok):
            worst = max(worst, float((num[ok] / den[ok]).max()))
    return worst


# ---------------------------------------------------------------------------
# pointwise trajectories
# ---------------------------------------------------------------------------

@dataclass
class PointPaths:
    """Per-point trajectories for ``n = 0..depth`` (arrays of shape ``(P, depth + 1)``)."""

    points: np.ndarray
    f: np.ndarray
    S2: np.ndarray
    V: np.ndarray
    M: Optional[np.ndarray] = None
    SM2: Optional[np.ndarray] = None


def point_paths(s: Smartingale, points, m: Optional[MeasureTree] = None,
                martingale: Optional[MartingaleView] = None) -> PointPaths:
    """Evaluate ``f_n``, ``S_n^2`` and ``V_n = sum_{k<=n} E_k|Delta f_k|`` at points.

    Conditional expectations use ``m`` (default: the base measure).  With a
    :class:`MartingaleView`, ``M_n`` and ``S_{M,n}^2`` are included too.
    """
    tree = s.tree
    top = tree.max_depth
    x = np.atleast_2d(np.asarray(points, float))
    cells = tree.locate(x, top)
    P = len(x)
    df = np.zeros((P, top + 1))
    ds2 = np.zeros((P, top + 1))
    dv = np.zeros((P, top + 1))
    sq = sq_tables(s, m)
    ab = abs_tables(s, m)
    for k in s.steps:
        df[:, k] = s.diffs[k](tree, x, cells >> (top - k))
        ek, ek1 = sq[k]
        ds2[:, k] = ek[cells >> (top - k)] + ek1[cells >> (top - k + 1)]
        dv[:, k] = ab[k][cells >> (top - k)]
    out = PointPaths(x, np.cumsum(df, axis=1), np.cumsum(ds2, axis=1), np.cumsum(dv, axis=1))
    if martingale is not None:
        mv = martingale
        out.M = np.stack([mv.values[n][cells >> (top - n)] for n in range(top + 1)], axis=1)
        dsm = np.zeros((P, top + 1))
        mm = mv.measure
        for k in range(1, top + 1):
            e = aggregate(mv.diffs[k] ** 2 * mm.masses(k), k, k - 1) / mm.masses(k - 1)
            dsm[:, k] = e[cells >> (top - k + 1)]
        out.SM2 = np.cumsum(dsm, axis=1)
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_smartingale(s: Smartingale, fh) -> None:
    steps = ",".join(map(str, s.steps))
    fh.write(f"# smartingale {s.space.describe()} L={s.bound_L!r} sparsity={s.sparsity} "
             f"steps={steps} rule={s.rule} seed={s.seed}\n")
    for k in s.steps:
        fh.write(f"# step {k}\n")
        write_piecewise(s.diffs[k], fh)


def read_smartingale(tree: PartitionTree, fh,
                     base_measure: Optional[MeasureTree] = None) -> Smartingale:
    header = fh.readline()
    if not header.startswith("# smartingale"):
        raise InvalidArgument("not a smartingale file")
    toks = header[len("# smartingale"):].split()
    kv = dict(t.split("=", 1) for t in toks)
    space = PolySpec.parse(" ".join(f"{key}={kv[key]}" for key in ("d", "degree", "kind", "g")))
    steps = [int(v) for v in kv["steps"].split(",") if v]
    blocks, current = {}, None
    for line in fh:
        if line.startswith("# step"):
            current = int(line.split()[2])
            blocks[current] = []
        elif line.strip():
            if current is None:
                raise InvalidState("coefficient line before any step header")
            blocks[current].append(line)
    diffs = {k: read_piecewise(space, k, blocks[k]) for k in steps}
    return Smartingale(tree, space, base_measure or MeasureTree.lebesgue(tree), steps, diffs,
                       float(kv["L"]), int(kv["sparsity"]), kv["rule"], int(kv["seed"]))
