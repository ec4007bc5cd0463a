"""Polynomial spaces on boxes, piecewise polynomials and exact integration.

Every atom carries its own basis of ``S`` that is orthonormal with respect to
the normalized Lebesgue measure ``P`` restricted to the atom:

    phi_a(x) = |A|**-0.5 * prod_i sqrt(2 a_i + 1) * P_{a_i}(t_i)

with ``t`` the affine pullback of ``x`` to ``[-1, 1]**d``.  All integrands the
package meets are polynomial on every quadrature cell, so tensor
Gauss-Legendre rules of the right order integrate them exactly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Optional

import numpy as np

from .errors import InvalidArgument, InvalidState
from .partition import PartitionTree


# ---------------------------------------------------------------------------
# global polynomials (used for g and g**2)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyFunction:
    """A polynomial on R^d stored as ``{exponent tuple: coefficient}``."""

    d: int
    terms: tuple  # tuple of (exponent tuple, coeff)

    @classmethod
    def constant(cls, d: int, value: float = 1.0) -> "PolyFunction":
        return cls(d, (((0,) * d, float(value)),))

    @classmethod
    def affine(cls, offset: float, slope) -> "PolyFunction":
        slope = np.atleast_1d(np.asarray(slope, dtype=float))
        d = slope.size
        terms = [((0,) * d, float(offset))]
        for i, s in enumerate(slope):
            e = [0] * d
            e[i] = 1
            terms.append((tuple(e), float(s)))
        return cls(d, tuple(terms))

    @property
    def degree(self) -> int:
        return max((sum(e) for e, c in self.terms if c != 0.0), default=0)

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for e, c in self.terms:
            term = np.full(x.shape[:-1], c)
            for i, p in enumerate(e):
                if p:
                    term = term * x[..., i] ** p
            out = out + term
        return out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for e, c in self.terms:
            for j in range(self.d):
                if e[j] == 0:
                    continue
                term = np.full(x.shape[:-1], c * e[j])
                for i, p in enumerate(e):
                    q = p - 1 if i == j else p
                    if q:
                        term = term * x[..., i] ** q
                out[..., j] += term
        return out

    def __mul__(self, other: "PolyFunction") -> "PolyFunction":
        acc = {}
        for e1, c1 in self.terms:
            for e2, c2 in other.terms:
                e = tuple(a + b for a, b in zip(e1, e2))
                acc[e] = acc.get(e, 0.0) + c1 * c2
        return PolyFunction(self.d, tuple(sorted(acc.items())))

    def range_on(self, lower, upper, grid: int = 65) -> tuple:
        """(min, max) over a box; exact for affine functions (corner values)."""
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        n = 2 if self.degree <= 1 else grid
        axes = [np.linspace(lo, hi, n) for lo, hi in zip(lower, upper)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        vals = self(pts)
        return float(vals.min()), float(vals.max())

    def describe(self) -> str:
        return ";".join(f"{','.join(map(str, e))}:{c!r}" for e, c in self.terms)

    @classmethod
    def parse(cls, d: int, text: str) -> "PolyFunction":
        terms = []
        for part in text.split(";"):
            e, _, c = part.partition(":")
            terms.append((tuple(int(v) for v in e.split(",")), float(c)))
        return cls(d, tuple(terms))


# ---------------------------------------------------------------------------
# Legendre tables and quadrature
# ---------------------------------------------------------------------------

def legendre_table(t: np.ndarray, degree: int) -> np.ndarray:
    """Values P_0..P_degree at ``t``; shape ``t.shape + (degree+1,)``."""
    out = np.empty(t.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = t
    for n in range(1, degree):
        out[..., n + 1] = ((2 * n + 1) * t * out[..., n] - n * out[..., n - 1]) / (n + 1)
    return out


def legendre_deriv_table(t: np.ndarray, degree: int) -> np.ndarray:
    p = legendre_table(t, degree)
    out = np.zeros_like(p)
    for n in range(1, degree + 1):
        # P'_{n} = P'_{n-2} + (2n - 1) P_{n-1}
        out[..., n] = (out[..., n - 2] if n >= 2 else 0.0) + (2 * n - 1) * p[..., n - 1]
    return out


@lru_cache(maxsize=64)
def gauss_rule(npts: int, d: int) -> tuple:
    """Tensor Gauss-Legendre rule on [0, 1]**d: nodes (q, d), weights (q,) summing to 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    nodes = np.array(list(itertools.product(x, repeat=d)))
    weights = np.array([np.prod(c) for c in itertools.product(w, repeat=d)])
    return nodes, weights


def npts_for_degree(degree: int) -> int:
    return max(1, (int(degree) + 2) // 2)


def cell_grid(tree: PartitionTree, level: int, degree: int) -> tuple:
    """Quadrature nodes ``(2**level, q, d)`` and P-mass weights ``(2**level, q)``
    exact for polynomials of total (or coordinate) degree ``degree`` per cell."""
    ref_x, ref_w = gauss_rule(npts_for_degree(degree), tree.dim)
    lo, hi = tree.lower[level], tree.upper[level]
    nodes = lo[:, None, :] + (hi - lo)[:, None, :] * ref_x[None, :, :]
    weights = tree.mass[level][:, None] * ref_w[None, :]
    return nodes, weights


def aggregate(values: np.ndarray, fine: int, coarse: int) -> np.ndarray:
    """Sum per-atom quantities at level ``fine`` into their level-``coarse`` ancestors."""
    if coarse > fine:
        raise InvalidArgument(f"cannot aggregate level {fine} into finer level {coarse}")
    k = 1 << (fine - coarse)
    return values.reshape((values.shape[0] // k, k) + values.shape[1:]).sum(axis=1)


# ---------------------------------------------------------------------------
# polynomial spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolySpec:
    """The local space ``S``.

    ``kind`` is ``"total"`` (total degree <= degree), ``"tensor"`` (each
    coordinate degree <= degree) or ``"gspan"`` (``S = span{g}``, dimension one).
    ``g`` is the fixed positive element of ``S``; it defaults to the constant 1.
    """

    d: int = 1
    degree: int = 1
    kind: str = "total"
    g: Optional[PolyFunction] = None

    def __post_init__(self):
        if self.kind not in ("total", "tensor", "gspan"):
            raise InvalidArgument(f"unknown space kind {self.kind!r}")
        if self.d < 1 or self.degree < 0:
            raise InvalidArgument("need d >= 1 and degree >= 0")
        g = self.g if self.g is not None else PolyFunction.constant(self.d)
        if g.d != self.d:
            raise InvalidArgument("g lives in the wrong dimension")
        if self.kind == "gspan":
            object.__setattr__(self, "degree", g.degree)
        elif g.degree > self.degree:
            raise InvalidArgument("g must belong to S")
        object.__setattr__(self, "g", g)

    # -- structure -------------------------------------------------------
    @property
    def exponents(self) -> np.ndarray:
        return _exponents(self.d, self.degree, self.kind)

    @property
    def dim(self) -> int:
        if self.kind == "gspan":
            return 1
        if self.kind == "total":
            return comb(self.d + self.degree, self.d)
        return (self.degree + 1) ** self.d

    @property
    def contains_constants(self) -> bool:
        return self.kind != "gspan" or self.g.is_constant

    @property
    def coord_degree(self) -> int:
        """Largest per-coordinate degree (drives the quadrature order)."""
        return self.degree

    def square(self) -> "PolySpec":
        """``S^2 = span{u v : u, v in S}``."""
        if self.kind == "gspan":
            return PolySpec(self.d, 0, "gspan", self.g * self.g)
        return PolySpec(self.d, 2 * self.degree, self.kind, self.g)

    def c3(self, tree: PartitionTree) -> float:
        lo, hi = self.g.range_on(tree.domain.lower, tree.domain.upper)
        return lo

    def check_g(self, tree: PartitionTree) -> float:
        lo, hi = self.g.range_on(tree.domain.lower, tree.domain.upper)
        if lo <= 0 or hi > 1 + 1e-12:
            raise InvalidArgument(f"g must map the domain into (0, 1], range is [{lo}, {hi}]")
        return lo

    # -- local bases ----------------------------------------------------------
    def basis(self, tree: PartitionTree, level: int, idx, x) -> np.ndarray:
        """Local orthonormal basis of the level-``level`` atoms ``idx`` at ``x``.

        ``idx`` has the leading shape of ``x`` (or broadcasts to it); returns
        ``x.shape[:-1] + (dim,)``.
        """
        x = np.asarray(x, dtype=float)
        idx = np.broadcast_to(np.asarray(idx), x.shape[:-1])
        return self.basis_on_boxes(tree.lower[level][idx], tree.upper[level][idx],
                                   tree.mass[level][idx], x)

    def basis_gradient(self, tree: PartitionTree, level: int, idx, x) -> np.ndarray:
        """Gradients, shape ``x.shape[:-1] + (dim, d)``."""
        x = np.asarray(x, dtype=float)
        idx = np.broadcast_to(np.asarray(idx), x.shape[:-1])
        return self.basis_gradient_on_boxes(tree.lower[level][idx], tree.upper[level][idx],
                                            tree.mass[level][idx], x)

    def basis_on_boxes(self, lo, hi, mass, x) -> np.ndarray:
        """Basis values for boxes given explicitly (leading shapes broadcast with ``x``)."""
        if np.any(np.asarray(mass) <= 0):
            raise InvalidArgument("degenerate atom (zero mass)")
        if self.kind == "gspan":
            nu = self._nu_boxes(lo, hi, mass)
            return (self.g(x) / np.sqrt(nu))[..., None]
        t = 2.0 * (x - lo) / (hi - lo) - 1.0
        tab = legendre_table(t, self.degree)  # (..., d, degree+1)
        out = np.ones(x.shape[:-1] + (self.dim,))
        for j, e in enumerate(self.exponents):
            for i, a in enumerate(e):
                if a:
                    out[..., j] *= np.sqrt(2 * a + 1) * tab[..., i, a]
        return out / np.sqrt(mass)[..., None]

    def basis_gradient_on_boxes(self, lo, hi, mass, x) -> np.ndarray:
        if self.kind == "gspan":
            nu = self._nu_boxes(lo, hi, mass)
            return (self.g.gradient(x) / np.sqrt(nu)[..., None])[..., None, :]
        t = 2.0 * (x - lo) / (hi - lo) - 1.0
        tab = legendre_table(t, self.degree)
        dtab = legendre_deriv_table(t, self.degree)
        scale = 2.0 / (hi - lo)
        out = np.zeros(x.shape[:-1] + (self.dim, self.d))
        for j, e in enumerate(self.exponents):
            for k in range(self.d):
                term = np.ones(x.shape[:-1])
                for i, a in enumerate(e):
                    f = np.sqrt(2 * a + 1)
                    if i == k:
                        term = term * f * dtab[..., i, a] * scale[..., i]
                    elif a:
                        term = term * f * tab[..., i, a]
                out[..., j, k] = term
        return out / np.sqrt(mass)[..., None, None]

    def _nu_boxes(self, lo, hi, mass):
        """``nu(A) = int_A g^2 dP`` for boxes (exact quadrature)."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        ref_x, ref_w = gauss_rule(npts_for_degree(2 * self.g.degree), self.d)
        nodes = lo[..., None, :] + (hi - lo)[..., None, :] * ref_x
        return (self.g(nodes) ** 2 * ref_w).sum(axis=-1) * mass

    def nu(self, tree: PartitionTree, level: int) -> np.ndarray:
        """``int_A g^2 dP`` for every atom of ``level``."""
        return self._nu_boxes(tree.lower[level], tree.upper[level], tree.mass[level])

    def describe(self) -> str:
        return f"d={self.d} degree={self.degree} kind={self.kind} g={self.g.describe()}"

    @classmethod
    def parse(cls, text: str) -> "PolySpec":
        kv = dict(tok.split("=", 1) for tok in text.split())
        d = int(kv["d"])
        return cls(d, int(kv["degree"]), kv["kind"], PolyFunction.parse(d, kv["g"]))


@lru_cache(maxsize=64)
def _exponents(d: int, degree: int, kind: str) -> np.ndarray:
    if kind == "gspan":
        return np.zeros((1, d), dtype=int)
    rng = range(degree + 1)
    exps = [e for e in itertools.product(rng, repeat=d) if kind == "tensor" or sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
    return np.array(exps, dtype=int).reshape(len(exps), d)


def local_basis(space: PolySpec, atom):
    """Callable ``x -> (..., dim)`` evaluating the orthonormal basis of ``atom``.

    ``atom`` is a :class:`~smartlab.partition.Atom`; orthonormality is with
    respect to the normalized Lebesgue measure.
    """
    if atom.lebesgue_mass <= 0 or atom.box.volume <= 0:
        raise InvalidArgument("degenerate atom")
    lo = np.asarray(atom.box.lower, float)
    hi = np.asarray(atom.box.upper, float)
    mass = float(atom.lebesgue_mass)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        return space.basis_on_boxes(lo, hi, np.full(x.shape[:-1], mass), x)

    return evaluate


# ---------------------------------------------------------------------------
# piecewise polynomials
# ---------------------------------------------------------------------------

@dataclass
class PiecewisePoly:
    """An element of ``S_level``: one coefficient vector per level atom."""

    space: PolySpec
    level: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (1 << self.level, self.space.dim):
            raise InvalidArgument(
                f"coefficients of shape {self.coeffs.shape}, expected {(1 << self.level, self.space.dim)}")

    @classmethod
    def zeros(cls, space: PolySpec, level: int) -> "PiecewisePoly":
        return cls(space, level, np.zeros((1 << level, space.dim)))

    @classmethod
    def constant(cls, tree: PartitionTree, level: int, values, space: Optional[PolySpec] = None):
        """A piecewise constant with the given per-atom values."""
        space = space or PolySpec(tree.dim, 0)
        if not space.contains_constants:
            raise InvalidArgument("space does not contain constants")
        c = np.zeros((1 << level, space.dim))
        # for a constant g the first basis function is 1 / sqrt(|A|) in every kind
        c[:, 0] = np.broadcast_to(values, (1 << level,)) * np.sqrt(tree.mass[level])
        return cls(space, level, c)

    @property
    def degree(self) -> int:
        return self.space.degree

    def values_at_cells(self, tree: PartitionTree, fine: int, nodes: np.ndarray) -> np.ndarray:
        """Values at quadrature nodes of all level-``fine`` cells (``fine >= level``)."""
        if fine < self.level:
            raise InvalidState(f"cells at level {fine} are coarser than the function (level {self.level})")
        anc = np.arange(1 << fine) >> (fine - self.level)
        b = self.space.basis(tree, self.level, anc[:, None], nodes)
        return np.einsum("cqk,ck->cq", b, self.coeffs[anc])

    def __call__(self, tree: PartitionTree, points, cells: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        idx = tree.locate(x, self.level) if cells is None else np.asarray(cells) >> 0
        b = self.space.basis(tree, self.level, idx, x)
        return np.einsum("pk,pk->p", b, self.coeffs[idx])

    def cell_values(self, tree: PartitionTree) -> np.ndarray:
        """Per-atom values of a piecewise constant."""
        if self.space.degree != 0:
            raise InvalidState("cell_values needs a piecewise constant")
        return self.coeffs[:, 0] / np.sqrt(tree.mass[self.level])

    def _check(self, other):
        if other.space != self.space or other.level != self.level:
            raise InvalidArgument("piecewise polynomials live in different spaces")

    def __add__(self, other):
        self._check(other)
        return PiecewisePoly(self.space, self.level, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return PiecewisePoly(self.space, self.level, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return PiecewisePoly(self.space, self.level, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return PiecewisePoly(self.space, self.level, -self.coeffs)

    def prolong(self, tree: PartitionTree, level: int) -> "PiecewisePoly":
        """The same function written in the bases of the finer ``level``."""
        if level < self.level:
            raise InvalidArgument("prolong goes to finer levels only")
        if level == self.level:
            return self
        nodes, w = cell_grid(tree, level, 2 * self.space.coord_degree)
        fv = self.values_at_cells(tree, level, nodes)
        b = self.space.basis(tree, level, np.arange(1 << level)[:, None], nodes)
        return PiecewisePoly(self.space, level, np.einsum("cq,cq,cqk->ck", w, fv, b))


def _values(item, tree, fine, nodes):
    if isinstance(item, PiecewisePoly):
        return item.values_at_cells(tree, fine, nodes)
    if isinstance(item, PolyFunction):
        return item(nodes)
    raise InvalidArgument(f"cannot integrate {type(item).__name__}")


def _degree(item) -> int:
    return item.space.coord_degree if isinstance(item, PiecewisePoly) else item.degree


def integrate(tree: PartitionTree, factors, measure=None, level: int = 0,
              fine: Optional[int] = None) -> np.ndarray:
    """Per-atom integrals at ``level`` of the product of ``factors`` against ``measure``.

    ``factors`` is a sequence of :class:`PiecewisePoly` / :class:`PolyFunction`;
    ``measure`` is a :class:`~smartlab.measures.MeasureTree` (``None`` means
    normalized Lebesgue).  Quadrature runs on the cells of the finest level
    involved, where every factor and the density are polynomial/constant, so
    the result is exact up to round-off.
    """
    factors = list(factors)
    levels = [f.level for f in factors if isinstance(f, PiecewisePoly)]
    res = 0 if measure is None else measure.resolution
    finest = max(levels + [res, level])
    fine = finest if fine is None else fine
    if fine < finest:
        raise InvalidState(f"integration level {fine} coarser than the data (level {finest})")
    if fine > tree.max_depth:
        raise InvalidState("integration level beyond the tree depth")
    degree = sum(_degree(f) for f in factors)
    nodes, w = cell_grid(tree, fine, degree)
    integrand = w
    for f in factors:
        integrand = integrand * _values(f, tree, fine, nodes)
    per_cell = integrand.sum(axis=1)
    if measure is not None:
        per_cell = per_cell * measure.density(fine)
    return aggregate(per_cell, fine, level)


# ---------------------------------------------------------------------------
# sup norms and empirical Remez / Markov constants
# ---------------------------------------------------------------------------

def sup_grid_delta(space: PolySpec, grid: int) -> float:
    """Relative deficit ``delta`` of the grid maximum.

    With ``G`` equispaced points per axis (corners included), Markov's
    inequality on axis-parallel lines gives
    ``grid_max >= (1 - delta) * sup`` with ``delta = d * r**2 / (G - 1)``.
    Affine functions on boxes peak at corners, so ``delta = 0`` for degree <= 1.
    """
    if space.degree <= 1:
        return 0.0
    return space.d * space.degree ** 2 / (grid - 1)


def _box_grid(lo, hi, grid):
    d = lo.shape[-1]
    ref = np.linspace(0.0, 1.0, grid)
    ref = np.array(list(itertools.product(ref, repeat=d)))
    return lo[..., None, :] + (hi - lo)[..., None, :] * ref


def sup_norms(tree: PartitionTree, f: PiecewisePoly, grid: int = 17, upper: bool = False,
              chunk: int = 1 << 16) -> np.ndarray:
    """``||f||_A`` for every atom of ``f.level``.

    Returns the grid maximum (in ``[(1 - delta) sup, sup]``), or the certified
    upper bound ``grid_max / (1 - delta)`` when ``upper`` is set.
    """
    space = f.space
    if space.degree <= 1:
        grid = 2
    n = 1 << f.level
    out = np.empty(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        pts = _box_grid(tree.lower[f.level][idx], tree.upper[f.level][idx], grid)
        b = space.basis(tree, f.level, idx[:, None], pts)
        out[idx] = np.abs(np.einsum("pqk,pk->pq", b, f.coeffs[idx])).max(axis=1)
    if upper:
        delta = sup_grid_delta(space, grid)
        if delta >= 1.0:
            raise InvalidArgument("grid too coarse for a certified bound")
        out = out / (1.0 - delta)
    return out


def sup_norm(tree: PartitionTree, f: PiecewisePoly, atom_index: int, grid: int = 65) -> float:
    sub = PiecewisePoly(f.space, f.level, f.coeffs)
    space = f.space
    g = 2 if space.degree <= 1 else grid
    pts = _box_grid(tree.lower[f.level][atom_index], tree.upper[f.level][atom_index], g)
    b = space.basis(tree, f.level, atom_index, pts)
    return float(np.abs(b @ sub.coeffs[atom_index]).max())


@dataclass
class ConstantsReport:
    c1: float
    c2: float
    C_markov: float
    C_product: float
    n_samples: int


def _reference_grids(space: PolySpec, d: int, grid: Optional[int]):
    grid = grid or (256 if d == 1 else 24)
    mid_ref = (np.arange(grid) + 0.5) / grid
    mid_ref = np.array(list(itertools.product(mid_ref, repeat=d)))
    sup_g = 2 if space.degree <= 1 else 129 if d == 1 else 17
    sup_ref = np.array(list(itertools.product(np.linspace(0, 1, sup_g), repeat=d)))
    return mid_ref, sup_ref


def sample_constants(space: PolySpec, tree: PartitionTree, level: int, index: int, cf, cu,
                     c1: float = 0.5, measure=None, grid: Optional[int] = None) -> Optional[tuple]:
    """``(level-set fraction, Lip diam / sup, product ratio)`` for ``f, u`` given by
    local coefficients ``cf, cu`` on one atom; ``None`` when ``f`` vanishes."""
    mid_ref, sup_ref = _reference_grids(space, tree.dim, grid)
    lo, hi = tree.lower[level][index], tree.upper[level][index]
    cf, cu = np.asarray(cf, float), np.asarray(cu, float)
    pts = lo + (hi - lo) * mid_ref
    b = space.basis(tree, level, index, pts)
    fv, uv = b @ cf, b @ cu
    w = np.ones(len(pts)) if measure is None else measure.density_at_points(pts)
    spts = lo + (hi - lo) * sup_ref
    fnorm = np.abs(space.basis(tree, level, index, spts) @ cf).max()
    if fnorm == 0:
        return None
    frac = float(w[np.abs(fv) >= c1 * fnorm].sum() / w.sum())
    grad = space.basis_gradient(tree, level, index, spts)  # (q, dim, d)
    lip = np.linalg.norm(np.einsum("qkd,k->qd", grad, cf), axis=1).max()
    markov = float(lip * np.max(hi - lo) / fnorm)
    l1_u = (w * np.abs(uv)).sum()
    l1_uf = (w * np.abs(uv * fv)).sum()
    prod = float(fnorm * l1_u / l1_uf) if l1_uf > 0 else 0.0
    return frac, markov, prod


def estimate_remez_markov(space: PolySpec, tree: PartitionTree, n_samples: int = 200,
                          seed: int = 0, c1: float = 0.5, measure=None,
                          grid: Optional[int] = None) -> ConstantsReport:
    """Worst observed constants over random ``f, u in S`` on random atoms.

    * ``c2``: min of ``mu(|f| >= c1 ||f||_A) / mu(A)``;
    * ``C_markov``: max of ``Lip(f) diam(A) / ||f||_A``;
    * ``C_product``: max of ``||f||_A ||u||_{L1(A)} / ||u f||_{L1(A)}``.

    Level-set measures and L1 norms use a midpoint grid of ``grid**d`` points
    weighted by ``measure`` (Lebesgue when ``None``).
    """
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    c2, c_markov, c_prod = 1.0, 0.0, 0.0
    for _ in range(n_samples):
        level = int(rng.integers(0, tree.max_depth + 1))
        i = int(rng.integers(0, 1 << level))
        cf = rng.standard_normal(space.dim)
        cu = rng.standard_normal(space.dim)
        got = sample_constants(space, tree, level, i, cf, cu, c1, measure, grid)
        if got is None:
            continue
        c2 = min(c2, got[0])
        c_markov = max(c_markov, got[1])
        c_prod = max(c_prod, got[2])
    return ConstantsReport(c1, c2, c_markov, c_prod, n_samples)


def write_piecewise(f: PiecewisePoly, fh) -> None:
    """``atom-id: coeff,coeff,...`` lines for every atom of ``f.level``."""
    base = (1 << f.level) - 1
    for i, row in enumerate(f.coeffs):
        fh.write(f"{base + i}: " + ",".join(repr(float(c)) for c in row) + "\n")


def read_piecewise(space: PolySpec, level: int, lines) -> PiecewisePoly:
    coeffs = np.zeros((1 << level, space.dim))
    base = (1 << level) - 1
    for line in lines:
        line = line.strip()
        if not line:
            continue
        aid, _, rest = line.partition(":")
        coeffs[int(aid) - base] = [float(v) for v in rest.split(",")]
    return PiecewisePoly(space, level, coeffs)
