"""Change of measure turning the perturbed sequence ``f_n - lambda sum p_k`` into a
smartingale.

Two constructions are provided:

* :func:`build_measure_1d` for ``S = span{g}``: each split of an atom gets the
  closed-form pair of child densities.
* :func:`build_measure_general` for sparse smartingales with ``1 in S``: on
  every atom of the level preceding an active step, the densities of its
  ``m = 2**(ell+1)`` descendants ``ell + 1`` levels down solve an ``m x m``
  linear system.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (IllConditioned, InvalidArgument, LambdaTooLarge, NearSingular,
                     SingularSplit)
from .measures import MeasureTree, abs_cell_integrals, orthogonality_residuals
from .partition import PartitionTree
from .polyspace import (PiecewisePoly, PolySpec, aggregate, cell_grid, estimate_remez_markov,
                        gauss_rule, npts_for_degree)
from .smartingale import Smartingale

EIG_FLOOR = 1e-12
DET_FLOOR = 1e-10
ALPHA_FLAG = 0.999


# ---------------------------------------------------------------------------
# scalar inequalities behind the one-dimensional density bounds
# ---------------------------------------------------------------------------

def triv_sides(lam, eta):
    """``(1 + eta, min(2 (1 + eta lam), 3 (1 - eta lam)))``."""
    lam = np.asarray(lam, float)
    eta = np.asarray(eta, float)
    return 1.0 + eta, np.minimum(2.0 * (1.0 + eta * lam), 3.0 * (1.0 - eta * lam))


def tilde_sides(lam, eta, eps):
    """``(lower, middle, upper)`` of the two-sided bound on ``(lam + eps) / (eta lam + eps)``."""
    lam = np.asarray(lam, float)
    eta = np.asarray(eta, float)
    base = 2.0 / (1.0 + eta)
    return base ** (-3.0 * lam), (lam + eps) / (eta * lam + eps), base ** (2.0 * lam)


@dataclass
class InequalitySuiteReport:
    n_samples: int
    lam_range: tuple
    triv_violations: int
    tilde_violations: int
    smallest_violating_lambda: Optional[float]

    @property
    def passed(self) -> bool:
        return self.triv_violations == 0 and self.tilde_violations == 0


def ratio_inequality_suite(n_samples: int = 10 ** 6, seed: int = 0, lam_range=(0.0, 1.0),
                           rtol: float = 1e-12, chunk: int = 1 << 18) -> InequalitySuiteReport:
    """Sample ``(lam, eta, eps)`` uniformly and count violations of both inequalities.

    A comparison ``a <= b`` counts as violated when ``a > b (1 + rtol)``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = lam_range
    triv = tilde = 0
    worst_lam = np.inf
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        lam = rng.uniform(lo, hi, n)
        eta = rng.uniform(-1.0, 1.0, n)
        eps = rng.choice([-1.0, 1.0], n)
        left, right = triv_sides(lam, eta)
        bad_t = left > right * (1 + rtol)
        low, mid, up = tilde_sides(lam, eta, eps)
        bad_e = (low > mid * (1 + rtol)) | (mid > up * (1 + rtol))
        triv += int(bad_t.sum())
        tilde += int(bad_e.sum())
        bad = bad_t | bad_e
        if bad.any():
            worst_lam = min(worst_lam, float(lam[bad].min()))
        done += n
    return InequalitySuiteReport(n_samples, tuple(lam_range), triv, tilde,
                                 None if not np.isfinite(worst_lam) else worst_lam)


# ---------------------------------------------------------------------------
# perturbed smartingale
# ---------------------------------------------------------------------------

@dataclass
class PerturbedSmartingale:
    """``Delta f~_k = Delta f_k - lam p_k`` with non-negative ``p_k`` in ``S_k``."""

    base: Smartingale
    lam: float
    p_rule: str
    p: dict = field(repr=False)
    diffs_tilde: dict = field(repr=False)

    @property
    def steps(self) -> list:
        return self.base.steps


def _split_coefficients(s: Smartingale, k: int):
    """For ``S = span{g}``: ``alpha`` per level ``k-1`` atom and the nu values."""
    tree = s.tree
    nu_c = s.space.nu(tree, k)
    nu_p = s.space.nu(tree, k - 1)
    sm = tree.small_child(k - 1)
    lg = tree.large_child(k - 1)
    c = s.diffs[k].coeffs[:, 0]
    # Delta f = alpha (nu'' g on A' - nu' g on A''); basis on a child B is g / sqrt(nu(B))
    alpha = c[sm] / (nu_c[lg] * np.sqrt(nu_c[sm]))
    return alpha, nu_c[sm], nu_c[lg], nu_p, sm, lg


def perturb(s: Smartingale, lam: float, p_rule: str = "auto") -> PerturbedSmartingale:
    """Build ``p_k`` and the perturbed differences.

    ``p_rule``: ``"abs_mean"`` gives ``p_k = E_k |Delta f_k|`` (Lebesgue, constant on
    level ``k`` atoms); ``"split"`` (only for ``S = span{g}``) gives
    ``p_k = |alpha| (nu(A'') g 1_{A'} + nu(A') g 1_{A''})``, which equals
    ``|Delta f_k|``.  ``"auto"`` picks ``"split"`` when ``dim S = 1`` and
    ``"abs_mean"`` otherwise.
    """
    if lam < 0:
        raise InvalidArgument("lambda must be non-negative")
    space = s.space
    if p_rule == "auto":
        p_rule = "split" if space.dim == 1 else "abs_mean"
    tree = s.tree
    p, dt = {}, {}
    for k in s.steps:
        h = s.diffs[k]
        if p_rule == "split":
            if space.dim != 1:
                raise InvalidArgument("the split rule needs dim S = 1")
            alpha, nu_s, nu_l, _, sm, lg = _split_coefficients(s, k)
            coeffs = np.zeros_like(h.coeffs)
            coeffs[sm, 0] = np.abs(alpha) * nu_l * np.sqrt(nu_s)
            coeffs[lg, 0] = np.abs(alpha) * nu_s * np.sqrt(nu_l)
            pk = PiecewisePoly(space, k, coeffs)
        elif p_rule == "abs_mean":
            if not space.contains_constants:
                raise InvalidArgument("abs_mean needs constants in S")
            vals = abs_cell_integrals(tree, h, None, k) / tree.mass[k]
            pk = PiecewisePoly.constant(tree, k, vals, space)
        else:
            raise InvalidArgument(f"unknown p rule {p_rule!r}")
        p[k] = pk
        dt[k] = h - pk * lam
    return PerturbedSmartingale(s, float(lam), p_rule, p, dt)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class StepReport:
    step: int
    atoms: int
    cond_residual: float
    compat_residual: float
    density_ratio_min: float
    density_ratio_max: float
    C_density: float
    det_T_min: float = 1.0
    det_Ttilde_min: float = 1.0
    alpha_max: float = 0.0
    T_norm_max: float = 1.0
    dT_ratio_max: float = 0.0
    det_bound_ok: bool = True
    alpha: Optional[np.ndarray] = field(default=None, repr=False)
    det_T: Optional[np.ndarray] = field(default=None, repr=False)
    dT_ratio: Optional[np.ndarray] = field(default=None, repr=False)

    def record(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                for k, v in self.__dict__.items() if not isinstance(v, np.ndarray) and v is not None}


@dataclass
class ChangeOfMeasureResult:
    kind: str
    lam: float
    ell: int
    perturbed: PerturbedSmartingale
    measure: MeasureTree
    reports: list
    level_density: Optional[list] = field(default=None, repr=False)

    @property
    def C_density(self) -> float:
        return max((r.C_density for r in self.reports), default=0.0)

    @property
    def dT_constant(self) -> float:
        return max((r.dT_ratio_max for r in self.reports), default=0.0)


# ---------------------------------------------------------------------------
# dim S = 1
# ---------------------------------------------------------------------------

def split_densities_1d(d_prev, eps, lam, mu):
    """Child densities ``(d', d'')`` of one split; raises on a singular split."""
    d_prev = np.asarray(d_prev, float)
    det = eps + lam * (2.0 * np.asarray(mu, float) - 1.0)
    if np.any(np.abs(det) < 1e-12):
        raise SingularSplit(f"|eps + lam (2 mu - 1)| < 1e-12 (lam={lam})")
    return d_prev * (eps + lam) / det, d_prev * (eps - lam) / det


def build_measure_1d(base: Smartingale, lam: float) -> ChangeOfMeasureResult:
    """Closed-form densities for ``S = span{g}``; ``base`` is a Lebesgue smartingale."""
    if base.space.dim != 1:
        raise InvalidArgument("the closed form needs dim S = 1")
    if not 0 <= lam < 1:
        raise InvalidArgument(f"lambda must lie in [0, 1), got {lam}")
    if not base.base_measure.is_lebesgue:
        raise InvalidArgument("the base smartingale must be taken under Lebesgue measure")
    tree = base.tree
    pert = perturb(base, lam, "split")
    top = tree.max_depth
    dens = [np.ones(1)]
    reports = []
    active = set(base.steps)
    for n in range(1, top + 1):
        prev = dens[-1]
        cur = np.repeat(prev, 2)
        if n in active:
            alpha, nu_s, nu_l, nu_p, sm, lg = _split_coefficients(base, n)
            eps = np.sign(alpha)
            live = eps != 0
            mu = nu_s / nu_p
            dp = prev[live]
            d1, d2 = split_densities_1d(dp, eps[live], lam, mu[live])
            cur[sm[live]] = d1
            cur[lg[live]] = d2
            # residuals from the coefficient algebra: int_B Delta f~ g dP = c~_B sqrt(nu(B))
            ct = pert.diffs_tilde[n].coeffs[:, 0]
            a1 = ct[sm] * np.sqrt(nu_s)
            a2 = ct[lg] * np.sqrt(nu_l)
            t1, t2 = cur[sm] * a1, cur[lg] * a2
            scale = np.abs(t1) + np.abs(t2)
            cond = np.where(scale > 0, np.abs(t1 + t2) / np.where(scale > 0, scale, 1), 0.0)
            comp = np.abs(cur[sm] * nu_s + cur[lg] * nu_l - prev * nu_p) / (prev * nu_p)
            ratio = np.concatenate([cur[sm] / prev, cur[lg] / prev])
            reports.append(StepReport(
                step=n, atoms=int(live.sum()), cond_residual=float(cond.max()),
                compat_residual=float(comp.max()), density_ratio_min=float(ratio.min()),
                density_ratio_max=float(ratio.max()),
                C_density=float(np.abs(ratio - 1).max() / lam) if lam > 0 else 0.0))
        dens.append(cur)
    measure = MeasureTree(tree, top, dens[-1])
    return ChangeOfMeasureResult("1d", float(lam), 0, pert, measure, reports, dens)


# ---------------------------------------------------------------------------
# dim S > 1
# ---------------------------------------------------------------------------

def cancellation_sums(space: PolySpec, tree: PartitionTree, level: int, index: int,
                      coeffs, offset: int, sub: int = 64) -> tuple:
    """``(sum_B |int_B u dP|, int_A |u| dP)`` for ``u`` in the square space on atom ``A``.

    ``B`` runs over the ``2**offset`` descendants ``offset`` levels below ``A``;
    ``coeffs`` are coefficients in the local basis of ``space.square()``.
    """
    sq = space.square()
    coeffs = np.asarray(coeffs, float)
    lo_a, hi_a = tree.lower[level][index], tree.upper[level][index]
    mass_a = tree.mass[level][index]
    lvl = level + offset
    sub_idx = (index << offset) + np.arange(1 << offset)
    ref_x, ref_w = gauss_rule(npts_for_degree(sq.coord_degree), tree.dim)
    lo, hi = tree.lower[lvl][sub_idx], tree.upper[lvl][sub_idx]
    nodes = lo[:, None, :] + (hi - lo)[:, None, :] * ref_x
    b = sq.basis_on_boxes(lo_a, hi_a, np.full(nodes.shape[:-1], mass_a), nodes)
    ints = ((b @ coeffs) * ref_w).sum(axis=1) * tree.mass[lvl][sub_idx]
    # composite rule for int_A |u|
    rx, rw = gauss_rule(npts_for_degree(sq.coord_degree + 1), tree.dim)
    per_axis = sub if tree.dim == 1 else max(4, sub // 4)
    offs = np.array(list(itertools.product(range(per_axis), repeat=tree.dim)), float)
    pts = ((offs[:, None, :] + rx[None]) / per_axis).reshape(-1, tree.dim)
    wts = np.tile(rw, len(offs)) / len(offs)
    x = lo_a + (hi_a - lo_a) * pts
    bu = sq.basis_on_boxes(lo_a, hi_a, np.full(len(x), mass_a), x)
    total = float((np.abs(bu @ coeffs) * wts).sum() * mass_a)
    return float(np.abs(ints).sum()), total


def min_ell_for_dimension(space: PolySpec) -> int:
    need = space.dim + space.square().dim
    ell = 0
    while (1 << (ell + 1)) < need:
        ell += 1
    return ell


def select_ell(space: PolySpec, tree: PartitionTree, n_samples: int = 200, seed: int = 0,
               c_floor: float = 0.05) -> tuple:
    """``(ell0, ell, c)``.

    ``ell0`` is the smallest ``ell`` for which the sampled ratio
    ``sum_B |int_B u| / int_A |u|`` stays ``>= c_floor``, with ``B`` running over
    the ``2**(ell+1)`` descendants used by the sparse construction; ``c`` is the
    sampled minimum at ``ell``.
    """
    rng = np.random.default_rng(seed)
    sq = space.square()
    ell_dim = min_ell_for_dimension(space)
    ell0, c_at = None, {}
    for ell in range(0, tree.max_depth - 1):
        top = tree.max_depth - (ell + 1)
        worst = np.inf
        for _ in range(n_samples):
            level = int(rng.integers(0, top + 1))
            index = int(rng.integers(0, 1 << level))
            u = rng.standard_normal(sq.dim)
            s, a = cancellation_sums(space, tree, level, index, u, ell + 1)
            if a > 0:
                worst = min(worst, s / a)
        c_at[ell] = worst
        if worst >= c_floor:
            ell0 = ell
            break
    if ell0 is None:
        raise InvalidArgument(f"tree of depth {tree.max_depth} too shallow to find ell0")
    ell = max(ell0, ell_dim)
    if tree.max_depth < ell + 2:
        raise InvalidArgument(f"tree depth {tree.max_depth} < ell + 2 = {ell + 2}")
    if ell not in c_at:
        c_at[ell] = _sampled_c(space, tree, ell, n_samples, rng)
    return ell0, ell, float(c_at[ell])


def _sampled_c(space, tree, ell, n_samples, rng):
    sq = space.square()
    top = tree.max_depth - (ell + 1)
    worst = np.inf
    for _ in range(n_samples):
        level = int(rng.integers(0, top + 1))
        index = int(rng.integers(0, 1 << level))
        s, a = cancellation_sums(space, tree, level, index, rng.standard_normal(sq.dim), ell + 1)
        if a > 0:
            worst = min(worst, s / a)
    return worst


def _orthonormalize_form(M: np.ndarray, floor: float, step: int, what: str):
    """Coefficients ``C`` with ``C^T (M M^T) C = I`` (per atom) via eigendecomposition."""
    gram = M @ np.swapaxes(M, 1, 2)
    w, v = np.linalg.eigh(gram)
    top = np.maximum(w[:, -1:], np.finfo(float).tiny)
    bad = w[:, 0] <= floor * top[:, 0]
    if np.any(bad):
        a = int(np.argmax(bad))
        raise IllConditioned(f"step {step}, atom index {a}: bilinear form {what} is not "
                             f"positive definite (eigenvalue ratio {w[a, 0] / top[a, 0]:.3g})")
    return v / np.sqrt(w)[:, None, :]


def complete_rows(rows: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of ``rows`` (per atom).

    Standard basis vectors are orthogonalized against the existing span with
    column pivoting (the candidate with the largest remaining norm first) and
    a second orthogonalization pass.
    """
    n, r, m = rows.shape
    q, _ = np.linalg.qr(np.swapaxes(rows, 1, 2))  # (n, m, r)
    basis = [q[:, :, j] for j in range(r)]
    out = []
    proj = np.eye(m)[None] - q @ np.swapaxes(q, 1, 2)
    for _ in range(m - r):
        norms = np.linalg.norm(proj, axis=1)  # column norms (n, m)
        j = np.argmax(norms, axis=1)
        v = np.eye(m)[j]
        for _ in range(2):
            for b in basis + out:
                v = v - (v * b).sum(axis=1, keepdims=True) * b
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        out.append(v)
        proj = proj - v[:, :, None] * v[:, None, :]
    if not out:
        return np.zeros((n, 0, m))
    return np.stack(out, axis=1)


def matrix_diagnostics(T: np.ndarray, k: Optional[int] = None) -> dict:
    """Per matrix: ``alpha`` (largest cosine between one of the first ``k`` rows and
    the span of the rows after it), ``|det T|`` and the bound ``(1 - alpha^2)^{m/2}``."""
    T = np.asarray(T, float)
    single = T.ndim == 2
    if single:
        T = T[None]
    n, m, _ = T.shape
    k = m - 1 if k is None else min(k, m - 1)
    alpha = np.zeros(n)
    for i in range(k):
        later = np.swapaxes(T[:, i + 1:, :], 1, 2)  # (n, m, m-i-1)
        q, _ = np.linalg.qr(later)
        v = T[:, i, :]
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        alpha = np.maximum(alpha, np.linalg.norm(np.einsum("nm,nmj->nj", v, q), axis=1))
    alpha = np.minimum(alpha, 1.0)
    det = np.abs(np.linalg.det(T))
    bound = (1.0 - alpha ** 2) ** (m / 2.0)
    out = {"alpha": alpha, "det": det, "bound": bound,
           "holds": det >= bound * (1 - 1e-10), "norm": np.linalg.norm(T, 2, axis=(1, 2))}
    if single:
        out = {key: (val[0] if isinstance(val, np.ndarray) else val) for key, val in out.items()}
    return out


def build_measure_general(base: Smartingale, lam: float, ell: int,
                          det_floor: float = DET_FLOOR, eig_floor: float = EIG_FLOOR,
                          p_rule: str = "abs_mean") -> ChangeOfMeasureResult:
    """Sparse construction: one ``m x m`` system per atom preceding an active step."""
    space = base.space
    tree = base.tree
    if not space.contains_constants:
        raise InvalidArgument("the general construction needs constants in S")
    if lam < 0:
        raise InvalidArgument("lambda must be non-negative")
    if not base.base_measure.is_lebesgue:
        raise InvalidArgument("the base smartingale must be taken under Lebesgue measure")
    steps = list(base.steps)
    for a, b in zip(steps, steps[1:]):
        if b - a < ell + 1:
            raise InvalidArgument(f"steps {a} and {b} violate the sparsity gap ell + 1 = {ell + 1}")
    if steps and steps[-1] + ell > tree.max_depth:
        raise InvalidArgument(f"tree depth {tree.max_depth} < last step + ell = {steps[-1] + ell}")
    k = space.dim
    sq = space.square()
    kk = sq.dim
    m = 1 << (ell + 1)
    if k + kk > m:
        raise InvalidArgument(f"2**(ell+1) = {m} < dim S + dim S^2 = {k + kk}")
    pert = perturb(base, lam, p_rule)
    res_level, dens = 0, np.ones(1)
    reports = []
    for i in steps:
        j, L = i - 1, i + ell
        n_atoms = 1 << j
        d_prev = np.repeat(dens, 1 << (j - res_level))
        nodes, w = cell_grid(tree, L, 2 * space.coord_degree)
        anc = (np.arange(1 << L) >> (L - j))[:, None]
        phi = space.basis(tree, j, anc, nodes)
        psi = sq.basis(tree, j, anc, nodes)
        hv = base.diffs[i].values_at_cells(tree, L, nodes)
        pv = pert.p[i].values_at_cells(tree, L, nodes)
        H = np.einsum("cq,cq,cqk->ck", w, hv, phi).reshape(n_atoms, m, k).transpose(0, 2, 1)
        Pm = np.einsum("cq,cq,cqk->ck", w, pv, phi).reshape(n_atoms, m, k).transpose(0, 2, 1)
        Q = np.einsum("cq,cqk->ck", w, psi).reshape(n_atoms, m, kk).transpose(0, 2, 1)
        hnorm = np.linalg.norm(H.reshape(n_atoms, -1), axis=1)
        live = hnorm > 1e-14 * max(hnorm.max(), np.finfo(float).tiny)
        new = np.repeat(d_prev, m)
        if np.any(live):
            idx = np.nonzero(live)[0]
            C1 = _orthonormalize_form(H[idx], eig_floor, i, "one")
            C2 = _orthonormalize_form(Q[idx], eig_floor, i, "two")
            T1 = np.swapaxes(C1, 1, 2) @ H[idx]
            dT1 = lam * (np.swapaxes(C1, 1, 2) @ Pm[idx])
            T2 = np.swapaxes(C2, 1, 2) @ Q[idx]
            Z = complete_rows(np.concatenate([T1, T2], axis=1))
            T = np.concatenate([T1, T2, Z], axis=1)
            Tt = np.concatenate([T1 - dT1, T2, Z], axis=1)
            dp = d_prev[idx]
            rhs = T.sum(axis=2) * dp[:, None]
            rhs[:, :k] = 0.0
            det_t = np.abs(np.linalg.det(Tt))
            diag = matrix_diagnostics(T, k)
            if np.any(det_t < det_floor):
                a = int(np.argmax(det_t < det_floor))
                raise NearSingular(
                    f"step {i}, atom index {idx[a]}: |det T~| = {det_t[a]:.3g} < {det_floor:.0e} "
                    f"(alpha = {diag['alpha'][a]:.4f})", step=i, atom=int(idx[a]),
                    alpha=float(diag["alpha"][a]))
            d = np.linalg.solve(Tt, rhs[..., None])[..., 0]
            if np.any(d <= 0):
                a, jj = np.unravel_index(np.argmin(d), d.shape)
                raise LambdaTooLarge(
                    f"step {i}, atom index {idx[a]}: density {d[a, jj]:.4g} <= 0 at lambda={lam}",
                    step=i, atom=int(idx[a]), density=float(d[a, jj]))
            main = np.abs(np.einsum("nij,nj->ni", Tt[:, :k], d)).max(axis=1) / dp
            comp = np.abs(np.einsum("nij,nj->ni", T2, d) - rhs[:, k:k + kk]).max(axis=1) / dp
            ratio = d / dp[:, None]
            tnorm = diag["norm"]
            dnorm = np.linalg.norm(dT1, 2, axis=(1, 2))
            dT_ratio = dnorm / (lam * tnorm) if lam > 0 else np.zeros(len(idx))
            new.reshape(n_atoms, m)[idx] = d
            reports.append(StepReport(
                step=i, atoms=int(len(idx)), cond_residual=float(main.max()),
                compat_residual=float(comp.max()), density_ratio_min=float(ratio.min()),
                density_ratio_max=float(ratio.max()),
                C_density=float(np.abs(ratio - 1).max() / lam) if lam > 0 else 0.0,
                det_T_min=float(diag["det"].min()), det_Ttilde_min=float(det_t.min()),
                alpha_max=float(diag["alpha"].max()), T_norm_max=float(tnorm.max()),
                dT_ratio_max=float(dT_ratio.max()), det_bound_ok=bool(diag["holds"].all()),
                alpha=diag["alpha"], det_T=diag["det"], dT_ratio=dT_ratio))
        dens, res_level = new, L
    measure = MeasureTree(tree, res_level, dens)
    return ChangeOfMeasureResult("general", float(lam), ell, pert, measure, reports)


def build_measure(base: Smartingale, lam: float, ell: Optional[int] = None) -> ChangeOfMeasureResult:
    """Dispatch: closed form when ``dim S = 1`` and no ``ell`` is given, sparse system otherwise."""
    if base.space.dim == 1 and ell is None:
        return build_measure_1d(base, lam)
    return build_measure_general(base, lam, base.sparsity if ell is None else ell)


def max_feasible_lambda(base: Smartingale, ell: int, hi: float = 1.0, iters: int = 30) -> float:
    """Largest ``lam`` (bisection) for which the sparse construction succeeds."""
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        try:
            build_measure_general(base, mid, ell)
            lo = mid
        except (LambdaTooLarge, NearSingular):
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass
class VerificationReport:
    smartingale_residual: float
    exponent_deviation: float
    c_fit: float
    pairs: int
    c2_lebesgue: float
    c2_tilde: float
    constants_within_4: bool
    mass_residual: float
    bd_exponent_min: Optional[float] = None
    bd_exponent_max: Optional[float] = None
    bd_ok: Optional[bool] = None
    theta_ok: Optional[bool] = None

    def record(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def exponent_fit(tree: PartitionTree, measure: MeasureTree, max_level: Optional[int] = None):
    """``max |log(P~(B)/P~(A)) / log(|B|/|A|) - 1|`` over ancestor/descendant pairs."""
    top = measure.resolution if max_level is None else max_level
    mt = [measure.masses(n) for n in range(top + 1)]
    worst, pairs = 0.0, 0
    for kk in range(1, top + 1):
        idx = np.arange(1 << kk)
        for jj in range(kk):
            a = idx >> (kk - jj)
            x = np.log(tree.mass[kk] / tree.mass[jj][a])
            y = np.log(mt[kk] / mt[jj][a])
            worst = max(worst, float(np.abs(y / x - 1.0).max()))
            pairs += len(idx)
    return worst, pairs


def verify_measure(result: ChangeOfMeasureResult, n_samples: int = 200, seed: int = 0,
                   exponent_levels: Optional[int] = None) -> VerificationReport:
    """Smartingale residual of ``f~`` under ``P~``, exponent fit, and re-estimated L1-Linfty constants."""
    pert = result.perturbed
    base = pert.base
    tree = base.tree
    mt = result.measure
    resid = 0.0
    for k in pert.steps:
        resid = max(resid, float(orthogonality_residuals(tree, pert.diffs_tilde[k], k - 1, mt).max()))
    dev, pairs = exponent_fit(tree, mt, exponent_levels)
    lam = result.lam
    c_fit = dev / lam if lam > 0 else 0.0
    leb = estimate_remez_markov(base.space, tree, n_samples, seed)
    til = estimate_remez_markov(base.space, tree, n_samples, seed, measure=mt)
    within = (til.c2 <= 4 * leb.c2) and (leb.c2 <= 4 * til.c2)
    mass_res = abs(mt.total_mass - 1.0)
    rep = VerificationReport(resid, dev, c_fit, pairs, leb.c2, til.c2, within, mass_res)
    if result.kind == "1d" and result.level_density is not None:
        nu = [base.space.nu(tree, n) for n in range(len(result.level_density))]
        dd = result.level_density
        lo_e, hi_e = np.inf, -np.inf
        for kk in range(1, len(dd)):
            idx = np.arange(1 << kk)
            for jj in range(kk):
                a = idx >> (kk - jj)
                e = np.log(dd[kk] / dd[jj][a]) / np.log(nu[jj][a] / nu[kk])
                lo_e, hi_e = min(lo_e, float(e.min())), max(hi_e, float(e.max()))
        rep.bd_exponent_min, rep.bd_exponent_max = lo_e, hi_e
        rep.bd_ok = bool(lo_e >= -3 * lam - 1e-9 and hi_e <= 2 * lam + 1e-9)
        theta = [dd[n] * nu[n] for n in range(len(dd))]
        rep.theta_ok = bool(all(np.all(theta[n] <= nu[n] ** (1 - 2 * lam) * (1 + 1e-12))
                                for n in range(len(dd))))
    return rep
