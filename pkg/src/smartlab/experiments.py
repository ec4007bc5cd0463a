"""Monte-Carlo and pointwise checks built on smartingales and changed measures.

Seeds: a run with master seed ``s`` gives chunk/worker ``k`` the generator
``default_rng(s ^ k)``, so results do not depend on the worker count
(``SMARTLAB_WORKERS``, default 1).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidState
from .measures import MeasureTree, cell_integrals
from .polyspace import PiecewisePoly, PolyFunction, aggregate
from .smartingale import (MartingaleView, Smartingale, abs_tables, associated_martingale,
                          point_paths)

LOGLOG_GUARD = math.e * (1 + 1e-9)


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def config_hash(config) -> str:
    if hasattr(config, "__dataclass_fields__"):
        config = asdict(config)
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SMARTLAB_WORKERS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items: Sequence) -> list:
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def write_csv(path, header: Sequence[str], rows, chash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_summary(path, name: str, chash: str, checks: dict, constants: dict,
                  notes: Optional[dict] = None) -> dict:
    record = {"experiment": name, "config_hash": chash,
              "checks": {k: bool(v) for k, v in checks.items()},
              "constants": {k: _jsonable(v) for k, v in constants.items()}}
    if notes:
        record["notes"] = notes
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


@dataclass
class ExperimentConfig:
    d: int = 1
    degree: int = 1
    depth: int = 12
    lam: float = 0.02
    ell: Optional[int] = None
    L: float = 1.0
    seed: int = 0
    n_paths: int = 10 ** 5
    horizon: int = 1000
    a_grid: tuple = (5.0, 10.0, 20.0)
    b_grid: tuple = (10.0, 50.0, 200.0)
    sample_points: int = 1000
    r: float = 2.0

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvalidArgument("n_paths must be >= 1")
        if any(v <= 0 for v in tuple(self.a_grid) + tuple(self.b_grid)):
            raise InvalidArgument("grids must be positive")


# ---------------------------------------------------------------------------
# Freedman tail
# ---------------------------------------------------------------------------

@dataclass
class FreedmanCell:
    a: float
    b: float
    empirical: float
    bound: float
    se: float

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound + 3 * self.se


def freedman_bound(L: float, a: float, b: float) -> float:
    return math.exp(-a * a / (2.0 * (L * a + b)))


def _freedman_chunk(args):
    seed, n, horizon, L, a_grid = args
    rng = np.random.default_rng(seed)
    steps = rng.integers(0, 2, size=(n, horizon), dtype=np.int8) * 2 - 1
    walk = np.cumsum(steps, axis=1, dtype=np.int32)
    taus = []
    for a in a_grid:
        hit = walk * L >= a
        first = np.argmax(hit, axis=1) + 1
        taus.append(np.where(hit.any(axis=1), first, horizon + 1))
    return np.stack(taus)


def freedman_grid(L: float, a_grid, b_grid, n_paths: int, horizon: int, seed: int,
                  chunk: int = 10000) -> list:
    """Rademacher martingales with increments ``+-L``; ``S_n^2 = n L^2`` exactly.

    For each ``(a, b)`` the empirical frequency of ``{tau_a <= horizon, S^2_{tau_a} <= b}``
    is compared with ``exp(-a^2 / (2 (L a + b)))``.
    """
    if L <= 0 or any(a <= 0 for a in a_grid) or any(b <= 0 for b in b_grid):
        raise InvalidArgument("L, a and b must be positive")
    a_grid = tuple(float(a) for a in a_grid)
    jobs, done, k = [], 0, 0
    while done < n_paths:
        n = min(chunk, n_paths - done)
        jobs.append((seed ^ k, n, horizon, L, a_grid))
        done += n
        k += 1
    taus = np.concatenate(parallel_map(_freedman_chunk, jobs), axis=1)
    cells = []
    for ia, a in enumerate(a_grid):
        tau = taus[ia]
        for b in b_grid:
            event = (tau <= horizon) & (tau * L * L <= b)
            p = float(event.mean())
            se = math.sqrt(p * (1 - p) / n_paths)
            cells.append(FreedmanCell(a, float(b), p, freedman_bound(L, a, b), se))
    return cells


def freedman_tail(L: float, a: float, b: float, n_paths: int, horizon: int, seed: int) -> FreedmanCell:
    return freedman_grid(L, [a], [b], n_paths, horizon, seed)[0]


# ---------------------------------------------------------------------------
# LIL ratio
# ---------------------------------------------------------------------------

@dataclass
class LilResult:
    depths: list
    ratios: np.ndarray = field(repr=False)  # (P, len(depths)), nan where skipped
    p50: list
    p99: list
    skipped: list


def lil_ratio(s: Smartingale, r: float = 2.0, depth_grid: Optional[Sequence[int]] = None,
              sample_points: int = 1000, seed: int = 0, m: Optional[MeasureTree] = None,
              points=None) -> LilResult:
    """``f_n / sqrt(r S_n^2 loglog S_n^2)`` at sampled points; points with
    ``S_n^2 <= e (1 + 1e-9)`` are skipped and counted."""
    m = s.base_measure if m is None else m
    rng = np.random.default_rng(seed)
    if points is None:
        points = m.sample_points(sample_points, rng)
    depth_grid = list(range(1, s.depth + 1)) if depth_grid is None else list(depth_grid)
    paths = point_paths(s, points, m)
    f = paths.f[:, depth_grid]
    s2 = paths.S2[:, depth_grid]
    ok = s2 > LOGLOG_GUARD
    safe = np.where(ok, s2, 3.0)
    ratio = np.where(ok, f / np.sqrt(r * safe * np.log(np.log(safe))), np.nan)
    p50, p99, skipped = [], [], []
    for j in range(len(depth_grid)):
        col = ratio[:, j][ok[:, j]]
        skipped.append(int((~ok[:, j]).sum()))
        p50.append(float(np.percentile(col, 50)) if len(col) else float("nan"))
        p99.append(float(np.percentile(col, 99)) if len(col) else float("nan"))
    return LilResult(depth_grid, ratio, p50, p99, skipped)


# ---------------------------------------------------------------------------
# square functions and stopping times
# ---------------------------------------------------------------------------

def square_comparison(s: Smartingale, g: Optional[PolyFunction] = None,
                      m: Optional[MeasureTree] = None, sample_points: int = 1000,
                      seed: int = 0) -> float:
    """``max S_M^2 / S^2`` over sampled points at the deepest level (0 if all skipped)."""
    m = s.base_measure if m is None else m
    rng = np.random.default_rng(seed)
    pts = m.sample_points(sample_points, rng)
    mv = associated_martingale(s, g, m)
    paths = point_paths(s, pts, m, mv)
    s2 = paths.S2[:, -1]
    sm2 = paths.SM2[:, -1]
    ok = s2 > 0
    if not ok.any():
        return 0.0
    return float((sm2[ok] / s2[ok]).max())


def lip_constant(s: Smartingale, grid: int = 3) -> float:
    """Fitted ``D`` with ``Lip(f_n on C) <= D L / diam(C)`` over every atom of every level."""
    tree = s.tree
    space = s.space
    g = 2 if space.degree <= 1 else max(grid, 9)
    ref = np.linspace(0.0, 1.0, g)
    import itertools
    ref = np.array(list(itertools.product(ref, repeat=tree.dim)))
    f = PiecewisePoly.zeros(space, 0)
    worst = 0.0
    for n in range(tree.max_depth + 1):
        if n > 0:
            f = f.prolong(tree, n)
        if n in s.diffs:
            f = f + s.diffs[n]
        if not np.any(f.coeffs):
            continue
        lo, hi = tree.lower[n], tree.upper[n]
        pts = lo[:, None, :] + (hi - lo)[:, None, :] * ref
        grad = space.basis_gradient(tree, n, np.arange(1 << n)[:, None], pts)
        lip = np.linalg.norm(np.einsum("pqkd,pk->pqd", grad, f.coeffs), axis=2).max(axis=1)
        worst = max(worst, float((lip * tree.diam(n)).max()))
    return worst / s.bound_L


@dataclass
class StoppingRecord:
    a: float
    a_over_KL: float
    hits: int
    violations: int


def stopping_inclusion(s: Smartingale, g: Optional[PolyFunction] = None,
                       a_factors: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 3.0),
                       c3: Optional[float] = None, m: Optional[MeasureTree] = None,
                       sample_points: int = 1000, seed: int = 0, a_grid=None) -> tuple:
    """Check ``{tau_{S,a} = n} ⊆ {tau_{M, beta a} <= n}`` with ``beta = c3 / 2``.

    Returns ``(K, records)``; ``K`` is the fitted Lipschitz constant and the
    default grid is ``a = factor * K * L``.
    """
    m = s.base_measure if m is None else m
    g = s.space.g if g is None else g
    c3 = g.range_on(s.tree.domain.lower, s.tree.domain.upper)[0] if c3 is None else c3
    beta = c3 / 2.0
    K = lip_constant(s)
    rng = np.random.default_rng(seed)
    pts = m.sample_points(sample_points, rng)
    mv = associated_martingale(s, g, m)
    paths = point_paths(s, pts, m, mv)
    if a_grid is None:
        a_grid = [fct * max(K, 1e-12) * s.bound_L for fct in a_factors]
    records = []
    big = s.depth + 1
    for a in a_grid:
        hs = paths.f >= a
        tau_s = np.where(hs.any(axis=1), np.argmax(hs, axis=1), big)
        hm = paths.M >= beta * a
        tau_m = np.where(hm.any(axis=1), np.argmax(hm, axis=1), big)
        hit = tau_s < big
        viol = hit & (tau_m > tau_s)
        records.append(StoppingRecord(float(a), float(a / (K * s.bound_L)) if K > 0 else math.inf,
                                      int(hit.sum()), int(viol.sum())))
    return K, records


# ---------------------------------------------------------------------------
# variation ratio and survivors
# ---------------------------------------------------------------------------

@dataclass
class VariationResult:
    lam: float
    depths: list
    ratios: np.ndarray = field(repr=False)
    liminf_proxy: np.ndarray = field(repr=False)
    threshold: float
    fraction: float
    identity_error: float
    skipped: int


def _quarter(n: int) -> int:
    return max(1, math.ceil(n / 4))


def variation_ratio(pert, measure_tilde: MeasureTree, depth_grid: Optional[Sequence[int]] = None,
                    sample_points: int = 1000, seed: int = 0, C: float = 1.0) -> VariationResult:
    """Distribution of ``f_n / sum_{k<=n} E_k|Delta f_k|`` at points drawn from ``P~``.

    ``liminf`` is replaced by the minimum over the last quarter of the depth
    grid; the reported fraction counts points whose proxy is ``>= lam / (2 C)``.
    The algebraic split ``ratio = lam sum E_k p_k / V + f~_n / V`` is checked at
    every point and depth.
    """
    s = pert.base
    tree = s.tree
    lam = pert.lam
    rng = np.random.default_rng(seed)
    pts = measure_tilde.sample_points(sample_points, rng)
    depth_grid = list(range(1, s.depth + 1)) if depth_grid is None else list(depth_grid)
    top = tree.max_depth
    cells = tree.locate(pts, top)
    P = len(pts)
    ab = abs_tables(s, MeasureTree.lebesgue(tree))
    dv = np.zeros((P, top + 1))
    df = np.zeros((P, top + 1))
    dft = np.zeros((P, top + 1))
    dp = np.zeros((P, top + 1))
    for k in s.steps:
        c = cells >> (top - k)
        dv[:, k] = ab[k][c]
        df[:, k] = s.diffs[k](tree, pts, c)
        dft[:, k] = pert.diffs_tilde[k](tree, pts, c)
        ep = cell_integrals(tree, [pert.p[k]], None, k) / tree.mass[k]
        dp[:, k] = ep[c]
    V = np.cumsum(dv, axis=1)[:, depth_grid]
    F = np.cumsum(df, axis=1)[:, depth_grid]
    Ft = np.cumsum(dft, axis=1)[:, depth_grid]
    Pk = np.cumsum(dp, axis=1)[:, depth_grid]
    ok = np.all(V > 0, axis=1)
    Vs = np.where(V > 0, V, 1.0)
    ratio = np.where(V > 0, F / Vs, np.nan)
    split = lam * Pk / Vs + Ft / Vs
    err = float(np.abs(ratio - split)[V > 0].max()) if np.any(V > 0) else 0.0
    q = _quarter(len(depth_grid))
    proxy = np.min(ratio[:, -q:], axis=1)
    threshold = lam / (2.0 * C)
    valid = ok
    frac = float((proxy[valid] >= threshold).mean()) if valid.any() else float("nan")
    return VariationResult(lam, depth_grid, ratio, proxy, threshold, frac, err,
                           int((~valid).sum()))


@dataclass
class SurvivorSet:
    level: int
    ids: np.ndarray
    threshold: float

    @property
    def indices(self) -> np.ndarray:
        return np.asarray(self.ids) - ((1 << self.level) - 1)


def atom_ratios(s: Smartingale, level: Optional[int] = None, ab: Optional[dict] = None) -> np.ndarray:
    """``E_N f_n / V_n`` on every level-``N`` atom for ``n = 0..N`` (nan where ``V_n = 0``)."""
    tree = s.tree
    N = s.depth if level is None else level
    ab = abs_tables(s, MeasureTree.lebesgue(tree)) if ab is None else ab
    idx = np.arange(1 << N)
    f_run = np.zeros(1 << N)
    v_run = np.zeros(1 << N)
    out = np.full((1 << N, N + 1), np.nan)
    for n in range(N + 1):
        if n in s.diffs:
            f_run = f_run + cell_integrals(tree, [s.diffs[n]], None, N) / tree.mass[N]
            v_run = v_run + ab[n][idx >> (N - n)]
        pos = v_run > 0
        out[:, n] = np.where(pos, f_run / np.where(pos, v_run, 1.0), np.nan)
    return out


def survivor_set(s: Smartingale, lam: float, C: float = 1.0, level: Optional[int] = None,
                 ab: Optional[dict] = None) -> SurvivorSet:
    """Level-``N`` atoms whose ratio stays ``>= lam / (2 C)`` over the last quarter of levels up to ``N``."""
    N = s.depth if level is None else level
    if not 1 <= N <= s.depth:
        raise InvalidArgument(f"survivor level must lie in [1, {s.depth}]")
    q = _quarter(N)
    r = atom_ratios(s, N, ab)[:, N - q + 1:]
    thr = lam / (2.0 * C)
    keep = np.all(r >= thr, axis=1)  # nan compares False
    return SurvivorSet(N, ((1 << N) - 1) + np.nonzero(keep)[0], thr)


def survivor_sets(s: Smartingale, lam: float, C: float = 1.0,
                  levels: Optional[Sequence[int]] = None) -> list:
    """One :class:`SurvivorSet` per level (default: the upper half of the tree)."""
    levels = list(range(math.ceil(s.depth / 2), s.depth + 1)) if levels is None else list(levels)
    ab = abs_tables(s, MeasureTree.lebesgue(s.tree))
    return [survivor_set(s, lam, C, n, ab) for n in levels]


@dataclass
class BoxDimension:
    slope: float
    stderr: float
    levels: list
    counts: list
    log_inv_mesh: list
    label: str = "box-counting proxy (heuristic)"


def box_dimension(survivors, tree, levels: Optional[Sequence[int]] = None) -> BoxDimension:
    """Least-squares slope of ``log count`` against ``log(1 / mesh)``.

    ``survivors`` is a list of :class:`SurvivorSet` (one per level), a single
    set (counted at coarser levels by its ancestors) or a mapping
    ``level -> atom indices``.
    """
    if isinstance(survivors, SurvivorSet):
        top = survivors.level
        idx = survivors.indices
        levels = list(range(math.ceil(top / 2), top + 1)) if levels is None else list(levels)
        table = {n: idx >> (top - n) for n in levels}
    elif isinstance(survivors, dict):
        table = {n: np.asarray(v) for n, v in survivors.items()}
    else:
        table = {sv.level: sv.indices for sv in survivors}
    levels = sorted(table) if levels is None else list(levels)
    if len(levels) < 3:
        raise InvalidArgument("box counting needs survivor sets at >= 3 levels")
    counts = [len(np.unique(table[n])) for n in levels]
    if min(counts) == 0:
        raise InvalidState(f"empty survivor set at level {levels[counts.index(0)]}")
    x = np.array([-math.log(tree.diam(n).max()) for n in levels])
    y = np.log(np.array(counts, float))
    xm = x - x.mean()
    slope = float((xm * (y - y.mean())).sum() / (xm * xm).sum())
    resid = y - y.mean() - slope * xm
    dof = len(x) - 2
    stderr = float(math.sqrt((resid ** 2).sum() / dof / (xm * xm).sum())) if dof > 0 else 0.0
    return BoxDimension(slope, stderr, list(levels), counts, x.tolist())
