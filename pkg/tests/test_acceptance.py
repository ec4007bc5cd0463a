"""End-to-end acceptance checks, each with its own tolerance and time budget."""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import unit_tree
from smartlab import experiments as ex
from smartlab.chains import decay_constants, decompose_fat, full_chain
from smartlab.change_of_measure import (build_measure, build_measure_1d, build_measure_general,
                                        exponent_fit, ratio_inequality_suite, select_ell,
                                        verify_measure)
from smartlab.measures import MeasureTree, project
from smartlab.polyspace import PiecewisePoly, PolyFunction, PolySpec, integrate
from smartlab.smartingale import generate


@contextmanager
def budget(seconds):
    t0 = time.perf_counter()
    yield
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"took {elapsed:.1f}s, budget {seconds}s"


def dim_one_smartingale(k, depth=12):
    """Even k: constants; odd k: span of a random positive affine g."""
    if k % 2 == 0:
        sp = PolySpec(1, 0)
    else:
        slope = np.random.default_rng(k).uniform(-0.5, 0.5)
        sp = PolySpec(1, kind="gspan", g=PolyFunction.affine(1.0, slope))
    return generate(unit_tree(depth), sp, seed=k)


def test_criterion_1_projections():
    with budget(10):
        t = unit_tree(10)
        rng = np.random.default_rng(1)
        worst = 0.0
        for k in range(100):
            degree = k % 3
            sp = PolySpec(1, degree)
            f = PiecewisePoly(sp, 10, rng.standard_normal((1 << 10, sp.dim)))
            h = PiecewisePoly(sp, 10, rng.standard_normal((1 << 10, sp.dim)))
            n = int(rng.integers(1, 10))
            p = project(t, f, n)
            worst = max(worst, np.abs(project(t, p, n).coeffs - p.coeffs).max())
            a = integrate(t, [p, h])[0]
            b = integrate(t, [f, project(t, h, n)])[0]
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
            tower = project(t, p, n - 1).coeffs - project(t, f, n - 1).coeffs
            worst = max(worst, np.abs(tower).max())
        assert worst <= 1e-10
        x = PolyFunction.affine(0.0, 1.0)
        p0 = project(t, x * x, 0, space=PolySpec(1, 1))
        grid = np.linspace(0, 1, 101)[:, None]
        np.testing.assert_allclose(p0(t, grid), grid[:, 0] - 1 / 6, rtol=0, atol=1e-12)


def test_criterion_2_closed_form():
    with budget(60):
        worst, exps = 0.0, []
        for k in range(50):
            s = dim_one_smartingale(k)
            for lam in (0.01, 0.05, 0.1):
                res = build_measure_1d(s, lam)
                worst = max(worst, max(max(r.cond_residual, r.compat_residual) for r in res.reports))
                rep = verify_measure(res, n_samples=5)
                exps.append((lam, rep.bd_exponent_min, rep.bd_exponent_max))
        assert worst <= 1e-12
        assert all(-3 * lam - 1e-9 <= lo and hi <= 2 * lam + 1e-9 for lam, lo, hi in exps)
        ineq = ratio_inequality_suite(10 ** 6, seed=0, lam_range=(0.0, 1.0))
        assert ineq.passed, (f"{ineq.triv_violations} triv / {ineq.tilde_violations} tilde "
                              f"violations; smallest violating lambda "
                              f"{ineq.smallest_violating_lambda:.4f}")


def test_criterion_3_general_matches_closed_form():
    with budget(30):
        # the general construction needs constants in S, so dim S = 1 means degree 0
        for k in range(20):
            s = generate(unit_tree(10), PolySpec(1, 0), seed=k)
            lam = np.random.default_rng(100 + k).uniform(0.0, 0.3)
            a = build_measure_1d(s, lam)
            b = build_measure_general(s, lam, 0, p_rule="split")
            top = s.tree.max_depth
            np.testing.assert_allclose(a.measure.masses(top), b.measure.masses(top),
                                       rtol=0, atol=1e-10)


def test_criterion_4_general_construction():
    with budget(300):
        ratios = []
        for seed in range(10):
            s = generate(unit_tree(12), PolySpec(1, 1), sparsity=2, seed=seed)
            res = build_measure_general(s, 0.02, 2)
            assert np.all(res.measure.weights > 0)
            assert verify_measure(res, n_samples=20).smartingale_residual <= 1e-8
            for r in res.reports:
                m = 2 ** 3
                assert np.all(r.det_T >= (1 - r.alpha_max ** 2) ** (m / 2) * (1 - 1e-12))
            ratios.append(res.dT_constant)
            devs = [exponent_fit(s.tree, build_measure_general(s, lam, 2).measure)[0]
                    for lam in (0.1, 0.05, 0.02)]
            assert devs[0] > devs[1] > devs[2]
        # one constant serves every seed: the per-seed constants agree to a factor 2
        C = max(ratios)
        assert np.isfinite(C) and C <= 2 * min(ratios)


def test_criterion_5_freedman():
    with budget(120):
        cells = ex.freedman_grid(1.0, (5.0, 10.0, 20.0), (10.0, 50.0, 200.0), 10 ** 5, 1000, seed=0)
        assert len(cells) == 9
        bad = [(c.a, c.b, c.empirical, c.bound) for c in cells if not c.ok]
        assert not bad
        ten = next(c for c in cells if c.a == 10 and c.b == 10)
        assert ten.bound == pytest.approx(0.0821, abs=5e-5)


def test_criterion_6_square_functions():
    with budget(120):
        C = {}
        for degree in (0, 1):
            for depth in (6, 12):
                s = generate(unit_tree(depth), PolySpec(1, degree), sparsity=degree, seed=depth)
                C[degree, depth] = ex.square_comparison(s, sample_points=1000, seed=0)
        assert all(math.isfinite(v) and v > 0 for v in C.values())
        assert C[0, 6] <= 1 + 1e-12 and C[0, 12] <= 1 + 1e-12
        for degree in (0, 1):
            assert C[degree, 12] <= 2 * C[degree, 6]


def test_criterion_7_stopping_times():
    with budget(120):
        s = generate(unit_tree(12), PolySpec(1, 1), sparsity=2, seed=0)
        K, recs = ex.stopping_inclusion(s, g=PolyFunction.constant(1), c3=1.0, sample_points=1000)
        assert K > 0 and any(r.a_over_KL >= 2 for r in recs)
        assert all(r.violations == 0 for r in recs if r.a_over_KL >= 2)


def test_criterion_8_variation():
    with budget(300):
        s = generate(unit_tree(20), PolySpec(1, 1), sparsity=2, seed=0)
        _, ell, _ = select_ell(s.space, s.tree, seed=0)
        res = build_measure(s, 0.02, ell)
        vr = ex.variation_ratio(res.perturbed, res.measure, sample_points=1000, seed=0)
        assert vr.identity_error <= 1e-10
        assert vr.threshold == pytest.approx(0.01)
        assert vr.fraction >= 0.95, f"fraction {vr.fraction:.3f} below 0.95"


def test_criterion_9_dimension_trend():
    with budget(300):
        s = generate(unit_tree(20), PolySpec(1, 1), sparsity=2, seed=0)
        slopes = [ex.box_dimension(ex.survivor_sets(s, lam), s.tree).slope
                  for lam in (0.1, 0.05, 0.02)]
        assert slopes[0] <= slopes[1] <= slopes[2], slopes
        assert slopes[2] >= 0.9


def test_criterion_10_fat_chains():
    with budget(30):
        t = unit_tree(12)
        for leaf in range(0, 1 << 12, 97):
            dec = decompose_fat(full_chain(t, leaf=(1 << 12) - 1 + leaf))
            assert all(n == 2 for n in dec.lengths()[:-1]) and dec.lengths()[-1] in (1, 2)
        leb = decay_constants(t)
        assert leb.max() <= 4
        s = generate(t, PolySpec(1, 1), sparsity=2, seed=0)
        tilde = decay_constants(t, build_measure_general(s, 0.05, 2).measure)
        assert np.all(tilde <= 2 * leb) and np.all(leb <= 2 * tilde)
