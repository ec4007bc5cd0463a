import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import unit_tree
from smartlab.errors import InvalidArgument
from smartlab.measures import MeasureTree, project
from smartlab.polyspace import PiecewisePoly, PolySpec, gauss_rule, sup_norms
from smartlab.smartingale import (Smartingale, active_steps, associated_martingale,
                                  complement_basis, generate, martingale_square_function,
                                  point_paths, read_smartingale, sibling_bound_check,
                                  square_function, verify_smartingale, write_smartingale)


def haar(depth, L=1.0, seed=0):
    return generate(unit_tree(depth), PolySpec(1, 0), rule="haar", L=L, seed=seed)


def zero_smartingale(depth, degree=1):
    t = unit_tree(depth)
    sp = PolySpec(1, degree)
    steps = list(range(1, depth + 1))
    return Smartingale(t, sp, MeasureTree.lebesgue(t), steps,
                       {k: PiecewisePoly.zeros(sp, k) for k in steps}, 1.0)


@pytest.mark.parametrize("L", [1.0, 0.5])
def test_haar_differences(L):
    s = haar(5, L)
    for k in s.steps:
        v = s.diffs[k].coeffs[:, 0] / np.sqrt(s.tree.mass[k])
        np.testing.assert_allclose(np.abs(v), L)
        np.testing.assert_allclose(v[0::2], -v[1::2])


@pytest.mark.parametrize("rule", ["rademacher_like", "gaussian_coeff", "haar"])
@pytest.mark.parametrize("degree", [0, 1, 2])
def test_generated_is_smartingale(rule, degree):
    s = generate(unit_tree(7), PolySpec(1, degree), sparsity=1, seed=11, rule=rule)
    assert verify_smartingale(s) <= 1e-10
    for k in s.steps:
        assert sup_norms(s.tree, s.diffs[k], upper=True).max() <= s.bound_L * (1 + 1e-12)


def test_generated_2d():
    s = generate(unit_tree(5, d=2), PolySpec(2, 1), seed=1)
    assert verify_smartingale(s) <= 1e-10


def test_complement_dimension():
    comp = complement_basis(unit_tree(3), PolySpec(1, 1), 2)
    assert comp.shape == (4, 4, 2)


def test_perturbed_measure_detects_non_smartingale():
    s = haar(3)
    t = s.tree
    w = np.tile([1.3, 0.7], 4)
    assert verify_smartingale(s, MeasureTree(t, 3, w)) > 1e-3


def test_zero_smartingale_residual():
    s = zero_smartingale(4)
    m = MeasureTree(s.tree, 4, np.linspace(0.5, 1.5, 16))
    assert verify_smartingale(s, m) == 0.0


def test_deterministic_given_seed():
    a = generate(unit_tree(6), PolySpec(1, 1), seed=5)
    b = generate(unit_tree(6), PolySpec(1, 1), seed=5)
    for k in a.steps:
        np.testing.assert_array_equal(a.diffs[k].coeffs, b.diffs[k].coeffs)


def test_bad_arguments():
    with pytest.raises(InvalidArgument):
        generate(unit_tree(3), PolySpec(1, 1), rule="nope")
    with pytest.raises(InvalidArgument):
        generate(unit_tree(3), PolySpec(1, 1), L=0)
    with pytest.raises(InvalidArgument):
        active_steps(5, -1)


@pytest.mark.parametrize("depth,nu,expected", [(6, 0, [1, 2, 3, 4, 5, 6]), (12, 2, [1, 4, 7, 10]),
                                               (10, 3, [1, 5])])
def test_active_steps(depth, nu, expected):
    assert active_steps(depth, nu) == expected


def test_square_function_haar():
    s = haar(6)
    for n in range(7):
        np.testing.assert_allclose(square_function(s, n).cell_values(s.tree), 2 * n)


def test_square_function_zero():
    s = zero_smartingale(3)
    assert np.all(square_function(s, 3).cell_values(s.tree) == 0)


def test_square_function_single_legendre_step():
    # Delta f = sqrt(3)(2x - 1) on the whole interval, stored at level 1
    t = unit_tree(2)
    sp = PolySpec(1, 1)
    x, w = gauss_rule(4, 1)
    halves = [(0.0, 0.5), (0.5, 1.0)]
    coeffs = []
    for a, b in halves:
        pts = a + (b - a) * x
        basis = sp.basis(t, 1, 0 if a == 0 else 1, pts)
        vals = np.sqrt(3) * (2 * pts[:, 0] - 1)
        coeffs.append((w * 0.5 * vals) @ basis)
    h = PiecewisePoly(sp, 1, np.array(coeffs))
    s = Smartingale(t, sp, MeasureTree.lebesgue(t), [1], {1: h}, 1.0)
    grid = (np.arange(100000) + 0.5) / 100000
    left = grid[grid < 0.5]
    oracle = np.mean(3 * (2 * left - 1) ** 2) + np.mean(3 * (2 * grid - 1) ** 2)
    sq = square_function(s, 1).cell_values(t)
    assert sq[0] == pytest.approx(oracle, rel=1e-8)
    assert sq[0] == pytest.approx(2.0, rel=1e-12)


def test_associated_martingale_degree0_equals_f():
    s = generate(unit_tree(6), PolySpec(1, 0), seed=2, rule="gaussian_coeff")
    mv = associated_martingale(s)
    for n in range(7):
        np.testing.assert_allclose(mv.values[n], s.f(n).cell_values(s.tree), atol=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_associated_martingale_residual(degree):
    s = generate(unit_tree(8), PolySpec(1, degree), seed=4)
    assert associated_martingale(s).residual() <= 1e-10


def test_martingale_increment_constant_stable():
    ks = [associated_martingale(generate(unit_tree(n), PolySpec(1, 1), seed=1)).increment_constant(1.0)
          for n in (6, 9, 12)]
    assert max(ks) <= 2 * min(ks) and max(ks) <= 1.0 + 1e-12


def test_martingale_square_function_haar():
    s = haar(5)
    mv = associated_martingale(s)
    for n in range(6):
        np.testing.assert_allclose(martingale_square_function(mv, n).cell_values(s.tree), n)


def test_martingale_square_function_zero():
    s = zero_smartingale(3)
    mv = associated_martingale(s)
    assert np.all(martingale_square_function(mv, 3).cell_values(s.tree) == 0)


def test_sibling_bound_haar():
    assert sibling_bound_check(haar(6)) == pytest.approx(2.0)


def test_sibling_bound_zero_skipped():
    assert sibling_bound_check(zero_smartingale(3)) == 0.0


def test_sibling_bound_stable_degree1():
    # every level is drawn independently, so the worst ratio over more levels can only grow
    a = sibling_bound_check(generate(unit_tree(6), PolySpec(1, 1), seed=3, rule="rademacher_like"))
    b = sibling_bound_check(generate(unit_tree(12), PolySpec(1, 1), seed=3, rule="rademacher_like"))
    assert b <= 2 * a


def test_serialization_roundtrip():
    s = generate(unit_tree(6), PolySpec(1, 2), sparsity=1, seed=9)
    buf = io.StringIO()
    write_smartingale(s, buf)
    buf.seek(0)
    s2 = read_smartingale(s.tree, buf)
    assert s2.steps == s.steps and s2.space == s.space and s2.sparsity == 1
    for k in s.steps:
        np.testing.assert_array_equal(s.diffs[k].coeffs, s2.diffs[k].coeffs)


gen_args = st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 10 ** 6),
                     st.sampled_from(["rademacher_like", "gaussian_coeff", "haar"]))


def _gen(args):
    degree, nu, seed, rule = args
    return generate(unit_tree(7), PolySpec(1, degree), sparsity=nu, seed=seed, rule=rule)


@given(gen_args)
def test_telescoping(args):
    s = _gen(args)
    n = s.depth
    total = sum((s.diffs[k].prolong(s.tree, n).coeffs for k in s.steps), np.zeros((1 << n, s.space.dim)))
    np.testing.assert_allclose(s.f(n).coeffs, total, atol=1e-12)


@given(gen_args, st.integers(0, 6))
def test_projection_consistency(args, m):
    s = _gen(args)
    p = project(s.tree, s.f(s.depth), m)
    np.testing.assert_allclose(p.coeffs, s.f(m).coeffs, atol=1e-10)


@given(gen_args)
def test_sparsity_gap(args):
    s = _gen(args)
    assert all(b - a >= s.sparsity + 1 for a, b in zip(s.steps, s.steps[1:]))


@given(gen_args)
def test_square_functions_monotone_at_points(args):
    s = _gen(args)
    pts = np.random.default_rng(args[2]).random((50, 1))
    paths = point_paths(s, pts, martingale=associated_martingale(s))
    assert np.all(np.diff(paths.S2, axis=1) >= 0)
    assert np.all(np.diff(paths.SM2, axis=1) >= 0)
    assert np.all(np.diff(paths.V, axis=1) >= 0)
