import io
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import unit_tree
from smartlab.errors import InvalidArgument, InvalidState
from smartlab.measures import MeasureTree, project
from smartlab.partition import Atom, Box
from smartlab.polyspace import (PiecewisePoly, PolyFunction, PolySpec, estimate_remez_markov,
                                gauss_rule, integrate, local_basis, read_piecewise,
                                sample_constants, sup_grid_delta, sup_norm, sup_norms,
                                write_piecewise)

X = PolyFunction.affine(0.0, 1.0)
X2 = X * X


def _gram(space, atom, npts=12):
    x, w = gauss_rule(npts, atom.box.dim)
    lo, hi = atom.box.lower, atom.box.upper
    pts = lo + (hi - lo) * x
    b = local_basis(space, atom)(pts)
    return np.einsum("q,qi,qj->ij", w * atom.lebesgue_mass, b, b)


def test_basis_degree0_unit():
    t = unit_tree(0)
    b = local_basis(PolySpec(1, 0), t.root)(np.array([[0.1], [0.7]]))
    np.testing.assert_allclose(b, 1.0)


def test_basis_degree1_unit_is_shifted_legendre():
    t = unit_tree(0)
    x = np.linspace(0, 1, 7)[:, None]
    b = local_basis(PolySpec(1, 1), t.root)(x)
    np.testing.assert_allclose(b[:, 0], 1.0, atol=1e-15)
    np.testing.assert_allclose(b[:, 1], np.sqrt(3) * (2 * x[:, 0] - 1), atol=1e-14)


def test_basis_degree1_half_interval():
    t = unit_tree(1)
    atom = t.atom(1)
    np.testing.assert_allclose(_gram(PolySpec(1, 1), atom), np.eye(2), atol=1e-12)
    b = local_basis(PolySpec(1, 1), atom)(np.array([[0.1]]))
    np.testing.assert_allclose(b[0], [np.sqrt(2), np.sqrt(6) * (4 * 0.1 - 1)], atol=1e-13)


@pytest.mark.parametrize("d,degree,kind", [(1, 3, "total"), (2, 2, "total"), (2, 2, "tensor"),
                                           (3, 1, "total")])
def test_basis_gram_identity(d, degree, kind):
    t = unit_tree(3, d=d)
    space = PolySpec(d, degree, kind)
    for aid in (0, 4, 9):
        np.testing.assert_allclose(_gram(space, t.atom(aid)), np.eye(space.dim), atol=1e-12)


def test_basis_rejects_degenerate_atom():
    a = Atom(0, 0, 0, Box([0.0], [1.0]), 0.0, None, None)
    with pytest.raises(InvalidArgument):
        local_basis(PolySpec(1, 1), a)


@pytest.mark.parametrize("d,r", [(1, 0), (1, 3), (2, 1), (2, 2), (3, 2)])
def test_dimension_total_degree(d, r):
    assert PolySpec(d, r).dim == comb(d + r, d)
    assert PolySpec(d, r).square().dim == comb(d + 2 * r, d)


def test_gspan_space():
    g = PolyFunction.affine(0.3, 0.6)
    sp = PolySpec(1, kind="gspan", g=g)
    assert sp.dim == 1 and sp.degree == 1 and not sp.contains_constants
    assert sp.square().g == g * g


def test_integrate_examples():
    t = unit_tree(3)
    one = PolyFunction.constant(1)
    assert integrate(t, [one])[0] == pytest.approx(1.0, abs=1e-15)
    assert integrate(t, [X2])[0] == pytest.approx(1 / 3, abs=1e-14)
    m = MeasureTree(t, 1, np.array([2.0, 0.0]))
    assert integrate(t, [X], m)[0] == pytest.approx(0.25, abs=1e-14)


def test_integrate_resolution_mismatch():
    t = unit_tree(3)
    m = MeasureTree(t, 3, np.ones(8))
    with pytest.raises(InvalidState):
        integrate(t, [X], m, fine=1)


def test_integrate_linear_in_weights():
    t = unit_tree(4)
    rng = np.random.default_rng(0)
    w1, w2 = rng.random(8), rng.random(8)
    f = PiecewisePoly(PolySpec(1, 2), 2, rng.standard_normal((4, 3)))
    a = integrate(t, [f], MeasureTree(t, 3, w1))
    b = integrate(t, [f], MeasureTree(t, 3, w2))
    c = integrate(t, [f], MeasureTree(t, 3, 2 * w1 + 3 * w2))
    np.testing.assert_allclose(c, 2 * a + 3 * b, atol=1e-14)


def test_sup_norm_examples():
    t = unit_tree(2)
    c = PiecewisePoly.constant(t, 0, -2.5)
    assert sup_norm(t, c, 0) == pytest.approx(2.5)
    lin = project(t, PolyFunction.affine(-1.0, 2.0), 0, space=PolySpec(1, 1))
    assert sup_norm(t, lin, 0) == pytest.approx(1.0, abs=1e-14)
    sq = project(t, X2, 0, space=PolySpec(1, 2))
    delta = sup_grid_delta(sq.space, 65)
    val = sup_norm(t, sq, 0)
    assert (1 - delta) * 1.0 <= val <= 1.0 + 1e-14


def test_sup_norms_upper_bound_dominates():
    t = unit_tree(3)
    rng = np.random.default_rng(1)
    f = PiecewisePoly(PolySpec(1, 3), 3, rng.standard_normal((8, 4)))
    lo = sup_norms(t, f, grid=33)
    hi = sup_norms(t, f, grid=33, upper=True)
    fine = sup_norms(t, f, grid=4001)
    assert np.all(lo <= fine + 1e-12) and np.all(fine <= hi + 1e-12)


def test_remez_degree0():
    rep = estimate_remez_markov(PolySpec(1, 0), unit_tree(6), n_samples=50)
    assert rep.c2 == 1.0 and rep.C_markov == 0.0
    assert rep.C_product == pytest.approx(1.0)


def test_remez_degree1_extremals():
    t = unit_tree(4)
    sp = PolySpec(1, 1)
    # 2x - 1 has coefficients (0, 1/sqrt(3)) in the root basis
    frac, markov, _ = sample_constants(sp, t, 0, 0, [0.0, 1 / np.sqrt(3)], [1.0, 0.0])
    assert markov == pytest.approx(2.0)
    # f = x: coefficients (1/2, 1/(2 sqrt 3)); |f| >= 1/2 exactly on [1/2, 1]
    frac, _, _ = sample_constants(sp, t, 0, 0, [0.5, 0.5 / np.sqrt(3)], [1.0, 0.0])
    assert frac == pytest.approx(0.5)
    rep = estimate_remez_markov(sp, t, n_samples=300, seed=2)
    assert 0 < rep.c2 <= 0.5 + 1e-12 and rep.C_markov <= 2.0 + 1e-12


coeff = st.floats(-3, 3, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@given(st.lists(coeff, min_size=3, max_size=3), st.lists(coeff, min_size=3, max_size=3),
       st.floats(0.01, 100).flatmap(lambda a: st.sampled_from([a, -a])))
def test_constants_scale_invariant(cf, cu, scale):
    t = unit_tree(3)
    sp = PolySpec(1, 2)
    a = sample_constants(sp, t, 2, 1, cf, cu)
    b = sample_constants(sp, t, 2, 1, np.multiply(cf, scale), cu)
    np.testing.assert_allclose(a, b, rtol=1e-10)


@given(st.lists(coeff, min_size=3, max_size=3), st.lists(coeff, min_size=3, max_size=3),
       st.integers(1, 5))
def test_constants_affine_invariant(cf, cu, level):
    # the same local coefficients on [0,1] and on a dyadic subinterval
    t = unit_tree(5)
    sp = PolySpec(1, 2)
    a = sample_constants(sp, t, 0, 0, cf, cu)
    b = sample_constants(sp, t, level, (1 << level) - 1, cf, cu)
    np.testing.assert_allclose(a, b, rtol=1e-9)


@pytest.mark.parametrize("depth", [3, 6, 9])
def test_product_constant_stable_across_depths(depth):
    rep = estimate_remez_markov(PolySpec(1, 1), unit_tree(depth), n_samples=200, seed=5)
    assert np.isfinite(rep.C_product) and rep.C_product < 50


def test_piecewise_arithmetic_and_prolong():
    t = unit_tree(4)
    rng = np.random.default_rng(3)
    sp = PolySpec(1, 2)
    f = PiecewisePoly(sp, 1, rng.standard_normal((2, 3)))
    g = PiecewisePoly(sp, 1, rng.standard_normal((2, 3)))
    x = rng.random((20, 1))
    np.testing.assert_allclose((2 * f - g)(t, x), 2 * f(t, x) - g(t, x), atol=1e-12)
    np.testing.assert_allclose(f.prolong(t, 4)(t, x), f(t, x), atol=1e-12)


def test_constant_values_roundtrip():
    t = unit_tree(3)
    c = PiecewisePoly.constant(t, 2, [1.0, -2.0, 3.0, 0.5])
    np.testing.assert_allclose(c.cell_values(t), [1.0, -2.0, 3.0, 0.5])
    np.testing.assert_allclose(c(t, np.array([[0.1], [0.3]])), [1.0, -2.0])


def test_piecewise_serialization_roundtrip():
    sp = PolySpec(2, 1)
    f = PiecewisePoly(sp, 3, np.random.default_rng(4).standard_normal((8, 3)))
    buf = io.StringIO()
    write_piecewise(f, buf)
    first = buf.getvalue().splitlines()[0]
    assert first.startswith("7: ")
    g = read_piecewise(sp, 3, buf.getvalue().splitlines())
    np.testing.assert_array_equal(f.coeffs, g.coeffs)


@pytest.mark.parametrize("text", ["0:1.0", "0:0.3;1:0.6", "0,0:1.0;1,1:-2.5;0,2:0.25"])
def test_polyfunction_roundtrip(text):
    d = len(text.split(";")[0].split(":")[0].split(","))
    p = PolyFunction.parse(d, text)
    assert PolyFunction.parse(d, p.describe()) == p
