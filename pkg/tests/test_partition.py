import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import unit_tree
from smartlab.errors import InvalidArgument
from smartlab.partition import (Box, SplitRule, atom_id, build_tree, check_shape_regularity,
                                id_to_level, read_tree, write_tree)


def test_midpoint_depth2_leaves():
    t = unit_tree(2)
    np.testing.assert_allclose(t.mass[2], 0.25)
    np.testing.assert_allclose(t.diam(2), 0.25)
    np.testing.assert_allclose(t.lower[2][:, 0], [0, 0.25, 0.5, 0.75])


def test_square_depth2_alternates_axes():
    t = unit_tree(2, d=2)
    np.testing.assert_allclose(t.mass[2], 0.25)
    np.testing.assert_allclose(t.upper[2] - t.lower[2], 0.5)
    assert list(t.split_axis[0]) == [0] and list(t.split_axis[1]) == [1, 1]


def test_fixed_ratio_third():
    t = unit_tree(1, split_rule=SplitRule.fixed_ratio(1 / 3))
    small = t.small_child(0)[0]
    large = t.large_child(0)[0]
    assert t.mass[1][small] == pytest.approx(1 / 3)
    assert t.mass[1][large] == pytest.approx(2 / 3)
    assert t.upper[1][small][0] == pytest.approx(1 / 3)
    assert t.lower[1][large][0] == pytest.approx(1 / 3)


def test_shape_report_midpoint_1d():
    rep = check_shape_regularity(unit_tree(8))
    assert rep.ok
    assert rep.mass_over_diam_min == pytest.approx(1.0)
    assert rep.mass_over_diam_max == pytest.approx(1.0)
    assert rep.min_sibling_ratio == pytest.approx(1.0)


def test_shape_report_fixed_ratio():
    rep = check_shape_regularity(unit_tree(6, split_rule=SplitRule.fixed_ratio(1 / 3)))
    assert rep.min_sibling_ratio == pytest.approx(0.5)


def test_square_mass_over_diam_squared():
    t = unit_tree(4, d=2)
    for n in range(5):
        r = t.mass[n] / t.diam(n) ** 2
        assert np.all(np.isclose(r, 0.5) | np.isclose(r, 1.0))


@pytest.mark.parametrize("depth", [-1, 1.5])
def test_bad_depth(depth):
    with pytest.raises(InvalidArgument):
        build_tree(Box.unit(1), depth)


@pytest.mark.parametrize("rho", [0.2, 0.6])
def test_bad_ratio(rho):
    with pytest.raises(InvalidArgument):
        unit_tree(2, split_rule=SplitRule.fixed_ratio(rho))


def test_bad_random_range():
    with pytest.raises(InvalidArgument):
        unit_tree(2, split_rule=SplitRule.seeded_random(0.1, 0.5))


@pytest.mark.parametrize("text", ["midpoint", "fixed_ratio(0.4)", "seeded_random(0.3,0.5)"])
def test_split_rule_roundtrip(text):
    assert SplitRule.parse(SplitRule.parse(text).describe()) == SplitRule.parse(text)


def test_atom_ids():
    assert id_to_level(int(atom_id(3, 5))) == (3, 5)
    t = unit_tree(3)
    a = t.atom(int(atom_id(2, 1)))
    assert a.parent == int(atom_id(1, 0))
    assert set(a.children) == {int(atom_id(3, 2)), int(atom_id(3, 3))}


def test_locate_boundary_and_outside():
    t = unit_tree(2)
    assert list(t.locate(np.array([[0.0], [0.25], [0.5], [1.0]]), 2)) == [0, 1, 2, 3]
    with pytest.raises(InvalidArgument):
        t.locate(np.array([[1.5]]), 2)


def test_serialization_roundtrip():
    t = unit_tree(5, d=2, split_rule=SplitRule.seeded_random(0.34, 0.5), seed=4)
    buf = io.StringIO()
    write_tree(t, buf)
    buf.seek(0)
    t2 = read_tree(buf)
    for n in range(6):
        np.testing.assert_array_equal(t.lower[n], t2.lower[n])
        np.testing.assert_array_equal(t.mass[n], t2.mass[n])


trees = st.builds(
    lambda d, depth, lo, seed: unit_tree(depth, d=d, split_rule=SplitRule.seeded_random(lo, 0.5),
                                         seed=seed),
    st.integers(1, 3), st.integers(0, 7), st.floats(1 / 3, 0.5), st.integers(0, 10 ** 6))


@given(trees)
def test_mass_additivity_and_sibling_order(t):
    for n in range(t.max_depth):
        ch = t.mass[n + 1].reshape(-1, 2)
        np.testing.assert_allclose(ch.sum(axis=1), t.mass[n], rtol=0, atol=1e-14)
        small = t.mass[n + 1][t.small_child(n)]
        large = t.mass[n + 1][t.large_child(n)]
        assert np.all(small <= large)
        assert np.all(small / large >= t.sibling_ratio_min / (1 - t.sibling_ratio_min) - 1e-12)


@given(trees)
def test_children_tile_parent_and_shrink(t):
    for n in range(t.max_depth):
        lo, hi = t.lower[n + 1].reshape(-1, 2, t.dim), t.upper[n + 1].reshape(-1, 2, t.dim)
        np.testing.assert_allclose(lo.min(axis=1), t.lower[n])
        np.testing.assert_allclose(hi.max(axis=1), t.upper[n])
        assert np.all(t.diam(n + 1).reshape(-1, 2) <= t.diam(n)[:, None] + 1e-15)


@given(trees)
def test_diam_power_over_mass_bounded(t):
    ratios = [float((t.diam(n) ** t.dim / t.mass[n]).max()) for n in range(t.max_depth + 1)]
    # the longest-axis rule keeps aspect ratios bounded at every depth
    assert max(ratios) <= 2.0 ** t.dim * t.dim ** (t.dim / 2) * 3 ** t.dim


def test_midpoint_level_uniform():
    t = unit_tree(6)
    for n in range(7):
        assert np.ptp(t.mass[n]) == 0 and np.ptp(t.diam(n)) == 0
