import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensda import analysis, locality, update
from conftest import small_grid


def _field(g, m, rng, nk=None):
    shape = (m,) + ((nk,) if nk else ()) + g.shape
    return rng.standard_normal(shape)


def test_identity_transform_leaves_fields():
    g = small_grid()
    rng = np.random.default_rng(0)
    m = 4
    tf = locality.TransformField(analysis.ENKF, 3, g.ni, g.nj, locality.stride_nodes(g.ni, 3),
                                 locality.stride_nodes(g.nj, 3),
                                 X5=np.broadcast_to(np.eye(m), (4, 5, m, m)).copy())
    F = _field(g, m, rng, 3)
    assert np.allclose(update.update_members(F, tf, g.numlevels), F, atol=1e-15)


def test_member_update_matches_pointwise_product():
    g = small_grid()
    rng = np.random.default_rng(1)
    m = 3
    inodes, jnodes = locality.stride_nodes(g.ni, 4), locality.stride_nodes(g.nj, 4)
    X5 = rng.standard_normal((len(jnodes), len(inodes), m, m))
    tf = locality.TransformField(analysis.ENKF, 4, g.ni, g.nj, inodes, jnodes, X5=X5)
    F = _field(g, m, rng, 3)
    out = update.update_members(F, tf, g.numlevels)
    for (k, j, i) in [(0, 3, 6), (2, 8, 11), (1, 1, 2)]:
        X = locality.interp_transform(tf, i, j)
        assert np.allclose(out[:, k, j, i], F[:, k, j, i] @ X)
    # land and below-bottom elements are untouched
    assert np.array_equal(out[:, :, :, :2], F[:, :, :, :2])
    assert np.array_equal(out[:, 1:, 0, 5], F[:, 1:, 0, 5])


def test_background_update():
    g = small_grid()
    rng = np.random.default_rng(2)
    m = 5
    inodes, jnodes = locality.stride_nodes(g.ni, 1), locality.stride_nodes(g.nj, 1)
    w = rng.standard_normal((g.nj, g.ni, m))
    tf = locality.TransformField(analysis.ENOI, 1, g.ni, g.nj, inodes, jnodes, w=w)
    x = rng.standard_normal(g.shape)
    A = _field(g, m, rng)
    out = update.update_field(x, tf, analysis.ENOI, g.numlevels, anomalies=A)
    assert out[4, 7] == pytest.approx(x[4, 7] + A[:, 4, 7] @ w[4, 7])
    assert np.array_equal(out[:, :2], x[:, :2])
    with pytest.raises(ValueError, match="anomalies"):
        update.update_field(x, tf, analysis.ENOI)


def test_capping_examples():
    # spread ratio sigma_f / sigma_a
    assert update.inflation_multiple(1.2, 1.0, 1.06, 0.5) == pytest.approx(1.06)
    assert update.inflation_multiple(1.04, 1.0, 1.06, 0.5) == pytest.approx(1.02)
    assert update.inflation_multiple(1.04, 1.0, 1.06, 1.0) == pytest.approx(1.04)
    assert update.inflation_multiple(1.0, 1.0, 1.06, 1.0, plain=True) == 1.06
    assert update.inflation_multiple(1.0, 0.0, 1.06) == 1.0
    assert update.inflation_multiple(1.0, 2.225073858507203e-309, 1.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        update.inflation_multiple(1.0, 1.0, 0.9)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(1, 2), st.floats(0, 1))
def test_capping_bounds(sf, sa, mult, cap):
    e = update.inflation_multiple(sf, sa, mult, cap)
    assert 1.0 <= e <= mult


def test_inflate_ensemble_scales_spread():
    rng = np.random.default_rng(3)
    Ef = rng.standard_normal((10, 4))
    Ea = 0.5 * Ef + 1.0
    E, eff = update.inflate_ensemble(Ef, Ea, 1.5, 1.0)
    # spread halved, so capping allows up to 2; the multiple 1.5 applies
    assert np.allclose(eff, 1.5)
    assert np.allclose(E.mean(axis=0), Ea.mean(axis=0))
    assert np.allclose(E - E.mean(axis=0), 1.5 * (Ea - Ea.mean(axis=0)))


def test_randomise():
    rng = np.random.default_rng(0)
    F = np.zeros((20000,))
    out = update.randomise(F, 0.6, 2.0, rng)
    assert np.std(out) == pytest.approx(0.8 * 2.0, rel=0.03)
    assert np.array_equal(update.randomise(F + 1, 1.0, 2.0, rng), F + 1)
    with pytest.raises(ValueError):
        update.randomise(F, 0.0, 1.0, rng)
