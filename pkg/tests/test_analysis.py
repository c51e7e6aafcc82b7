import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import sqrtm

from ensda import analysis


def _instance(seed, p=None, m=None, scale=1.0):
    rng = np.random.default_rng(seed)
    p = p or int(rng.integers(1, 13))
    m = m or int(rng.integers(2, 11))
    S = scale * rng.standard_normal((p, m))
    S -= S.mean(axis=1, keepdims=True)
    return S, rng.standard_normal(p)


def test_ensemble_observations_linear_variants_agree():
    rng = np.random.default_rng(0)
    E = rng.standard_normal((6, 5))
    H = rng.standard_normal((3, 6))
    HE, Hx = analysis.ensemble_observations(lambda X: H @ X, E=E)
    assert np.allclose(HE, H @ E) and np.allclose(Hx, H @ E.mean(axis=1))
    HE2, Hx2 = analysis.ensemble_observations(lambda X: H @ X, E=E, variant="finite_diff", eps=1e-3)
    assert np.allclose(HE2, HE, atol=1e-10) and np.allclose(Hx2, Hx)


def test_ensemble_observations_enoi_uses_background():
    x = np.array([1.0, 2.0])
    A = np.array([[1.0, -1.0], [0.5, -0.5]])
    HE, Hx = analysis.ensemble_observations(lambda X: X ** 2, x=x, A=A, mode=analysis.ENOI)
    assert Hx.tolist() == [1.0, 4.0]
    # anomalies of H(x + A) about their mean, added to H(x)
    # H(x + A) = [[4, 0], [6.25, 2.25]]
    assert HE.tolist() == [[3.0, -1.0], [6.0, 2.0]]


def test_fgat_slots():
    used, asyn = analysis.fgat_slots([-1, 0, 2, 1], available=[-1, 0, 1])
    assert used.tolist() == [-1, 0, 0, 1] and asyn.tolist() == [True, False, False, True]


def test_standardize_hand_example():
    HE = np.array([[1.0, 3.0], [0.0, 4.0]])
    so = analysis.standardize(HE, Hx=[2.0, 2.0], y=[3.0, 0.0], std=[0.5, 2.0], rfactor_common=4.0,
                              rfactor_type=[1.0, 0.25], f=[1.0, 0.5])
    # variances 1 and 4, sqrt(m-1) = 1, second row tapered by one half
    assert so.s.tolist() == [1.0, -0.5]
    assert so.S.tolist() == [[-1.0, 1.0], [-0.5, 0.5]]
    with pytest.raises(ValueError, match="positive"):
        analysis.standardize(HE, [0, 0], [0, 0], [0.0, 1.0])


def test_moderation_frozen_value():
    # sqrt((1 + 1)^2 + 1 * 16 / 4) - 1
    assert analysis.moderate_obs_error(1.0, 1.0, 4.0, 2.0) == pytest.approx(np.sqrt(8.0) - 1.0, rel=1e-15)
    assert analysis.moderate_obs_error(0.3, 1.0, 4.0, None) == 0.3
    assert analysis.moderate_obs_error(0.3, 1.0, 0.0, 2.0) == pytest.approx(0.3)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(-1e4, 1e4), st.floats(0.1, 10))
def test_moderation_properties(sf, so, d, K):
    v = analysis.moderate_obs_error(so**2, sf**2, d, K)
    assert v >= so**2 * (1 - 1e-12)
    assert abs(analysis.scalar_increment(sf**2, v, d)) <= K * sf * (1 + 1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gain_forms_match_explicit_inverse(seed):
    S, _ = _instance(seed)
    p, m = S.shape
    ref = np.linalg.inv(np.eye(m) + S.T @ S) @ S.T
    for form in (None, "m", "p"):
        assert np.allclose(analysis.compute_gain(S, form), ref, atol=1e-12)
    ref_p = S.T @ np.linalg.inv(np.eye(p) + S @ S.T)
    assert np.allclose(ref, ref_p, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_etkf_T_is_inverse_sqrt(seed):
    S, _ = _instance(seed)
    m = S.shape[1]
    T = analysis.etkf_T(S)
    ref = np.real(sqrtm(np.linalg.inv(np.eye(m) + S.T @ S)))
    assert np.allclose(T, ref, atol=1e-10) and np.allclose(T, T.T)
    assert np.allclose(T @ np.ones(m), np.ones(m), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([analysis.ETKF, analysis.DENKF]), st.floats(0, 1))
def test_x5_properties(seed, scheme, alpha):
    S, s = _instance(seed)
    p, m = S.shape
    tr = analysis.compute_transform(S, s, scheme, alpha)
    one = np.ones(m)
    # columns of X5 sum to one: the mean update is x + A w
    assert np.allclose(one @ tr.X5, one, atol=1e-12)
    assert np.allclose(tr.X5 @ one / m, one / m + tr.w - tr.w.mean(), atol=1e-12)
    assert 0.0 <= tr.dfs <= min(p, m - 1) + 1e-9 and tr.srf >= -1e-12


def test_update_equals_kalman_form():
    # explicit state-space update for a random linear system
    rng = np.random.default_rng(4)
    n, m, p = 7, 6, 4
    E = rng.standard_normal((n, m))
    H = rng.standard_normal((p, n))
    r = 0.3
    y = rng.standard_normal(p)
    HE, Hx = analysis.ensemble_observations(lambda X: H @ X, E=E)
    so = analysis.standardize(HE, Hx, y, np.full(p, np.sqrt(r)))
    tr = analysis.compute_transform(so.S, so.s, analysis.ETKF)
    Ea = E @ tr.X5
    x, A = E.mean(axis=1), E - E.mean(axis=1, keepdims=True)
    P = A @ A.T / (m - 1)
    K = P @ H.T @ np.linalg.inv(H @ P @ H.T + r * np.eye(p))
    assert np.allclose(Ea.mean(axis=1), x + K @ (y - H @ x), atol=1e-12)
    Aa = Ea - Ea.mean(axis=1, keepdims=True)
    assert np.allclose(Aa @ Aa.T / (m - 1), (np.eye(n) - K @ H) @ P, atol=1e-12)


def test_no_mean_update_and_empty():
    S, s = _instance(1)
    tr = analysis.compute_transform(S, s, mean_update=False)
    assert not tr.w.any()
    tr = analysis.compute_transform(np.zeros((0, 4)), np.zeros(0))
    assert np.array_equal(tr.X5, np.eye(4)) and tr.dfs == 0.0
    tr = analysis.local_transform(np.zeros((0, 4)), np.zeros(0), mode=analysis.ENOI)
    assert tr.T is None and not tr.w.any()


def test_enoi_weights_are_gain_times_s():
    S, s = _instance(2)
    tr = analysis.local_transform(S, s, mode=analysis.ENOI)
    assert np.allclose(tr.w, np.linalg.solve(np.eye(S.shape[1]) + S.T @ S, S.T @ s))


def test_dfs_srf_frozen_single_obs():
    # one observation, m = 2: S = [a, -a], S^T S has eigenvalue 2 a^2
    a = 1.5
    S = np.array([[a, -a]])
    G = analysis.compute_gain(S)
    dfs, srf = analysis.dfs_srf(G, S)
    assert dfs == pytest.approx(2 * a * a / (1 + 2 * a * a), rel=1e-14)
    assert srf == pytest.approx(np.sqrt(1 + 2 * a * a) - 1, rel=1e-14)


def test_transform_argument_checks():
    S, s = _instance(3)
    with pytest.raises(ValueError, match="alpha"):
        analysis.compute_transform(S, s, alpha=1.5)
    with pytest.raises(ValueError, match="scheme"):
        analysis.compute_transform(S, s, scheme="EAKF")
    with pytest.raises(ValueError, match="shape mismatch"):
        analysis.compute_transform(S, s[:-1] if s.size > 1 else np.zeros(2))
