"""Local analysis core: standardised innovations, moderation, gain, and the
ETKF / DEnKF / EnOI transforms.

Storage convention: ``S`` is [p, m], one row per observation, so that
tapering and dropping observations are row operations. With this layout the
gain is ``G = (I + S^T S)^-1 S^T`` of shape [m, p].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

ETKF = "ETKF"
DENKF = "DENKF"
SCHEMES = (ETKF, DENKF)

ENKF = "ENKF"
ENOI = "ENOI"


@dataclass
class StdObs:
    """Standardised innovations ``s`` [p] and ensemble anomalies ``S`` [p, m]."""

    s: np.ndarray
    S: np.ndarray
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @property
    def m(self) -> int:
        return self.S.shape[1]


@dataclass
class LocalTransform:
    w: np.ndarray
    T: np.ndarray | None  # right-multiplied anomaly transform; None for EnOI
    X5: np.ndarray | None
    dfs: float = 0.0
    srf: float = 0.0


# --------------------------------------------------------------------------
# ensemble observations


def ensemble_observations(H, E=None, x=None, A=None, mode=ENKF, variant="spread", eps=1.0):
    """Observation-space ensemble ``HE`` [p, m] and the forecast ``Hx`` [p].

    ``H`` maps a state matrix [n, k] to [p, k]. For EnKF pass ``E``; for EnOI
    pass the background ``x`` and the static anomalies ``A``.

    variant "spread": H is applied to the members themselves.
    variant "finite_diff": H is applied to ``x 1^T + eps A`` and the
    resulting anomalies are divided by ``eps``.
    """
    if mode == ENKF:
        if E is None:
            raise ValueError("EnKF ensemble observations need E")
        E = np.asarray(E, dtype=float)
        xm = E.mean(axis=1)
        Am = E - xm[:, None]
    elif mode == ENOI:
        if x is None or A is None:
            raise ValueError("EnOI ensemble observations need x and A")
        xm = np.asarray(x, dtype=float)
        Am = np.asarray(A, dtype=float)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    m = Am.shape[1]
    if variant == "spread":
        HE = np.asarray(H(xm[:, None] + Am), dtype=float)
        HA = HE - HE.mean(axis=1, keepdims=True)
        hx0 = HE.mean(axis=1)
    elif variant == "finite_diff":
        if not eps > 0:
            raise ValueError("finite-difference step must be positive")
        HE = np.asarray(H(xm[:, None] + eps * Am), dtype=float)
        HA = (HE - HE.mean(axis=1, keepdims=True)) / eps
        hx0 = HE.mean(axis=1)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if HE.ndim != 2 or HE.shape[1] != m:
        raise ValueError("observation operator must return [p, m]")
    Hx = np.asarray(H(xm[:, None]), dtype=float)[:, 0] if mode == ENOI else hx0
    return Hx[:, None] + HA, Hx


def fgat_slots(obs_slots, available) -> tuple[np.ndarray, np.ndarray]:
    """Effective slot per observation and whether it is used asynchronously.

    Observations whose slot has no ensemble fall back to slot 0.
    """
    obs_slots = np.asarray(obs_slots, dtype=int)
    have = np.isin(obs_slots, np.fromiter(available, dtype=int))
    used = np.where(have, obs_slots, 0)
    return used, have & (obs_slots != 0)


# --------------------------------------------------------------------------
# moderation and standardisation


def moderate_obs_error(var_obs, var_f, d, K):
    """Inflate observation error variance so the increment stays within K spreads.

    All of var_obs, var_f are variances; d is the innovation. ``K=None`` (or
    NaN) disables moderation.
    """
    if K is None or np.isnan(K):
        return np.asarray(var_obs, dtype=float)
    if K <= 0:
        raise ValueError("KFACTOR must be positive")
    var_obs = np.asarray(var_obs, dtype=float)
    var_f = np.asarray(var_f, dtype=float)
    d = np.asarray(d, dtype=float)
    # sqrt(a^2 + b) - var_f written as var_obs + b / (sqrt(a^2 + b) + a) to avoid cancellation
    a = var_f + var_obs
    b = var_f * d * d / (K * K)
    return var_obs + b / (np.sqrt(a * a + b) + a)


def scalar_increment(var_f, var_obs, d):
    """Observation-space increment of a scalar KF update."""
    return var_f * d / (var_f + var_obs)


def standardize(HE, Hx, y, std, rfactor_common=1.0, rfactor_type=1.0, f=None, kfactor=None,
                ids=None) -> StdObs:
    """Standardised innovations and anomalies with diagonal R.

    Effective error variance is std^2 * rfactor_common * rfactor_type, then
    moderated when ``kfactor`` is given. ``f`` are taper coefficients.
    """
    HE = np.asarray(HE, dtype=float)
    p, m = HE.shape
    y = np.asarray(y, dtype=float)
    Hx = np.asarray(Hx, dtype=float)
    HA = HE - HE.mean(axis=1, keepdims=True)
    var = np.asarray(std, dtype=float) ** 2 * rfactor_common * np.asarray(rfactor_type, dtype=float)
    var = np.broadcast_to(var, (p,))
    d = y - Hx
    if kfactor is not None:
        var_f = np.sum(HA * HA, axis=1) / (m - 1)
        var = moderate_obs_error(var, var_f, d, kfactor)
    if np.any(~(var > 0)):
        raise ValueError("observation error variance must be positive")
    scale = 1.0 / (np.sqrt(var) * np.sqrt(m - 1))
    if f is not None:
        scale = scale * np.asarray(f, dtype=float)
    ids = np.arange(p) if ids is None else np.asarray(ids)
    return StdObs(d * scale, HA * scale[:, None], ids)


# --------------------------------------------------------------------------
# gain and transforms


def compute_gain(S, form=None) -> np.ndarray:
    """G = (I + S^T S)^-1 S^T, shape [m, p].

    ``form`` is "m" (m x m system), "p" (p x p system) or None to pick the
    smaller one.
    """
    S = np.asarray(S, dtype=float)
    p, m = S.shape
    if p == 0:
        return np.zeros((m, 0))
    if form is None:
        form = "m" if p >= m else "p"
    if form == "m":
        C = cho_factor(np.eye(m) + S.T @ S)
        return cho_solve(C, S.T)
    if form == "p":
        C = cho_factor(np.eye(p) + S @ S.T)
        return cho_solve(C, S).T
    raise ValueError(f"unknown gain form {form!r}")


def dfs_srf(G, S) -> tuple[float, float]:
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0.0, 0.0
    dfs = float(np.einsum("ij,ji->", G, S))
    tss = float(np.sum(S * S))
    srf = float(np.sqrt(tss / dfs) - 1.0) if dfs > 0 else 0.0
    return dfs, srf


def etkf_T(S, alpha=1.0) -> np.ndarray:
    """(I + alpha S^T S)^-1/2 via a symmetric eigendecomposition."""
    S = np.asarray(S, dtype=float)
    m = S.shape[1]
    lam, V = eigh(np.eye(m) + alpha * (S.T @ S))
    lam = np.maximum(lam, 1.0)  # the matrix is >= I; clip round-off
    T = (V * lam ** -0.5) @ V.T
    return 0.5 * (T + T.T)


def denkf_T(G, S, alpha=1.0) -> np.ndarray:
    m = G.shape[0]
    return np.eye(m) - 0.5 * alpha * (G @ S)


def assemble_x5(w, T) -> np.ndarray:
    """X5 = 1 1^T/m + (I - 1 1^T/m)(w 1^T + T)."""
    m = T.shape[0]
    B = np.outer(w, np.ones(m)) + T
    return np.full((m, m), 1.0 / m) + B - B.mean(axis=0, keepdims=True)


def identity_transform(m: int, mode=ENKF) -> LocalTransform:
    if mode == ENOI:
        return LocalTransform(np.zeros(m), None, None)
    return LocalTransform(np.zeros(m), np.eye(m), np.eye(m))


def compute_transform(S, s, scheme=DENKF, alpha=1.0, mean_update=True) -> LocalTransform:
    S = np.asarray(S, dtype=float)
    s = np.asarray(s, dtype=float)
    p, m = S.shape
    if s.shape != (p,):
        raise ValueError(f"shape mismatch: S {S.shape}, s {s.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if p == 0:
        return identity_transform(m)
    G = compute_gain(S)
    w = G @ s if mean_update else np.zeros(m)
    if scheme == ETKF:
        T = etkf_T(S, alpha)
    elif scheme == DENKF:
        T = denkf_T(G, S, alpha)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    dfs, srf = dfs_srf(G, S)
    return LocalTransform(w, T, assemble_x5(w, T), dfs, srf)


def enoi_weights(S, s) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.shape[0] == 0:
        return np.zeros(S.shape[1])
    return compute_gain(S) @ np.asarray(s, dtype=float)


def enoi_transform(S, s, mean_update=True) -> LocalTransform:
    S = np.asarray(S, dtype=float)
    m = S.shape[1]
    if S.shape[0] == 0:
        return identity_transform(m, ENOI)
    G = compute_gain(S)
    w = G @ np.asarray(s, dtype=float) if mean_update else np.zeros(m)
    dfs, srf = dfs_srf(G, S)
    return LocalTransform(w, None, None, dfs, srf)


def local_transform(S, s, mode=ENKF, scheme=DENKF, alpha=1.0, mean_update=True) -> LocalTransform:
    if mode == ENOI:
        return enoi_transform(S, s, mean_update)
    return compute_transform(S, s, scheme, alpha, mean_update)
