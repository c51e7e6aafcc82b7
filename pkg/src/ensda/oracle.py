"""Dense reference implementations used only for verification.

Kalman filter recursion and the left/right ensemble transform matrices,
computed directly from their defining formulas. Small problems only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DIM = 200


@dataclass
class DenseKfState:
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        n = self.x.size
        if self.P.shape != (n, n):
            raise ValueError("P must be [n, n]")


def _check(*dims):
    if max(dims) > MAX_DIM:
        raise ValueError(f"oracle is dense and limited to dimensions <= {MAX_DIM}")


def kf_forecast(state: DenseKfState, M, Q=None) -> DenseKfState:
    M = np.asarray(M, dtype=float)
    P = M @ state.P @ M.T
    if Q is not None:
        P = P + np.asarray(Q, dtype=float)
    return DenseKfState(M @ state.x, P)


def kalman_gain(P, H, R) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    C = H @ P @ H.T + np.asarray(R, dtype=float)
    try:
        return np.linalg.solve(C, H @ P).T  # P H^T C^-1, using C and P symmetric
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError("singular innovation covariance") from e


def kf_analysis(state: DenseKfState, H, R, y) -> DenseKfState:
    H = np.asarray(H, dtype=float)
    _check(state.x.size, H.shape[0])
    K = kalman_gain(state.P, H, R)
    x = state.x + K @ (np.asarray(y, dtype=float) - H @ state.x)
    P = (np.eye(state.x.size) - K @ H) @ state.P
    return DenseKfState(x, 0.5 * (P + P.T))


# --------------------------------------------------------------------------
# matrix functions


def sym_power(C, power: float) -> np.ndarray:
    """Power of a symmetric positive (semi)definite matrix."""
    lam, V = np.linalg.eigh(0.5 * (C + C.T))
    lam = np.clip(lam, 0.0, None)
    return (V * lam**power) @ V.T


def general_sqrt(X, tol: float = 1e-8) -> np.ndarray:
    """Principal square root V L^1/2 V^-1 of a diagonalisable matrix with
    nonnegative real spectrum."""
    lam, V = np.linalg.eig(X)
    if np.abs(lam.imag).max(initial=0.0) > tol * max(1.0, np.abs(lam).max()):
        raise ValueError("matrix has complex eigenvalues")
    if np.linalg.cond(V) > 1.0 / tol:
        raise ValueError("matrix is not diagonalisable within tolerance")
    lam = np.clip(lam.real, 0.0, None)
    out = (V * np.sqrt(lam)) @ np.linalg.inv(V)
    return out.real


# --------------------------------------------------------------------------
# ensemble transform matrices


def etm_left_sqrt(K, H) -> np.ndarray:
    """T_L = (I - K H)^1/2."""
    KH = np.asarray(K, dtype=float) @ np.asarray(H, dtype=float)
    _check(KH.shape[0])
    return general_sqrt(np.eye(KH.shape[0]) - KH)


def etm_left_inv_sqrt(P, H, R) -> np.ndarray:
    """T_L = (I + P H^T R^-1 H)^-1/2."""
    P = np.asarray(P, dtype=float)
    H = np.asarray(H, dtype=float)
    _check(P.shape[0])
    X = np.eye(P.shape[0]) + P @ H.T @ np.linalg.solve(R, H)
    return np.linalg.inv(general_sqrt(X))


def etm_right_sqrt(HA, HPHt, R, m: int) -> np.ndarray:
    """T_R = [I - (HA)^T (H P H^T + R)^-1 HA / (m - 1)]^1/2."""
    HA = np.asarray(HA, dtype=float)
    _check(m, HA.shape[0])
    C = np.asarray(HPHt, dtype=float) + np.asarray(R, dtype=float)
    X = np.eye(m) - HA.T @ np.linalg.solve(C, HA) / (m - 1)
    return sym_power(X, 0.5)


def etm_andrews(HA, HPHt, R, m: int) -> np.ndarray:
    """T_R = I - (HA)^T M^-1/2 (M^1/2 + R^1/2)^-1 HA / (m - 1), M = H P H^T + R."""
    HA = np.asarray(HA, dtype=float)
    _check(m, HA.shape[0])
    Mm = np.asarray(HPHt, dtype=float) + np.asarray(R, dtype=float)
    Mh = sym_power(Mm, 0.5)
    Mih = sym_power(Mm, -0.5)
    Rh = sym_power(np.asarray(R, dtype=float), 0.5)
    return np.eye(m) - HA.T @ Mih @ np.linalg.solve(Mh + Rh, HA) / (m - 1)
