"""Ensemble container and the basic square-root algebra on it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COV_MAX_N = 200


@dataclass(frozen=True, eq=False)
class Ensemble:
    """State ensemble, one member per column. Mean and anomalies are derived."""

    E: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        if E.ndim != 2 or E.shape[1] < 2:
            raise ValueError("ensemble needs shape [n, m] with m >= 2")
        object.__setattr__(self, "E", E)

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def m(self) -> int:
        return self.E.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.E.mean(axis=1)

    @property
    def A(self) -> np.ndarray:
        return self.E - self.x[:, None]


def mean_and_anomalies(E):
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[1] < 2:
        raise ValueError("ensemble needs m >= 2 members")
    x = E.mean(axis=1)
    return x, E - x[:, None]


def covariance(A) -> np.ndarray:
    """P = A A^T / (m - 1); dense, so only for small states."""
    A = np.asarray(A, dtype=float)
    n, m = A.shape
    if m < 2:
        raise ValueError("ensemble needs m >= 2 members")
    if n > COV_MAX_N:
        raise ValueError(f"covariance only materialised for n <= {COV_MAX_N}")
    return A @ A.T / (m - 1)


def apply_x5(E, X5) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    X5 = np.asarray(X5, dtype=float)
    if X5.shape != (E.shape[-1], E.shape[-1]):
        raise ValueError(f"shape mismatch: E {E.shape}, X5 {X5.shape}")
    return E @ X5


def apply_w(x, A, w) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape != (A.shape[-1],) or np.shape(x) != A.shape[:-1]:
        raise ValueError(f"shape mismatch: x {np.shape(x)}, A {A.shape}, w {w.shape}")
    return np.asarray(x, dtype=float) + A @ w


def check_redraw_matrix(Up, tol: float = 1e-8) -> None:
    Up = np.asarray(Up, dtype=float)
    m = Up.shape[0]
    if Up.shape != (m, m):
        raise ValueError("redraw matrix must be square")
    if np.abs(Up @ Up.T - np.eye(m)).max() > tol:
        raise ValueError("redraw matrix is not unitary")
    if np.abs(Up @ np.ones(m) - 1.0).max() > tol:
        raise ValueError("redraw matrix does not preserve the mean")


def redraw(E, Up) -> np.ndarray:
    """Replace anomalies A by A Up for a mean-preserving orthogonal Up."""
    check_redraw_matrix(Up)
    x, A = mean_and_anomalies(E)
    if Up.shape[0] != A.shape[1]:
        raise ValueError("shape mismatch between ensemble and redraw matrix")
    return x[:, None] + A @ Up


def random_redraw_matrix(m: int, rng) -> np.ndarray:
    """Random orthogonal matrix with Up 1 = 1.

    A random rotation of the (m-1)-dim complement of 1, built from a
    Householder reflection mapping 1/sqrt(m) to the first unit vector.
    """
    u = np.ones(m) / np.sqrt(m)
    v = u - np.eye(m)[0]
    Hh = np.eye(m) - 2.0 * np.outer(v, v) / (v @ v) if v @ v > 0 else np.eye(m)
    Q, R = np.linalg.qr(rng.standard_normal((m - 1, m - 1)))
    Q = Q * np.sign(np.diag(R))
    B = np.eye(m)
    B[1:, 1:] = Q
    return Hh @ B @ Hh


def spread(A) -> np.ndarray:
    """Element-wise ensemble standard deviation with 1/(m-1) normalisation."""
    A = np.asarray(A, dtype=float)
    m = A.shape[-1]
    if m < 2:
        raise ValueError("ensemble needs m >= 2 members")
    return np.sqrt(np.sum(A * A, axis=-1) / (m - 1))
