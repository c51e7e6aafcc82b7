"""The update stage: apply transforms field by field, inflate with capping,
apply the forgetting model, write analyses, increments and spread.

Fields are stacked members first: [m, nj, ni] for surface variables and
[m, nk, nj, ni] for volume variables.
"""
from __future__ import annotations

import numpy as np

from . import analysis, locality


def wet_mask(numlevels, shape) -> np.ndarray:
    """Boolean mask of wet elements for a [nj, ni] or [nk, nj, ni] field."""
    numlevels = np.asarray(numlevels)
    if len(shape) == 2:
        return numlevels > 0
    k = np.arange(shape[0])[:, None, None]
    return k < numlevels[None]


def update_members(F, tf: locality.TransformField, numlevels) -> np.ndarray:
    """EnKF: multiply the member vector of every wet element by its interpolated X5."""
    F = np.asarray(F, dtype=float)
    m = F.shape[0]
    if tf.m != m or F.shape[-2:] != (tf.nj, tf.ni):
        raise ValueError(f"shape mismatch: field {F.shape}, transforms m={tf.m} grid {(tf.nj, tf.ni)}")
    mask = wet_mask(numlevels, F.shape[1:])
    out = F.copy()
    for j in range(tf.nj):
        X5 = locality.interp_row(tf, j)  # [ni, m, m]
        if F.ndim == 3:
            upd = np.einsum("mi,imn->ni", F[:, j, :], X5)
            out[:, j, :] = np.where(mask[j][None, :], upd, F[:, j, :])
        else:
            upd = np.einsum("mki,imn->nki", F[:, :, j, :], X5)
            out[:, :, j, :] = np.where(mask[:, j, :][None], upd, F[:, :, j, :])
    return out


def update_background(x, A, tf: locality.TransformField, numlevels) -> np.ndarray:
    """EnOI: add the anomalies weighted by the interpolated w to each wet element."""
    x = np.asarray(x, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape[1:] != x.shape or tf.m != A.shape[0] or x.shape[-2:] != (tf.nj, tf.ni):
        raise ValueError(f"shape mismatch: background {x.shape}, anomalies {A.shape}")
    mask = wet_mask(numlevels, x.shape)
    out = x.copy()
    for j in range(tf.nj):
        w = locality.interp_row(tf, j)  # [ni, m]
        if x.ndim == 2:
            upd = x[j] + np.einsum("mi,im->i", A[:, j, :], w)
            out[j] = np.where(mask[j], upd, x[j])
        else:
            upd = x[:, j, :] + np.einsum("mki,im->ki", A[:, :, j, :], w)
            out[:, j, :] = np.where(mask[:, j, :], upd, x[:, j, :])
    return out


def update_field(field, tf, mode=analysis.ENKF, numlevels=None, anomalies=None):
    """Dispatch on mode; for EnOI ``field`` is the background and ``anomalies`` the static ensemble anomalies."""
    if numlevels is None:  # all wet
        spatial = np.shape(field)[1:] if mode == analysis.ENKF else np.shape(field)
        numlevels = np.full((tf.nj, tf.ni), spatial[0] if len(spatial) == 3 else 1)
    if mode == analysis.ENKF:
        return update_members(field, tf, numlevels)
    if anomalies is None:
        raise ValueError("EnOI update needs ensemble anomalies")
    return update_background(field, anomalies, tf, numlevels)


# --------------------------------------------------------------------------
# inflation and forgetting


def inflation_multiple(sigma_f, sigma_a, mult: float, cap: float = 1.0, plain: bool = False):
    """Element-wise inflation actually applied.

    Capped: min(mult, max(1, 1 + cap (sigma_f / sigma_a - 1))). Elements whose
    analysis spread is zero are left alone (multiple 1).
    """
    if mult < 1.0:
        raise ValueError("inflation multiple must be >= 1")
    sf = np.asarray(sigma_f, dtype=float)
    sa = np.asarray(sigma_a, dtype=float)
    if plain:
        eff = np.full(np.broadcast(sf, sa).shape, float(mult))
    else:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            capv = 1.0 + cap * (sf / sa - 1.0) if cap > 0 else np.ones(np.broadcast(sf, sa).shape)
        eff = np.minimum(mult, np.maximum(1.0, capv))
    eff = np.where(sa > 0, eff, 1.0)
    return eff if eff.ndim else float(eff)


def inflate(A_f, A_a, mult: float, cap: float = 1.0, plain: bool = False):
    """Inflate analysis anomalies [m, ...]; returns (anomalies, applied multiple)."""
    A_f = np.asarray(A_f, dtype=float)
    A_a = np.asarray(A_a, dtype=float)
    m = A_a.shape[0]
    sf = np.sqrt(np.sum(A_f * A_f, axis=0) / (m - 1))
    sa = np.sqrt(np.sum(A_a * A_a, axis=0) / (m - 1))
    eff = np.asarray(inflation_multiple(sf, sa, mult, cap, plain))
    return A_a * eff, eff


def inflate_ensemble(E_f, E_a, mult: float, cap: float = 1.0, plain: bool = False, mask=None):
    """Inflate the anomalies of an analysed ensemble [m, ...] about its mean."""
    xa = E_a.mean(axis=0)
    A_a, eff = inflate(E_f - E_f.mean(axis=0), E_a - xa, mult, cap, plain)
    out = xa + A_a
    if mask is not None:
        out = np.where(mask, out, E_a)
        eff = np.where(mask, eff, 1.0)
    return out, eff


def randomise(F, lam: float, sigma0: float, rng) -> np.ndarray:
    """Forgetting model x <- lam x + sqrt(1 - lam^2) N(0, sigma0^2), element-wise."""
    if not 0.0 < lam <= 1.0:
        raise ValueError("RANDOMISE lambda must lie in (0, 1]")
    F = np.asarray(F, dtype=float)
    if lam == 1.0:
        return F.copy()
    return lam * F + np.sqrt(1.0 - lam * lam) * sigma0 * rng.standard_normal(F.shape)
