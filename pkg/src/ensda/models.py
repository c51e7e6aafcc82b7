"""Toy forecast models for twin experiments.

Two models are provided: Lorenz-96 (RK4) and one-cell cyclic linear advection,
whose propagator is an exactly known permutation matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LORENZ96 = "LORENZ96"
LINADV = "LINADV"


class ModelBlowUp(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n: int
    F: float = 8.0
    dt: float = 0.05
    steps: int = 1  # model steps per assimilation cycle
    q_std: float = 0.0  # additive model noise per cycle; 0 = perfect model

    def __post_init__(self):
        if self.kind not in (LORENZ96, LINADV):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.kind == LORENZ96 and self.n < 4:
            raise ValueError("Lorenz-96 needs n >= 4")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def l96_rhs(x: np.ndarray, F: float) -> np.ndarray:
    """Lorenz-96 tendency along axis 0 (works on states and ensembles)."""
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + F


def _rk4(x, dt, F):
    k1 = l96_rhs(x, F)
    k2 = l96_rhs(x + 0.5 * dt * k1, F)
    k3 = l96_rhs(x + 0.5 * dt * k2, F)
    k4 = l96_rhs(x + dt * k3, F)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(spec: ModelSpec, state: np.ndarray) -> np.ndarray:
    """Advance one model step. `state` is [n] or [n, m] (columns independent)."""
    x = np.asarray(state, dtype=float)
    if x.shape[0] != spec.n:
        raise ValueError(f"state has {x.shape[0]} elements, model expects {spec.n}")
    if spec.kind == LINADV:
        out = np.roll(x, 1, axis=0)
    else:
        out = _rk4(x, spec.dt, spec.F)
    if not np.all(np.isfinite(out)):
        raise ModelBlowUp("model blow-up")
    return out


def linadv_matrix(n: int) -> np.ndarray:
    """Propagator of the one-cell shift: ``linadv_matrix(n) @ x == step(x)``."""
    return np.roll(np.eye(n), 1, axis=0)


def run(spec: ModelSpec, state: np.ndarray, nsteps: int) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    for _ in range(nsteps):
        x = step(spec, x)
    return x


def member_rngs(seed, m: int) -> list[np.random.Generator]:
    """Independent per-member generators derived deterministically from `seed`."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(m)]


def propagate_ensemble(spec: ModelSpec, E: np.ndarray, cycles: int = 1, seed=None) -> np.ndarray:
    """Propagate each member (column of `E`) over `cycles` assimilation cycles.

    With ``q_std > 0`` Gaussian noise is added to each member at the end of
    every cycle; ``seed`` makes it reproducible.
    """
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[1] < 2:
        raise ValueError("ensemble must be [n, m] with m >= 2")
    m = E.shape[1]
    rngs = member_rngs(seed, m) if spec.q_std > 0 else None
    for _ in range(cycles):
        E = run(spec, E, spec.steps)
        if rngs is not None:
            noise = np.column_stack([r.standard_normal(spec.n) for r in rngs])
            E = E + spec.q_std * noise
    return E
