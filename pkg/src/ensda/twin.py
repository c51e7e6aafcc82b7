"""Twin experiments: synthetic truth, observations and the full prep, calc
and update chain run in memory on a one-row periodic equatorial grid."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis, geo, locality, models, obsprep, oracle, update
from .ioformats import Observation

SCENARIOS = ("lorenz96", "linadv-oracle", "enoi-lorenz96")


class Divergence(RuntimeError):
    pass


def ring_grid(n: int) -> geo.Grid:
    """Equatorial ring of n points, periodic in longitude."""
    lon = np.arange(n) * (360.0 / n)
    return geo.Grid(lon, np.array([0.0]), np.array([0.0]), np.ones((1, n)),
                    np.ones((1, n), dtype=int), name="ring")


def spacing_km(n: int) -> float:
    return geo.EARTH_RADIUS_KM * 2.0 * math.pi / n


@dataclass
class CycleMetrics:
    cycle: int
    rmse_f: float
    rmse_a: float
    spread_f: float
    spread_a: float
    dfs: float
    srf: float
    kf_mean_err: float = math.nan
    kf_cov_err: float = math.nan


@dataclass
class TwinResult:
    scenario: str
    metrics: list = field(default_factory=list)

    def mean(self, attr: str, start: int = 0, stop: int | None = None) -> float:
        vals = [getattr(c, attr) for c in self.metrics if c.cycle >= start and (stop is None or c.cycle <= stop)]
        return float(np.mean(vals))

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=list(CycleMetrics.__dataclass_fields__))
            w.writeheader()
            for c in self.metrics:
                w.writerow(asdict(c))


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _mean_spread(A) -> float:
    """Square root of the mean ensemble variance; A is [n, m]."""
    return float(np.sqrt(np.mean(np.sum(A * A, axis=1) / (A.shape[1] - 1))))


def make_obs(grid, lon, values, std, times=None, date=0.0, otype="X") -> list[Observation]:
    """Point observations on the ring, located and ready for superobing."""
    out = []
    for k, (x, v) in enumerate(zip(lon, values)):
        fi, fj = geo.xy_to_fij(grid, float(x), 0.0)
        t = date if times is None else float(times[k])
        out.append(Observation(id=k, type=otype, product="TWIN", instrument="TWIN", lon=float(x),
                               lat=0.0, fi=fi, fj=fj, value=float(v), std=float(std), time=t))
    return out


def obs_matrix(grid, obs) -> np.ndarray:
    """Dense linear interpolation matrix [p, n] on the ring."""
    H = np.zeros((len(obs), grid.ni))
    for r, o in enumerate(obs):
        (_, ii), w = geo.interp_weights(grid, o.fi, o.fj)
        np.add.at(H[r], ii, w)
    return H


def _calc(grid, obs, HE, Hx, spec, stride, setup):
    y = np.array([o.value for o in obs])
    std = np.array([o.std for o in obs])
    so = analysis.standardize(HE, Hx, y, std)
    obsq = locality.ObsQuantities(np.array([o.lon for o in obs]), np.zeros(len(obs)), so.s, so.S,
                                  np.zeros(len(obs), dtype=int))
    return locality.build_transform_field(grid, obsq, [spec], stride, setup)


# --------------------------------------------------------------------------
# scenarios


@dataclass
class L96Setup:
    n: int = 40
    m: int = 25
    cycles: int = 500
    obs_std: float = 1.0
    loc_spacings: float = 10.0
    scheme: str = analysis.DENKF
    inflation: float = 1.05
    cap: float = 1.0
    dt: float = 0.05
    spinup: int = 1000
    seed: int = 1


def run_lorenz96(s: L96Setup | None = None) -> TwinResult:
    s = s or L96Setup()
    rng = np.random.default_rng(s.seed)
    spec_m = models.ModelSpec(models.LORENZ96, s.n, dt=s.dt)
    grid = ring_grid(s.n)
    taper = locality.TaperSpec((s.loc_spacings * spacing_km(s.n),), (1.0,))
    setup = locality.LocalSetup(analysis.ENKF, s.scheme, 1.0)
    truth = models.run(spec_m, 8.0 + rng.standard_normal(s.n), s.spinup)
    E = truth[:, None] + rng.standard_normal((s.n, s.m))
    res = TwinResult("lorenz96")
    for c in range(1, s.cycles + 1):
        truth = models.step(spec_m, truth)
        E = models.propagate_ensemble(spec_m, E)
        y = truth + s.obs_std * rng.standard_normal(s.n)
        obs = obsprep.superob(make_obs(grid, grid.lon, y, s.obs_std), grid, 1)
        Hm = obs_matrix(grid, obs)
        HE, Hx = analysis.ensemble_observations(lambda X: Hm @ X, E=E)
        tf = _calc(grid, obs, HE, Hx, taper, 1, setup)
        Ef = E
        Ea = update.update_members(E.T[:, None, :], tf, grid.numlevels)
        Ea, _ = update.inflate_ensemble(E.T[:, None, :], Ea, s.inflation, s.cap)
        E = Ea[:, 0, :].T
        xf, Af = Ef.mean(axis=1), Ef - Ef.mean(axis=1, keepdims=True)
        xa, Aa = E.mean(axis=1), E - E.mean(axis=1, keepdims=True)
        res.metrics.append(CycleMetrics(c, _rmse(xf, truth), _rmse(xa, truth), _mean_spread(Af),
                                        _mean_spread(Aa), float(tf.dfs.mean()), float(tf.srf.mean())))
        if res.metrics[-1].rmse_a > 10.0 * s.obs_std:
            raise Divergence(f"filter diverged at cycle {c}")
    return res


@dataclass
class EnoiSetup:
    n: int = 40
    m: int = 100
    cycles: int = 500
    obs_std: float = 1.0
    loc_spacings: float = 10.0
    scale: float = 0.25  # static anomaly scaling
    steps: int = 2  # model steps per cycle
    async_interval: float = 0.05  # slot width, one model step
    dt: float = 0.05
    spinup: int = 1000
    sample_every: int = 20
    seed: int = 2


def static_ensemble(spec_m, x0, m, every, scale):
    """Anomalies of states sampled from a long free run, scaled."""
    states = []
    x = x0
    for _ in range(m):
        x = models.run(spec_m, x, every)
        states.append(x)
    S = np.column_stack(states)
    return scale * (S - S.mean(axis=1, keepdims=True))


def run_enoi_lorenz96(s: EnoiSetup | None = None) -> TwinResult:
    """EnOI with FGAT: observation times spread over three slots around the
    analysis time; innovations use the background at the slot time."""
    s = s or EnoiSetup()
    rng = np.random.default_rng(s.seed)
    spec_m = models.ModelSpec(models.LORENZ96, s.n, dt=s.dt)
    grid = ring_grid(s.n)
    taper = locality.TaperSpec((s.loc_spacings * spacing_km(s.n),), (1.0,))
    setup = locality.LocalSetup(analysis.ENOI)
    truth = models.run(spec_m, 8.0 + rng.standard_normal(s.n), s.spinup)
    A = static_ensemble(spec_m, truth, s.m, s.sample_every, s.scale)
    xa = truth + rng.standard_normal(s.n)
    t = 0.0
    res = TwinResult("enoi-lorenz96")
    for c in range(1, s.cycles + 1):
        # background and truth at slots -1, 0, +1 around the analysis time
        tr_slots, bg_slots = {}, {}
        tr_x, bg_x = truth, xa
        for k in range(s.steps + 1):
            tr_x, bg_x = models.step(spec_m, tr_x), models.step(spec_m, bg_x)
            slot = k + 1 - s.steps
            tr_slots[slot], bg_slots[slot] = tr_x, bg_x
        truth = tr_slots[0]
        t += s.steps * s.dt
        # observation times jittered within their slot
        slot_true = rng.integers(-1, 2, s.n)
        times = t + slot_true * s.async_interval + rng.uniform(-0.45, 0.45, s.n) * s.async_interval
        y = np.array([tr_slots[k][i] for i, k in enumerate(slot_true)]) + s.obs_std * rng.standard_normal(s.n)
        obs = make_obs(grid, grid.lon, y, s.obs_std, times, t)
        for o in obs:
            o.slot = obsprep.assign_slot(o.time, t, s.async_interval)
        obs = obsprep.superob(obs, grid, 0)
        Hm = obs_matrix(grid, obs)
        Hx = np.empty(len(obs))
        for k, o in enumerate(obs):
            Hx[k] = Hm[k] @ bg_slots.get(o.slot, bg_slots[0])
        HA = Hm @ A
        HE = Hx[:, None] + HA
        tf = _calc(grid, obs, HE, Hx, taper, 1, setup)
        xb = bg_slots[0]
        xa = update.update_background(xb[None, :], A.T[:, None, :], tf, grid.numlevels)[0]
        res.metrics.append(CycleMetrics(c, _rmse(xb, truth), _rmse(xa, truth), _mean_spread(A),
                                        _mean_spread(A), float(tf.dfs.mean()), float(tf.srf.mean())))
        if res.metrics[-1].rmse_a > 10.0 * s.obs_std:
            raise Divergence(f"EnOI diverged at cycle {c}")
    return res


@dataclass
class LinadvSetup:
    n: int = 16
    m: int = 20
    p: int = 8
    cycles: int = 20
    obs_std: float = 0.5
    seed: int = 3


def run_linadv_oracle(s: LinadvSetup | None = None) -> TwinResult:
    """ETKF without localisation or inflation against the dense Kalman filter."""
    s = s or LinadvSetup()
    rng = np.random.default_rng(s.seed)
    spec_m = models.ModelSpec(models.LINADV, s.n)
    M = models.linadv_matrix(s.n)
    grid = ring_grid(s.n)
    # support far beyond the Earth's circumference: taper is 1 to round-off
    taper = locality.TaperSpec((1e12,), (1.0,))
    setup = locality.LocalSetup(analysis.ENKF, analysis.ETKF, 1.0)
    truth = rng.standard_normal(s.n)
    E = truth[:, None] + rng.standard_normal((s.n, s.m))
    x, A = E.mean(axis=1), E - E.mean(axis=1, keepdims=True)
    kf = oracle.DenseKfState(x, A @ A.T / (s.m - 1))
    res = TwinResult("linadv-oracle")
    for c in range(1, s.cycles + 1):
        truth = models.step(spec_m, truth)
        E = models.propagate_ensemble(spec_m, E)
        kf = oracle.kf_forecast(kf, M)
        lon = rng.uniform(0.0, 360.0, s.p)
        obs0 = make_obs(grid, lon, np.zeros(s.p), s.obs_std)
        H = obs_matrix(grid, obs0)
        y = H @ truth + s.obs_std * rng.standard_normal(s.p)
        for o, v in zip(obs0, y):
            o.value = float(v)
        HE, Hx = analysis.ensemble_observations(lambda X: H @ X, E=E)
        tf = _calc(grid, obs0, HE, Hx, taper, 1, setup)
        Ef = E
        E = update.update_members(E.T[:, None, :], tf, grid.numlevels)[:, 0, :].T
        kf = oracle.kf_analysis(kf, H, s.obs_std**2 * np.eye(s.p), y)
        xa, Aa = E.mean(axis=1), E - E.mean(axis=1, keepdims=True)
        Pa = Aa @ Aa.T / (s.m - 1)
        mean_err = float(np.linalg.norm(xa - kf.x) / np.linalg.norm(kf.x))
        cov_err = float(np.linalg.norm(Pa - kf.P) / np.linalg.norm(kf.P))
        xf, Af = Ef.mean(axis=1), Ef - Ef.mean(axis=1, keepdims=True)
        res.metrics.append(CycleMetrics(c, _rmse(xf, truth), _rmse(xa, truth), _mean_spread(Af),
                                        _mean_spread(Aa), float(tf.dfs.mean()), float(tf.srf.mean()),
                                        mean_err, cov_err))
    return res


def run_scenario(name: str, **kw) -> TwinResult:
    if name == "lorenz96":
        return run_lorenz96(L96Setup(**kw))
    if name == "enoi-lorenz96":
        return run_enoi_lorenz96(EnoiSetup(**kw))
    if name == "linadv-oracle":
        return run_linadv_oracle(LinadvSetup(**kw))
    raise ValueError(f"unknown scenario {name!r} (choose from {', '.join(SCENARIOS)})")
