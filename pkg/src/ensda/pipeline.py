"""File-based calc and update stages on top of the in-memory modules."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import analysis, diag, geo, ioformats, locality, obsprep, update
from .ioformats import Observation
from .prm import DaConfig

log = logging.getLogger(__name__)

OBS_FILE = "observations.csv"
OBS_ORIG_FILE = "observations-orig.csv"
STATS_FILE = "obsstats.csv"
DIAG_FILE = "enkf_diag" + ioformats.EXT


def transforms_file(mode: str) -> str:
    return ("X5" if mode == analysis.ENKF else "w") + ioformats.EXT


# --------------------------------------------------------------------------
# ensemble I/O


def load_members(dirname: str, var: str, m: int, slot: int | None = None) -> np.ndarray:
    return np.stack([ioformats.load(ioformats.member_path(dirname, k + 1, var, slot)).astype(float)
                     for k in range(m)])


def members_exist(dirname: str, var: str, m: int, slot: int | None) -> bool:
    return all(os.path.exists(ioformats.member_path(dirname, k + 1, var, slot)) for k in range(m))


def ensemble_size(cfg: DaConfig) -> int:
    if not cfg.ensdir or not cfg.modelcfg or not cfg.modelcfg.variables:
        return 0
    return ioformats.count_members(cfg.path(cfg.ensdir), cfg.modelcfg.variables[0].name)


# --------------------------------------------------------------------------
# observation operator


def obs_operator(grid: geo.Grid, obs, issurface: bool, fshape) -> sparse.csr_matrix:
    """Sparse interpolation matrix [p, field size] for the standard H function.

    Surface observations of a volume variable use the top layer.
    """
    rows, cols, vals = [], [], []
    for r, o in enumerate(obs):
        idx, w = geo.interp_weights(grid, o.fi, o.fj, None if issurface else o.fk)
        if len(fshape) == 3 and issurface:
            idx = (np.zeros_like(idx[0]),) + tuple(idx)
        rows.extend([r] * len(w))
        cols.extend(np.ravel_multi_index(idx, fshape).tolist())
        vals.extend(w.tolist())
    size = int(np.prod(fshape))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(obs), size))


def _drop_land(grid, obs, issurface):
    keep = []
    for o in obs:
        try:
            geo.interp_weights(grid, o.fi, o.fj, None if issurface else o.fk)
            keep.append(o)
        except geo.ObsOnLand:
            o.status = ioformats.STATUS_BAD
            log.warning("observation %d on land, excluded", o.id)
    return keep


@dataclass
class EnsObs:
    obs: list
    HE: np.ndarray  # [p, m]
    Hx: np.ndarray  # [p]
    glyphs: dict = field(default_factory=dict)


def ensemble_observations(cfg: DaConfig, grid: geo.Grid, obs, m: int) -> EnsObs:
    """Forecast ensemble observations for all observations, slot by slot.

    EnKF reads members of the observation's slot, falling back to slot 0;
    EnOI reads the background of the slot and the static ensemble anomalies.
    """
    enkf = cfg.mode == analysis.ENKF
    ensdir = cfg.path(cfg.ensdir) if cfg.ensdir else None
    bgdir = cfg.path(cfg.bgdir) if cfg.bgdir else None
    kept, HEs, Hxs, glyphs = [], [], [], {}
    anomalies = {}
    for ot in cfg.obstypescfg or []:
        tobs = _drop_land(grid, [o for o in obs if o.type == ot.name], ot.issurface)
        if not tobs:
            continue
        line = []
        slots = sorted({o.slot for o in tobs})
        for slot in slots:
            sobs = [o for o in tobs if o.slot == slot]
            if ot.is_async:
                if enkf:
                    have = members_exist(ensdir, ot.var, m, slot)
                else:
                    have = os.path.exists(ioformats.bg_path(bgdir, ot.var, slot))
                fslot = slot if have else None
                line.append(("a" if have else "s") * max(m, 1))
            else:
                fslot = None
                line.append("." * max(m, 1))

            def read(var):
                if enkf:
                    return load_members(ensdir, var, m, fslot)
                return ioformats.load(ioformats.bg_path(bgdir, var, fslot)).astype(float)[None]

            F = read(ot.var)
            H = obs_operator(grid, sobs, ot.issurface, F.shape[1:])
            if ot.var2:
                F2 = read(ot.var2)
                H2 = obs_operator(grid, sobs, ot.issurface, F2.shape[1:])
                Hop = sparse.hstack([H, -H2]).tocsr()
                F = np.concatenate([F.reshape(F.shape[0], -1), F2.reshape(F2.shape[0], -1)], axis=1)
            else:
                Hop = H
                F = F.reshape(F.shape[0], -1)
            if enkf:
                HE, Hx = analysis.ensemble_observations(lambda X: Hop @ X, E=F.T)
            else:
                if m >= 2:
                    key = (ot.var, ot.var2)
                    if key not in anomalies:
                        A = load_members(ensdir, ot.var, m).reshape(m, -1)
                        if ot.var2:
                            A = np.concatenate([A, load_members(ensdir, ot.var2, m).reshape(m, -1)], axis=1)
                        anomalies[key] = (A - A.mean(axis=0)).T
                    HE, Hx = analysis.ensemble_observations(lambda X: Hop @ X, x=F[0], A=anomalies[key],
                                                            mode=analysis.ENOI)
                else:
                    Hx = Hop @ F[0]
                    HE = Hx[:, None] * np.ones((1, 2))
            kept.extend(sobs)
            HEs.append(HE)
            Hxs.append(Hx)
        glyphs[ot.name] = ("|" if ot.is_async else "") + "|".join(line)
        if not enkf:
            glyphs[ot.name] += "+"
    if not kept:
        mm = max(m, 2)
        return EnsObs([], np.zeros((0, mm)), np.zeros(0), glyphs)
    return EnsObs(kept, np.vstack(HEs), np.concatenate(Hxs), glyphs)


# --------------------------------------------------------------------------
# calc


@dataclass
class CalcOptions:
    forecast_stats_only: bool = False
    ignore_no_obs: bool = False
    no_mean_update: bool = False
    point_logs_only: bool = False
    print_batch_stats: bool = False
    single_obs: tuple | None = None  # ("xyz"|"ijk", c1, c2, c3, type, inn, std)
    metric: str = "MAD"
    obs_file: str | None = None
    jobs: int = 1


@dataclass
class CalcResult:
    obs: list
    ens: EnsObs | None = None
    tf: locality.TransformField | None = None
    stats: list = field(default_factory=list)
    report: list = field(default_factory=list)
    pointlogs: list = field(default_factory=list)


def single_observation(cfg: DaConfig, grid: geo.Grid, spec) -> Observation:
    kind, c1, c2, c3, otype, inn, std = spec
    ot = cfg.obstype(otype)
    o = Observation(id=0, type=otype, product="SINGLE", instrument="SINGLE", std=float(std),
                    time=cfg.date, value=0.0)
    if kind == "xyz":
        o.lon, o.lat, o.depth = float(c1), float(c2), float(c3)
        fij = geo.xy_to_fij(grid, o.lon, o.lat)
        if fij is None:
            raise ValueError("single observation outside the grid")
        o.fi, o.fj = fij
        o.fk = 0.0 if ot.issurface else geo.z_to_fk(grid, o.depth)
    else:
        o.fi, o.fj, o.fk = float(c1), float(c2), float(c3)
        o.lon, o.lat = geo.fij_to_xy(grid, o.fi, o.fj)
        o.depth = 0.0 if ot.issurface else geo.fk_to_z(grid, o.fk)
    return o


def _std_quantities(cfg, ens: EnsObs, type_index):
    obs = ens.obs
    y = np.array([o.value for o in obs])
    std = np.array([o.std for o in obs])
    rf = np.array([cfg.obstype(o.type).rfactor for o in obs])
    so = analysis.standardize(ens.HE, ens.Hx, y, std, cfg.rfactor, rf, kfactor=cfg.kfactor,
                              ids=np.array([o.id for o in obs]))
    t_of = np.array([type_index[o.type] for o in obs], dtype=int)
    return locality.ObsQuantities(np.array([o.lon for o in obs]), np.array([o.lat for o in obs]),
                                  so.s, so.S, t_of, t_of, so.ids)


def run_calc(cfg: DaConfig, grid: geo.Grid, workdir: str, opts: CalcOptions | None = None) -> CalcResult:
    opts = opts or CalcOptions()
    enkf = cfg.mode == analysis.ENKF
    m = ensemble_size(cfg)
    if enkf and m < 2:
        raise ValueError(f"no ensemble found in {cfg.ensdir}")
    if not enkf and m < 2 and not opts.forecast_stats_only:
        raise ValueError("EnOI analysis needs the static ensemble in ENSDIR")

    if opts.single_obs is not None:
        obs = [single_observation(cfg, grid, opts.single_obs)]
    else:
        path = opts.obs_file or os.path.join(workdir, OBS_FILE)
        obs = [o for o in ioformats.read_obs(path) if o.good]
    log.info("%d observations", len(obs))
    if not obs and not opts.ignore_no_obs:
        raise ValueError("no observations (use --ignore-no-obs to proceed)")

    log.info("calculating ensemble observations:\n    ensemble size = %d", m)
    ens = ensemble_observations(cfg, grid, obs, m)
    for t, g in ens.glyphs.items():
        log.info("    %s %s", t, g)
    obs = ens.obs
    if opts.single_obs is not None:
        # the value given on the command line is the innovation
        for k, o in enumerate(obs):
            o.value = float(ens.Hx[k] + float(opts.single_obs[5]))
    res = CalcResult(obs, ens)
    y = np.array([o.value for o in obs])
    d_f = y - ens.Hx
    _, sp_f = diag.obs_moments(ens.HE)
    type_names = [ot.name for ot in cfg.obstypescfg or []]
    type_index = {t: k for k, t in enumerate(type_names)}
    async_types = {ot.name for ot in cfg.obstypescfg or [] if ot.is_async}
    volume_types = {ot.name for ot in cfg.obstypescfg or [] if not ot.issurface}

    if cfg.badbatches or opts.print_batch_stats:
        if opts.print_batch_stats:
            for (t, b), (bias, mad, n) in diag.batch_stats(obs, d_f).items():
                log.info("    batch %s %d: bias %.4g mad %.4g n %d", t, b, bias, mad, n)
        if cfg.badbatches:
            res.report = diag.detect_bad_batches(obs, d_f, cfg.badbatches)
            diag.write_badbatches(os.path.join(workdir, obsprep.BADBATCH_FILE), res.report)
            log.info("%d bad batches written", len(res.report))

    def stats(d_a, sp_a):
        rows = diag.innovation_stats(obs, d_f, d_a, sp_f, sp_a, cfg.regions, cfg.zstatints,
                                     async_types, volume_types, opts.metric)
        log.info("\n%s", diag.format_stats(rows, opts.metric))
        diag.write_stats_csv(os.path.join(workdir, STATS_FILE), rows)
        return rows

    if opts.forecast_stats_only:
        res.stats = stats(np.full_like(d_f, np.nan), np.full_like(d_f, np.nan))
        return res

    obsq = _std_quantities(cfg, ens, type_index)
    for ot in cfg.obstypescfg:
        if not cfg.taper_for(ot)[0]:
            raise ValueError(f"observation type '{ot.name}': no localisation radius (LOCRAD)")
    specs = [locality.TaperSpec.from_lists(*cfg.taper_for(ot)) for ot in cfg.obstypescfg]
    setup = locality.LocalSetup(cfg.mode, cfg.scheme, cfg.alpha, not opts.no_mean_update)
    if not opts.point_logs_only:
        tf = locality.build_transform_field(grid, obsq, specs, cfg.stride, setup, jobs=opts.jobs,
                                            ntypes=len(type_names))
        ioformats.write_transforms(os.path.join(workdir, transforms_file(cfg.mode)), tf)
        diag.write_diag(os.path.join(workdir, DIAG_FILE), tf, type_names)
        res.tf = tf
        HE_a = np.empty_like(ens.HE)
        for k, o in enumerate(obs):
            T = locality.interp_transform(tf, o.fi, o.fj)
            HE_a[k] = diag.analysed_obs(ens.HE[k:k + 1], T[None], cfg.mode, ens.Hx[k:k + 1])[0]
        Hx_a = HE_a.mean(axis=1)
        _, sp_a = diag.obs_moments(HE_a)
        res.stats = stats(y - Hx_a, sp_a)

    if cfg.pointlogs:
        index = locality.ObsIndex(obsq.lon, obsq.lat,
                                  np.array([specs[t].max_radius for t in obsq.spec_of]))
        for i, j in cfg.pointlogs:
            tr, idx, f, s, S = locality.local_analysis(obsq, specs, index, grid.lon[i], grid.lat[j], setup)
            if grid.numlevels[j, i] == 0:
                tr = analysis.identity_transform(m, cfg.mode)
            actual = locality.interp_transform(res.tf, i, j) if res.tf is not None \
                else (tr.X5 if enkf else tr.w)
            rec = diag.build_pointlog(i, j, grid, cfg, obs, idx, f, s, S, tr, actual, type_names,
                                      cfg.mode, cfg.scheme, cfg.alpha, m, not opts.no_mean_update)
            ioformats.write_pointlog(ioformats.pointlog_path(workdir, i, j), rec)
            res.pointlogs.append(rec)
    return res


# --------------------------------------------------------------------------
# update


@dataclass
class UpdateOptions:
    calculate_spread: bool = False
    joint_output: bool = False
    no_fields_write: bool = False
    output_increment: bool = False
    write_inflation: bool = False
    seed: int = 0


def _f32(a):
    return np.asarray(a, dtype=np.float32)


def _write_field(path_in: str, F32, A32, opts: UpdateOptions, joint_path: str | None):
    """Write analysis or increment. The analysis written is forecast + increment
    in float32 so the two files are exactly consistent."""
    inc = _f32(A32.astype(np.float64) - F32.astype(np.float64))
    if opts.output_increment:
        out, suffix = inc, ".increment"
    else:
        out, suffix = (F32 + inc).astype(np.float32), ".analysis"
    path = joint_path if joint_path else path_in + suffix
    ioformats.save(path, out)


def run_update(cfg: DaConfig, grid: geo.Grid, workdir: str, opts: UpdateOptions | None = None) -> dict:
    """Apply the stored transforms to every model variable; returns analysed fields."""
    opts = opts or UpdateOptions()
    enkf = cfg.mode == analysis.ENKF
    tf = ioformats.read_transforms(os.path.join(workdir, transforms_file(cfg.mode)))
    tf.periodic = grid.periodic
    m = ensemble_size(cfg)
    ensdir = cfg.path(cfg.ensdir) if cfg.ensdir else None
    bgdir = cfg.path(cfg.bgdir) if cfg.bgdir else None
    rngs = {v.name: r for v, r in zip(cfg.modelcfg.variables,
                                      np.random.SeedSequence(opts.seed).spawn(len(cfg.modelcfg.variables)))}
    pls = {}
    for i, j in cfg.pointlogs:
        p = ioformats.pointlog_path(workdir, i, j)
        if os.path.exists(p):
            pls[(i, j)] = (p, ioformats.read_pointlog(p))
    results = {}
    for var in cfg.modelcfg.variables:
        name = var.name
        if enkf:
            F = load_members(ensdir, name, m)
            mask = update.wet_mask(grid.numlevels, F.shape[1:])
            Fa = update.update_members(F, tf, grid.numlevels)
            inf = cfg.inflation_for(name)
            Fa, eff = update.inflate_ensemble(F, Fa, inf.mult, inf.cap, inf.plain, mask)
            if var.randomise is not None:
                lam, s0 = var.randomise
                Fa = np.where(mask, update.randomise(Fa, lam, s0, np.random.default_rng(rngs[name])), Fa)
            if opts.write_inflation:
                ioformats.save(os.path.join(workdir, f"inflation_{name}{ioformats.EXT}"), eff)
            if not opts.no_fields_write:
                for k in range(m):
                    src = ioformats.member_path(ensdir, k + 1, name)
                    joint = ioformats.member_path(ensdir, k + 1, name + ("_inc" if opts.output_increment else "_an")) \
                        if opts.joint_output else None
                    _write_field(src, _f32(F[k]), _f32(Fa[k]), opts, joint)
            if opts.calculate_spread:
                ioformats.save(os.path.join(workdir, f"spread_{name}{ioformats.EXT}"),
                               np.std(F, axis=0, ddof=1))
                ioformats.save(os.path.join(workdir, f"spread_{name}_an{ioformats.EXT}"),
                               np.std(Fa, axis=0, ddof=1))
            results[name] = Fa
            fcols, acols = F, Fa
        else:
            x = ioformats.load(ioformats.bg_path(bgdir, name)).astype(float)
            E = load_members(ensdir, name, m)
            A = E - E.mean(axis=0)
            xa = update.update_background(x, A, tf, grid.numlevels)
            if not opts.no_fields_write:
                src = ioformats.bg_path(bgdir, name)
                joint = ioformats.bg_path(bgdir, name + ("_inc" if opts.output_increment else "_an")) \
                    if opts.joint_output else None
                _write_field(src, _f32(x), _f32(xa), opts, joint)
            if opts.calculate_spread:
                ioformats.save(os.path.join(workdir, f"spread_{name}{ioformats.EXT}"),
                               np.std(E, axis=0, ddof=1))
            results[name] = xa
            fcols, acols = x[None], xa[None]
        inf = cfg.inflation_for(name)
        for (i, j), (p, rec) in pls.items():
            rec["variables"][name] = fcols[..., j, i].T.tolist()
            rec["variables"][name + "_an"] = acols[..., j, i].T.tolist()
            rec["variables"][name + "_an:INFLATION"] = [inf.mult, "PLAIN" if inf.plain else inf.cap]
    for p, rec in pls.values():
        ioformats.write_pointlog(p, rec)
    return results
