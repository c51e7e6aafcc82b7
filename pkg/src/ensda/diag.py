"""Diagnostics: analysed ensemble observations, innovation statistics, bad
batch detection, DFS/SRF fields and point logs."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import analysis, ioformats
from .prm import BadBatchSpec, Region

DEFAULT_ZINTS = [(0.0, 50.0), (50.0, 500.0), (500.0, math.inf)]
GLOBAL_REGION = Region("Global", -999.0, 999.0, -999.0, 999.0)
NA = "N/A"


def analysed_obs(HE_f, transforms, mode=analysis.ENKF, Hx=None):
    """Analysed ensemble observations from the per-observation transforms.

    EnKF: ``transforms`` is [p, m, m] and each row of ``HE_f`` is multiplied
    by its X5. EnOI: ``transforms`` is [p, m] of weights and ``Hx`` the
    background observations; rows become ``Hx + HA w`` plus the anomalies.
    """
    HE_f = np.asarray(HE_f, dtype=float)
    T = np.asarray(transforms, dtype=float)
    if mode == analysis.ENKF:
        return np.einsum("pj,pjk->pk", HE_f, T)
    HA = HE_f - HE_f.mean(axis=1, keepdims=True)
    Hx = HE_f.mean(axis=1) if Hx is None else np.asarray(Hx, dtype=float)
    return (Hx + np.einsum("pj,pj->p", HA, T))[:, None] + HA


def obs_moments(HE, Hx=None):
    """Observation-space mean (``Hx`` if given) and spread of an ensemble."""
    HE = np.asarray(HE, dtype=float)
    m = HE.shape[1]
    mean = HE.mean(axis=1) if Hx is None else np.asarray(Hx, dtype=float)
    A = HE - HE.mean(axis=1, keepdims=True)
    return mean, np.sqrt(np.sum(A * A, axis=1) / (m - 1))


# --------------------------------------------------------------------------
# innovation statistics


@dataclass
class StatRow:
    region: str
    type: str
    group: str  # "" for the per-type summary, else slot / instrument / depth interval
    kind: str  # "type", "slot", "instrument" or "depth"
    n_obs: int
    mad_f: float
    mad_a: float
    bias_f: float
    bias_a: float
    spread_f: float
    spread_a: float


def _summary(sel, d_f, d_a, sp_f, sp_a, metric):
    n = int(sel.sum())
    if n == 0:
        return 0, *(math.nan,) * 6

    def mis(d):
        d = d[sel]
        return float(np.sqrt(np.mean(d * d))) if metric == "RMSD" else float(np.mean(np.abs(d)))

    return (n, mis(d_f), mis(d_a), float(np.mean(d_f[sel])), float(np.mean(d_a[sel])),
            float(np.mean(sp_f[sel])), float(np.mean(sp_a[sel])))


def _zlabel(z1, z2):
    if math.isinf(z2):
        return f">{z1:g}m"
    return f"{z1:g}-{z2:g}m"


def innovation_stats(obs, d_f, d_a, spread_f, spread_a, regions=None, zints=None,
                     async_types=(), volume_types=(), metric="MAD") -> list[StatRow]:
    """Innovation statistics grouped region -> type -> slot -> instrument -> depth.

    ``d_f``/``d_a`` are forecast and analysis innovations (y - mean H(E)).
    Slot rows are produced for asynchronous types only; depth rows for
    volume types only.
    """
    if metric not in ("MAD", "RMSD"):
        raise ValueError(f"unknown metric {metric!r}")
    d_f, d_a = np.asarray(d_f, float), np.asarray(d_a, float)
    sp_f, sp_a = np.asarray(spread_f, float), np.asarray(spread_a, float)
    d_a = np.full_like(d_f, np.nan) if d_a.size == 0 else d_a
    sp_a = np.full_like(d_f, np.nan) if sp_a.size == 0 else sp_a
    regions = regions or [GLOBAL_REGION]
    lon = np.array([o.lon for o in obs])
    lat = np.array([o.lat for o in obs])
    depth = np.array([o.depth for o in obs])
    types = np.array([o.type for o in obs])
    slots = np.array([o.slot for o in obs])
    instr = np.array([NA if o.instrument == ioformats.MIXED else o.instrument for o in obs])
    rows = []
    for reg in regions:
        inreg = (lon >= reg.lon1) & (lon <= reg.lon2) & (lat >= reg.lat1) & (lat <= reg.lat2)
        zs = reg.zints or zints or DEFAULT_ZINTS
        for t in sorted(set(types[inreg])) if len(obs) else []:
            sel = inreg & (types == t)

            def add(mask, group, kind):
                rows.append(StatRow(reg.name, t, group, kind, *_summary(mask, d_f, d_a, sp_f, sp_a, metric)))

            add(sel, "", "type")
            if t in async_types:
                for s in sorted(set(slots[sel])):
                    add(sel & (slots == s), str(s), "slot")
            for ins in sorted(set(instr[sel]), key=lambda v: (v == NA, v)):
                add(sel & (instr == ins), ins, "instrument")
            if t in volume_types:
                for z1, z2 in zs:
                    add(sel & (depth >= z1) & (depth < z2), _zlabel(z1, z2), "depth")
    return rows


def format_stats(rows: list[StatRow], metric="MAD") -> str:
    mname = "|for.inn.| |an.inn.|" if metric == "MAD" else "rmsd(for)  rmsd(an) "
    head = (f"    region obs.type   # obs.  {mname}   for.inn.   an.inn.  for.spread  an.spread")
    out = ["  printing observation statistics:", head, "    " + "-" * (len(head) - 4)]
    region = None
    for r in rows:
        if r.region != region:
            region = r.region
            out.append(f"    {region}")
        label = f"           {r.type:<8s}" if r.kind == "type" else f"             {r.group:<6s}"
        out.append(f"{label}{r.n_obs:8d}  {r.mad_f:9.3f}  {r.mad_a:9.3f}  {r.bias_f:9.3f}  "
                   f"{r.bias_a:9.3f}  {r.spread_f:9.3f}  {r.spread_a:9.3f}")
    return "\n".join(out)


def write_stats_csv(path: str, rows: list[StatRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([fl.name for fl in fields(StatRow)])
        for r in rows:
            w.writerow(astuple(r))


# --------------------------------------------------------------------------
# batches


def batch_stats(obs, d_f) -> dict[tuple[str, int], tuple[float, float, int]]:
    """(type, batch) -> (bias, mad, n) over observations with a batch id."""
    acc = defaultdict(list)
    for o, d in zip(obs, d_f):
        if o.batch >= 0:
            acc[(o.type, o.batch)].append(d)
    return {k: (float(np.mean(v)), float(np.mean(np.abs(v))), len(v)) for k, v in sorted(acc.items())}


def detect_bad_batches(obs, d_f, specs: list[BadBatchSpec]):
    """Report rows (type, batch, bias, mad, n) of batches exceeding the thresholds."""
    by_type = {s.type: s for s in specs}
    report = []
    for (t, b), (bias, mad, n) in batch_stats(obs, d_f).items():
        s = by_type.get(t)
        if s is not None and n > s.min_nobs and (abs(bias) > s.max_bias or mad > s.max_mad):
            report.append((t, b, bias, mad, n))
    return report


def write_badbatches(path: str, report) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t, b, bias, mad, n in report:
            f.write(f"{t} {b} {bias!r} {mad!r} {n}\n")


# --------------------------------------------------------------------------
# DFS / SRF


def dfs_srf_fields(tf, type_names=()) -> dict[str, np.ndarray]:
    """Node-resolution DFS and SRF, for all observations and per type."""
    out = {"dfs": tf.dfs, "srf": tf.srf}
    for k, t in enumerate(type_names):
        out[f"dfs_{t}"] = tf.extra["dfs_types"][k]
        out[f"srf_{t}"] = tf.extra["srf_types"][k]
    return out


def write_diag(path: str, tf, type_names=()) -> None:
    """Diagnostics file: dims [1 + ntypes, 2, nj_s, ni_s]; layer 0 is all obs."""
    flds = dfs_srf_fields(tf, type_names)
    layers = [np.stack([flds["dfs"], flds["srf"]])]
    layers += [np.stack([flds[f"dfs_{t}"], flds[f"srf_{t}"]]) for t in type_names]
    data = np.stack(layers)
    ioformats.write_array(path, data.shape, data,
                          {"layers": ["ALL", *type_names], "fields": ["DFS", "SRF"],
                           "inodes": [int(i) for i in tf.inodes], "jnodes": [int(j) for j in tf.jnodes]})


# --------------------------------------------------------------------------
# point logs


def build_pointlog(i, j, grid, cfg, obs, idx, f, s, S, tr, X5_actual, type_names, mode,
                   scheme, alpha, m, mean_update=True) -> dict:
    """Everything entering the local analysis at grid point (i, j)."""
    if not (0 <= i < grid.ni and 0 <= j < grid.nj):
        raise ValueError(f"point log location ({i}, {j}) outside the grid")
    sel = [obs[k] for k in idx]
    tinfo = {}
    for k, t in enumerate(type_names):
        ot = cfg.obstype(t) if cfg is not None else None
        tinfo[t] = k
        if ot is not None:
            tinfo[f"RFACTOR_{t}"] = ot.rfactor
            tinfo[f"LOCRAD_{t}"] = cfg.taper_for(ot)[0]
    rec = {
        "date": cfg.date if cfg is not None else None,
        "date_units": cfg.date_units if cfg is not None else "",
        "i": int(i), "j": int(j),
        "lon": float(grid.lon[i]), "lat": float(grid.lat[j]), "depth": float(grid.depth[j, i]),
        "mode": mode, "scheme": scheme, "alpha": alpha, "m": int(m),
        "mean_update": bool(mean_update),
        "obs_ids": [o.id for o in sel],
        "lcoeffs": np.asarray(f, dtype=float),
        "obs_lon": [o.lon for o in sel], "obs_lat": [o.lat for o in sel],
        "obs_depth": [o.depth for o in sel], "obs_val": [o.value for o in sel],
        "obs_std": [o.std for o in sel], "obs_fi": [o.fi for o in sel],
        "obs_fj": [o.fj for o in sel], "obs_fk": [o.fk for o in sel],
        "obs_type": [tinfo.get(o.type, -1) for o in sel], "obs_type_attrs": tinfo,
        "obs_date": [o.time - (cfg.date if cfg is not None else 0.0) for o in sel],
        "s": np.asarray(s, dtype=float),
        "S": np.asarray(S, dtype=float).T.reshape(m, len(sel)),  # stored [m, p]
        "w": tr.w,
        "variables": {},
    }
    if mode == analysis.ENKF:
        rec["X5"] = tr.X5
        rec["X5_actual"] = X5_actual
    else:
        rec["w_actual"] = X5_actual
    return rec


def reproduce_from_pointlog(rec: dict):
    """Recompute the transform (EnKF) or weights (EnOI) from stored s and S."""
    m = rec["m"]
    S = np.asarray(rec["S"], dtype=float).reshape(m, -1).T
    s = np.asarray(rec["s"], dtype=float)
    tr = analysis.local_transform(S, s, rec["mode"], rec["scheme"], rec["alpha"],
                                  rec.get("mean_update", True))
    return tr.X5 if rec["mode"] == analysis.ENKF else tr.w
