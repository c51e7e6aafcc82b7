"""The prep stage: read measurements, set errors and offsets, bin asynchronous
observations into time slots, superob and mark bad batches."""
from __future__ import annotations

import csv
import glob
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from . import geo, ioformats
from .ioformats import STATUS_BAD, STATUS_GOOD, STATUS_OUTSIDE, Observation
from .prm import DaConfig, ErrorStdEntry, ObsDataSection, ObsTypeSpec

log = logging.getLogger(__name__)

READERS = ("csv",)
BADBATCH_FILE = "badbatches.out"


@dataclass
class Measurement(Observation):
    """An observation with the file and line it was read from."""

    source: str = ""
    line: int = 0


# --------------------------------------------------------------------------
# readers


def read_csv(path: str, section: ObsDataSection) -> list[Measurement]:
    """The built-in reader: CSV with columns lon, lat, value and optionally
    depth, std, time, instrument, batch."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        cols = {c.strip().lower(): c for c in (r.fieldnames or [])}
        for need in ("lon", "lat", "value"):
            if need not in cols:
                raise ValueError(f"{path}: missing column {need!r}")

        def get(row, name, default, conv=float):
            c = cols.get(name)
            if c is None or row[c] is None or row[c].strip() == "":
                return default
            return conv(row[c])

        for lineno, row in enumerate(r, start=2):
            out.append(Measurement(
                type=section.type, product=section.product,
                instrument=get(row, "instrument", section.product, str).strip(),
                batch=get(row, "batch", -1, lambda v: int(float(v))),
                lon=get(row, "lon", math.nan), lat=get(row, "lat", math.nan),
                depth=get(row, "depth", 0.0), value=get(row, "value", math.nan),
                std=get(row, "std", math.nan), time=get(row, "time", math.nan),
                source=path, line=lineno))
    return out


def expand_files(patterns, resolve=lambda p: p) -> list[str]:
    """Expand wildcards; missing files are logged and skipped."""
    files = []
    for pat in patterns:
        hits = sorted(glob.glob(resolve(pat)))
        if not hits:
            log.warning("missing observation file %s", pat)
        files.extend(hits)
    return files


# --------------------------------------------------------------------------
# errors, offsets, slots


def combine_std(sigma: float, op: str, now: float) -> float:
    if not now > 0:
        raise ValueError(f"error std must be positive, got {now}")
    if op == "EQUAL":
        return now
    if op == "PLUS":
        return math.sqrt(sigma * sigma + now * now)
    if op == "MULT":
        return sigma * now
    if op == "MIN":
        return max(sigma, now)
    if op == "MAX":
        return min(sigma, now)
    raise ValueError(f"unknown error operation {op!r}")


def _field_at(grid, arr, o: Observation, issurface: bool) -> float:
    if issurface:
        return geo.h_surface(grid, arr.reshape(grid.nj, grid.ni), o.fi, o.fj)
    return geo.h_volume(grid, arr.reshape(grid.nk, grid.nj, grid.ni), o.fi, o.fj, o.fk)


def apply_error_std(obs, entries: list[ErrorStdEntry], grid=None, issurface=True,
                    resolve=lambda p: p):
    """Apply ERROR_STD entries in order to each observation's running std.

    File entries are interpolated at the observation location.
    """
    fields = {}
    for e in entries:
        if e.file is not None and e.file not in fields:
            fields[e.file] = ioformats.load(ioformats.resolve_var(resolve(e.file), e.varname)).astype(float)
    for o in obs:
        if o.status == STATUS_OUTSIDE:
            continue
        s = o.std
        for e in entries:
            now = e.value if e.file is None else _field_at(grid, fields[e.file], o, issurface)
            s = combine_std(s, e.op, now)
        o.std = s
    return obs


def apply_offset(obs, offset_field, grid, issurface: bool = True):
    """Add the interpolated offset field (e.g. a mean dynamic topography) to the values."""
    arr = np.asarray(offset_field, dtype=float)
    expect = grid.nj * grid.ni * (1 if issurface else grid.nk)
    if arr.size != expect:
        raise ValueError(f"offset field has {arr.size} values, expected {expect}")
    for o in obs:
        if o.good:
            v = _field_at(grid, arr, o, issurface)
            if not np.isfinite(v):
                raise ValueError(f"offset undefined at observation {o.id}")
            o.value += v
    return obs


def assign_slot(obs_time: float, assim_date: float, interval: float | None) -> int:
    """Time slot of an observation; slot 0 is centred at the assimilation date."""
    if interval is None:
        return 0
    if not interval > 0:
        raise ValueError("async interval must be positive")
    return int(math.floor((obs_time - assim_date) / interval + 0.5))


# --------------------------------------------------------------------------
# location and quality checks


def locate(o: Observation, ot: ObsTypeSpec, grid: geo.Grid) -> None:
    """Fill fractional indices and set OUTSIDE/BAD status for one observation."""
    if not (ot.xmin <= o.lon <= ot.xmax and ot.ymin <= o.lat <= ot.ymax
            and ot.zmin <= o.depth <= ot.zmax):
        o.status = STATUS_OUTSIDE
        return
    fij = geo.xy_to_fij(grid, o.lon, o.lat)
    if fij is None:
        o.status = STATUS_OUTSIDE
        return
    o.fi, o.fj = fij
    o.fk = 0.0 if ot.issurface else geo.z_to_fk(grid, o.depth)
    if not (ot.minvalue <= o.value <= ot.maxvalue) or not np.isfinite(o.value):
        o.status = STATUS_BAD
        return
    try:
        geo.interp_weights(grid, o.fi, o.fj, None if ot.issurface else o.fk)
    except geo.ObsOnLand:
        o.status = STATUS_BAD


# --------------------------------------------------------------------------
# superobing


def _key(o: Observation, sob: int):
    return (o.type, o.slot, math.floor(o.fi / sob), math.floor(o.fj / sob), math.floor(o.fk + 0.5))


def _common(vals, mixed):
    return vals[0] if all(v == vals[0] for v in vals) else mixed


def superob(obs, grid: geo.Grid, sobstride: int, consider_subgrid: bool = False):
    """Merge GOOD observations sharing type, slot, superobing cell and layer.

    Returns the superobservations; each merged input gets its ``sob`` field
    set to the id of its superobservation. ``sobstride = 0`` passes GOOD
    observations through unchanged.
    """
    if sobstride < 0:
        raise ValueError("SOBSTRIDE must be >= 0")
    good = [o for o in obs if o.good]
    if sobstride == 0:
        out = []
        for k, o in enumerate(good):
            o.sob = k
            out.append(replace(_as_obs(o), id=k, sob=-1))
        return out
    groups = defaultdict(list)
    for o in good:
        groups[_key(o, sobstride)].append(o)
    out = []
    for k, key in enumerate(sorted(groups)):
        members = groups[key]
        for o in members:
            o.sob = k
        out.append(_merge(k, members, grid, consider_subgrid))
    return out


def _as_obs(o) -> Observation:
    return Observation(**{f: getattr(o, f) for f in ioformats.OBS_COLUMNS})


def _merge(k: int, members, grid, consider_subgrid) -> Observation:
    if len(members) == 1:
        return replace(_as_obs(members[0]), id=k, sob=-1, n_merged=1)
    std = np.array([o.std for o in members])
    w = 1.0 / std**2
    W = w.sum()

    def avg(attr):
        return float(np.dot(w, [getattr(o, attr) for o in members]) / W)

    fi, fj = avg("fi"), avg("fj")
    lon, lat = geo.fij_to_xy(grid, fi, fj)
    sigma = math.sqrt(1.0 / W)
    if consider_subgrid:
        sigma = max(sigma, float(np.std([o.value for o in members], ddof=1)))
    times = [o.time for o in members]
    time = avg("time") if all(np.isfinite(times)) else math.nan
    return Observation(
        id=k, type=members[0].type,
        product=_common([o.product for o in members], ioformats.MIXED),
        instrument=_common([o.instrument for o in members], ioformats.MIXED),
        batch=_common([o.batch for o in members], -1),
        lon=lon, lat=lat, depth=avg("depth"), fi=fi, fj=fj, fk=avg("fk"),
        value=avg("value"), std=sigma, time=time, status=STATUS_GOOD,
        slot=members[0].slot, n_merged=len(members), sob=-1)


def describe_superob(orig, sob_id: int) -> str:
    rows = [o for o in orig if o.sob == sob_id]
    lines = [f"superobservation {sob_id}: {len(rows)} observations"]
    for o in rows:
        lines.append(f"  id={o.id} type={o.type} product={o.product} instrument={o.instrument} "
                     f"lon={o.lon:.6g} lat={o.lat:.6g} depth={o.depth:.6g} value={o.value:.6g} "
                     f"std={o.std:.6g} time={o.time:.6g}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# bad batches


def read_badbatches(path: str) -> list[tuple[str, int, float, float, int]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            rows.append((tok[0], int(tok[1]), float(tok[2]), float(tok[3]), int(tok[4])))
    return rows


def mark_bad_batches(obs, report):
    bad = {(r[0], int(r[1])) for r in report}
    for o in obs:
        if (o.type, o.batch) in bad and o.status == STATUS_GOOD:
            o.status = STATUS_BAD
    return obs


# --------------------------------------------------------------------------
# the stage


@dataclass
class PrepResult:
    orig: list = field(default_factory=list)
    obs: list = field(default_factory=list)


def run_prep(cfg: DaConfig, grid: geo.Grid, no_superob: bool = False,
             consider_subgrid: bool = False, badbatch_file: str | None = None) -> PrepResult:
    orig = []
    for sec in cfg.obsdatacfg or []:
        if sec.reader not in READERS:
            raise ValueError(f"unknown reader {sec.reader!r} (available: {', '.join(READERS)})")
        ot = cfg.obstype(sec.type)
        batch = []
        for path in expand_files(sec.files, cfg.path):
            batch.extend(read_csv(path, sec))
        log.info("%s/%s: %d observations read", sec.product, sec.type, len(batch))
        for o in batch:
            o.id = len(orig)
            orig.append(o)
            locate(o, ot, grid)
        apply_error_std(batch, sec.error_std, grid, ot.issurface, cfg.path)
        for o in batch:
            if o.good and not (o.std > 0):
                o.status = STATUS_BAD
        if ot.offset is not None:
            off = ioformats.load(ioformats.resolve_var(cfg.path(ot.offset[0]), ot.offset[1]))
            apply_offset(batch, off, grid, ot.issurface)
        for o in batch:
            o.slot = assign_slot(o.time, cfg.date, ot.async_) if o.good else 0
    if badbatch_file and os.path.exists(badbatch_file):
        log.info("marking bad batches from %s", badbatch_file)
        mark_bad_batches(orig, read_badbatches(badbatch_file))
    stride = 0 if no_superob else cfg.sobstride
    obs = superob(orig, grid, stride, consider_subgrid)
    log.info("%d observations, %d after superobing", len(orig), len(obs))
    return PrepResult(orig, obs)
