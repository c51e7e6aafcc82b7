"""On-disk formats: the EKC1 array container, observation tables, transform
files, point logs and the ensemble/background file naming convention.

EKC1 layout::

    b"EKC1" | uint32 little-endian header length | UTF-8 JSON header | payload

The header always carries ``dims`` and ``dtype`` (fixed to ``"f32"``); an
optional ``attrs`` mapping holds metadata. The payload is little-endian
float32 in row-major order.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

MAGIC = b"EKC1"
EXT = ".ekc"
MIXED = "-1"  # product/instrument of a superobservation merged from different sources

STATUS_GOOD = "GOOD"
STATUS_BAD = "BAD"
STATUS_OUTSIDE = "OUTSIDE"


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# array container


@dataclass
class ArrayFile:
    dims: list[int]
    data: np.ndarray  # float32, shape == dims
    attrs: dict[str, Any] = field(default_factory=dict)


def _header(dims, attrs) -> bytes:
    hdr: dict[str, Any] = {"dims": [int(d) for d in dims], "dtype": "f32"}
    if attrs:
        hdr["attrs"] = attrs
    return json.dumps(hdr, separators=(",", ":")).encode("utf-8")


def encode_array(dims, payload, attrs: dict | None = None) -> bytes:
    dims = [int(d) for d in dims]
    if not dims:
        raise FormatError("dims must be nonempty")
    if any(d <= 0 for d in dims):
        raise FormatError("empty dimension")
    data = np.ascontiguousarray(np.asarray(payload, dtype="<f4"))
    if data.size != math.prod(dims):
        raise FormatError(f"dimension mismatch: dims {dims} but {data.size} values")
    hdr = _header(dims, attrs)
    return MAGIC + struct.pack("<I", len(hdr)) + hdr + data.tobytes(order="C")


def decode_array(buf: bytes, name: str = "<buffer>") -> ArrayFile:
    if buf[:4] != MAGIC:
        raise FormatError(f"{name}: magic mismatch (not an EKC1 file)")
    if len(buf) < 8:
        raise FormatError(f"{name}: truncated header")
    (hlen,) = struct.unpack("<I", buf[4:8])
    if len(buf) < 8 + hlen:
        raise FormatError(f"{name}: truncated header")
    hdr = json.loads(buf[8:8 + hlen].decode("utf-8"))
    if hdr.get("dtype") != "f32":
        raise FormatError(f"{name}: unsupported dtype {hdr.get('dtype')!r}")
    dims = [int(d) for d in hdr["dims"]]
    nbytes = math.prod(dims) * 4
    payload = buf[8 + hlen:]
    if len(payload) != nbytes:
        raise FormatError(f"{name}: truncated payload ({len(payload)} of {nbytes} bytes)")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return ArrayFile(dims, data, hdr.get("attrs", {}))


def write_array(path: str, dims, payload, attrs: dict | None = None) -> None:
    buf = encode_array(dims, payload, attrs)
    with open(path, "wb") as f:
        f.write(buf)


def read_array(path: str) -> ArrayFile:
    with open(path, "rb") as f:
        return decode_array(f.read(), path)


def save(path: str, arr, attrs: dict | None = None) -> None:
    """Write an ndarray using its own shape as dims."""
    arr = np.asarray(arr)
    write_array(path, arr.shape, arr, attrs)


def load(path: str) -> np.ndarray:
    return read_array(path).data


def resolve_var(file: str, varname: str) -> str:
    """Path of variable `varname` referenced as ``<file> <varname>``.

    A directory holds one ``<varname>.ekc`` per variable; a plain file is
    taken as the variable itself.
    """
    if os.path.isdir(file):
        return os.path.join(file, varname + EXT)
    return file


# --------------------------------------------------------------------------
# naming conventions


def _slot_suffix(slot: int | None) -> str:
    return "" if slot is None else f"_{int(slot)}"


def member_path(dirname: str, member: int, var: str, slot: int | None = None) -> str:
    if member < 1:
        raise ValueError("member index starts at 1")
    return os.path.join(dirname, f"mem{member:03d}_{var}{_slot_suffix(slot)}{EXT}")


def bg_path(dirname: str, var: str, slot: int | None = None) -> str:
    return os.path.join(dirname, f"bg_{var}{_slot_suffix(slot)}{EXT}")


def pointlog_path(dirname: str, i: int, j: int) -> str:
    return os.path.join(dirname, f"pointlog_{i},{j}.json")


def count_members(dirname: str, var: str) -> int:
    m = 0
    while os.path.exists(member_path(dirname, m + 1, var)):
        m += 1
    return m


# --------------------------------------------------------------------------
# observation tables


@dataclass
class Observation:
    """One row of an observation table (original or superobserved)."""

    id: int = 0
    type: str = ""
    product: str = ""
    instrument: str = ""
    batch: int = -1
    lon: float = math.nan
    lat: float = math.nan
    depth: float = 0.0
    fi: float = math.nan
    fj: float = math.nan
    fk: float = 0.0
    value: float = math.nan
    std: float = math.nan
    time: float = math.nan
    status: str = STATUS_GOOD
    slot: int = 0
    n_merged: int = 1
    sob: int = -1  # superobservation this original observation went into

    @property
    def good(self) -> bool:
        return self.status == STATUS_GOOD


OBS_COLUMNS = [f.name for f in fields(Observation)]
_INT_COLS = {"id", "batch", "slot", "n_merged", "sob"}
_STR_COLS = {"type", "product", "instrument", "status"}


def _cell(name: str, val) -> str:
    if name in _STR_COLS:
        return str(val)
    if name in _INT_COLS:
        return str(int(val))
    return repr(float(val))


def write_obs(path: str, obs: list[Observation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, quoting=csv.QUOTE_MINIMAL)
        w.writerow(OBS_COLUMNS)
        for o in obs:
            w.writerow([_cell(c, getattr(o, c)) for c in OBS_COLUMNS])


def read_obs(path: str) -> list[Observation]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        missing = set(OBS_COLUMNS) - set(r.fieldnames or [])
        if missing:
            raise FormatError(f"{path}: missing columns {sorted(missing)}")
        for row in r:
            kw: dict[str, Any] = {}
            for c in OBS_COLUMNS:
                v = row[c]
                kw[c] = v if c in _STR_COLS else int(v) if c in _INT_COLS else float(v)
            out.append(Observation(**kw))
    return out


# --------------------------------------------------------------------------
# transforms


def write_transforms(path: str, tf) -> None:
    """Persist the node transforms of a :class:`~ensda.locality.TransformField`."""
    data = tf.X5 if tf.mode == "ENKF" else tf.w
    m = tf.m
    expect = (len(tf.jnodes), len(tf.inodes), m, m) if tf.mode == "ENKF" \
        else (len(tf.jnodes), len(tf.inodes), m)
    if data.shape != expect:
        raise FormatError(f"dimension mismatch: transforms {data.shape}, expected {expect}")
    attrs = {"mode": tf.mode, "stride": tf.stride, "ni": tf.ni, "nj": tf.nj,
             "inodes": [int(i) for i in tf.inodes], "jnodes": [int(j) for j in tf.jnodes]}
    write_array(path, data.shape, data, attrs)


def read_transforms(path: str):
    from .locality import TransformField

    af = read_array(path)
    a = af.attrs
    data = af.data.astype(np.float64)
    kw = dict(mode=a["mode"], stride=a["stride"], ni=a["ni"], nj=a["nj"],
              inodes=np.asarray(a["inodes"]), jnodes=np.asarray(a["jnodes"]))
    if a["mode"] == "ENKF":
        return TransformField(X5=data, **kw)
    return TransformField(w=data, **kw)


# --------------------------------------------------------------------------
# point logs


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_pointlog(path: str, record: dict) -> None:
    p = len(record.get("obs_ids", []))
    m = record.get("m")
    S = np.asarray(record.get("S", np.zeros((m or 0, 0))))
    if S.size and S.shape != (m, p):
        raise FormatError(f"dimension mismatch: S {S.shape}, expected {(m, p)}")
    if len(record.get("s", [])) != p:
        raise FormatError("dimension mismatch: s and obs_ids differ in length")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(record), f, indent=1, allow_nan=True)


def read_pointlog(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
