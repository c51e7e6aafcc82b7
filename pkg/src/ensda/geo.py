"""Rectangular lon/lat grids with z layers; coordinate mapping, distances and
the standard observation functions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ioformats

EARTH_RADIUS_KM = 6371.0


class ObsOnLand(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """A rectangular grid aligned with longitude and latitude.

    ``lon``/``lat`` are node coordinates (possibly non-equidistant), ``z`` the
    depths of layer centres. ``numlevels[j, i]`` is the number of wet layers
    in a column; zero marks land.
    """

    lon: np.ndarray
    lat: np.ndarray
    z: np.ndarray
    depth: np.ndarray
    numlevels: np.ndarray
    name: str = "grid"
    periodic: bool = field(init=False)

    def __post_init__(self):
        lon = np.asarray(self.lon, dtype=float)
        lat = np.asarray(self.lat, dtype=float)
        z = np.asarray(self.z, dtype=float).reshape(-1)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=float))
        object.__setattr__(self, "numlevels", np.asarray(self.numlevels).astype(int))
        if lon.ndim != 1 or lat.ndim != 1 or lon.size < 1 or lat.size < 1:
            raise ValueError("lon and lat must be nonempty 1D arrays")
        for name, c in (("lon", lon), ("lat", lat)):
            d = np.diff(c)
            if c.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError(f"{name} must be strictly monotonic")
        if z.size < 1 or (z.size > 1 and not np.all(np.diff(z) > 0)):
            raise ValueError("z must be strictly increasing")
        if self.numlevels.shape != (lat.size, lon.size) or self.depth.shape != self.numlevels.shape:
            raise ValueError(f"depth/numlevels must have shape {(lat.size, lon.size)}")
        if self.numlevels.min() < 0 or self.numlevels.max() > z.size:
            raise ValueError("numlevels out of range [0, nk]")
        object.__setattr__(self, "periodic", _detect_periodic(lon))

    @property
    def ni(self) -> int:
        return self.lon.size

    @property
    def nj(self) -> int:
        return self.lat.size

    @property
    def nk(self) -> int:
        return self.z.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.nj, self.ni

    def wet(self, j: int, i: int, k: int = 0) -> bool:
        return self.numlevels[j, i] > k


def _detect_periodic(lon: np.ndarray) -> bool:
    if lon.size < 3:
        return False
    span = abs(lon[-1] - lon[0])
    dx = max(abs(lon[1] - lon[0]), abs(lon[-1] - lon[-2]))
    return abs(360.0 - span) <= dx * (1.0 + 1e-9)


def _locate(c: np.ndarray, x: float) -> float | None:
    """Fractional index of `x` in monotonic coordinate array `c`, or None."""
    n = c.size
    if n == 1:
        return 0.0 if abs(x - c[0]) <= 1e-9 else None
    if c[-1] < c[0]:
        f = _locate(c[::-1], x)
        return None if f is None else (n - 1) - f
    if x < c[0] or x > c[-1]:
        return None
    k = int(np.searchsorted(c, x, side="right")) - 1
    if k >= n - 1:
        return float(n - 1)
    return k + (x - c[k]) / (c[k + 1] - c[k])


def _locate_periodic(c: np.ndarray, x: float) -> float:
    """Fractional index on an ascending periodic axis; the wrap cell is (n-1, n)."""
    n = c.size
    x = c[0] + (x - c[0]) % 360.0
    if x <= c[-1]:
        return _locate(c, x)
    return (n - 1) + (x - c[-1]) / (c[0] + 360.0 - c[-1])


def xy_to_fij(grid: Grid, lon: float, lat: float) -> tuple[float, float] | None:
    """Fractional grid indices of a point, or None when it is outside the grid."""
    fj = _locate(grid.lat, lat)
    if fj is None:
        return None
    lons = grid.lon
    n = lons.size
    if grid.periodic:
        if lons[-1] > lons[0]:
            return float(_locate_periodic(lons, lon)), fj
        fi = (n - 1) - _locate_periodic(lons[::-1], lon)
        return float(fi + n if fi < 0 else fi), fj
    for x in (lon, lon - 360.0, lon + 360.0):
        fi = _locate(lons, x)
        if fi is not None:
            return fi, fj
    return None


def _interp_coord(c: np.ndarray, f: float, periodic: bool) -> float:
    n = c.size
    if n == 1:
        return float(c[0])
    if periodic and f > n - 1:
        step = (c[0] + 360.0 if c[-1] > c[0] else c[0] - 360.0) - c[-1]
        return float(c[-1] + (f - (n - 1)) * step)
    k = min(int(math.floor(f)), n - 2)
    return float(c[k] + (f - k) * (c[k + 1] - c[k]))


def fij_to_xy(grid: Grid, fi: float, fj: float) -> tuple[float, float]:
    return (_interp_coord(grid.lon, fi, grid.periodic),
            _interp_coord(grid.lat, fj, False))


def z_to_fk(grid: Grid, depth: float) -> float:
    """Fractional layer index, clamped to [0, nk - 1]."""
    z = grid.z
    if z.size == 1 or depth <= z[0]:
        return 0.0
    if depth >= z[-1]:
        return float(z.size - 1)
    k = int(np.searchsorted(z, depth, side="right")) - 1
    return k + (depth - z[k]) / (z[k + 1] - z[k])


def fk_to_z(grid: Grid, fk: float) -> float:
    return _interp_coord(grid.z, fk, False)


def great_circle_km(lon1, lat1, lon2, lat2):
    """Great-circle distance on a sphere of radius 6371 km (haversine form)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


# --------------------------------------------------------------------------
# interpolation


def _corners(n: int, f: float, periodic: bool) -> tuple[int, int, float]:
    if n == 1:
        return 0, 0, 0.0
    k = int(math.floor(f))
    if periodic and k >= n - 1:
        return n - 1, 0, f - (n - 1)
    k = min(max(k, 0), n - 2)
    return k, k + 1, f - k


def _weights(grid: Grid, fi: float, fj: float):
    i0, i1, wi = _corners(grid.ni, fi, grid.periodic)
    j0, j1, wj = _corners(grid.nj, fj, False)
    return ((j0, i0, (1 - wi) * (1 - wj)), (j0, i1, wi * (1 - wj)),
            (j1, i0, (1 - wi) * wj), (j1, i1, wi * wj))


def h_surface(grid: Grid, field2d: np.ndarray, fi: float, fj: float) -> float:
    """Bilinear interpolation from the cell corners, skipping land corners."""
    num = den = 0.0
    for j, i, w in _weights(grid, fi, fj):
        if w != 0.0 and grid.numlevels[j, i] > 0:
            num += w * field2d[j, i]
            den += w
    if den == 0.0:
        raise ObsOnLand(f"observation on land at (fi, fj) = ({fi}, {fj})")
    return num / den


def h_volume(grid: Grid, field3d: np.ndarray, fi: float, fj: float, fk: float) -> float:
    """Trilinear interpolation, skipping corners below the local bottom."""
    k0, k1, wk = _corners(grid.nk, fk, False)
    num = den = 0.0
    for k, wz in ((k0, 1.0 - wk), (k1, wk)):
        if wz == 0.0:
            continue
        for j, i, w in _weights(grid, fi, fj):
            ww = w * wz
            if ww != 0.0 and grid.numlevels[j, i] > k:
                num += ww * field3d[k, j, i]
                den += ww
    if den == 0.0:
        raise ObsOnLand(f"observation on land at (fi, fj, fk) = ({fi}, {fj}, {fk})")
    return num / den


def interp_weights(grid: Grid, fi: float, fj: float, fk: float | None = None):
    """Renormalised interpolation stencil as (indices, weights).

    Indices are (j, i) for surface and (k, j, i) for volume interpolation.
    Equivalent to :func:`h_surface`/:func:`h_volume` but reusable across many
    fields (e.g. all ensemble members at once).
    """
    idx, ws = [], []
    if fk is None:
        for j, i, w in _weights(grid, fi, fj):
            if w != 0.0 and grid.numlevels[j, i] > 0:
                idx.append((j, i))
                ws.append(w)
    else:
        k0, k1, wk = _corners(grid.nk, fk, False)
        for k, wz in ((k0, 1.0 - wk), (k1, wk)):
            if wz == 0.0:
                continue
            for j, i, w in _weights(grid, fi, fj):
                if w * wz != 0.0 and grid.numlevels[j, i] > k:
                    idx.append((k, j, i))
                    ws.append(w * wz)
    if not ws:
        raise ObsOnLand(f"observation on land at (fi, fj, fk) = ({fi}, {fj}, {fk})")
    ws = np.asarray(ws)
    return tuple(np.asarray(idx).T), ws / ws.sum()


# --------------------------------------------------------------------------
# I/O


def load_grid(gcfg, resolve=lambda p: p) -> Grid:
    """Build a :class:`Grid` from a grid parameter block.

    ``DATA`` names a directory holding one EKC1 array per variable.
    """
    data = resolve(gcfg.data)

    def get(var):
        return ioformats.load(ioformats.resolve_var(data, var)).astype(np.float64)

    lon = get(gcfg.xvarname).reshape(-1)
    lat = get(gcfg.yvarname).reshape(-1)
    z = get(gcfg.zvarname).reshape(-1)
    depth = get(gcfg.depthvarname)
    numlevels = np.rint(get(gcfg.numlevelsvarname)).astype(int)
    return Grid(lon, lat, z, depth, numlevels, name=gcfg.name)


def save_grid(grid: Grid, dirname: str, names=("lon", "lat", "z", "depth", "numlevels")) -> None:
    import os

    os.makedirs(dirname, exist_ok=True)
    for name, arr in zip(names, (grid.lon, grid.lat, grid.z, grid.depth, grid.numlevels)):
        ioformats.save(os.path.join(dirname, name + ioformats.EXT), np.asarray(arr, dtype=float))
