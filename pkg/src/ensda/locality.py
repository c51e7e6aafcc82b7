"""Horizontal localisation: the multi-scale polynomial taper, local observation
search, and the stride-node transform field with bilinear interpolation."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import analysis, geo


@dataclass(frozen=True)
class TaperSpec:
    radii: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        weights = tuple(float(w) for w in self.weights)
        if not radii or len(radii) != len(weights):
            raise ValueError("need one weight per support radius")
        if any(not r > 0 for r in radii):
            raise ValueError("support radii must be positive")
        if abs(sum(weights) - 1.0) >= 1e-12:
            raise ValueError("taper weights must sum to 1")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_lists(cls, radii, weights=None) -> "TaperSpec":
        radii = list(radii)
        if weights is None:
            weights = [1.0] * len(radii)
        tot = float(sum(weights))
        return cls(tuple(radii), tuple(w / tot for w in weights))

    @property
    def max_radius(self) -> float:
        return max(self.radii)


def gc_f0(x):
    """Fifth-order piecewise rational taper, support [0, 2]."""
    x = np.abs(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    a = x <= 1.0
    b = (x > 1.0) & (x < 2.0)
    xa = x[a]
    out[a] = 1.0 + xa**2 * (-5.0 / 3.0 + xa * (5.0 / 8.0 + xa * (0.5 - 0.25 * xa)))
    xb = x[b]
    out[b] = (-2.0 / 3.0 / xb + 4.0
              + xb * (-5.0 + xb * (5.0 / 3.0 + xb * (5.0 / 8.0 + xb * (-0.5 + xb / 12.0)))))
    return out if out.ndim else float(out)


def taper(r_km, spec: TaperSpec):
    """Localisation coefficient at distance ``r_km``: sum_i w_i f0(2 r / R_i)."""
    r = np.asarray(r_km, dtype=float)
    f = sum(w * gc_f0(2.0 * r / R) for R, w in zip(spec.radii, spec.weights))
    f = np.clip(f, 0.0, 1.0)
    return f if np.ndim(f) else float(f)


# --------------------------------------------------------------------------
# local observation search


def _unit_xyz(lon, lat):
    lo, la = np.radians(lon), np.radians(lat)
    return np.column_stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)])


class ObsIndex:
    """Observation locations with per-observation support radius.

    ``use_tree`` enables a k-d tree on unit-sphere coordinates; candidates are
    then filtered by the same exact great-circle test as the brute-force path,
    so both give identical selections.
    """

    def __init__(self, lon, lat, radius_km, use_tree: bool = True):
        self.lon = np.asarray(lon, dtype=float).reshape(-1)
        self.lat = np.asarray(lat, dtype=float).reshape(-1)
        self.radius = np.broadcast_to(np.asarray(radius_km, dtype=float), self.lon.shape).copy()
        self.tree = None
        if use_tree and self.lon.size:
            self.tree = cKDTree(_unit_xyz(self.lon, self.lat))
        self.rmax = float(self.radius.max()) if self.lon.size else 0.0

    def __len__(self):
        return self.lon.size

    def query(self, lon: float, lat: float) -> tuple[np.ndarray, np.ndarray]:
        """Indices (ascending) and distances of observations within their radius."""
        if not self.lon.size:
            return np.zeros(0, dtype=int), np.zeros(0)
        if self.tree is None:
            cand = np.arange(self.lon.size)
        else:
            ang = min(self.rmax / geo.EARTH_RADIUS_KM, np.pi)
            chord = 2.0 * np.sin(ang / 2.0) * (1.0 + 1e-9) + 1e-12
            cand = np.sort(np.asarray(self.tree.query_ball_point(_unit_xyz(lon, lat)[0], chord),
                                      dtype=int))
        d = np.atleast_1d(geo.great_circle_km(lon, lat, self.lon[cand], self.lat[cand]))
        keep = d < self.radius[cand]
        return cand[keep], d[keep]


def select_local_obs(index: ObsIndex, lon: float, lat: float, specs, spec_of) -> tuple[np.ndarray, np.ndarray]:
    """Observations with positive taper at (lon, lat) and their coefficients.

    ``specs`` is a sequence of :class:`TaperSpec`; ``spec_of[o]`` indexes the
    spec of observation ``o``.
    """
    idx, d = index.query(lon, lat)
    if not idx.size:
        return idx, d
    spec_of = np.asarray(spec_of, dtype=int)
    f = np.empty(idx.size)
    for t in np.unique(spec_of[idx]):
        sel = spec_of[idx] == t
        f[sel] = taper(d[sel], specs[t])
    keep = f > 0.0
    return idx[keep], f[keep]


# --------------------------------------------------------------------------
# transform field


def stride_nodes(n: int, stride: int) -> np.ndarray:
    """Node indices 0, stride, 2 stride, ... with the last one clamped to n - 1."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    nodes = list(range(0, n, stride))
    if nodes[-1] != n - 1:
        nodes.append(n - 1)
    return np.asarray(nodes, dtype=int)


@dataclass
class TransformField:
    mode: str
    stride: int
    ni: int
    nj: int
    inodes: np.ndarray
    jnodes: np.ndarray
    X5: np.ndarray | None = None  # [nj_s, ni_s, m, m]
    w: np.ndarray | None = None  # [nj_s, ni_s, m]
    dfs: np.ndarray | None = None  # [nj_s, ni_s]
    srf: np.ndarray | None = None
    periodic: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return (self.X5 if self.mode == analysis.ENKF else self.w).shape[2]

    @property
    def data(self) -> np.ndarray:
        return self.X5 if self.mode == analysis.ENKF else self.w

    def node(self, js: int, is_: int) -> np.ndarray:
        return self.data[js, is_]


@dataclass
class ObsQuantities:
    """Untapered standardised quantities of all GOOD observations."""

    lon: np.ndarray
    lat: np.ndarray
    s: np.ndarray  # [p]
    S: np.ndarray  # [p, m]
    spec_of: np.ndarray  # taper spec index per observation
    type_of: np.ndarray | None = None  # obs type index, for per-type diagnostics
    ids: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.S.shape[1]


@dataclass
class LocalSetup:
    mode: str = analysis.ENKF
    scheme: str = analysis.DENKF
    alpha: float = 1.0
    mean_update: bool = True


def local_analysis(obsq: ObsQuantities, specs, index: ObsIndex, lon, lat, setup: LocalSetup):
    """Transform at one location plus the selected observations and their taper."""
    idx, f = select_local_obs(index, lon, lat, specs, obsq.spec_of)
    S = obsq.S[idx] * f[:, None]
    s = obsq.s[idx] * f
    tr = analysis.local_transform(S, s, setup.mode, setup.scheme, setup.alpha, setup.mean_update)
    return tr, idx, f, s, S


def build_transform_field(grid: geo.Grid, obsq: ObsQuantities, specs, stride: int,
                          setup: LocalSetup | None = None, jobs: int = 1,
                          use_tree: bool = True, ntypes: int = 0) -> TransformField:
    """Local transforms at stride nodes; land nodes get identity transforms.

    With ``ntypes > 0`` the per-type DFS and SRF are also computed from the
    subset of local observations of each type (``obsq.type_of``).
    """
    setup = setup or LocalSetup()
    m = obsq.m
    inodes = stride_nodes(grid.ni, stride)
    jnodes = stride_nodes(grid.nj, stride)
    radius = np.array([specs[t].max_radius for t in obsq.spec_of]) if len(obsq.s) else np.zeros(0)
    index = ObsIndex(obsq.lon, obsq.lat, radius, use_tree=use_tree)
    shape = (len(jnodes), len(inodes))
    enkf = setup.mode == analysis.ENKF
    data = np.zeros(shape + ((m, m) if enkf else (m,)))
    dfs = np.zeros(shape)
    srf = np.zeros(shape)
    dfs_t = np.zeros((ntypes,) + shape)
    srf_t = np.zeros((ntypes,) + shape)

    def do_row(js):
        j = jnodes[js]
        for is_, i in enumerate(inodes):
            if grid.numlevels[j, i] == 0:
                tr, idx = analysis.identity_transform(m, setup.mode), np.zeros(0, dtype=int)
            else:
                try:
                    tr, idx, _, _, S = local_analysis(obsq, specs, index, grid.lon[i], grid.lat[j], setup)
                except Exception as e:  # attach node coordinates
                    raise RuntimeError(f"local analysis failed at node (i={i}, j={j}): {e}") from e
                for t in range(ntypes):
                    sel = obsq.type_of[idx] == t
                    if sel.any():
                        St = S[sel]
                        dfs_t[t, js, is_], srf_t[t, js, is_] = analysis.dfs_srf(analysis.compute_gain(St), St)
            data[js, is_] = tr.X5 if enkf else tr.w
            dfs[js, is_], srf[js, is_] = tr.dfs, tr.srf

    if jobs > 1 and len(jnodes) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(do_row, range(len(jnodes))))
    else:
        for js in range(len(jnodes)):
            do_row(js)
    tf = TransformField(setup.mode, stride, grid.ni, grid.nj, inodes, jnodes, dfs=dfs, srf=srf,
                        periodic=grid.periodic)
    if enkf:
        tf.X5 = data
    else:
        tf.w = data
    if ntypes:
        tf.extra["dfs_types"] = dfs_t
        tf.extra["srf_types"] = srf_t
    return tf


# --------------------------------------------------------------------------
# interpolation


def _axis_weights(nodes: np.ndarray, f: float, n: int, periodic: bool):
    """(node index, weight) pairs with nonzero weight for fractional index f."""
    if len(nodes) == 1:
        return [(0, 1.0)]
    last = nodes[-1]
    if periodic and f > last:
        # wrap cell between the last node and node 0 (at index n)
        t = (f - last) / (n - last)
        pairs = [(len(nodes) - 1, 1.0 - t), (0, t)]
    else:
        f = min(max(f, 0.0), float(last))
        k = int(np.searchsorted(nodes, f, side="right")) - 1
        k = min(k, len(nodes) - 2)
        t = (f - nodes[k]) / (nodes[k + 1] - nodes[k])
        pairs = [(k, 1.0 - t), (k + 1, t)]
    return [(k, w) for k, w in pairs if w != 0.0]


def interp_transform(tf: TransformField, fi: float, fj: float) -> np.ndarray:
    """Element-wise bilinear interpolation of the node transforms at (fi, fj).

    A query exactly on a node returns that node's transform unchanged.
    """
    wi = _axis_weights(tf.inodes, fi, tf.ni, tf.periodic)
    wj = _axis_weights(tf.jnodes, fj, tf.nj, False)
    data = tf.data
    terms = [(a * b, data[js, is_]) for js, b in wj for is_, a in wi]
    if len(terms) == 1:
        return terms[0][1].copy()
    out = terms[0][0] * terms[0][1]
    for w, arr in terms[1:]:
        out = out + w * arr
    return out


def interp_row(tf: TransformField, j: int) -> np.ndarray:
    """Interpolated transforms for every cell of grid row ``j``: [ni, ...]."""
    return np.stack([interp_transform(tf, float(i), float(j)) for i in range(tf.ni)])
