import os
import textwrap

import numpy as np
import pytest

from ensda import geo, ioformats

NI, NJ, NK = 12, 9, 3
M = 8


def small_grid():
    lon = 140.0 + 2.0 * np.arange(NI)
    lat = -40.0 + 1.5 * np.arange(NJ)
    z = np.array([5.0, 50.0, 300.0])
    numlevels = np.full((NJ, NI), NK)
    numlevels[:, :2] = 0  # land strip on the west
    numlevels[0, 5] = 1
    depth = np.where(numlevels > 0, 100.0 * numlevels, 0.0)
    return geo.Grid(lon, lat, z, depth, numlevels, name="t-grid")


def write_case(root, mode="ENKF", m=M, seed=0, locrad=400.0, stride=1, extra_main="",
               slots=(), obs_rows=None, tem_rows=None, extra_types="", badbatches=""):
    """A small regional setup on disk: grid, ensemble/background, parameter files and
    CSV observations. Returns the main prm path."""
    root = str(root)
    rng = np.random.default_rng(seed)
    grid = small_grid()
    geo.save_grid(grid, os.path.join(root, "grid"))
    ens = os.path.join(root, "ens")
    os.makedirs(ens, exist_ok=True)
    jj, ii = np.meshgrid(np.arange(NJ), np.arange(NI), indexing="ij")
    for k in range(1, m + 1):
        a = rng.standard_normal(3)
        eta = 0.1 * (a[0] * np.sin(ii / 3.0) + a[1] * np.cos(jj / 2.0)) + 0.02 * rng.standard_normal((NJ, NI))
        temp = 15.0 + a[2] + np.stack([eta * (NK - kk) for kk in range(NK)])
        ioformats.save(ioformats.member_path(ens, k, "eta"), eta)
        ioformats.save(ioformats.member_path(ens, k, "temp"), temp)
        for s in slots:
            ioformats.save(ioformats.member_path(ens, k, "eta", s), eta + 0.01 * s)
    bg = os.path.join(root, "bg")
    os.makedirs(bg, exist_ok=True)
    ioformats.save(ioformats.bg_path(bg, "eta"), np.zeros((NJ, NI)))
    ioformats.save(ioformats.bg_path(bg, "temp"), np.full((NK, NJ, NI), 15.0))
    for s in slots:
        ioformats.save(ioformats.bg_path(bg, "eta", s), np.full((NJ, NI), 0.01 * s))
    obsdir = os.path.join(root, "obs")
    os.makedirs(obsdir, exist_ok=True)
    if obs_rows is None:
        obs_rows = [(147.3, -35.2, 0.12, 0.05, 0.1, 1), (147.4, -35.3, 0.08, 0.05, 0.2, 1),
                    (155.0, -31.0, -0.05, 0.05, 0.0, 2), (141.0, -35.0, 0.3, 0.05, 0.0, 3),
                    (190.0, -35.0, 0.1, 0.05, 0.0, 4)]
    with open(os.path.join(obsdir, "sla.csv"), "w") as f:
        f.write("lon,lat,value,std,time,batch\n")
        for r in obs_rows:
            f.write(",".join(str(v) for v in r) + "\n")
    if tem_rows is None:
        tem_rows = [(150.1, -36.1, 20.0, 15.5), (150.1, -36.1, 200.0, 15.2)]
    with open(os.path.join(obsdir, "tem.csv"), "w") as f:
        f.write("lon,lat,depth,value,instrument\n")
        for r in tem_rows:
            f.write(",".join(str(v) for v in r) + ",ARGO\n")
    files = {
        "main.prm": f"""
            MODE = {mode}
            MODEL = model.prm
            GRID = grid.prm
            OBSTYPES = obstypes.prm
            OBS = obs.prm
            DATE = 100.5 days since 2000-01-01
            ENSDIR = ens
            BGDIR = bg
            LOCRAD = {locrad}
            STRIDE = {stride}
            INFLATION = 1.0 PLAIN
            POINTLOG 5 4
            {extra_main}
            {badbatches}
        """,
        "model.prm": """
            NAME = toy
            VAR = eta
            VAR = temp
        """,
        "grid.prm": """
            NAME = t-grid
            VTYPE = z
            DATA = grid
        """,
        "obstypes.prm": f"""
            NAME = SLA
            VAR = eta
            ISSURFACE = yes
            HFUNCTION = standard
            MINVALUE = -1
            MAXVALUE = 1
            {extra_types}

            NAME = TEM
            VAR = temp
            ISSURFACE = no
            HFUNCTION = standard
            RFACTOR = 2
        """,
        "obs.prm": """
            PRODUCT = ALT
            READER = csv
            TYPE = SLA
            FILE = obs/sla.csv

            PRODUCT = ARGO
            READER = csv
            TYPE = TEM
            FILE = obs/tem.csv
            ERROR_STD = 0.3
        """,
    }
    for name, text in files.items():
        with open(os.path.join(root, name), "w") as f:
            f.write(textwrap.dedent(text))
    return os.path.join(root, "main.prm")


@pytest.fixture
def case(tmp_path):
    return write_case(tmp_path), tmp_path
