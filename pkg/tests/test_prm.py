import math

import pytest
from hypothesis import given, settings, strategies as st

from ensda import prm

MAIN = """
MODE = EnKF
MODEL = model.prm
GRID = grid.prm
OBSTYPES = obstypes.prm
OBS = obs.prm
DATE = 6565.5 days since 1990-01-01
ENSDIR = ensemble
LOCRAD = 200
"""


def test_main_defaults():
    c = prm.parse_main(MAIN)
    assert c.mode == "ENKF" and c.date == 6565.5 and c.date_units == "days since 1990-01-01"
    assert c.scheme == "DENKF" and c.alpha == 1.0 and c.kfactor is None and c.rfactor == 1.0
    assert (c.stride, c.sobstride, c.fieldbuffersize) == (1, 1, 1)
    assert c.inflation == prm.Inflation(1.0, 0.5, False)
    assert c.exitaction == "BACKTRACE"
    assert c.locrad == [200.0] and c.locweight == [1.0]


def test_main_full():
    c = prm.parse_main(MAIN + """
SCHEME = etkf
ALPHA = 0.5
KFACTOR = 2
RFACTOR = 1.5
STRIDE = 3
SOBSTRIDE = 0
INFLATION = 1.06 0.5
ZSTATINTS = [0 50] [50 500]
REGION Tasman 145 175 -45 -30 [0 100]
POINTLOG 10 20
POINTLOG 1 2 t-grid
EXITACTION = SEGFAULT
""")
    assert c.scheme == "ETKF" and c.alpha == 0.5 and c.kfactor == 2.0 and c.rfactor == 1.5
    assert c.stride == 3 and c.sobstride == 0
    assert c.inflation == prm.Inflation(1.06, 0.5, False)
    assert c.zstatints == [(0, 50), (50, 500)]
    assert c.regions == [prm.Region("Tasman", 145, 175, -45, -30, [(0, 100)])]
    assert c.pointlogs == [(10, 20), (1, 2)]
    assert c.exitaction == "SEGFAULT"


def test_kfactor_nan_disables():
    assert prm.parse_main(MAIN + "KFACTOR = NaN\n").kfactor is None


@pytest.mark.parametrize("line,expected", [
    ("INFLATION = 1.06 0.5", prm.Inflation(1.06, 0.5, False)),
    ("INFLATION = 1.06", prm.Inflation(1.06, 1.0, False)),
    ("INFLATION = 1.06 1", prm.Inflation(1.06, 1.0, False)),
    ("INFLATION = 1.06 PLAIN", prm.Inflation(1.06, 1.0, True)),
])
def test_inflation_forms(line, expected):
    assert prm.parse_main(MAIN + line + "\n").inflation == expected


def test_badbatches_lines():
    lines = ("BADBATCHES = SLA 0.06 0.10 500\nBADBATCHES = TEM 4 5 0\n"
             "BADBATCHES = SST 0.5 2 10000\nBADBATCHES = SAL 1.5 2 0\n")
    c = prm.parse_main(MAIN + lines)
    assert c.badbatches == [prm.BadBatchSpec("SLA", 0.06, 0.10, 500), prm.BadBatchSpec("TEM", 4, 5, 0),
                            prm.BadBatchSpec("SST", 0.5, 2, 10000), prm.BadBatchSpec("SAL", 1.5, 2, 0)]


def test_misspelt_entry_rejected_with_line():
    with pytest.raises(prm.PrmError, match="BBADBATCHES") as e:
        prm.parse_main(MAIN + "BBADBATCHES = TEM 4 5 0\n")
    assert "line 10" in str(e.value)


def test_multiscale_weights_normalised():
    text = MAIN.replace("LOCRAD = 200", "LOCRAD 150 500\nWEIGHT 0.9 0.1")
    c = prm.parse_main(text)
    assert c.locrad == [150.0, 500.0]
    assert c.locweight == pytest.approx([0.9, 0.1], abs=1e-15)
    c = prm.parse_main(MAIN.replace("LOCRAD = 200", "LOCRAD 150 500\nWEIGHT 3 1"))
    assert c.locweight == [0.75, 0.25]


@pytest.mark.parametrize("extra,msg", [
    ("MODE = EnOI\n", "duplicate"),
    ("ALPHA = 2\n", "ALPHA"),
    ("SCHEME = EAKF\n", "SCHEME"),
    ("STRIDE = 0\n", "STRIDE"),
    ("INFLATION = 0.9\n", "inflation"),
    ("REGION R 10 5 0 1\n", "REGION"),
    ("FOO = 1\n", "unknown entry"),
])
def test_main_errors(extra, msg):
    with pytest.raises(prm.PrmError, match=msg):
        prm.parse_main(MAIN + extra)


def test_enoi_needs_bgdir():
    with pytest.raises(prm.PrmError, match="BGDIR"):
        prm.parse_main(MAIN.replace("EnKF", "EnOI"))
    c = prm.parse_main(MAIN.replace("EnKF", "EnOI") + "BGDIR = bg\n")
    assert c.mode == "ENOI" and c.bgdir == "bg"


def test_model_file():
    m = prm.parse_model("""
NAME = ROMS
VAR = zeta
INFLATION = 1.1 0.5
VAR = temp
RANDOMISE 0.99 0.1
GRID = g
""")
    assert m.name == "ROMS"
    assert m.var("zeta").inflation == prm.Inflation(1.1, 0.5, False)
    assert m.var("temp").randomise == (0.99, 0.1) and m.var("temp").grid == "g"
    with pytest.raises(prm.PrmError, match="outside"):
        prm.parse_model("NAME = x\nGRID = g\n")
    with pytest.raises(prm.PrmError, match="deflation"):
        prm.parse_model("NAME = x\nVAR = a\nRANDOMISE 1.5 1\n")


def test_obstypes_defaults_and_override():
    ots = prm.parse_obstypes("""
NAME = SLA
VAR = eta
ISSURFACE = yes
HFUNCTION = standard

NAME = TEM
VAR = temp
ISSURFACE = no
HFUNCTION = standard
ASYNC = 1
LOCRAD 150 500
WEIGHT 0.9 0.1
RFACTOR = 2
MINVALUE = -2
""")
    sla, tem = ots
    assert sla.issurface and not sla.is_async and sla.locrad is None and sla.rfactor == 1.0
    assert sla.minvalue == -math.inf and sla.zmax == math.inf
    assert not tem.issurface and tem.async_ == 1.0 and tem.rfactor == 2.0 and tem.minvalue == -2
    c = prm.parse_main(MAIN)
    c.obstypescfg = ots
    assert c.taper_for(sla) == ([200.0], [1.0])
    r, w = c.taper_for(tem)
    assert r == [150, 500] and w == pytest.approx([0.9, 0.1], abs=1e-15)


def test_obsdata_dual_rads_blocks():
    secs = prm.parse_obsdata("""
# set observation error for Geosat to 7cm
product == RADS
type = SLA
reader = standard2
file=/short/p93/pxs599/obs/RADS-IB/y2006/m05/g?_d23.nc
error_std = 0.07

# use default errors for other altimeters
product == RADS
type = SLA
reader = standard2
file=/short/p93/pxs599/obs/RADS-IB/y2006/m05/[!g]?_d23.nc
""")
    assert len(secs) == 2
    a, b = secs
    assert (a.product, a.type, a.reader) == ("RADS", "SLA", "standard2")
    assert a.files == ["/short/p93/pxs599/obs/RADS-IB/y2006/m05/g?_d23.nc"]
    assert a.error_std == [prm.ErrorStdEntry("EQUAL", 0.07)]
    assert b.files == ["/short/p93/pxs599/obs/RADS-IB/y2006/m05/[!g]?_d23.nc"] and b.error_std == []


def test_obsdata_error_ops_and_parameters():
    (s,) = prm.parse_obsdata("""
PRODUCT = NAVO
READER = navo
TYPE = SST
FILE = a.nc
FILE = b.nc
ERROR_STD = 0.5
ERROR_STD = err.nc std MA
ERROR_STD = 0.1 PL
PARAMETER VARNAME = sst
""")
    assert s.files == ["a.nc", "b.nc"]
    assert s.error_std == [prm.ErrorStdEntry("EQUAL", 0.5), prm.ErrorStdEntry("MAX", None, "err.nc", "std"),
                           prm.ErrorStdEntry("PLUS", 0.1)]
    assert s.parameters == {"VARNAME": "sst"}


def test_grid_file():
    (g,) = prm.parse_grid("NAME = g PREP\nVTYPE = z\nDATA = grid.ekc\nDEPTHVARNAME = h\n")
    assert g.usage == "PREP" and g.depthvarname == "h"
    with pytest.raises(prm.PrmError, match="sigma"):
        prm.parse_grid("NAME = g\nVTYPE = sigma\nDATA = x\n")


def test_load_config_cross_checks(case):
    path, root = case
    cfg = prm.load_config(str(path))
    assert cfg.modelcfg.var("temp") and cfg.obstype("TEM").rfactor == 2
    (root / "obs.prm").write_text((root / "obs.prm").read_text().replace("TYPE = TEM", "TYPE = XYZ"))
    with pytest.raises(prm.PrmError, match="unknown observation type"):
        prm.load_config(str(path))


@pytest.mark.parametrize("kind", ["main", "model", "grid", "obstypes", "obsdata"])
def test_describe_format(kind):
    assert "parameter file format" in prm.describe_format(kind)


names = st.text("ABCDEFGHIJKLMNOPQRSTUVWXYZ", min_size=1, max_size=6)
pos = st.floats(0.01, 1e4, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(scheme=st.sampled_from(["DENKF", "ETKF"]), alpha=st.floats(0, 1), stride=st.integers(1, 50),
       sob=st.integers(0, 5), radii=st.lists(pos, min_size=1, max_size=3), mult=st.floats(1, 2),
       cap=st.one_of(st.none(), st.floats(0, 1)), kf=st.one_of(st.none(), pos),
       bb=st.lists(st.tuples(names, pos, pos, st.integers(0, 1000)), max_size=3))
def test_main_roundtrip(scheme, alpha, stride, sob, radii, mult, cap, kf, bb):
    c = prm.parse_main(MAIN)
    c.scheme, c.alpha, c.stride, c.sobstride, c.kfactor = scheme, alpha, stride, sob, kf
    c.locrad, c.locweight = radii, [1.0 / len(radii)] * len(radii)
    c.inflation = prm.Inflation(mult, 1.0, True) if cap is None else prm.Inflation(mult, cap, False)
    c.badbatches = [prm.BadBatchSpec(*b) for b in bb]
    c2 = prm.parse_main(prm.serialize_main(c))
    assert c2.locweight == pytest.approx(c.locweight, rel=1e-14)
    c2.locweight = c.locweight
    assert c2 == c


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(names, st.booleans(), st.one_of(st.none(), pos), pos), min_size=1, max_size=4,
                unique_by=lambda t: t[0]))
def test_obstypes_roundtrip(items):
    ots = [prm.ObsTypeSpec(n, "v", s, "standard", async_=a, rfactor=r) for n, s, a, r in items]
    assert prm.parse_obstypes(prm.serialize_obstypes(ots)) == ots
