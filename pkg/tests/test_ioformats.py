import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ensda import analysis, ioformats, locality


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)),
       st.dictionaries(st.sampled_from(["a", "b", "units"]), st.one_of(st.integers(), st.text(max_size=5))))
def test_array_roundtrip(arr, attrs):
    af = ioformats.decode_array(ioformats.encode_array(arr.shape, arr, attrs))
    assert af.dims == list(arr.shape) and af.attrs == attrs
    assert af.data.dtype == np.float32 and np.array_equal(af.data, arr)


def test_array_layout():
    buf = ioformats.encode_array([2], [1.0, 2.0])
    assert buf[:4] == b"EKC1"
    hlen = int.from_bytes(buf[4:8], "little")
    assert buf[8:8 + hlen] == b'{"dims":[2],"dtype":"f32"}'
    assert buf[8 + hlen:] == np.array([1.0, 2.0], dtype="<f4").tobytes()


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:-4], "truncated payload"),
    (lambda b: b[:10], "truncated header"),
])
def test_array_errors(mutate, msg):
    buf = ioformats.encode_array([3], [1, 2, 3])
    with pytest.raises(ioformats.FormatError, match=msg):
        ioformats.decode_array(mutate(buf))
    with pytest.raises(ioformats.FormatError, match="dimension mismatch"):
        ioformats.encode_array([4], [1, 2, 3])


def test_naming(tmp_path):
    assert ioformats.member_path("e", 3, "temp").endswith("mem003_temp.ekc")
    assert ioformats.member_path("e", 3, "temp", -1).endswith("mem003_temp_-1.ekc")
    assert ioformats.bg_path("b", "eta", 2).endswith("bg_eta_2.ekc")
    for k in (1, 2, 3):
        ioformats.save(ioformats.member_path(str(tmp_path), k, "x"), np.zeros(2))
    assert ioformats.count_members(str(tmp_path), "x") == 3
    with pytest.raises(ValueError):
        ioformats.member_path("e", 0, "x")


def test_obs_table_roundtrip(tmp_path):
    obs = [ioformats.Observation(id=0, type="SLA", product="A,B", instrument="x", lon=1.0 / 3, lat=-2.5,
                                 value=0.1, std=0.05, time=math.nan, batch=7, slot=-1),
           ioformats.Observation(id=1, type="TEM", status=ioformats.STATUS_BAD, fk=1.25, n_merged=3, sob=4)]
    p = tmp_path / "o.csv"
    ioformats.write_obs(str(p), obs)
    back = ioformats.read_obs(str(p))
    assert back[0].lon == 1.0 / 3 and math.isnan(back[0].time) and back[0].product == "A,B"
    q = tmp_path / "o2.csv"
    ioformats.write_obs(str(q), back)
    assert q.read_text() == p.read_text()
    p.write_text("id,type\n0,SLA\n")
    with pytest.raises(ioformats.FormatError, match="missing columns"):
        ioformats.read_obs(str(p))


def test_transforms_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    inodes, jnodes = locality.stride_nodes(7, 3), locality.stride_nodes(5, 2)
    X5 = rng.standard_normal((jnodes.size, inodes.size, 4, 4))
    tf = locality.TransformField(analysis.ENKF, 3, 7, 5, inodes, jnodes, X5=X5)
    ioformats.write_transforms(str(tmp_path / "X5.ekc"), tf)
    back = ioformats.read_transforms(str(tmp_path / "X5.ekc"))
    assert back.mode == analysis.ENKF and back.stride == 3 and (back.ni, back.nj) == (7, 5)
    assert np.array_equal(back.inodes, inodes) and np.array_equal(back.jnodes, jnodes)
    assert np.array_equal(back.X5, X5.astype(np.float32))
    w = rng.standard_normal((jnodes.size, inodes.size, 4))
    tf = locality.TransformField(analysis.ENOI, 3, 7, 5, inodes, jnodes, w=w)
    ioformats.write_transforms(str(tmp_path / "w.ekc"), tf)
    assert np.array_equal(ioformats.read_transforms(str(tmp_path / "w.ekc")).w, w.astype(np.float32))


def test_pointlog_shape_check(tmp_path):
    rec = {"m": 3, "obs_ids": [0, 1], "s": [0.1, 0.2], "S": np.zeros((3, 2))}
    ioformats.write_pointlog(str(tmp_path / "p.json"), rec)
    assert ioformats.read_pointlog(str(tmp_path / "p.json"))["S"] == [[0.0, 0.0]] * 3
    rec["S"] = np.zeros((2, 3))
    with pytest.raises(ioformats.FormatError, match="dimension mismatch"):
        ioformats.write_pointlog(str(tmp_path / "p.json"), rec)
