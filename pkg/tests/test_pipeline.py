import os

import numpy as np
import pytest

from ensda import analysis, cli, geo, ioformats, locality, pipeline, prm
from conftest import M, small_grid, write_case


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_full_enkf_cycle(tmp_path, capsys):
    path = write_case(tmp_path)
    wd = tmp_path
    assert run("prep", path, "--workdir", wd) == 0
    obs = ioformats.read_obs(str(wd / pipeline.OBS_FILE))
    orig = ioformats.read_obs(str(wd / pipeline.OBS_ORIG_FILE))
    assert len(obs) == 4 and len(orig) == 6  # OUTSIDE dropped from the log
    assert run("calc", path, "--workdir", wd, "--jobs", 2) == 0
    out = capsys.readouterr().out
    assert "ensemble size = 8" in out and "printing observation statistics" in out
    tf = ioformats.read_transforms(str(wd / "X5.ekc"))
    assert tf.X5.shape == (9, 12, M, M)
    assert np.array_equal(tf.X5[:, :2], np.broadcast_to(np.eye(M, dtype=np.float32), (9, 2, M, M)))
    assert np.allclose(tf.X5.sum(axis=2), 1.0, atol=1e-5)
    diagf = ioformats.read_array(str(wd / pipeline.DIAG_FILE))
    assert diagf.dims == [3, 2, 9, 12] and diagf.attrs["layers"] == ["ALL", "SLA", "TEM"]
    assert (wd / pipeline.STATS_FILE).exists()
    rec = ioformats.read_pointlog(ioformats.pointlog_path(str(wd), 5, 4))
    assert len(rec["obs_ids"]) > 0 and np.array(rec["S"]).shape == (M, len(rec["obs_ids"]))

    assert run("update", path, "--workdir", wd, "--calculate-spread", "--write-inflation") == 0
    ens = str(wd / "ens")
    F = np.stack([ioformats.load(ioformats.member_path(ens, k, "temp")) for k in range(1, M + 1)])
    Fa = np.stack([ioformats.load(ioformats.member_path(ens, k, "temp") + ".analysis") for k in range(1, M + 1)])
    X = locality.interp_transform(tf, 5, 4)
    assert np.allclose(Fa[:, 1, 4, 5], F[:, 1, 4, 5].astype(float) @ X, atol=1e-4)
    assert np.array_equal(Fa[:, :, :, :2], F[:, :, :, :2])
    assert (wd / "spread_temp_an.ekc").exists() and (wd / "inflation_eta.ekc").exists()
    rec = ioformats.read_pointlog(ioformats.pointlog_path(str(wd), 5, 4))
    assert "temp_an" in rec["variables"] and rec["variables"]["eta_an:INFLATION"] == [1.0, "PLAIN"]

    # increments written separately agree bitwise with analysis - forecast
    assert run("update", path, "--workdir", wd, "--output-increment") == 0
    inc = ioformats.load(ioformats.member_path(ens, 1, "eta") + ".increment")
    an = ioformats.load(ioformats.member_path(ens, 1, "eta") + ".analysis")
    fc = ioformats.load(ioformats.member_path(ens, 1, "eta"))
    assert np.array_equal(an, fc + inc)


def test_jobs_do_not_change_transforms(tmp_path):
    path = write_case(tmp_path, stride=2)
    run("prep", path, "--workdir", tmp_path)
    run("calc", path, "--workdir", tmp_path, "--jobs", 1)
    a = ioformats.load(str(tmp_path / "X5.ekc"))
    run("calc", path, "--workdir", tmp_path, "--jobs", 4)
    assert np.array_equal(a, ioformats.load(str(tmp_path / "X5.ekc")))


def test_stats_only(tmp_path):
    path = write_case(tmp_path)
    run("prep", path, "--workdir", tmp_path)
    assert run("stats", path, "--workdir", tmp_path) == 0
    assert (tmp_path / pipeline.STATS_FILE).exists() and not (tmp_path / "X5.ekc").exists()


def test_bad_batch_cycle(tmp_path):
    rows = [(148.0 + 2.0 * k, -35.0, 0.9, 0.05, 0.0, 7) for k in range(4)]
    path = write_case(tmp_path, obs_rows=rows, badbatches="BADBATCHES = SLA 0.1 0.2 2")
    run("prep", path, "--workdir", tmp_path)
    assert run("calc", path, "--workdir", tmp_path) == 0
    (line,) = (tmp_path / "badbatches.out").read_text().splitlines()
    assert line.startswith("SLA 7 ")
    run("prep", path, "--workdir", tmp_path)
    orig = ioformats.read_obs(str(tmp_path / pipeline.OBS_ORIG_FILE))
    assert all(o.status == "BAD" for o in orig if o.type == "SLA")


def test_enoi_cycle(tmp_path):
    path = write_case(tmp_path, mode="ENOI")
    run("prep", path, "--workdir", tmp_path)
    assert run("calc", path, "--workdir", tmp_path) == 0
    tf = ioformats.read_transforms(str(tmp_path / "w.ekc"))
    assert tf.mode == "ENOI" and tf.w.shape == (9, 12, M)
    assert run("update", path, "--workdir", tmp_path) == 0
    xa = ioformats.load(ioformats.bg_path(str(tmp_path / "bg"), "eta") + ".analysis")
    assert xa.shape == (9, 12) and np.abs(xa).max() > 0


def test_async_slots(tmp_path, capsys):
    extra = "ASYNC = 1"
    rows = [(147.3, -35.2, 0.12, 0.05, 99.6, 1), (155.0, -31.0, -0.05, 0.05, 101.1, 2)]
    path = write_case(tmp_path, slots=(-1, 0, 1), extra_types=extra, obs_rows=rows)
    run("prep", path, "--workdir", tmp_path)
    assert sorted(o.slot for o in ioformats.read_obs(str(tmp_path / pipeline.OBS_FILE)) if o.type == "SLA") == [-1, 1]
    run("calc", path, "--workdir", tmp_path)
    out = capsys.readouterr().out
    assert f"SLA |{'a' * M}|{'a' * M}" in out and f"TEM {'.' * M}" in out


def test_single_observation(tmp_path):
    path = write_case(tmp_path)
    cfg = prm.load_config(path)
    grid = geo.load_grid(cfg.gridcfg, cfg.path)
    opts = pipeline.CalcOptions(single_obs=("xyz", 150.0, -35.0, 0.0, "SLA", 0.1, 0.05))
    res = pipeline.run_calc(cfg, grid, str(tmp_path), opts)
    (o,) = res.obs
    assert o.value - res.ens.Hx[0] == pytest.approx(0.1)
    assert res.tf.dfs.max() > 0


def test_no_obs_and_errors(tmp_path, capsys):
    path = write_case(tmp_path, obs_rows=[], tem_rows=[])
    run("prep", path, "--workdir", tmp_path)
    assert run("calc", path, "--workdir", tmp_path) == 1
    assert "no observations" in capsys.readouterr().err
    assert run("calc", path, "--workdir", tmp_path, "--ignore-no-obs") == 0
    assert run("calc", str(tmp_path / "missing.prm")) == 1
    assert run("calc") == 2


def test_describe_and_version(capsys):
    assert run("prep", "--describe-prm-format", "obsdata") == 0
    assert "PRODUCT" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        run("--version")
    assert "ensda" in capsys.readouterr().out


def test_twin_cli(tmp_path):
    out = tmp_path / "t.csv"
    assert run("twin", "linadv-oracle", "--cycles", 3, "--output", out) == 0
    assert out.read_text().splitlines()[0].startswith("cycle,rmse_f")
