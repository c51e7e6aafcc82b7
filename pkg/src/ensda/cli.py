"""Command line: ``ensda {prep,calc,update,stats,twin}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback

from . import __version__, geo, ioformats, obsprep, pipeline, prm, twin

log = logging.getLogger("ensda")


def _describe(kind):
    print(prm.describe_format(kind))
    return 0


def _load(args):
    cfg = prm.load_config(args.prm)
    grid = geo.load_grid(cfg.gridcfg, cfg.path)
    return cfg, grid


def cmd_prep(args) -> int:
    cfg, grid = _load(args)
    wd = args.workdir
    res = obsprep.run_prep(cfg, grid, no_superob=args.no_superobing,
                           consider_subgrid=args.consider_subgrid_variability,
                           badbatch_file=os.path.join(wd, obsprep.BADBATCH_FILE))
    if args.describe_superob is not None:
        print(obsprep.describe_superob(res.orig, args.describe_superob))
        return 0
    orig = res.orig if args.log_all_obs else [o for o in res.orig if o.status != ioformats.STATUS_OUTSIDE]
    ioformats.write_obs(os.path.join(wd, pipeline.OBS_ORIG_FILE), [obsprep._as_obs(o) for o in orig])
    ioformats.write_obs(os.path.join(wd, pipeline.OBS_FILE), res.obs)
    log.info("wrote %d observations (%d original)", len(res.obs), len(orig))
    return 0


def _calc_options(args, stats_only=False) -> pipeline.CalcOptions:
    single = None
    if getattr(args, "single_observation_xyz", None):
        single = ("xyz", *args.single_observation_xyz)
    elif getattr(args, "single_observation_ijk", None):
        single = ("ijk", *args.single_observation_ijk)
    return pipeline.CalcOptions(
        forecast_stats_only=stats_only or getattr(args, "forecast_stats_only", False),
        ignore_no_obs=getattr(args, "ignore_no_obs", False),
        no_mean_update=getattr(args, "no_mean_update", False),
        point_logs_only=getattr(args, "point_logs_only", False),
        print_batch_stats=getattr(args, "print_batch_stats", False),
        single_obs=single,
        metric="RMSD" if args.use_rmsd_for_obsstats else "MAD",
        obs_file=args.use_these_obs, jobs=args.jobs)


def cmd_calc(args) -> int:
    cfg, grid = _load(args)
    pipeline.run_calc(cfg, grid, args.workdir, _calc_options(args))
    return 0


def cmd_stats(args) -> int:
    cfg, grid = _load(args)
    pipeline.run_calc(cfg, grid, args.workdir, _calc_options(args, stats_only=True))
    return 0


def cmd_update(args) -> int:
    for flag in ("direct_write", "leave_tiles"):
        if getattr(args, flag):
            log.info("--%s has no effect with this file container; ignored", flag.replace("_", "-"))
    cfg, grid = _load(args)
    opts = pipeline.UpdateOptions(args.calculate_spread, args.joint_output, args.no_fields_write,
                                  args.output_increment, args.write_inflation, args.seed)
    pipeline.run_update(cfg, grid, args.workdir, opts)
    return 0


def cmd_twin(args) -> int:
    kw = {"seed": args.seed} if args.seed is not None else {}
    if args.cycles is not None:
        kw["cycles"] = args.cycles
    try:
        res = twin.run_scenario(args.scenario, **kw)
    except twin.Divergence as e:
        log.error("%s", e)
        return 2
    out = args.output or f"twin_{args.scenario}.csv"
    res.write_csv(out)
    start = min(50, len(res.metrics))
    log.info("%s: %d cycles, mean analysis RMSE %.4f, forecast RMSE %.4f, analysis spread %.4f",
             args.scenario, len(res.metrics), res.mean("rmse_a", start), res.mean("rmse_f", start),
             res.mean("spread_a", start))
    if args.scenario == "linadv-oracle":
        log.info("max relative deviation from the Kalman filter: mean %.3g, covariance %.3g",
                 max(c.kf_mean_err for c in res.metrics), max(c.kf_cov_err for c in res.metrics))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ensda", description=__doc__)
    p.add_argument("--version", action="version", version=f"ensda {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, kinds):
        sp.add_argument("prm", nargs="?", help="main parameter file")
        sp.add_argument("--describe-prm-format", nargs="?", const="main", choices=kinds, metavar="KIND",
                        help=f"describe a parameter file format ({'|'.join(kinds)}) and exit")
        sp.add_argument("--workdir", default=".", help="directory for observation, transform and log files")
        sp.add_argument("--traceback", action="store_true", help="show a stack trace on error")

    sp = sub.add_parser("prep", help="preprocess observations")
    common(sp, ["main", "model", "grid", "obstypes", "obsdata"])
    sp.add_argument("--describe-superob", type=int, metavar="N",
                    help="print composition of this superobservation and exit")
    sp.add_argument("--consider-subgrid-variability", action="store_true",
                    help="increase superobservation error when subgrid variability is large")
    sp.add_argument("--log-all-obs", action="store_true",
                    help="keep observations outside the domain in observations-orig")
    sp.add_argument("--no-superobing", action="store_true")
    sp.set_defaults(func=cmd_prep)

    def calc_flags(sp):
        sp.add_argument("--use-rmsd-for-obsstats", action="store_true")
        sp.add_argument("--use-these-obs", metavar="FILE", help="observation file to assimilate")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker threads for local analyses")

    sp = sub.add_parser("calc", help="calculate ensemble transforms")
    common(sp, ["main", "model", "grid", "obstypes"])
    sp.add_argument("--forecast-stats-only", action="store_true")
    sp.add_argument("--ignore-no-obs", action="store_true")
    sp.add_argument("--no-mean-update", action="store_true", help="update ensemble anomalies only")
    sp.add_argument("--point-logs-only", action="store_true")
    sp.add_argument("--print-batch-stats", action="store_true")
    sp.add_argument("--single-observation-xyz", nargs=6, metavar=("LON", "LAT", "DEPTH", "TYPE", "INN", "STD"))
    sp.add_argument("--single-observation-ijk", nargs=6, metavar=("FI", "FJ", "FK", "TYPE", "INN", "STD"))
    calc_flags(sp)
    sp.set_defaults(func=cmd_calc)

    sp = sub.add_parser("stats", help="forecast innovation statistics only")
    common(sp, ["main", "model", "grid", "obstypes"])
    calc_flags(sp)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("update", help="apply transforms to the ensemble or background")
    common(sp, ["main", "model", "grid"])
    sp.add_argument("--calculate-spread", action="store_true")
    sp.add_argument("--direct-write", action="store_true")
    sp.add_argument("--joint-output", action="store_true")
    sp.add_argument("--leave-tiles", action="store_true")
    sp.add_argument("--no-fields-write", action="store_true")
    sp.add_argument("--output-increment", action="store_true")
    sp.add_argument("--write-inflation", action="store_true")
    sp.add_argument("--seed", type=int, default=0, help="seed for the forgetting model")
    sp.set_defaults(func=cmd_update)

    sp = sub.add_parser("twin", help="run a twin experiment")
    sp.add_argument("scenario", choices=twin.SCENARIOS)
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output", help="metrics CSV (default twin_<scenario>.csv)")
    sp.add_argument("--traceback", action="store_true")
    sp.set_defaults(func=cmd_twin, describe_prm_format=None, prm="")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout, force=True)
    if args.describe_prm_format:
        return _describe(args.describe_prm_format)
    if args.command != "twin" and not args.prm:
        print("ensda: error: a parameter file is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (prm.PrmError, ValueError, OSError, ioformats.FormatError, geo.ObsOnLand) as e:
        if args.traceback:
            traceback.print_exc()
        print(f"ensda: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
