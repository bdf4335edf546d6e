"""``eventcatch`` command line.

Exit status: 0 on success, 1 on a usage error, 2 when the run itself fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .actuation import build_table, plan_move
from .bench import run_bench
from .config import ConfigError, RunConfig, load_config
from .estimator import fit_trace
from .events import (
    SensorGeometry,
    behi_from_events,
    behi_serialize,
    event_volume_from_events,
    read_events_csv,
    representation_size_bits,
)
from .metrics import (
    EPISODE_FIELDS,
    FRAME_FIELDS,
    compute_metrics,
    episode_rows,
    frame_rows,
    metrics_from_rows,
)
from .pipeline import POLICY_ESTIMATE, POLICY_RANDOM, TTC_THRESHOLD, HARDWARE, episode_seeds, run_campaign, run_episode
from .predictor import calibrate_noise_profile, write_predictions_csv
from .scene import sample_scene_launch


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# --------------------------------------------------------------------------
# output helpers


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r[k]) for k in fields})
    return buf.getvalue()


def _emit(text: str, out: Path | None, name: str):
    if out is None:
        sys.stdout.write(text)
    else:
        (out / name).write_text(text)


def _outdir(args) -> Path | None:
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config, seed=args.seed)
    if getattr(args, "per_frame_error", None) is not None:
        cfg = replace(cfg, predictor=calibrate_noise_profile(args.per_frame_error))
    if getattr(args, "trigger", None):
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, trigger_mode=args.trigger))
    if getattr(args, "policy", None):
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, command_policy=args.policy))
    return cfg


def _metrics_block(report) -> dict:
    d = report.to_dict()
    d["units"] = {"frame_location": "mm", "frame_ttc": "ms", "impact_location": "mm", "collision_time": "ms"}
    return d


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = _config(args)
    launch_seed, ep_seed = episode_seeds(cfg.pipeline.seed, 1)[0]
    launch = sample_scene_launch(launch_seed, cfg.scene)
    res = run_episode(launch, cfg.scene, cfg.predictor, cfg.rail, cfg.pipeline, seed=ep_seed)
    out = _outdir(args)
    if args.format == "json":
        body = {
            "outcome": res.outcome,
            "reason": res.reason,
            "ledger_us": res.ledger,
            "table_index": res.table_index,
            "target_m": res.target_m,
            "impact_x_m": res.impact_x,
            "impact_us": res.impact_us,
            "command_us": res.command_us,
            "rail_arrival_us": res.rail_arrival_us,
            "trace": [{"t_us": t, "stage": s, "detail": d} for t, s, d in res.trace],
        }
        _emit(_json(body), out, "trace.json")
    else:
        _emit(res.trace_csv(), out, "trace.csv")
    if out is not None:
        write_predictions_csv(res.predictions, out / "predictions.csv")
        rows = fit_trace(res.predictions)
        (out / "fit_trace.csv").write_text(
            "t_us,N,x_impact_m,t_bar_us\n" + "".join(f"{t},{n},{x!r},{tb!r}\n" for t, n, x, tb in rows)
        )
    return 0


def _campaign(cfg: RunConfig, args):
    n = args.episodes or cfg.episodes
    return run_campaign(n, cfg.scene, cfg.predictor, cfg.rail, cfg.pipeline, seed=cfg.pipeline.seed, workers=args.workers)


def cmd_campaign(args) -> int:
    cfg = _config(args)
    camp = _campaign(cfg, args)
    report = compute_metrics(camp.episodes, camp.truths)
    eps = episode_rows(camp.episodes)
    out = _outdir(args)
    if args.format == "json":
        body = {
            "seed": cfg.pipeline.seed,
            "trigger_mode": cfg.pipeline.trigger_mode,
            "command_policy": cfg.pipeline.command_policy,
            "aggregate": _metrics_block(report),
            "episodes": eps,
        }
        _emit(_json(body), out, "report.json")
    else:
        _emit(_csv(eps, EPISODE_FIELDS), out, "report.csv")
    if out is not None:
        (out / "episodes.csv").write_text(_csv(eps, EPISODE_FIELDS))
        (out / "frames.csv").write_text(_csv(frame_rows(camp.episodes, camp.truths), FRAME_FIELDS))
    return 0


def cmd_metrics(args) -> int:
    src = Path(args.input)
    with open(src / "episodes.csv") as fh:
        eps = list(csv.DictReader(fh))
    with open(src / "frames.csv") as fh:
        frames = list(csv.DictReader(fh))
    report = metrics_from_rows(eps, frames, deadline=args.deadline)
    out = _outdir(args)
    if args.format == "json":
        _emit(_json(_metrics_block(report)), out, "metrics.json")
    else:
        rows = []
        for name, unit in (("frame_location", "mm"), ("frame_ttc", "ms"), ("impact_location", "mm"), ("collision_time", "ms")):
            st = getattr(report, f"{name}_{unit}")
            rows.append({"metric": f"{name}_{unit}", "mean": st.mean, "std": st.std, "n": st.n})
        rows.append({"metric": "success_rate", "mean": report.success_rate, "std": "", "n": report.episodes})
        _emit(_csv(_clean(rows), ("metric", "mean", "std", "n")), out, "metrics.csv")
    return 0


def cmd_encode(args) -> int:
    geom = SensorGeometry(args.width, args.height)
    stream = read_events_csv(args.input, geom)
    horizon = args.horizon if args.horizon is not None else (int(stream.t[-1]) + 1 if len(stream) else 0)
    behi = behi_from_events(stream, horizon)
    out = _outdir(args)
    sizes = {
        "events": len(stream),
        "horizon_us": horizon,
        "behi_set_pixels": behi.count(),
        "behi_bits": representation_size_bits("behi", geom),
        "event_volume_bits": representation_size_bits("event_volume", geom, args.bins),
        "grayscale_stack_bits": representation_size_bits("grayscale_stack", geom, args.bins),
    }
    if out is not None:
        (out / "image.behi").write_bytes(behi_serialize(behi))
        if len(stream) >= 2 and stream.t[-1] > stream.t[0]:
            vol = event_volume_from_events(stream, args.bins)
            np.save(out / "volume.npy", vol.data)
            sizes["volume_written"] = True
        else:
            sizes["volume_written"] = False
    if args.format == "json":
        sys.stdout.write(_json(sizes))
    else:
        sys.stdout.write(_csv([sizes], list(sizes)))
    return 0


def cmd_bench(args) -> int:
    counts = [int(c) for c in args.counts.split(",")] if args.counts else None
    res = run_bench(counts, seed=args.seed or 0) if counts else run_bench(seed=args.seed or 0)
    out = _outdir(args)
    if args.format == "json":
        _emit(_json(res.to_dict()), out, "bench.json")
    else:
        text = _csv(res.rows(), ("events", "seconds", "ns_per_event"))
        text += (
            f"# empty_call_seconds={res.empty_seconds:.3e} raw_exponent={res.raw_exponent:.3f} "
            f"marginal_exponent={res.marginal_exponent:.3f} "
            f"frame_update_push_seconds={res.frame_seconds:.3e} ({res.frame_events} events)\n"
        )
        _emit(text, out, "bench.csv")
    return 0


def cmd_plotdata(args) -> int:
    """Campaign-derived series: per-frame error by index, bucket success, rail profile."""
    cfg = _config(args)
    camp = _campaign(cfg, args)
    out = _outdir(args) or Path(".")
    # per-frame error against frame index
    by_k: dict[int, list] = {}
    for ep, gt in zip(camp.episodes, camp.truths):
        for p in ep.predictions:
            k = gt.frame_index(p.t)
            by_k.setdefault(k, []).append((abs(p.d - gt.x_m[k]), abs(p.ttc - gt.ttc_us[k]), p.sigma))
    rows = []
    for k in sorted(by_k):
        a = np.array(by_k[k])
        rows.append({
            "frame": k, "n": len(a), "location_mae_mm": float(a[:, 0].mean() * 1e3),
            "ttc_mae_ms": float(a[:, 1].mean() / 1e3), "mean_sigma_mm": float(a[:, 2].mean() * 1e3),
        })
    (out / "frame_error.csv").write_text(
        _csv(rows, ("frame", "n", "location_mae_mm", "ttc_mae_ms", "mean_sigma_mm"))
    )
    buckets = [
        {"low_m": lo, "high_m": hi, "count": n, "success_rate": r} for lo, hi, n, r in camp.bucket_rates()
    ]
    (out / "buckets.csv").write_text(_csv(_clean(buckets), ("low_m", "high_m", "count", "success_rate")))
    impacts = [
        {"impact_x_m": e.impact_x, "est_x_m": None if e.estimate is None else e.estimate.x_impact, "caught": int(e.caught)}
        for e in camp.episodes
    ]
    (out / "impacts.csv").write_text(_csv(impacts, ("impact_x_m", "est_x_m", "caught")))
    plan = plan_move(cfg.rail, cfg.rail.half_span)
    t = np.linspace(0.0, plan.duration, 201)
    x, v, a, j = plan.sample(t)
    prof = [{"t_s": ti, "x_m": xi, "v_mps": vi, "a_mps2": ai, "j_mps3": ji} for ti, xi, vi, ai, ji in zip(t, x, v, a, j)]
    (out / "rail_profile.csv").write_text(_csv(_clean([{k: float(v) for k, v in r.items()} for r in prof]), ("t_s", "x_m", "v_mps", "a_mps2", "j_mps3")))
    (out / "motion_table.csv").write_text(build_table(cfg.rail, cfg.pipeline.table_spacing).to_csv())
    sys.stdout.write(_json({"written": sorted(p.name for p in out.glob("*.csv"))}) if args.format == "json" else "")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="INI file, or 'default'")
    common.add_argument("--seed", type=int, help="campaign / episode seed")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"))

    parser = _Parser(prog="eventcatch", parents=[common], description="Event-camera catching simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "run one episode and print its trace")
    p.add_argument("--per-frame-error", type=float, help="calibrated oracle per-frame MAE in metres")
    p.add_argument("--trigger", choices=(HARDWARE, TTC_THRESHOLD))

    for name, func, help_ in (
        ("campaign", cmd_campaign, "run a seeded batch of episodes"),
        ("plotdata", cmd_plotdata, "write plot-ready CSV series from a campaign"),
    ):
        p = add(name, func, help_)
        p.add_argument("-n", "--episodes", type=int, help="episode count (default from config)")
        p.add_argument("--per-frame-error", type=float)
        p.add_argument("--trigger", choices=(HARDWARE, TTC_THRESHOLD))
        p.add_argument("--policy", choices=(POLICY_ESTIMATE, POLICY_RANDOM))
        p.add_argument("--workers", type=int, default=1)

    p = add("encode", cmd_encode, "encode an event CSV into BEHI / event-volume files")
    p.add_argument("input", help="event CSV with header t_us,x,y,p")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--horizon", type=int, help="BEHI horizon in us (default: after the last event)")
    p.add_argument("--bins", type=int, default=12, help="event-volume bins / grayscale frames")

    p = add("bench", cmd_bench, "measure encoder and estimator throughput")
    p.add_argument("--counts", help="comma-separated batch sizes")

    p = add("metrics", cmd_metrics, "recompute the report from a campaign output directory")
    p.add_argument("input", help="directory holding episodes.csv and frames.csv")
    p.add_argument("--deadline", type=int, default=160_000, help="per-frame cut-off after trigger, us")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    if getattr(args, "command", None) is None:
        sys.stderr.write(parser.format_usage())
        return 1
    for name, default in (("config", None), ("seed", None), ("out", None), ("format", "csv")):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.seed is not None and args.seed < 0:
        sys.stderr.write("eventcatch: error: --seed must be non-negative\n")
        return 1
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"eventcatch: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
