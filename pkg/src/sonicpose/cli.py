"""Command-line entry point: ``sonicpose <subcommand> ...``.

Exit codes: 0 success, 1 some trials failed, 2 usage or config validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .acoustic_channel import ResonanceProfile, synthesize_sweep
from .config import ConfigError, TraceSpec, bundled_scenarios, load_config
from .perturbation import (
    ConstantBias,
    analyze_sweep,
    detect_resonances,
    fit_gmm,
    fit_gmm_bic,
    inject_constant,
    load_sweep_log,
    save_gmm,
    save_resonances,
    save_sweep_log,
    save_sweep_stats,
)
from .runner import apply_attack, build_trace, calibrate, run_experiment
from .trace_model import CHANNELS, channel_index, ensure_dir, load_trace, save_trace

log = logging.getLogger("sonicpose")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--config", default=None, help="bundled scenario name or YAML path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sonicpose", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace directory")
    _common(p)
    p.add_argument("--kind", choices=["walk", "stationary"], default=None)
    p.add_argument("--length", type=float, default=None, help="walk length, m")
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.add_argument("--noise", type=float, nargs=2, default=None, metavar=("ACCEL_STD", "GYRO_STD"))

    p = sub.add_parser("inject", help="apply an attack to a trace")
    _common(p)
    p.add_argument("--trace", required=True, help="trace directory/CSV, or 'walk'/'stationary' for a synthetic one")
    p.add_argument("--attack", default=None, help="shorthand such as accel_x_const_2.1 (else the config's attack)")

    p = sub.add_parser("sweep-analyze", help="per-step sweep statistics and resonance peaks")
    _common(p)
    p.add_argument("--in", dest="inp", default=None, help="sweep log CSV")
    p.add_argument("--synthesize", choices=["hololens2", "flat"], default=None,
                   help="synthesize the sweep log from a resonance profile instead of reading one")
    p.add_argument("--prominence", type=float, default=5.0, help="multiple of the median std")
    p.add_argument("--guard", type=float, default=0.5, help="settling guard per step edge, s")

    p = sub.add_parser("fit-gmm", help="fit a GMM to one channel of a trace or sweep step")
    _common(p)
    p.add_argument("--in", dest="inp", required=True, help="trace directory/CSV or sweep log CSV")
    p.add_argument("--channel", default="accel_x")
    p.add_argument("--k", default="2", help="component count or 'auto' for BIC selection over 1..3")
    p.add_argument("--frequency", type=float, default=None, help="sweep step to fit (sweep logs only)")

    p = sub.add_parser("run", help="run a scenario")
    _common(p)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("calibrate", help="locate regime boundaries by bisection")
    _common(p)
    p.add_argument("--channel", default="accel_x")

    p = sub.add_parser("eval-scene", help="run a scene scenario and write its scene report")
    _common(p)

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _config(args, default="constant-bias-sweep"):
    cfg = load_config(args.config or default)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_trace(args) -> int:
    spec = _config(args).trace if args.config else TraceSpec()
    if args.kind:
        spec = replace(spec, kind=args.kind)
    if args.length is not None:
        spec = replace(spec, length_m=args.length)
    if args.duration is not None:
        spec = replace(spec, duration_s=args.duration)
    if args.noise is not None:
        spec = replace(spec, noise=tuple(args.noise))
    trace = build_trace(spec, args.seed if args.seed is not None else 0)
    out = save_trace(trace, args.out or "trace")
    print(out.parent if out.name == "imu.csv" else out)
    return 0


def _load_or_make(name: str, seed):
    if name in ("walk", "stationary"):
        return build_trace(TraceSpec(kind=name), seed)
    return load_trace(name)


def cmd_inject(args) -> int:
    seed = args.seed if args.seed is not None else 0
    trace = _load_or_make(args.trace, seed)
    if args.attack:
        attacked = inject_constant(trace, ConstantBias.parse(args.attack))
    elif args.config:
        attacked = apply_attack(trace, _config(args).attack, np.random.default_rng(seed))
    else:
        raise ConfigError("attack", "give --attack or a --config with an attack section")
    out = save_trace(attacked, args.out or "attacked")
    print(out.parent if out.name == "imu.csv" else out)
    return 0


def cmd_sweep_analyze(args) -> int:
    if args.synthesize:
        prof = ResonanceProfile.hololens2() if args.synthesize == "hololens2" else ResonanceProfile.flat()
        sweep = synthesize_sweep(prof, seed=args.seed if args.seed is not None else 0)
    elif args.inp:
        sweep = load_sweep_log(args.inp)
    else:
        raise ConfigError("in", "give --in or --synthesize")
    stats = analyze_sweep(sweep, guard_s=args.guard)
    peaks = detect_resonances(stats, args.prominence)
    out = Path(args.out or "resonances.csv")
    if out.suffix != ".csv":
        ensure_dir(out)
        out = out / "resonances.csv"
    ensure_dir(out.parent)
    save_resonances(peaks, out)
    save_sweep_stats(stats, out.with_name("sweep_stats.csv"))
    if args.synthesize:
        save_sweep_log(sweep, out.with_name("sweep.csv"))
    for sensor, axis, f in peaks:
        print(f"{sensor}_{axis}\t{f:g} Hz")
    if stats.flagged:
        log.warning("%d steps had too few samples", len(stats.flagged))
    return 0


def cmd_fit_gmm(args) -> int:
    channel_index(args.channel)
    path = Path(args.inp)
    samples = None
    if path.suffix == ".csv" and path.read_text().split("\n", 1)[0].startswith("frequency_hz"):
        sweep = load_sweep_log(path)
        col = CHANNELS.index(args.channel)
        data = np.hstack([sweep.accel, sweep.gyro])[:, col]
        sel = np.ones(len(data), bool) if args.frequency is None else sweep.frequency == args.frequency
        if not sel.any():
            raise ConfigError("frequency", f"no sweep step at {args.frequency} Hz")
        samples = data[sel]
    else:
        samples = load_trace(path).imu.channel(args.channel)
    seed = args.seed if args.seed is not None else 0
    model = fit_gmm_bic(samples, seed=seed) if args.k == "auto" else fit_gmm(samples, int(args.k), seed)
    out = Path(args.out or "gmm.json")
    ensure_dir(out.parent)
    save_gmm({args.channel: model}, out)
    print(json.dumps({args.channel: model.to_components()}))
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or f"results/{cfg.scenario}"
    res = run_experiment(cfg, out, jobs=args.jobs)
    print(f"{cfg.scenario}: {len(res.trials)} trials, {res.failed} failed -> {out}")
    return 1 if res.failed else 0


def cmd_eval_scene(args) -> int:
    cfg = _config(args, default="scene-headlock")
    if cfg.scene is None:
        raise ConfigError("scene", "eval-scene needs a config with a scene section")
    out = args.out or f"results/{cfg.scenario}"
    res = run_experiment(cfg, out)
    print(f"{cfg.scenario}: scene report -> {Path(out) / 'scene.csv'}")
    return 1 if res.failed else 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    rep = calibrate(cfg, args.channel)
    out = Path(args.out or "calibration.yaml")
    ensure_dir(out.parent)
    out.write_text(yaml.safe_dump(rep.to_dict(), sort_keys=False))
    print(yaml.safe_dump({k: v for k, v in rep.to_dict().items() if k != "grid"}, sort_keys=False), end="")
    return 0


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return 0


COMMANDS = {
    "gen-trace": cmd_gen_trace,
    "inject": cmd_inject,
    "sweep-analyze": cmd_sweep_analyze,
    "fit-gmm": cmd_fit_gmm,
    "run": cmd_run,
    "calibrate": cmd_calibrate,
    "eval-scene": cmd_eval_scene,
    "list": cmd_list,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
