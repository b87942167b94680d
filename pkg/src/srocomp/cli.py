"""Command-line interface.

Subcommands:

``run``
    Execute one condition and write its artifacts.
``grid``
    Every condition for every SRO pair of the configuration (and every
    seed given), in a pool of worker processes.
``metrics``
    Cue maps of an ear-signal WAV, optionally against a reference WAV.
``compare``
    Difference map between two cue-map CSV files (or run directories).

Exit status: 0 on success, 2 for configuration errors, 3 for domain or
validity errors, 4 for I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .binaural import CueMap, cue_difference, cue_map, mean_abs_difference
from .config import CONDITIONS, RunConfig, bundled_config_path, load_config
from .errors import ConfigError, DomainError, SroCompError

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_IO = 0, 2, 3, 4


def _sro_pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'eps1,eps2' in ppm, got {text!r}") from None
    return a, b


def _seeds(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") \
            from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srocomp",
                                description="SRO estimation and compensation experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="configuration file (default: bundled default scene)")
        sp.add_argument("--output-dir", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed of the playback noise and the sensor noise")
        sp.add_argument("--sro", type=_sro_pair, default=None, metavar="Q1,Q2",
                        help="loudspeaker SROs in ppm")
        sp.add_argument("--duration", type=float, default=None,
                        help="program length in seconds")
        sp.add_argument("--loop", choices=("closed", "open"), default=None)

    r = sub.add_parser("run", help="run one condition")
    common(r)
    r.add_argument("--condition", choices=CONDITIONS, default=None)

    g = sub.add_parser("grid", help="all conditions for all SRO pairs")
    common(g)
    g.add_argument("--condition", choices=CONDITIONS, action="append", default=None,
                   help="restrict to these conditions (repeatable)")
    g.add_argument("--seeds", type=_seeds, default=None,
                   help="comma-separated seeds to average over")
    g.add_argument("--workers", type=int, default=None)

    m = sub.add_parser("metrics", help="cue maps from ear-signal WAV files")
    m.add_argument("ears", help="stereo WAV (left, right)")
    m.add_argument("--reference", default=None, help="stereo WAV of the reference condition")
    m.add_argument("--config", default=None)
    m.add_argument("--output-dir", default=None)

    c = sub.add_parser("compare", help="difference map of two cue maps")
    c.add_argument("test", help="cue-map CSV or run directory")
    c.add_argument("reference", help="cue-map CSV or run directory")
    c.add_argument("--output-dir", default=None)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config or bundled_config_path())
    kw = {}
    if getattr(args, "duration", None) is not None:
        kw["duration"] = args.duration
    if getattr(args, "loop", None) is not None:
        kw["loop"] = args.loop
    if getattr(args, "output_dir", None) is not None:
        kw["output_dir"] = args.output_dir
    if getattr(args, "seed", None) is not None:
        kw["playback_seed"] = args.seed
        kw["scene"] = replace(cfg.scene, seed=args.seed)
    cond = getattr(args, "condition", None)
    if cond:
        # the grid validates its base configuration with the first condition
        kw["condition"] = cond if isinstance(cond, str) else cond[0]
    if getattr(args, "workers", None) is not None:
        kw["workers"] = args.workers
    if kw:
        cfg = cfg.with_overrides(**kw)
    if getattr(args, "sro", None) is not None:
        cfg = cfg.with_sro(*args.sro)
    return cfg


def _print_summary(label, manifest):
    s = manifest["summary"]
    parts = [f"{label}:", f"mean|dIC|={s['mean_abs_dic']:.4f}",
             f"mean|dITD|={s['mean_abs_ditd_s'] * 1e6:.1f}us"]
    if s.get("final_sro_error_ppm"):
        err = s["final_sro_error_ppm"]
        parts.append(f"final SRO error q1={err['1']:+.3f} ppm q2={err['2']:+.3f} ppm")
    print(" ".join(parts))


def cmd_run(args) -> int:
    from .pipeline import execute
    cfg = _config(args)
    out = os.path.join(cfg.output_dir, cfg.condition)
    manifest = execute(cfg, out)
    _print_summary(cfg.condition, manifest)
    print(f"outputs in {out}")
    return EXIT_OK


def _grid_job(job):
    from .pipeline import execute
    cfg, out = job
    return out, execute(cfg, out)


def _pair_label(e1, e2):
    return f"sro_{e1:+g}_{e2:+g}".replace("+", "p").replace("-", "m")


def cmd_grid(args) -> int:
    from .pipeline import check_writable
    base = _config(args)
    conditions = args.condition or list(CONDITIONS)
    seeds = args.seeds or [base.playback_seed]
    root = base.output_dir
    check_writable(root)
    jobs = []
    for e1, e2 in base.sro_grid:
        for seed in seeds:
            scene = replace(base.scene, seed=seed)
            for cond in conditions:
                cfg = base.with_overrides(condition=cond, playback_seed=seed,
                                          scene=scene).with_sro(e1, e2)
                jobs.append((cfg, os.path.join(root, _pair_label(e1, e2), f"seed{seed}", cond)))
    if base.workers > 1:
        with ProcessPoolExecutor(max_workers=base.workers) as pool:
            results = list(pool.map(_grid_job, jobs))
    else:
        results = [_grid_job(j) for j in jobs]
    rows = []
    for (cfg, _), (out, manifest) in zip(jobs, results):
        s = manifest["summary"]
        err = s.get("final_sro_error_ppm") or {}
        rows.append({"eps1": cfg.scene.sro[1], "eps2": cfg.scene.sro[2],
                     "condition": cfg.condition, "seed": cfg.playback_seed,
                     "final_err_q1_ppm": err.get("1"), "final_err_q2_ppm": err.get("2"),
                     "mean_abs_dic": s["mean_abs_dic"], "mean_abs_ditd_s": s["mean_abs_ditd_s"],
                     "mean_abs_dic_below_2khz": s["mean_abs_dic_below_2khz"],
                     "path": os.path.relpath(out, root)})
        _print_summary(f"{_pair_label(cfg.scene.sro[1], cfg.scene.sro[2])} seed{cfg.playback_seed}"
                       f" {cfg.condition}", manifest)
    fields = list(rows[0])
    with open(os.path.join(root, "grid_summary.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})
    averages = {}
    for r in rows:
        key = f"{_pair_label(r['eps1'], r['eps2'])}/{r['condition']}"
        averages.setdefault(key, []).append(r)
    summary = {
        "software": "srocomp", "version": __version__, "seeds": seeds,
        "averaging": "means over playback/noise seeds (one run per seed)",
        "runs": [r["path"] for r in rows],
        "means": {k: {m: _nanmean([r[m] for r in v])
                      for m in ("mean_abs_dic", "mean_abs_ditd_s", "mean_abs_dic_below_2khz",
                                "final_err_q1_ppm", "final_err_q2_ppm")}
                  for k, v in averages.items()},
    }
    with open(os.path.join(root, "grid_manifest.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _nanmean(values):
    v = np.array([np.nan if x is None else x for x in values], dtype=float)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else None


def cmd_metrics(args) -> int:
    from .pipeline import read_wav
    cfg = load_config(args.config or bundled_config_path())
    ears, rate = read_wav(args.ears)
    if ears.shape[0] != 2:
        raise SroCompError(f"{args.ears}: expected 2 channels, found {ears.shape[0]}")
    cues = cue_map(ears[0], ears[1], cfg.bands, rate)
    out = args.output_dir
    if out:
        os.makedirs(out, exist_ok=True)
        cues.to_csv(os.path.join(out, "cues.csv"))
        cues.to_grid(os.path.join(out, "ic.txt"), "ic")
        cues.to_grid(os.path.join(out, "itd.txt"), "itd")
    print(f"mean IC={np.nanmean(cues.ic):.4f} reliable ITD cells={int(cues.reliable.sum())}"
          f"/{cues.reliable.size}")
    if args.reference:
        ref, ref_rate = read_wav(args.reference)
        if ref_rate != rate or ref.shape != ears.shape:
            raise SroCompError("reference WAV differs in rate, channels or length")
        diff = cue_difference(cues, cue_map(ref[0], ref[1], cfg.bands, rate))
        dic, ditd = mean_abs_difference(diff)
        print(f"mean|dIC|={dic:.4f} mean|dITD|={ditd * 1e6:.1f}us")
        if out:
            diff.to_csv(os.path.join(out, "cue_diff.csv"))
    return EXIT_OK


def _cue_csv(path):
    return os.path.join(path, "cues.csv") if os.path.isdir(path) else path


def cmd_compare(args) -> int:
    test = CueMap.from_csv(_cue_csv(args.test))
    ref = CueMap.from_csv(_cue_csv(args.reference))
    diff = cue_difference(test, ref)
    dic, ditd = mean_abs_difference(diff)
    print(f"mean|dIC|={dic:.4f} mean|dITD|={ditd * 1e6:.1f}us")
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        diff.to_csv(os.path.join(args.output_dir, "cue_diff.csv"))
        diff.to_grid(os.path.join(args.output_dir, "ic_diff.txt"), "ic")
        diff.to_grid(os.path.join(args.output_dir, "itd_diff.txt"), "itd")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "grid": cmd_grid, "metrics": cmd_metrics, "compare": cmd_compare}


def exit_code(exc: BaseException) -> int:
    """Exit status for an exception raised by a command."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DomainError, ArithmeticError)):
        return EXIT_DOMAIN
    if isinstance(exc, (OSError, SroCompError)):
        return EXIT_IO
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SroCompError, OSError, ArithmeticError) as exc:
        code = exit_code(exc)
        print(f"srocomp: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
