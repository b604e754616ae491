"""Command-line front end.

Every subcommand writes its outputs and a ``manifest.json`` (arguments,
seed, library versions, wall time, output files) to ``--out``.  Exit codes:
0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import qq_envelope
from .distributions import parse_model
from .exceptions import DataError, FitError, InferenceError
from .hazard import (bootstrap_hazard_envelope, homogeneity_test, local_hazard_blocks,
                     yearly_intervals)
from .inference import lrt_gamma_zero, p_infinity_from, pool_inverse_variance, se_from_ci
from .lifetimes import (PRESETS, GeneratorConfig, SamplingFrame, Scheme, as_sample,
                        generate_lexis, load_csv, matched_dataset, save_csv)
from .likelihood import fit_mle
from .power import power_endpoint, power_sex_ratio, power_shape, write_power_csv
from .threshold import parse_thresholds, threshold_sweep

logger = logging.getLogger("longevity")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    pass


# -- inputs -----------------------------------------------------------------

def _read_frame(path):
    """Frame JSON: ``begin``, ``end``, ``scheme``, ``u`` and optionally a
    ``generator`` block (``entries``, ``female_fraction``) or a ``preset``."""
    with open(path) as fh:
        d = json.load(fh)
    if "preset" in d and not {"begin", "end"} <= set(d):
        name = d["preset"]
        if name not in PRESETS:
            raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name].config.frame, d
    try:
        return SamplingFrame.from_dict(d), d
    except KeyError as exc:
        raise DataError(f"{path}: frame is missing {exc}") from None


def _load(args, data_path, frame_path, seed):
    """Dataset from a CSV and frame, or generated from a preset frame."""
    if frame_path is None:
        raise UsageError("--frame is required")
    frame, spec = _read_frame(frame_path)
    if data_path is not None:
        ds = load_csv(data_path, frame)
    elif "preset" in spec:
        ds = matched_dataset(spec["preset"], seed)
    else:
        raise UsageError("--data is required unless the frame names a preset")
    return ds


def _samples(args):
    frames = args.frame or []
    datas = args.data or []
    if len(datas) > 1 and len(frames) == 1:
        frames = frames * len(datas)
    if datas and len(datas) != len(frames):
        raise UsageError("give one --frame per --data file (or a single shared frame)")
    pairs = list(zip(datas, frames)) if datas else [(None, f) for f in frames]
    if not pairs:
        raise UsageError("--frame is required")
    out = []
    for k, (d, f) in enumerate(pairs):
        ds = _load(args, d, f, args.seed + k)
        sample = as_sample(ds)
        if args.u is not None:
            sample = sample.rethreshold(args.u)
        out.append((ds.label or f"dataset{k}", sample))
    return out


def _grid(text):
    """``a:b:step`` or a comma-separated list."""
    if text is None:
        return None
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must be start:stop:step")
        a, b, h = parts
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        return list(np.round(a + h * np.arange(n), 10))
    return [float(v) for v in text.split(",")]


def _groups(sample, by):
    if by is None:
        return {"all": sample}
    key = {"sex": sample.sex, "cohort": sample.cohort}[by]
    return {str(v): sample.subset(key == v) for v in np.unique(key)}


# -- subcommands ------------------------------------------------------------

def cmd_fit(args, out):
    results = {}
    for label, sample in _samples(args):
        for group, sub in _groups(sample, args.by).items():
            fit = fit_mle(sub, args.family)
            entry = fit.to_dict()
            if args.family == "gpd" and sub.n_deaths:
                lrt = lrt_gamma_zero(sub)
                entry["lrt_gamma_zero"] = {"statistic": lrt.statistic, "p_value": lrt.p_value,
                                           "p_inf": p_infinity_from(lrt.statistic,
                                                                    lrt.details["gamma_hat"])}
            results.setdefault(label, {})[group] = entry
    return _write_json(out / "fit.json", results)


def cmd_sweep(args, out):
    (label, sample), = _samples(args)[:1]
    families = tuple(args.family.split(",")) if args.family else ("gpd", "exp")
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else None
    table = threshold_sweep(sample, thresholds, families=families, level=args.level,
                            n_boot=args.nboot, seed=args.seed, threads=args.threads)
    table.write_table(out / "sweep.csv")
    table.write_stability(out / "stability.csv")
    flags = {str(r.threshold): r.flag for r in table.rows if r.flag}
    gomp = {str(r.threshold): r.gompertz for r in table.rows if r.gompertz}
    files = [out / "sweep.csv", out / "stability.csv"]
    if gomp or flags:
        files.append(_write_json(out / "sweep.json", {"flags": flags, "gompertz": gomp})[0])
    return files


def cmd_power(args, out):
    grids = {"iota": args.iota_grid, "gamma": args.gamma_grid, "lambda": args.lambda_grid}
    chosen = [k for k, v in grids.items() if v is not None]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --iota-grid, --gamma-grid, --lambda-grid")
    kind = chosen[0]
    grid = _grid(grids[kind])
    pairs = _samples(args)
    labels = [l for l, _ in pairs]
    samples = [s for _, s in pairs]
    common = dict(n_sims=args.nsims, seed=args.seed, level=1 - args.level, threads=args.threads)
    if kind == "iota":
        curves = power_endpoint(samples, grid, labels=labels, **common)
    elif kind == "gamma":
        curves = power_shape(samples, grid, labels=labels, **common)
    else:
        if len(samples) != 1:
            raise UsageError("the sex-ratio power needs a single dataset")
        curves = [power_sex_ratio(samples[0], grid, **common)]
        curves[0].dataset = labels[0]
    write_power_csv(curves, out / "power.csv")
    summary = {c.dataset: {"critical_value": c.critical_value, "calibration": c.calibration,
                           "flags": c.flags} for c in curves}
    return [out / "power.csv"] + _write_json(out / "power.json", summary)


def cmd_hazard(args, out):
    (label, sample), = _samples(args)[:1]
    env = bootstrap_hazard_envelope(sample, n_boot=args.nboot, K=args.knots, seed=args.seed,
                                    threads=args.threads)
    env.write_csv(out / "hazard.csv")
    base = env.base
    info = {"model": base.model.to_dict(), "loglik": base.loglik, "converged": base.converged,
            "knot_seed": base.knot_seed, "knot_scheme": "one uniform draw per unit year bin",
            "n_boot": env.n_boot, "n_failed": env.n_failed, **base.extra}
    files = [out / "hazard.csv"]
    if sample.scheme is Scheme.LTRC:
        rows = []
        ages = yearly_intervals(sample.u, math.floor(sample.u + sample.x.max()))
        for group, sub in _groups(sample, args.by).items():
            blocks = local_hazard_blocks(sub, ages, level=args.level)
            stat, p = homogeneity_test(blocks)
            info.setdefault("homogeneity", {})[group] = {"statistic": stat, "p_value": p}
            rows += [{"group": group, **b.__dict__} for b in blocks]
        _write_rows(out / "hazard_blocks.csv", rows)
        files.append(out / "hazard_blocks.csv")
    return files + _write_json(out / "hazard.json", info)


def cmd_qq(args, out):
    (label, sample), = _samples(args)[:1]
    env = qq_envelope(sample, n_sims=args.nsims, seed=args.seed, family=args.family,
                      level=args.level, coverage=args.level, threads=args.threads)
    env.write_csv(out / "qq.csv")
    info = {"n_sims": env.n_sims, "n_failed": env.n_failed,
            "inside_simultaneous": bool(env.inside().all()),
            "fraction_inside_pointwise": float(env.inside(simultaneous=False).mean())}
    return [out / "qq.csv"] + _write_json(out / "qq.json", info)


def cmd_simulate(args, out):
    if not args.frame or len(args.frame) != 1:
        raise UsageError("simulate needs one --frame")
    if args.model is None:
        raise UsageError("simulate needs --model, e.g. exp:1.45")
    model = parse_model(args.model)
    frame, spec = _read_frame(args.frame[0])
    if "generator" in spec:
        config = GeneratorConfig.from_dict({"frame": frame.to_dict(), **spec["generator"]})
        ds = generate_lexis(config, model, args.seed)
    elif "preset" in spec:
        ds = matched_dataset(spec["preset"], args.seed, model)
    else:
        raise DataError("the frame needs a 'generator' block or a 'preset' to simulate")
    save_csv(ds, out / "simulated.csv")
    return [out / "simulated.csv"]


def cmd_pool(args, out):
    if not args.estimate or len(args.estimate) < 2:
        raise UsageError("pool needs at least two --estimate EST LO HI triples")
    pairs = [(e, se_from_ci(lo, hi, args.level)) for e, lo, hi in args.estimate]
    res = pool_inverse_variance(pairs, args.level)
    return _write_json(out / "pool.json", {"estimate": res.estimate, "se": res.se,
                                           "lower": res.lower, "upper": res.upper,
                                           "inputs": [list(t) for t in args.estimate]})


# per-command defaults; the shared options default to None
DEFAULTS = {"fit": {"family": "exp"}, "sweep": {"nboot": 0}, "power": {"nsims": 2000},
            "hazard": {"nboot": 500}, "qq": {"nsims": 100, "family": "exp"}}

COMMANDS = {"fit": cmd_fit, "sweep": cmd_sweep, "power": cmd_power, "hazard": cmd_hazard,
            "qq": cmd_qq, "simulate": cmd_simulate, "pool": cmd_pool}


# -- outputs ----------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [path]


def _write_rows(path, rows):
    import csv
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def _manifest(args, argv, files, started, status):
    return {"command": args.command, "argv": list(argv),
            "arguments": {k: v for k, v in vars(args).items() if k != "func"},
            "seed": args.seed, "status": status,
            "versions": {"longevity": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "wall_time_s": round(time.time() - started, 3),
            "outputs": [str(Path(f).name) for f in files]}


# -- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", action="append", help="records CSV (repeatable)")
    common.add_argument("--frame", action="append", help="frame JSON (repeatable)")
    common.add_argument("--u", type=float, help="threshold age (default: the frame's)")
    common.add_argument("--family", help="gpd, exp or gompertz (sweep: comma list)")
    common.add_argument("--level", type=float, default=0.95, help="confidence level")
    common.add_argument("--nboot", type=int, help="bootstrap replicates")
    common.add_argument("--nsims", type=int, help="simulation replicates")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="longevity", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="maximum likelihood fit")
    s.add_argument("--by", choices=("sex", "cohort"))

    s = sub.add_parser("sweep", parents=[common], help="fits across thresholds")
    s.add_argument("--thresholds", help="a:b or a comma list")

    s = sub.add_parser("power", parents=[common], help="power curves")
    s.add_argument("--iota-grid", help="endpoints (ages), start:stop:step or list")
    s.add_argument("--gamma-grid", help="shapes, start:stop:step or list")
    s.add_argument("--lambda-grid", help="women/men scale ratios")

    s = sub.add_parser("hazard", parents=[common], help="spline hazard with bootstrap bands")
    s.add_argument("--knots", type=int, default=5)
    s.add_argument("--by", choices=("sex", "cohort"))

    s = sub.add_parser("qq", parents=[common], help="QQ plot with simulation envelopes")

    s = sub.add_parser("simulate", parents=[common], help="synthetic records for a frame")
    s.add_argument("--model", help="e.g. exp:1.45 or gpd:1.4,-0.05")

    s = sub.add_parser("pool", parents=[common], help="inverse-variance pooling")
    s.add_argument("--estimate", nargs=3, type=float, action="append",
                   metavar=("EST", "LO", "HI"), help="estimate and interval (repeatable)")
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in DEFAULTS.get(args.command, {}).items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    code, files = 0, []
    try:
        files = COMMANDS[args.command](args, out) or []
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except (FitError, InferenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    status = "ok" if code == 0 else f"exit {code}"
    _write_json(out / "manifest.json", _manifest(args, argv, files, started, status))
    return code


if __name__ == "__main__":
    sys.exit(main())
