"""Command-line front end.

Subcommands ``fit-density``, ``fit-pmf``, ``simulate`` and ``eval``. Settings
are resolved from built-in defaults, then an optional JSON ``--config`` file
(a previous bundle's ``manifest.json`` works too), then explicit flags. Every
bundle records the fully resolved settings, so rerunning from its manifest
reproduces it byte for byte.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import (
    DensityGrid,
    batch_means_ess,
    default_grid,
    kl_divergence,
    l2_distance,
    occupied_cluster_posterior,
    trace_diagnostics,
)
from .mixture import BaseMeasure, ChainConfig, KernelFamily, posterior_mean_density, run_chain
from .rounded import RoundingGrid, base_from_counts, check_counts, posterior_mean_pmf, run_chain_discrete
from .scenarios import (
    ScenarioSpec,
    render_table,
    replicate_seeds,
    run_study,
    sample_scenario,
    true_density,
    true_support_max,
)

EXIT_USAGE = 2
EXIT_DATA = 3
GALAXY_INPUT = "builtin:galaxies"

BASE_KEYS = ("xi0", "kappa", "a", "b", "psi0", "a_alpha", "b_alpha")
CHAIN_DEFAULTS = {
    "kernel": "skew_normal",
    "iters": 6000,
    "burnin": 1000,
    "thin": 1,
    "seed": 0,
    "hmax": 50,
    "alpha_update": "escobar_west",
    "shape_steps": 3,
}
DEFAULTS = {
    "fit-density": {**CHAIN_DEFAULTS, "input": None, "grid_points": 2001, "trace_points": 5,
                    **{k: None for k in BASE_KEYS}},
    "fit-pmf": {**CHAIN_DEFAULTS, "input": None, "rounding": "count", "trace_points": 5,
                **{k: None for k in BASE_KEYS}},
    "simulate": {**CHAIN_DEFAULTS, "kernel": "both", "scenario": [2], "n": [200], "replicates": 20,
                 "grid_points": 2001, "rounding": "count", "workers": 1, "s1_scale": "sd",
                 "s3_gamma": "rate", "s8_reversed": "literal"},
    "eval": {"input": None, "reference": None, "scenario": None, "s1_scale": "sd",
             "s3_gamma": "rate", "s8_reversed": "literal"},
}
PRESETS = {
    # alpha ~ Ga(1/2, rate 50); 1000 burn-in plus 10000 retained draws
    "galaxy": {"input": GALAXY_INPUT, "a_alpha": 0.5, "b_alpha": 50.0, "iters": 11000, "burnin": 1000},
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# input ----------------------------------------------------------------------

def _read_text(path):
    if path == GALAXY_INPUT:
        return resources.files("skewmix").joinpath("data/galaxies.csv").read_text()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None


def parse_column(text, source, integers=False):
    """Parse a one-column CSV; a non-numeric first line is taken as a header."""
    values = []
    rows = list(csv.reader(io.StringIO(text)))
    for lineno, row in enumerate(rows, 1):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells):
            continue
        if len(cells) != 1:
            raise DataError(f"{source}:{lineno}: expected one column, found {len(cells)}")
        cell = cells[0]
        try:
            v = float(cell)
        except ValueError:
            if lineno == 1:
                continue
            raise DataError(f"{source}:{lineno}: not a number: {cell!r}") from None
        if not math.isfinite(v):
            raise DataError(f"{source}:{lineno}: value must be finite")
        if integers:
            if v != math.floor(v):
                raise DataError(f"{source}:{lineno}: expected an integer, got {cell!r}")
            if v < 0:
                raise DataError(f"{source}:{lineno}: counts must be nonnegative, got {cell!r}")
        values.append(v)
    if not values:
        raise DataError(f"{source}: no data")
    arr = np.array(values)
    return arr.astype(np.int64) if integers else arr


def load_data(path, integers=False):
    text = _read_text(path)
    return parse_column(text, path, integers), hashlib.sha256(text.encode()).hexdigest()


# output ---------------------------------------------------------------------

def _num(v):
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) if isinstance(v, (int, float, np.number)) else v for v in r])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def _json_text(obj):
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def write_bundle(out_dir, files):
    """Write all files into ``out_dir`` at once, replacing an earlier bundle there."""
    out = Path(out_dir)
    if out.exists():
        if not out.is_dir():
            raise UsageError(f"{out} exists and is not a directory")
        if any(out.iterdir()) and not (out / "manifest.json").exists():
            raise UsageError(f"{out} is not empty and holds no bundle; refusing to overwrite")
    parent = out.resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".bundle-", dir=parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text)
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


# configuration --------------------------------------------------------------

def _int_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_chain_flags(p):
    p.add_argument("--kernel", choices=["gaussian", "skew-normal", "skew_normal"])
    p.add_argument("--iters", type=int, help="total sweeps including burn-in")
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hmax", type=int, help="truncation level of the stick-breaking prior")
    p.add_argument("--alpha-update", dest="alpha_update", choices=["escobar_west", "sticks"])
    p.add_argument("--shape-steps", dest="shape_steps", type=int)


def _add_base_flags(p):
    g = p.add_argument_group("base measure (defaults derived from the data)")
    for k in BASE_KEYS:
        g.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="skewmix", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"skewmix {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)

    fd = sub.add_parser("fit-density", help="fit a mixture to real-valued data")
    fd.add_argument("--input", help=f"one value per line; {GALAXY_INPUT} for the bundled data")
    fd.add_argument("--preset", choices=sorted(PRESETS))
    fd.add_argument("--grid-points", dest="grid_points", type=int)
    fd.add_argument("--trace-points", dest="trace_points", type=int)
    _add_chain_flags(fd)
    _add_base_flags(fd)

    fp = sub.add_parser("fit-pmf", help="fit a rounded mixture to nonnegative integer data")
    fp.add_argument("--input")
    fp.add_argument("--rounding", help="count, floor or custom:<file>")
    fp.add_argument("--trace-points", dest="trace_points", type=int)
    _add_chain_flags(fp)
    _add_base_flags(fp)

    sm = sub.add_parser("simulate", help="run the scenario study")
    sm.add_argument("--scenario", type=_int_list, help="scenario ids 1-8, comma separated")
    sm.add_argument("--n", type=_int_list, help="sample sizes, comma separated")
    sm.add_argument("--replicates", type=int)
    sm.add_argument("--grid-points", dest="grid_points", type=int)
    sm.add_argument("--rounding")
    sm.add_argument("--workers", type=int)
    sm.add_argument("--s1-scale", dest="s1_scale", choices=["sd", "variance"])
    sm.add_argument("--s3-gamma", dest="s3_gamma", choices=["rate", "scale"])
    sm.add_argument("--s8-reversed", dest="s8_reversed", choices=["literal", "mirrored"])
    _add_chain_flags(sm)

    ev = sub.add_parser("eval", help="score a fitted bundle or grid CSV against a reference")
    ev.add_argument("--input", help="bundle directory or density/pmf CSV")
    ev.add_argument("--reference", help="CSV on the same grid")
    ev.add_argument("--scenario", type=int, help="score against a scenario's true law")
    ev.add_argument("--s1-scale", dest="s1_scale", choices=["sd", "variance"])
    ev.add_argument("--s3-gamma", dest="s3_gamma", choices=["rate", "scale"])
    ev.add_argument("--s8-reversed", dest="s8_reversed", choices=["literal", "mirrored"])

    for p in (fd, fp, sm, ev):
        p.add_argument("--output", help="output directory (eval: optional JSON file)")
        p.add_argument("--config", help="JSON settings file or an earlier manifest.json")
    # 'both' is allowed for simulate only
    for action in sm._actions:
        if action.dest == "kernel":
            action.choices = ["gaussian", "skew-normal", "skew_normal", "both"]
    return parser


def resolve_config(args):
    mode = args.mode
    cfg = dict(DEFAULTS[mode])
    preset = getattr(args, "preset", None)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if isinstance(loaded, dict) and "config" in loaded and "mode" in loaded:
            loaded = loaded["config"]
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(loaded) - set(cfg) - {"preset"}
        if unknown:
            raise UsageError(f"unknown config keys for {mode}: {', '.join(sorted(unknown))}")
        preset = loaded.pop("preset", None) or preset
        if preset:
            cfg.update(PRESETS[preset])
        cfg.update(loaded)
    elif preset:
        cfg.update(PRESETS[preset])
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if preset:
        cfg["preset"] = preset
    if "kernel" in cfg and cfg["kernel"] != "both":
        cfg["kernel"] = KernelFamily.parse(cfg["kernel"]).value
    _validate(mode, cfg)
    return cfg


def _validate(mode, cfg):
    def need(cond, msg):
        if not cond:
            raise UsageError(msg)

    if mode in ("fit-density", "fit-pmf", "simulate"):
        need(cfg["iters"] >= 1, "--iters must be positive")
        need(0 <= cfg["burnin"] < cfg["iters"], "need 0 <= --burnin < --iters")
        need(cfg["thin"] >= 1, "--thin must be positive")
        need(cfg["hmax"] >= 1, "--hmax must be positive")
        need(cfg["shape_steps"] >= 1, "shape_steps must be positive")
        need(cfg["seed"] >= 0, "--seed must be nonnegative")
    if mode in ("fit-density", "fit-pmf"):
        need(cfg["input"] is not None, "--input is required (or --preset)")
        need(cfg["trace_points"] >= 1, "--trace-points must be positive")
    if "grid_points" in cfg:
        need(cfg["grid_points"] >= 2, "--grid-points must be at least 2")
    if mode == "simulate":
        ids = cfg["scenario"] if isinstance(cfg["scenario"], list) else [cfg["scenario"]]
        need(ids and all(i in range(1, 9) for i in ids), f"unknown scenario id in {ids}; choose 1-8")
        ns = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
        need(ns and all(n >= 1 for n in ns), "--n must be positive")
        cfg["scenario"], cfg["n"] = list(ids), list(ns)
        need(cfg["replicates"] >= 1, "--replicates must be positive")
        need(cfg["workers"] >= 1, "--workers must be positive")
    if mode == "eval":
        need(cfg["input"] is not None, "--input is required")
        need((cfg["reference"] is None) != (cfg["scenario"] is None),
             "give exactly one of --reference or --scenario")
        need(cfg["scenario"] is None or cfg["scenario"] in range(1, 9),
             f"unknown scenario id {cfg['scenario']}; choose 1-8")
    if "rounding" in cfg:
        try:
            RoundingGrid.parse(cfg["rounding"])
        except (ValueError, OSError) as exc:
            raise UsageError(f"--rounding: {exc}") from None


def _chain_config(cfg, base=None):
    return ChainConfig(h_max=cfg["hmax"], n_iter=cfg["iters"], burn_in=cfg["burnin"], thin=cfg["thin"],
                       seed=cfg["seed"], kernel=cfg["kernel"], base=base,
                       alpha_update=cfg["alpha_update"], shape_steps=cfg["shape_steps"])


def _resolve_base(cfg, default_base):
    overrides = {k: float(cfg[k]) for k in BASE_KEYS if cfg.get(k) is not None}
    try:
        base = BaseMeasure(**{**{k: getattr(default_base, k) for k in BASE_KEYS}, **overrides})
    except ValueError as exc:
        raise UsageError(f"base measure: {exc}") from None
    for k in BASE_KEYS:
        cfg[k] = float(getattr(base, k))
    return base


def _trace_locations(y, count):
    qs = np.linspace(0.1, 0.9, count) if count > 1 else np.array([0.5])
    return np.quantile(y, qs)


def _common_files(summary, trace):
    clusters = occupied_cluster_posterior(summary)
    cluster_csv = _csv_text(["k", "probability"], clusters.as_rows())
    header = ["draw", "alpha", "occupied"] + [f"at_{_num(p)}" for p in trace.points]
    rows = ([d, summary.alpha[d], int(summary.n_occupied[d])] + list(trace.traces[d])
            for d in range(summary.n_draws))
    trace_csv = _csv_text(header, rows)
    ess_rows = [[_num(p), e] for p, e in zip(trace.points, trace.ess)]
    ess_rows.append(["alpha", batch_means_ess(summary.alpha)])
    ess_csv = _csv_text(["point", "ess"], ess_rows)
    stats = {
        "draws": summary.n_draws,
        "posterior_mean_alpha": float(summary.alpha.mean()),
        "posterior_mean_occupied": clusters.mean,
        "shape_acceptance": summary.shape_acceptance,
    }
    return {"clusters.csv": cluster_csv, "trace.csv": trace_csv, "ess.csv": ess_csv}, stats


def _manifest(mode, cfg, data_info, stats, files):
    return _json_text({
        "mode": mode,
        "version": __version__,
        "config": cfg,
        "data": data_info,
        "summary": stats,
        "files": sorted(list(files) + ["manifest.json"]),
    })


def cmd_fit_density(cfg):
    y, digest = load_data(cfg["input"])
    if y.size < 2:
        raise DataError(f"{cfg['input']}: need at least two observations")
    base = _resolve_base(cfg, BaseMeasure.from_data(y, cfg["kernel"]))
    summary = run_chain(y, _chain_config(cfg, base))
    grid = default_grid(y, cfg["grid_points"])
    dens = posterior_mean_density(summary, grid)
    trace = trace_diagnostics(summary, _trace_locations(y, cfg["trace_points"]))
    files, stats = _common_files(summary, trace)
    files["density.csv"] = _csv_text(["x", "density"], zip(grid, dens))
    data_info = {"n": int(y.size), "sha256": digest}
    files["manifest.json"] = _manifest("fit-density", cfg, data_info, stats, files)
    return files, stats


def cmd_fit_pmf(cfg):
    grid = RoundingGrid.parse(cfg["rounding"])
    y, digest = load_data(cfg["input"], integers=True)
    try:
        y = check_counts(y, grid)
    except ValueError as exc:
        raise DataError(f"{cfg['input']}: {exc}") from None
    base = _resolve_base(cfg, base_from_counts(y, grid, cfg["kernel"]))
    summary = run_chain_discrete(y, _chain_config(cfg, base), grid=grid)
    pmf = posterior_mean_pmf(summary, grid, max_observed=int(y.max()))
    js = np.unique(np.quantile(y, np.linspace(0.1, 0.9, cfg["trace_points"]), method="nearest"))
    trace = trace_diagnostics(summary, js.astype(np.int64))
    files, stats = _common_files(summary, trace)
    files["pmf.csv"] = _csv_text(["j", "pmf"], zip(pmf.support.tolist(), pmf.pmf))
    stats.update({
        "j_max": int(pmf.support[-1]),
        "j_max_capped": pmf.capped,
        "pmf_sum": float(pmf.pmf.sum()),
        "tail_mass_above_j_max": pmf.tail_mass,
        "imputation_midpoint_fallbacks": summary.diagnostics["midpoint_fallbacks"],
    })
    data_info = {"n": int(y.size), "sha256": digest, "rounding": grid.describe()}
    files["manifest.json"] = _manifest("fit-pmf", cfg, data_info, stats, files)
    return files, stats


def _specs(cfg):
    return [ScenarioSpec(sid, n, cfg["replicates"], cfg["seed"], cfg["s1_scale"], cfg["s3_gamma"],
                         cfg["s8_reversed"]) for sid in cfg["scenario"] for n in cfg["n"]]


def cmd_simulate(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = out / "results.csv"
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text()).get("config", {})
        keep = {k: v for k, v in old.items() if k not in ("scenario", "n", "replicates", "workers")}
        now = {k: v for k, v in cfg.items() if k not in ("scenario", "n", "replicates", "workers")}
        if keep != now:
            raise UsageError(f"{out} holds a study with different settings; use another --output")
    kernels = (["gaussian", "skew_normal"] if cfg["kernel"] == "both"
               else [KernelFamily.parse(cfg["kernel"]).value])
    specs = _specs(cfg)
    chain = _chain_config({**cfg, "kernel": kernels[0]})
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    for spec in specs:
        for rep in range(spec.replicates):
            data_seed, _ = replicate_seeds(spec.seed, spec.id, spec.n, rep, kernels[0])
            y = sample_scenario(spec, np.random.default_rng(data_seed))
            (data_dir / f"s{spec.id}_n{spec.n}_r{rep}.csv").write_text(_csv_text(["y"], ([v] for v in y)))
    study = run_study(specs, kernels, chain, results_path=str(results), workers=cfg["workers"],
                      grid_points=cfg["grid_points"], rounding=cfg["rounding"])
    # records of every requested cell, in key order
    wanted = {(s.id, s.n, k, r) for s in specs for k in kernels for r in range(s.replicates)}
    records = [r for r in study.records
               if (r["scenario"], r["n"], r["kernel"], r["replicate"]) in wanted]
    table = render_table(records)
    (out / "table.txt").write_text(table)
    failed = sum(r["status"] != "ok" for r in records)
    stats = {"records": len(records), "failed": failed, "computed_this_run": study.computed}
    manifest = _json_text({"mode": "simulate", "version": __version__, "config": cfg,
                           "summary": {"records": len(records), "failed": failed},
                           "files": ["data/", "manifest.json", "results.csv", "table.txt"]})
    manifest_path.write_text(manifest)
    return table, stats


def _read_grid_csv(path):
    p = Path(path)
    if p.is_dir():
        for name in ("density.csv", "pmf.csv"):
            if (p / name).exists():
                p = p / name
                break
        else:
            raise DataError(f"{path}: no density.csv or pmf.csv in bundle")
    try:
        rows = list(csv.reader(io.StringIO(p.read_text())))
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc.strerror or exc}") from None
    if not rows:
        raise DataError(f"{p}: empty file")
    header, body = rows[0], rows[1:]
    xs, vs = [], []
    for lineno, row in enumerate(body, 2):
        if len(row) != 2:
            raise DataError(f"{p}:{lineno}: expected two columns")
        try:
            xs.append(float(row[0]))
            vs.append(float(row[1]))
        except ValueError:
            raise DataError(f"{p}:{lineno}: not a number") from None
    return header[0] == "j", np.array(xs), np.array(vs)


def cmd_eval(cfg):
    discrete, x, v = _read_grid_csv(cfg["input"])
    if cfg["scenario"] is not None:
        spec = ScenarioSpec(cfg["scenario"], s1_scale=cfg["s1_scale"], s3_gamma=cfg["s3_gamma"],
                            s8_reversed=cfg["s8_reversed"])
        if spec.discrete != discrete:
            raise DataError("scenario and input disagree on discrete versus continuous")
        if discrete:
            top = max(true_support_max(spec), int(x.max()))
            js = np.arange(top + 1)
            est = np.zeros(top + 1)
            est[x.astype(np.int64)] = v
            x, v, ref = js, est, true_density(spec, js)
        else:
            ref = true_density(spec, x)
    else:
        rd, rx, rv = _read_grid_csv(cfg["reference"])
        if rd != discrete or rx.shape != x.shape or not np.array_equal(rx, x):
            raise DataError("input and reference must share a grid")
        ref = rv
    try:
        if discrete:
            kl, l2 = kl_divergence(ref, v), l2_distance(ref, v)
        else:
            f, g = DensityGrid(x, ref), DensityGrid(x, v)
            kl, l2 = kl_divergence(f, g), l2_distance(f, g)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return {"kl": kl, "l2": l2, "points": int(x.size), "discrete": discrete}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.mode == "simulate":
            if not args.output:
                raise UsageError("--output is required")
            table, stats = cmd_simulate(cfg, args.output)
            sys.stdout.write(table)
        elif args.mode == "eval":
            res = cmd_eval(cfg)
            text = _json_text({"config": cfg, "result": res})
            if args.output:
                Path(args.output).write_text(text)
            sys.stdout.write(text)
        else:
            if not args.output:
                raise UsageError("--output is required")
            run = cmd_fit_density if args.mode == "fit-density" else cmd_fit_pmf
            files, stats = run(cfg)
            write_bundle(args.output, files)
            sys.stdout.write(_json_text(stats))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"skewmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"skewmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
