"""Command-line interface.

Every command writes its outputs plus ``manifest.json`` into ``--out``.  The
manifest holds the parameters, seed, caps and command settings, and
``--manifest`` replays it.  Exit codes: 0 ok, 2 config error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__, rng
from .batch import DEFAULT_MAX_EVENTS, DEFAULT_MAX_TIME, Caps
from .operator import k_power_iterates, mean_offspring_series, survival_exponent
from .pdmp import NumericFailure, events_csv, simulate_trajectory, summaries_json
from .population import (
    PopulationCaps,
    embedding_test,
    generation_json,
    lineage_csv,
    simulate_population,
)
from .rates import PARAM_KEYS, AllometricParams, FlowDomainError, ParameterError, classify_regime, holling2, read_config
from .stats import criticality_test, heavy_tail_diagnostic, phase_diagram_sweep, simulate_counts, summarize

SCHEMA = "allopdmp-output/1"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# Figure recipes.  phi_r = 1 makes the net growth constant equal c_gamma - c_alpha;
# the published curves are reproduced at that value (see README).
RECIPE_BASE = dict(alpha=0.75, gamma=0.75, delta=-0.25, phi_r=1.0, c_gamma=2.0, c_alpha=1.0, x0=1.0)
RECIPES = {
    "4": dict(params=dict(beta=-0.2, c_beta=2.0, c_delta=0.5), settings=dict(paths=6)),
    "5": dict(params=dict(beta=-0.2, c_beta=2.0, c_delta=0.5),
              settings=dict(x0_min=1e-100, x0_max=1e100, x0_points=21, n=50000)),
    "6": dict(params=dict(beta=1.0, c_beta=2.0, c_delta=0.5),
              settings=dict(x0_min=1.0, x0_max=1.0, x0_points=1, n=50000, trace=True)),
    "7": dict(params=dict(beta=-0.25, c_beta=2.0, c_delta=0.5), settings=dict(n=20000)),
    "8": dict(params=dict(beta=-0.25, c_beta=0.55, c_delta=0.3),
              settings=dict(x0_min=1e-100, x0_max=1e100, x0_points=21, n=50000)),
}
RECIPE_COMMANDS = {"4": "simulate", "5": "estimate-m", "6": "estimate-m", "7": "phase-diagram", "8": "estimate-m"}

DEFAULT_RATIOS = tuple(np.round(np.linspace(1.0, 4.3, 12), 6))
DEFAULT_COLUMNS = tuple(np.round(np.linspace(0.1, 1.5, 12), 6))


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# parsing


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run")
    g.add_argument("--config", type=Path, help="key=value parameter file")
    g.add_argument("--manifest", type=Path, help="replay the run recorded in this manifest")
    g.add_argument("--figure", choices=sorted(RECIPES), help="preload the settings of a figure recipe")
    g.add_argument("--seed", type=_u64, help="master seed (falls back to $ALLOPDMP_SEED)")
    g.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    g.add_argument("--out", type=Path, default=Path("allopdmp-out"))
    g.add_argument("--max-events", type=int, default=None)
    g.add_argument("--max-time", type=float, default=None)
    m = p.add_argument_group("model parameters (override config and recipe)")
    for key in PARAM_KEYS:
        flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        m.add_argument(*flags, dest=key, type=float, default=None)
    m.add_argument("--resource", type=float, default=None, help="set phi_r = R/(1+R)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="allopdmp", description="Allometric energy PDMP toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    s = sub.add_parser("simulate", parents=[common], help="simulate individual trajectories")
    s.add_argument("--paths", type=int, default=None)
    s.add_argument("--xi0", type=float, default=None, help="initial energy (default x0)")

    s = sub.add_parser("estimate-m", parents=[common], help="Monte Carlo mean offspring over an x0 sweep")
    s.add_argument("--x0-min", type=float, default=None)
    s.add_argument("--x0-max", type=float, default=None)
    s.add_argument("--x0-points", type=int, default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--z", type=float, default=None)
    s.add_argument("--trace", action="store_true", default=None, help="write running means and a tail report")

    sub.add_parser("classify", parents=[common], help="admissibility report")

    s = sub.add_parser("phase-diagram", parents=[common], help="criticality sweep in the beta = delta = alpha-1 case")
    s.add_argument("--ratios", type=_float_list, default=None, help="values of c_beta/c_delta")
    s.add_argument("--columns", type=_float_list, default=None, help="values of c_delta/(c_gamma-c_alpha)")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--refine", type=int, default=None)
    s.add_argument("--z", type=float, default=None)

    s = sub.add_parser("koperator", parents=[common], help="iterates of K applied to 1, series mean, survival")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--xi0", type=float, default=None)
    s.add_argument("--no-series", dest="series", action="store_false", default=None)

    s = sub.add_parser("population", parents=[common], help="population run, generation sizes, embedding test")
    s.add_argument("--founders", type=int, default=None)
    s.add_argument("--founder-energy", type=float, default=None)
    s.add_argument("--max-individuals", type=int, default=None)
    s.add_argument("--max-generation", type=int, default=None)
    s.add_argument("--families", type=int, default=None, help="families for the embedding test (0 skips it)")
    return parser


SETTING_DEFAULTS = {
    "simulate": dict(paths=6, xi0=None),
    "estimate-m": dict(x0_min=None, x0_max=None, x0_points=1, n=50000, z=3.0, trace=False),
    "classify": {},
    "phase-diagram": dict(ratios=list(DEFAULT_RATIOS), columns=list(DEFAULT_COLUMNS), n=20000, refine=4, z=3.0),
    "koperator": dict(k=10, xi0=None, series=True),
    "population": dict(founders=1, founder_energy=None, max_individuals=100_000, max_generation=20,
                       families=2000),
}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, manifest, recipe, config file and flags into one run description."""
    cmd = args.command
    settings = dict(SETTING_DEFAULTS[cmd])
    values: dict[str, float] = {}
    seed = None
    caps = {"max_events": DEFAULT_MAX_EVENTS, "max_time": None}
    if args.manifest is not None:
        try:
            man = json.loads(args.manifest.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"manifest: {exc}") from None
        if man.get("schema") != SCHEMA or man.get("command") != cmd:
            raise ConfigError(f"manifest: not a {SCHEMA} manifest for {cmd!r}")
        values.update(man["params"])
        settings.update(man["settings"])
        caps.update(man["caps"])
        seed = man["seed"]
    if args.figure is not None:
        recipe = RECIPES[args.figure]
        if RECIPE_COMMANDS[args.figure] != cmd and cmd not in ("classify", "koperator", "population"):
            raise ConfigError(f"figure {args.figure} is a recipe for {RECIPE_COMMANDS[args.figure]!r}")
        values.update(RECIPE_BASE)
        values.update(recipe["params"])
        settings.update({k: v for k, v in recipe["settings"].items() if k in settings})
    if args.config is not None:
        try:
            values.update(read_config(args.config))
        except OSError as exc:
            raise ConfigError(f"config: {exc}") from None
    for key in PARAM_KEYS:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.resource is not None:
        if args.resource < 0:
            raise ParameterError("resource", "must be non-negative")
        values["phi_r"] = holling2(args.resource)
    for key in settings:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    if args.max_events is not None:
        caps["max_events"] = args.max_events
    if args.max_time is not None:
        caps["max_time"] = args.max_time
    if args.seed is not None:
        seed = args.seed
    if seed is None:
        seed = rng.seed_from_env()
    if seed is None:
        seed = secrets.randbits(64)
    if args.workers < 1:
        raise ConfigError("workers: must be at least 1")
    params = AllometricParams(**values) if values else AllometricParams()
    return dict(command=cmd, params=params, settings=settings, seed=int(seed), caps=caps, workers=args.workers)


def _caps(run: dict, default_time: float) -> Caps:
    t = run["caps"]["max_time"]
    return Caps(max_events=int(run["caps"]["max_events"]), max_time=default_time if t is None else float(t))


# ---------------------------------------------------------------------------
# output


def _write(out: Path, name: str, text: str) -> None:
    with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def write_manifest(out: Path, run: dict, outputs: list[str]) -> None:
    man = {
        "schema": SCHEMA,
        "version": __version__,
        "command": run["command"],
        "params": run["params"].to_dict(),
        "seed": run["seed"],
        "caps": run["caps"],
        "settings": run["settings"],
        "workers": run["workers"],
        "outputs": sorted(outputs),
    }
    _write(out, "manifest.json", _json(man))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(run: dict, out: Path) -> list[str]:
    p, st = run["params"], run["settings"]
    if st["paths"] < 0:
        raise ConfigError("paths: must be non-negative")
    xi0 = p.x0 if st["xi0"] is None else st["xi0"]
    if not xi0 > 0:
        raise ParameterError("xi0", "must be strictly positive")
    caps = _caps(run, DEFAULT_MAX_TIME)
    trajs = [(i, simulate_trajectory(p, xi0, run["seed"], caps, path=i)) for i in range(st["paths"])]
    _write(out, "events.csv", events_csv(trajs))
    _write(out, "summaries.json", summaries_json(trajs) + "\n")
    return ["events.csv", "summaries.json"]


def _x0_grid(p: AllometricParams, st: dict) -> np.ndarray:
    lo = p.x0 if st["x0_min"] is None else st["x0_min"]
    hi = lo if st["x0_max"] is None else st["x0_max"]
    if st["n"] < 100:
        raise ConfigError("n: need at least 100 samples")
    if not (lo > 0 and hi >= lo) or st["x0_points"] < 1:
        raise ConfigError("x0 sweep: need 0 < x0_min <= x0_max and x0_points >= 1")
    if st["x0_points"] == 1 or lo == hi:
        return np.array([lo])
    return np.geomspace(lo, hi, st["x0_points"])


def cmd_estimate_m(run: dict, out: Path) -> list[str]:
    p, st = run["params"], run["settings"]
    caps = _caps(run, math.inf)
    rows, files = [], ["m.csv"]
    for i, x0 in enumerate(_x0_grid(p, st)):
        q = p.replace(x0=float(x0))
        seed = rng.derive_key(run["seed"], i)
        counts, n_cens = simulate_counts(q, q.x0, st["n"], seed, caps, workers=run["workers"])
        est = summarize(counts, n_cens, st["z"])
        rows.append([_num(x0), _num(est.mean), _num(est.stderr), est.n_censored, criticality_test(est)])
        if st["trace"]:
            n = counts.size
            idx = np.unique(np.linspace(1, n, min(n, 500)).astype(int))
            cm = np.cumsum(counts) / np.arange(1, n + 1)
            _write(out, f"trace_{i:03d}.csv", _csv(["n", "running_mean"], [[k, _num(cm[k - 1])] for k in idx]))
            rep = heavy_tail_diagnostic(counts) if n >= 1000 else None
            _write(out, f"tail_{i:03d}.json", _json({"x0": float(x0), "tail": None if rep is None else rep.to_dict()}))
            files += [f"trace_{i:03d}.csv", f"tail_{i:03d}.json"]
    _write(out, "m.csv", _csv(["x0", "m_hat", "stderr", "n_censored", "verdict"], rows))
    return files


def cmd_classify(run: dict, out: Path) -> list[str]:
    report = classify_regime(run["params"]).to_dict()
    _write(out, "regime.json", _json(report))
    print(json.dumps(report["verdict"]))
    return ["regime.json"]


def cmd_phase_diagram(run: dict, out: Path) -> list[str]:
    p, st = run["params"], run["settings"]
    if not st["ratios"] or not st["columns"]:
        raise ConfigError("phase-diagram: ratios and columns must be non-empty")
    res = phase_diagram_sweep(st["ratios"], st["columns"], p, st["n"], run["seed"], st["refine"], st["z"],
                              run["workers"])
    rows = [[_num(c.c_beta_over_c_delta), _num(c.c_delta_over_gap), _num(c.c_beta), _num(c.c_delta),
             c.verdict, _num(c.m_hat), _num(c.stderr), c.n_censored] for c in res.cells]
    _write(out, "phase.csv", _csv(["c_beta_over_c_delta", "c_delta_over_gap", "c_beta", "c_delta", "verdict",
                                   "m_hat", "stderr", "n_censored"], rows))
    _write(out, "boundary.json", _json([{"c_delta_over_gap": c, "boundary": b} for c, b in res.boundary]))
    return ["phase.csv", "boundary.json"]


def cmd_koperator(run: dict, out: Path) -> list[str]:
    p, st = run["params"], run["settings"]
    if st["k"] < 0:
        raise ConfigError("k: must be non-negative")
    xi0 = p.x0 if st["xi0"] is None else st["xi0"]
    files = []
    for k, f in enumerate(k_power_iterates(p, st["k"], xi0=xi0)):
        name = f"k_{k:03d}.csv"
        _write(out, name, f.to_csv())
        files.append(name)
    if st["series"]:
        _write(out, "series.json", _json({"xi0": xi0, **mean_offspring_series(p, xi0).to_dict()}))
        files.append("series.json")
    _write(out, "survival.json", _json({"xi0": xi0, "sigma": survival_exponent(p, xi0)}))
    return files + ["survival.json"]


def cmd_population(run: dict, out: Path) -> list[str]:
    p, st = run["params"], run["settings"]
    if st["founders"] < 1:
        raise ConfigError("founders: must be at least 1")
    e0 = p.x0 if st["founder_energy"] is None else st["founder_energy"]
    caps = PopulationCaps(max_individuals=st["max_individuals"], max_time=_caps(run, DEFAULT_MAX_TIME).max_time,
                          max_events=int(run["caps"]["max_events"]))
    pop = simulate_population([e0] * st["founders"], p, run["seed"], caps, max_generation=st["max_generation"])
    _write(out, "lineage.csv", lineage_csv(pop))
    gens = json.loads(generation_json(pop.generation_sizes))
    gens.update(extinct=pop.extinct, censored=pop.censored, accumulation_warning=pop.accumulation_warning)
    _write(out, "generations.json", _json(gens))
    files = ["lineage.csv", "generations.json"]
    if st["families"]:
        rep = embedding_test(p, st["families"], rng.derive_key(run["seed"], 0xE3B))
        _write(out, "embedding.json", _json(rep.to_dict()))
        files.append("embedding.json")
    return files


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-m": cmd_estimate_m,
    "classify": cmd_classify,
    "phase-diagram": cmd_phase_diagram,
    "koperator": cmd_koperator,
    "population": cmd_population,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = resolve(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](run, out)
        write_manifest(out, run, files)
    except (NumericFailure, FlowDomainError, FloatingPointError, RuntimeError) as exc:
        print(f"allopdmp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"allopdmp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
