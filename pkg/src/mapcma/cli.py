"""Command-line entry point: ``mapcma run`` and ``mapcma sweep``.

Config files are flat TOML key/value files using the same names as the
command-line flags (``function``, ``dim``, ``variant``, ``r``, ``lambda``,
``trials``, ``seed``, ``target``, ``max-evals-factor``, ``h-sigma``).
In a sweep file ``function``, ``dim``, ``variant`` and ``r`` may be lists and
the sweep covers their cartesian product; ``lambda`` may be a table mapping a
dimension to a population size. Flags given on the command line override
file values.
"""

import argparse
import itertools
import json
import logging
import re
import sys
from importlib import resources
from pathlib import Path

from .cma import Variant, resolve_r
from .exceptions import InvalidConfig
from .harness import (
    TrialConfig,
    default_parallelism,
    run_experiment,
    summaries_to_csv,
    traces_to_json,
)
from .objectives import FUNCTIONS, Objective

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("mapcma")

KEYS = (
    "function", "dim", "variant", "r", "lambda", "trials", "seed",
    "target", "max-evals-factor", "h-sigma",
)
DEFAULTS = {
    "variant": "cma-es",
    "trials": 100,
    "seed": 0,
    "target": 1e-10,
    "max-evals-factor": 10**6,
    "h-sigma": False,
}


class ConfigError(Exception):
    """Bad configuration; the message names the file and line when known."""


def _key_line(text, key):
    pattern = re.compile(rf"^[ \t]*[\"']?{re.escape(key)}[\"']?[ \t]*=", re.MULTILINE)
    match = pattern.search(text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def load_config(path):
    """Parse a config file into a dict, validating key names."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the message already carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from None
    for key, value in data.items():
        line = _key_line(text, key)
        where = f"{path}:{line}" if line else str(path)
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}; expected one of {', '.join(KEYS)}")
        if isinstance(value, dict) and key != "lambda":
            raise ConfigError(f"{where}: {key!r} must not be a table")
    data["_source"] = text
    data["_path"] = str(path)
    return data


def _where(cfg, key):
    if "_source" not in cfg:
        return "command line"
    line = _key_line(cfg["_source"], key)
    return f"{cfg['_path']}:{line}" if line else cfg["_path"]


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _lambda_for(cfg, dim):
    lam = cfg.get("lambda")
    if isinstance(lam, dict):
        lam = lam.get(str(dim))
    return None if lam is None else int(lam)


def build_trial_configs(cfg):
    """Expand a (possibly list-valued) config into ``(TrialConfig, trials, seed)`` cells."""
    for key in ("function", "dim"):
        if cfg.get(key) is None:
            raise ConfigError(f"{_where(cfg, key)}: missing required setting {key!r}")
    cells = []
    try:
        functions = [str(f).lower() for f in _as_list(cfg["function"])]
        for name in functions:
            if name not in FUNCTIONS:
                raise ConfigError(
                    f"{_where(cfg, 'function')}: unknown function {name!r}; "
                    f"expected one of {', '.join(FUNCTIONS)}"
                )
        variants = [Variant(v) for v in _as_list(cfg["variant"])]
        if Variant.MAP_CMA in variants and cfg.get("r") is None:
            raise ConfigError(f"{_where(cfg, 'variant')}: map-cma needs a value for 'r'")
        r_values = [str(r) for r in _as_list(cfg.get("r"))]
        for name, dim, variant in itertools.product(functions, _as_list(cfg["dim"]), variants):
            rs = r_values if variant is Variant.MAP_CMA else [None]
            for r in rs:
                if r is not None:
                    resolve_r(r, int(dim))
                cells.append(
                    TrialConfig(
                        Objective(name, int(dim)),
                        variant,
                        r,
                        lam=_lambda_for(cfg, dim),
                        target_f=float(cfg["target"]),
                        max_evals=int(float(cfg["max-evals-factor"]) * int(dim)),
                        use_h_sigma=bool(cfg["h-sigma"]),
                        trace=bool(cfg.get("_trace", False)),
                    )
                )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{cfg.get('_path', 'command line')}: {exc}") from None
    return cells


def _merge(file_cfg, args):
    cfg = dict(DEFAULTS)
    cfg.update(file_cfg)
    overrides = {
        "function": args.function,
        "dim": args.dim,
        "variant": args.variant,
        "r": args.r,
        "lambda": args.lam,
        "trials": args.trials,
        "seed": args.seed,
        "target": args.target,
        "max-evals-factor": args.max_evals_factor,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if args.h_sigma:
        cfg["h-sigma"] = True
    return cfg


def _parallelism(args):
    return args.threads if args.threads is not None else default_parallelism()


def _run_cells(cells, cfg, args):
    summaries = []
    for cell in cells:
        log.info(
            "running %s N=%d %s%s, %d trials",
            cell.objective.name, cell.objective.dim, cell.variant.value,
            f" r={cell.r}" if cell.r else "", int(cfg["trials"]),
        )
        summary = run_experiment(
            cell, int(cfg["trials"]), base_seed=int(cfg["seed"]), parallelism=_parallelism(args)
        )
        row = summary.row()
        log.info("  SR=%s SP1=%s", row["sr"], row["sp1"])
        summaries.append(summary)
    return summaries


def cmd_run(args):
    file_cfg = load_config(args.config) if args.config else {}
    cfg = _merge(file_cfg, args)
    cfg["_trace"] = args.trace
    cells = build_trial_configs(cfg)
    summaries = _run_cells(cells, cfg, args)

    csv_text = summaries_to_csv(summaries)
    if args.trace:
        payload = [traces_to_json(s) for s in summaries]
        text = json.dumps(payload[0] if len(payload) == 1 else payload)
        if args.out:
            Path(args.out).write_text(text)
        sys.stdout.write(csv_text)
    elif args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def _preset_path(name):
    return resources.files("mapcma") / "presets" / f"{name}.toml"


def cmd_sweep(args):
    if bool(args.config) == bool(args.preset):
        raise ConfigError("sweep needs exactly one of --config or --preset")
    path = args.config or _preset_path(args.preset)
    if args.preset and not Path(str(path)).exists():
        raise ConfigError(f"unknown preset {args.preset!r}")
    cfg = _merge(load_config(path), args)
    cells = build_trial_configs(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = _run_cells(cells, cfg, args)
    (out / "summary.csv").write_text(summaries_to_csv(summaries))
    log.info("wrote %s", out / "summary.csv")
    return 0


def _common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--function", choices=sorted(FUNCTIONS))
    p.add_argument("--dim", type=int)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--r", help="MAP-CMA prior distance: number, '1', 'sqrt-n' or 'n'")
    p.add_argument("--lambda", dest="lam", type=int, help="population size")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--target", type=float)
    p.add_argument("--max-evals-factor", type=float, help="budget is this times N")
    p.add_argument("--h-sigma", action="store_true", help="enable the h_sigma stall")
    p.add_argument("--threads", type=int, help="worker processes (default: $MAPCMA_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="mapcma", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment cell")
    _common(run)
    run.add_argument("--trace", action="store_true", help="write per-trial convergence traces as JSON")
    run.add_argument("--out", help="output file (CSV summary, or JSON with --trace)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run every cell of a sweep file")
    _common(sweep)
    sweep.add_argument("--preset", help="bundled sweep, e.g. 'table2' or 'table2_rastrigin'")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, InvalidConfig) as exc:
        print(f"mapcma: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
