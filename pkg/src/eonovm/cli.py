"""Command-line experiment runner: single runs, config sweeps and figure presets.

Config files are flat ``key = value`` text.  Lines after a ``[sweep]`` header
list comma-separated values; the run set is the cross product of all swept
keys times the seeds.  ``#`` starts a comment.  Example::

    N = 64
    W = 8
    T_sw = 2ms
    [sweep]
    L = 0.3, 0.6, 0.9
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import itertools
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import ConfigError, SimConfig
from .engine import run
from .metrics import CSV_COLUMNS, RunStats, eta_max

LOAD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))

ALIASES = {
    "N": "n_onus", "W": "n_wavelengths", "L": "load",
    "T_sw": "sleep_wake", "T_sw_ns": "sleep_wake",
    "D_max": "d_max", "D_max_ns": "d_max",
    "T_rtt": "rtt", "T_rtt_ns": "rtt",
    "T_g": "guard", "T_t": "tune_step", "T_p": "gate_gen", "T_tx": "gate_tx",
    "N_R": "report_bytes", "policy": "delay_policy", "runtime": "run_time",
    "warmup": "warmup_fraction",
}
_FIELDS = {f.name: f for f in fields(SimConfig)}
_TIME_FIELDS = {"guard", "gate_gen", "gate_tx", "tune_step", "sleep_wake", "rtt", "d_max",
                "mean_on", "run_time"}
_INT_FIELDS = {"n_onus", "n_wavelengths", "peak_rate", "line_rate", "report_bytes",
               "packet_bytes", "seed"}
_FLOAT_FIELDS = {"load", "alpha_on", "alpha_off", "tail_cap", "warmup_fraction"}
_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(ns|us|ms|s)?\s*$")

# trailing flag column after the fixed schema
OUTPUT_COLUMNS = CSV_COLUMNS + ("unstable",)


class ConfigFileError(Exception):
    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")


def parse_duration(text: str) -> int:
    """``"2s"``, ``"0.5ms"``, ``"200us"`` or bare nanoseconds -> integer ns."""
    m = _DURATION.match(str(text))
    if not m:
        raise ValueError(f"bad duration {text!r}")
    value = float(m.group(1)) * _UNITS[m.group(2) or "ns"]
    if abs(value - round(value)) > 1e-6:
        raise ValueError(f"duration {text!r} is not a whole number of ns")
    return int(round(value))


def field_name(key: str) -> str:
    name = ALIASES.get(key, key)
    if name not in _FIELDS:
        raise ValueError(f"unknown key {key!r}")
    return name


def parse_value(name: str, text: str):
    text = text.strip()
    if name in _TIME_FIELDS:
        return parse_duration(text)
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    return text


class ExperimentConfig:
    """Base overrides plus swept value lists, with the line each key came from."""

    def __init__(self, base: Optional[dict] = None, sweep: Optional[dict] = None):
        self.base: dict = dict(base or {})
        self.sweep: dict = dict(sweep or {})

    def points(self) -> list[dict]:
        keys = sorted(self.sweep)
        return [dict(self.base, **dict(zip(keys, combo)))
                for combo in itertools.product(*(self.sweep[k] for k in keys))]

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        cfg = cls()
        in_sweep = False
        for lineno, raw in enumerate(text.splitlines(), 1):
            where = f"{source}:{lineno}"
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                section = line.strip("[] ").lower()
                if section not in ("sweep", "base"):
                    raise ConfigFileError(where, f"unknown section [{section}]")
                in_sweep = section == "sweep"
                continue
            if "=" not in line:
                raise ConfigFileError(where, "expected key = value")
            key, _, value = (s.strip() for s in line.partition("="))
            try:
                name = field_name(key)
                if in_sweep:
                    vals = [parse_value(name, v) for v in value.split(",") if v.strip()]
                    if not vals:
                        raise ValueError(f"empty value list for {key}")
                    cfg.sweep[name] = vals
                else:
                    cfg.base[name] = parse_value(name, value)
                for point in cfg.points():
                    SimConfig(**point)
            except (ValueError, ConfigError) as exc:
                raise ConfigFileError(where, str(exc)) from None
        return cfg


def parse_overrides(items: Iterable[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigFileError(f"argument {item!r}", "expected key=value")
        key, _, value = item.partition("=")
        try:
            name = field_name(key.strip())
            out[name] = parse_value(name, value)
        except ValueError as exc:
            raise ConfigFileError(f"argument {item!r}", str(exc)) from None
    return out


# -- figure presets ------------------------------------------------------------

def figure_experiment(fig: str) -> tuple[ExperimentConfig, str]:
    """Preset for a figure; the second item names the curve-defining key."""
    grid = list(LOAD_GRID)
    if fig == "5":
        return ExperimentConfig({"n_onus": 16, "n_wavelengths": 2},
                                {"delay_policy": ["fixed", "variable"], "load": grid}), "delay_policy"
    if fig == "6":
        return ExperimentConfig({"n_onus": 64, "n_wavelengths": 8},
                                {"sleep_wake": [500_000, 1_000_000, 2_000_000],
                                 "load": grid}), "sleep_wake"
    if fig == "7a":
        return ExperimentConfig({"n_onus": 16, "n_wavelengths": 2},
                                {"d_max": [5_000_000, 10_000_000, 15_000_000],
                                 "load": grid}), "d_max"
    if fig == "7b":
        # N and W move together, so they are expanded by hand below
        return ExperimentConfig({}, {"load": grid, "n_onus": [16, 32, 64]}), "n_onus"
    if fig == "8":
        return ExperimentConfig({"n_onus": 64, "n_wavelengths": 8},
                                {"alpha_on": [1.2, 1.5, 1.9], "load": grid}), "alpha_on"
    raise ValueError(f"unknown figure {fig!r}")


def expand_points(exp: ExperimentConfig, fig: Optional[str]) -> list[dict]:
    pts = exp.points()
    if fig == "7b":
        for p in pts:
            p["n_wavelengths"] = p["n_onus"] // 8
    return pts


# -- execution -----------------------------------------------------------------

def _run_one(cfg: SimConfig) -> RunStats:
    return run(cfg)


def _sort_key(cfg: SimConfig) -> tuple:
    return (cfg.scheduler.value, cfg.delay_policy.value, cfg.n_onus, cfg.n_wavelengths,
            cfg.alpha_on, cfg.sleep_wake, cfg.d_max_of(0), cfg.rtt_of(0), cfg.load, cfg.seed)


def build_configs(points: Sequence[dict], seeds: Sequence[int]) -> list[SimConfig]:
    cfgs = [SimConfig(**dict(p, seed=s)) for p in points for s in seeds]
    return sorted(cfgs, key=_sort_key)


def execute(cfgs: Sequence[SimConfig], jobs: int = 1) -> list[RunStats]:
    if jobs <= 1 or len(cfgs) <= 1:
        return [_run_one(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, cfgs))


def csv_text(results: Sequence[RunStats], stamp: Optional[str] = None) -> str:
    buf = io.StringIO()
    if stamp is not None:
        buf.write(f"# generated {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTPUT_COLUMNS)
    for st in results:
        w.writerow(st.csv_row() + [int(st.unstable)])
    return buf.getvalue()


def _curve_label(key: str, value) -> str:
    if key in _TIME_FIELDS:
        return f"{key}_{value / 1e6:g}ms"
    return f"{key}_{value}"


def series(results: Sequence[RunStats], key: str) -> dict[str, list[tuple[float, float]]]:
    """Mean efficiency per (curve, load) across seeds, plus the bound curve."""
    acc: dict[str, dict[float, list[float]]] = {}
    bound: dict[float, float] = {}
    for st in results:
        c = st.config
        value = getattr(c, key)
        label = _curve_label(key, value.value if hasattr(value, "value") else value)
        acc.setdefault(label, {}).setdefault(c.load, []).append(st.efficiency)
        bound[c.load] = eta_max(c)
    out = {label: sorted((l, sum(v) / len(v)) for l, v in pts.items())
           for label, pts in acc.items()}
    out["eta_max"] = sorted(bound.items())
    return out


def write_series(out_dir: Path, fig: str, curves: dict) -> list[Path]:
    paths = []
    for label, pts in sorted(curves.items()):
        path = out_dir / f"fig{fig}_{label}.dat"
        path.write_text("".join(f"{l:g} {v:.4f}\n" for l, v in pts))
        paths.append(path)
    return paths


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eonovm", description="TWDM-PON receiver sleep scheduling simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a single configuration, a config sweep or a figure preset")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="key=value config file with optional [sweep]")
    src.add_argument("--fig", choices=["5", "6", "7a", "7b", "8"], help="figure preset")
    src.add_argument("--single", nargs="+", metavar="KEY=VALUE", help="one run")
    r.add_argument("--seeds", type=int, default=1, help="seeds per point (default 1)")
    r.add_argument("--runtime", type=parse_duration, help="simulated time, e.g. 2s")
    r.add_argument("--out", type=Path, help="output directory (default: CSV to stdout)")
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    r.add_argument("--set", nargs="+", default=[], metavar="KEY=VALUE",
                   help="overrides applied to every point")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        fig, curve_key = args.fig, None
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigFileError(str(args.config), exc.strerror or str(exc)) from None
            exp = ExperimentConfig.parse(text, str(args.config))
        elif fig is not None:
            exp, curve_key = figure_experiment(fig)
        else:
            exp = ExperimentConfig(parse_overrides(args.single))
        exp.base.update(parse_overrides(args.set))
        if args.runtime is not None:
            exp.base["run_time"] = args.runtime
        base_seed = exp.base.pop("seed", 1)
        if "EONOVM_SEED" in os.environ:
            base_seed = int(os.environ["EONOVM_SEED"])
        n_seeds = 1 if args.single else args.seeds
        seeds = [base_seed + i for i in range(n_seeds)]
        cfgs = build_configs(expand_points(exp, fig), seeds)
    except (ConfigFileError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    results = execute(cfgs, args.jobs)
    for st in results:
        if st.unstable:
            print(f"warning: unstable point {_sort_key(st.config)}", file=sys.stderr)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    if args.out is None:
        sys.stdout.write(csv_text(results, stamp))
        return 0
    args.out.mkdir(parents=True, exist_ok=True)
    name = f"fig{fig}" if fig else "results"
    (args.out / f"{name}.csv").write_text(csv_text(results, stamp))
    if fig:
        write_series(args.out, fig, series(results, curve_key))
    return 0


if __name__ == "__main__":
    sys.exit(main())
