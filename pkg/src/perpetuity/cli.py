"""Command-line pipeline: JSON config in, CSV + JSON metadata out.

    perpetuity --config run.json --out tails.csv --command compare

Exit codes: 0 success, 2 invalid config or model, 3 unsupported regime.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bounds import (lower_bound_gg, lower_bound_simplified, optimize_chernoff,
                     upper_bound_paper)
from .dist import PerpetuityModel, model_from_json, p_delta
from .errors import PerpetuityError, UnsupportedRegime
from .oracle import dickman_tail, exact_distribution, is_dickman_model
from .simulate import SimConfig, simulate_tail

log = logging.getLogger("perpetuity")

SCHEMA_VERSION = 1
COLUMNS = ("x", "n", "exceed_count", "tail_est", "ci_lo", "ci_hi", "lb_gg", "lb_simple",
           "ub_paper", "ub_paper_valid", "ub_chernoff_log", "ub_chernoff_delta",
           "ub_chernoff_lambda", "flags")
COMMANDS = ("pdelta", "simulate", "bounds", "compare", "oracle")
NA = "NA"

EXIT_OK, EXIT_INVALID, EXIT_REGIME = 0, 2, 3


class ConfigError(PerpetuityError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line


@dataclass
class RunConfig:
    model: PerpetuityModel
    xs: list[float]
    sim: SimConfig
    commands: list[str]
    output_path: Path
    use_abs: bool = True
    lower_c: float = 0.5
    n_steps: int | None = None
    oracle_steps: int | None = None
    raw: dict = field(default_factory=dict)


def fmt(v: Any) -> str:
    """17 significant digits for floats, so every double round-trips."""
    if v is None:
        return NA
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _grid(spec: Any) -> list[float]:
    if isinstance(spec, list):
        try:
            xs = [float(x) for x in spec]
        except (TypeError, ValueError):
            raise ConfigError("xs entries must be numbers", "xs") from None
    elif isinstance(spec, dict):
        try:
            start, stop, count = float(spec["start"]), float(spec["stop"]), int(spec["count"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("xs grid needs numeric start, stop and count", "xs") from None
        if count < 1:
            raise ConfigError("xs grid count must be >= 1", "xs")
        if spec.get("spacing", "linear") == "log":
            xs = np.geomspace(start, stop, count).tolist()
        else:
            xs = np.linspace(start, stop, count).tolist()
    else:
        raise ConfigError("xs must be a list or a {start, stop, count} object", "xs")
    if not xs:
        raise ConfigError("xs grid is empty", "xs")
    if any(not math.isfinite(x) for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
        raise ConfigError("xs must be finite and strictly increasing", "xs")
    return xs


def parse_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("model", "xs"):
        if key not in doc:
            raise ConfigError(f"missing required field {key!r}")
    try:
        model = model_from_json(doc["model"])
    except UnsupportedRegime:
        raise
    except PerpetuityError as exc:
        raise ConfigError(f"model: {exc}", "model") from None
    xs = _grid(doc["xs"])

    sim = doc.get("sim", {})
    if not isinstance(sim, dict):
        raise ConfigError("sim must be an object", "sim")
    known = {"n_samples", "seed", "truncation_eps", "max_terms", "worker_hint", "n_steps"}
    extra = set(sim) - known
    if extra:
        raise ConfigError(f"unknown sim field(s): {', '.join(sorted(extra))}", sorted(extra)[0])
    try:
        sim_cfg = SimConfig(
            n_samples=int(sim.get("n_samples", 100_000)),
            seed=int(sim.get("seed", 0)),
            truncation_eps=float(sim.get("truncation_eps", 1e-12)),
            max_terms=int(sim.get("max_terms", 10**6)),
            worker_hint=None if sim.get("worker_hint") is None else int(sim["worker_hint"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim: {exc}", "sim") from None
    n_steps = sim.get("n_steps")
    if n_steps is not None and (not isinstance(n_steps, int) or n_steps < 1):
        raise ConfigError("sim.n_steps must be a positive integer", "n_steps")

    commands = doc.get("commands", ["compare"])
    if not isinstance(commands, list) or not commands:
        raise ConfigError("commands must be a nonempty list", "commands")
    bad = [c for c in commands if c not in COMMANDS]
    if bad:
        raise ConfigError(f"unknown command(s) {bad}; choose from {list(COMMANDS)}", "commands")

    out = Path(doc.get("output_path", "perpetuity_tails.csv"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    lower_c = float(doc.get("lower_c", 0.5))
    if not 0.0 < lower_c < 1.0:
        raise ConfigError("lower_c must lie in (0, 1)", "lower_c")
    oracle_steps = doc.get("oracle_steps")
    if oracle_steps is not None and (not isinstance(oracle_steps, int) or oracle_steps < 1):
        raise ConfigError("oracle_steps must be a positive integer", "oracle_steps")
    return RunConfig(model, xs, sim_cfg, list(commands), out, bool(doc.get("use_abs", True)),
                     lower_c, n_steps, oracle_steps, doc)


def _find_line(text: str, key: str | None) -> int:
    if key:
        needle = f'"{key}"'
        for i, line in enumerate(text.splitlines(), 1):
            if needle in line:
                return i
    return 1


def load_config(path: Path) -> RunConfig:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", line=1) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    try:
        return parse_config(doc, path.parent)
    except ConfigError as exc:
        if exc.line is None:
            exc.line = _find_line(text, exc.key)
        raise


# ------------------------------------------------------------------ pipeline

def bound_row(model: PerpetuityModel, x: float, lower_c: float = 0.5) -> tuple[dict, list[str]]:
    """Bound columns for one threshold, with NA where a bound does not apply."""
    q = model.q_bound
    t = x / q
    row: dict[str, Any] = {}
    flags: list[str] = []
    if t > 1.0:
        gg = lower_bound_gg(model, x, lower_c)
        simple = lower_bound_simplified(model, x)
        if gg.valid:
            row["lb_gg"], row["lb_simple"] = gg.value, simple.value
        else:
            flags.append("lb_hypotheses_fail")
    else:
        flags.append("lb_out_of_domain")
    if t > 2.0:
        ub = upper_bound_paper(model, x)
        row["ub_paper"], row["ub_paper_valid"] = ub.value, ub.valid
        if not ub.valid:
            flags.append("ub_paper_not_certified")
    else:
        flags.append("ub_paper_out_of_domain")
    params, res = optimize_chernoff(model, t)
    row["ub_chernoff_log"] = res.log_value
    if params is not None:
        row["ub_chernoff_delta"], row["ub_chernoff_lambda"] = params.delta, params.lam
        if params.p == 0.0:
            flags.append("chernoff_exact_p0")
    if res.vacuous:
        flags.append("chernoff_vacuous")
    return row, flags


def run_pipeline(cfg: RunConfig, workers: int | None = None) -> tuple[list[dict], dict]:
    cmds = set(cfg.commands)
    do_sim = bool(cmds & {"simulate", "compare"})
    do_bounds = bool(cmds & {"bounds", "compare"})
    model = cfg.model
    meta: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "columns": list(COLUMNS),
        "package_version": __version__,
        "commands": cfg.commands,
        "seed": cfg.sim.seed,
        "model": model.to_json(),
        "regime": {**model.flags(), "q_bound": model.q_bound, "mean_abs_m": model.mean_abs_m,
                   "atom_at_one": model.atom_at_one},
        "use_abs": cfg.use_abs,
    }
    rows = [{"x": x} for x in cfg.xs]
    row_flags: list[list[str]] = [[] for _ in cfg.xs]

    if do_sim:
        res = simulate_tail(model, cfg.sim, cfg.xs, use_abs=cfg.use_abs, workers=workers,
                            n_terms=cfg.n_steps)
        curve = res.curve
        sim_meta = dict(res.meta)
        sim_meta.pop("workers", None)
        meta["simulation"] = sim_meta
        meta["residual_bound"] = res.meta["residual_bound"]
        for i, row in enumerate(rows):
            row.update(n=curve.n, exceed_count=curve.exceed_counts[i], tail_est=curve.estimates[i],
                       ci_lo=curve.ci_low[i], ci_hi=curve.ci_high[i])
            if res.meta["truncation_failures"]:
                row_flags[i].append("truncation_failures")

    if do_bounds:
        for i, row in enumerate(rows):
            cols, flags = bound_row(model, row["x"], cfg.lower_c)
            row.update(cols)
            row_flags[i].extend(flags)

    if do_sim and do_bounds:
        violations = 0
        for i, row in enumerate(rows):
            lb = row.get("lb_simple")
            if lb is not None and lb > row["ci_hi"]:
                row_flags[i].append("lb_above_ci")
                violations += 1
            ub = min(1.0, math.exp(row["ub_chernoff_log"])) if row["ub_chernoff_log"] < 709 else 1.0
            if row["ci_lo"] > ub:
                row_flags[i].append("ub_below_ci")
                violations += 1
        meta["sandwich_violations"] = violations

    if "pdelta" in cmds:
        q = model.q_bound
        meta["pdelta"] = [
            {"x": x,
             "delta_upper": 2 * q / x if x > 2 * q else None,
             "p_upper": p_delta(model, 2 * q / x) if x > 2 * q else None,
             "delta_lower": q / (2 * x) if x > q / 2 else None,
             "p_lower": p_delta(model, q / (2 * x)) if x > q / 2 else None}
            for x in cfg.xs]

    if "oracle" in cmds:
        meta["oracle"] = oracle_section(cfg)

    for row, flags in zip(rows, row_flags):
        row["flags"] = ";".join(flags)
    return rows, meta


def oracle_section(cfg: RunConfig) -> dict:
    model = cfg.model
    if is_dickman_model(model):
        return {"kind": "dickman",
                "tail": [{"x": x, "p_exceed": dickman_tail(x) if x >= 1 else 1.0} for x in cfg.xs]}
    if cfg.oracle_steps is not None:
        pmf = exact_distribution(model, cfg.oracle_steps)
        return {"kind": "exact", "n_steps": cfg.oracle_steps,
                "atoms": [[float(v), float(p)] for v, p in pmf.atoms],
                "tail": [{"x": x, "p_exceed": pmf.tail(x, cfg.use_abs)} for x in cfg.xs]}
    return {"kind": "none",
            "note": "oracle needs M ~ Uniform(0,1) with Q == 1, or discrete M, Q with oracle_steps"}


def write_csv(rows: Sequence[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([row["flags"] if c == "flags" else fmt(row.get(c)) for c in COLUMNS])


def metadata_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")


def _json_safe(obj: Any) -> Any:
    if isinstance(obj, float) and not math.isfinite(obj):
        return fmt(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perpetuity", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override sim.seed")
    ap.add_argument("--workers", type=int, help="sampling threads (output does not depend on it)")
    ap.add_argument("--out", type=Path, help="CSV output path (overrides output_path)")
    ap.add_argument("--command", action="append", choices=COMMANDS, dest="commands",
                    help="pipeline step; repeatable (overrides config commands)")
    ap.add_argument("--svg", type=Path, help="also draw the CSV as a log-scale SVG")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def _setup_logging() -> None:
    level = os.environ.get("PERPETUITY_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
    except UnsupportedRegime as exc:
        print(f"{args.config}: unsupported regime: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except ConfigError as exc:
        print(f"{args.config}:{exc.line}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if args.seed is not None:
        cfg.sim = SimConfig(cfg.sim.n_samples, args.seed, cfg.sim.truncation_eps,
                            cfg.sim.max_terms, cfg.sim.worker_hint)
    if args.out is not None:
        cfg.output_path = args.out
    if args.commands:
        cfg.commands = list(dict.fromkeys(args.commands))

    t0 = time.perf_counter()
    try:
        rows, meta = run_pipeline(cfg, workers=args.workers)
    except UnsupportedRegime as exc:
        print(f"{args.config}: unsupported regime: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except PerpetuityError as exc:
        print(f"{args.config}:1: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    meta["wall_time_s"] = time.perf_counter() - t0
    meta["csv"] = str(cfg.output_path)

    write_csv(rows, cfg.output_path)
    metadata_path(cfg.output_path).write_text(json.dumps(_json_safe(meta), indent=2) + "\n")
    if args.svg is not None:
        from .svg import plot_csv

        plot_csv(cfg.output_path, args.svg)
    log.info("wrote %s", cfg.output_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
