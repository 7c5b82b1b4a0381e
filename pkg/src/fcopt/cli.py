"""Command-line harness: config parsing, sweeps, B line search and CSV output.

Config files are INI-style (see README for the grammar)::

    [problem]
    name = ball-projection
    r = 0.5

    [noise]
    regime = deterministic

    [solver]
    method = conex
    schedule = strongly-convex
    B = auto

    [run]
    budgets = 100, 200, 400
    seeds = 0, 1, 2
"""
import argparse
import configparser
import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .conex import SCHEDULES, ConExParams, iterations_for_accuracy, run_conex
from .geometry import bregman_div
from .metrics import optimality_and_infeasibility
from .oracles import REGIMES, NoiseConfig
from .problems import BENCHMARKS, ConfigurationError, make_benchmark
from .proxpoint import (kkt_residual, run_exact_proxpoint, run_inexact_proxpoint,
                        tolerance_schedule, uniform_inner_bound)
from .reference import best_known_solution, projected_subgradient_baseline

METHODS = ("conex", "proxpoint-exact", "proxpoint-inexact", "baseline")
MIN_RATE_SEEDS = 8
# smooth problems on boxes: the reference subproblem solver needs both
PROXPOINT_PROBLEMS = ("nonconvex-quadratic", "ball-projection", "qcqp-convex")
B_CAP = 2 ** 16

_BOX = {"lower", "upper"}
PROBLEM_KEYS = {
    "ball-projection": {"a", "b", "r"} | _BOX,
    "nonsmooth-l1": {"a", "b", "r", "lam", "placement"} | _BOX,
    "qcqp-convex": {"Q0", "c0", "Qs", "cs", "ds"} | _BOX,
    "cvar-toy": {"scenarios", "level", "scenario_seed", "z_lower", "z_upper", "t_upper", "cap"},
    "nonconvex-quadratic": {"Q0", "c0", "Q1", "c1", "d1", "scale", "rho"},
}
SECTION_KEYS = {
    "noise": {"regime", "sigma0", "sigma", "sigma_f", "law"},
    "solver": {"method", "schedule", "B", "H_knob", "H_floor", "y_norm", "eps", "c",
               "inner_accuracy", "output", "x0"},
    "run": {"budgets", "seeds", "seed", "checkpoints", "mode"},
    "output": {"path", "timing"},
}
COLUMNS = ("problem", "regime", "method", "schedule", "T", "seed", "B", "gap", "infeas",
           "W_last", "kkt_feasibility", "kkt_complementarity", "kkt_stationarity", "status")


class ConfigError(ValueError):
    """Malformed or invalid configuration; names a line or a field."""


class SearchFailure(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    problem_params: dict = field(default_factory=dict)
    regime: str = "deterministic"
    sigma0: float = 0.0
    sigma: tuple = ()
    sigma_f: float = 0.0
    law: str = None
    method: str = "conex"
    schedule: str = "strongly-convex"
    B: object = "auto"
    H_knob: str = "B"
    H_floor: float = 0.0
    y_norm: float = None
    eps: float = 1e-2
    c: float = 1.0
    inner_accuracy: float = 1e-10
    output: str = "average"
    x0: tuple = None
    budgets: tuple = ()
    seeds: tuple = (0,)
    checkpoints: int = 8
    mode: str = "rate"
    out_path: str = None
    timing: bool = False

    def noise(self, p=None):
        law = self.law
        if law is None:
            law = "scenario" if p is not None and p.scenarios is not None else "gaussian"
        if law == "scenario":
            if p is None or p.scenarios is None:
                raise ConfigError("noise.law: scenario sampling needs a scenario problem")
            return NoiseConfig.for_scenarios(p, self.regime)
        return NoiseConfig(self.regime, sigma0=self.sigma0, sigma=self.sigma or None,
                           sigma_f=self.sigma_f)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _number(tok):
    tok = tok.strip()
    try:
        v = float(tok)
    except ValueError:
        return tok
    return int(v) if tok.lstrip("+-").isdigit() else v


def parse_value(text):
    """'1' -> 1, '1, 2' -> [1, 2], '1, 0; 0, 1' -> [[1, 0], [0, 1]], 'abc' -> 'abc'.

    Matrix stacks (a list of matrices) separate matrices with '|'.
    """
    text = text.strip()
    if "|" in text:
        return [parse_value(part) for part in text.split("|")]
    if ";" in text:
        return [[_number(t) for t in row.split(",")] for row in text.split(";")]
    if "," in text:
        return [_number(t) for t in text.split(",") if t.strip()]
    return _number(text)


def _line_of(raw, section, key):
    sec = None
    for i, line in enumerate(raw.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
        elif sec == section and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _fail(raw, section, key, message):
    line = _line_of(raw, section, key) if key else None
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}[{section}] {key}: {message}" if key else f"[{section}]: {message}")


def _as_float(raw, section, key, v, positive=False, nonneg=False):
    if not isinstance(v, (int, float)):
        _fail(raw, section, key, f"expected a number, got {v!r}")
    v = float(v)
    if positive and not v > 0:
        _fail(raw, section, key, "must be positive")
    if nonneg and v < 0:
        _fail(raw, section, key, "must be nonnegative")
    return v


def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


def parse_config_text(raw, seeds_override=None, source="<config>"):
    """Parse and validate config text into an ExperimentConfig."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#",), empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(raw, source=source)
    except configparser.Error as err:
        raise ConfigError(f"parse error: {err}") from None
    known = {"problem"} | set(SECTION_KEYS)
    for sec in cp.sections():
        if sec not in known:
            line = next((i for i, l in enumerate(raw.splitlines(), 1)
                         if l.strip() == f"[{sec}]"), None)
            raise ConfigError(f"line {line}: unknown section [{sec}]")
    if not cp.has_section("problem") or not cp.has_option("problem", "name"):
        raise ConfigError("[problem] name: required")
    name = cp.get("problem", "name").strip()
    if name not in BENCHMARKS:
        _fail(raw, "problem", "name", f"unknown benchmark {name!r} (one of {', '.join(BENCHMARKS)})")
    pparams = {}
    for key, val in cp.items("problem"):
        if key == "name":
            continue
        if key not in PROBLEM_KEYS[name]:
            _fail(raw, "problem", key, f"unknown key for {name}")
        pparams[key] = parse_value(val)
    vals = {}
    for sec, keys in SECTION_KEYS.items():
        if not cp.has_section(sec):
            continue
        for key, val in cp.items(sec):
            if key not in keys:
                _fail(raw, sec, key, "unknown key")
            vals[(sec, key)] = parse_value(val)

    def get(sec, key, default=None):
        return vals.get((sec, key), default)

    kw = dict(problem=name, problem_params=pparams)
    regime = str(get("noise", "regime", "deterministic"))
    if regime not in REGIMES:
        _fail(raw, "noise", "regime", f"one of {', '.join(REGIMES)}")
    kw["regime"] = regime
    kw["sigma0"] = _as_float(raw, "noise", "sigma0", get("noise", "sigma0", 0.0), nonneg=True)
    kw["sigma"] = tuple(_as_float(raw, "noise", "sigma", s, nonneg=True)
                        for s in _as_list(get("noise", "sigma", [])))
    kw["sigma_f"] = _as_float(raw, "noise", "sigma_f", get("noise", "sigma_f", 0.0), nonneg=True)
    law = get("noise", "law")
    if law is not None and law not in ("gaussian", "scenario"):
        _fail(raw, "noise", "law", "one of gaussian, scenario")
    kw["law"] = law

    method = str(get("solver", "method", "conex"))
    if method not in METHODS:
        _fail(raw, "solver", "method", f"one of {', '.join(METHODS)}")
    kw["method"] = method
    schedule = str(get("solver", "schedule", "strongly-convex"))
    if schedule not in SCHEDULES or schedule == "custom":
        _fail(raw, "solver", "schedule", "one of strongly-convex, convex")
    kw["schedule"] = schedule
    B = get("solver", "B", "auto")
    if isinstance(B, str):
        if B not in ("auto", "search"):
            _fail(raw, "solver", "B", "a number >= 1, 'auto' or 'search'")
    elif float(B) < 1:
        _fail(raw, "solver", "B", "must be at least 1")
    else:
        B = float(B)
    kw["B"] = B
    hk = str(get("solver", "H_knob", "B"))
    if hk not in ("B", "star"):
        _fail(raw, "solver", "H_knob", "one of B, star")
    kw["H_knob"] = hk
    kw["H_floor"] = _as_float(raw, "solver", "H_floor", get("solver", "H_floor", 0.0), nonneg=True)
    if get("solver", "y_norm") is not None:
        kw["y_norm"] = _as_float(raw, "solver", "y_norm", get("solver", "y_norm"), nonneg=True)
    kw["eps"] = _as_float(raw, "solver", "eps", get("solver", "eps", 1e-2), positive=True)
    kw["c"] = _as_float(raw, "solver", "c", get("solver", "c", 1.0), positive=True)
    kw["inner_accuracy"] = _as_float(raw, "solver", "inner_accuracy",
                                     get("solver", "inner_accuracy", 1e-10), positive=True)
    out = str(get("solver", "output", "average"))
    if out not in ("average", "last"):
        _fail(raw, "solver", "output", "one of average, last")
    kw["output"] = out
    if get("solver", "x0") is not None:
        kw["x0"] = tuple(_as_float(raw, "solver", "x0", v) for v in _as_list(get("solver", "x0")))

    budgets = [] if get("run", "budgets") in (None, "") else _as_list(get("run", "budgets"))
    for b in budgets:
        if not isinstance(b, int) or b < 1:
            _fail(raw, "run", "budgets", f"budgets must be positive integers, got {b!r}")
    if any(b1 <= b0 for b0, b1 in zip(budgets, budgets[1:])):
        _fail(raw, "run", "budgets", "budgets strictly increasing")
    kw["budgets"] = tuple(budgets)
    if seeds_override is not None:
        if seeds_override < 1:
            raise ConfigError("--seeds: at least 1 seed")
        seeds = list(range(seeds_override))
    elif get("run", "seeds") is not None:
        seeds = _as_list(get("run", "seeds"))
        if get("run", "seed") is not None:
            _fail(raw, "run", "seed", "give either seed or seeds")
    else:
        seeds = [get("run", "seed", 0)]
    for s in seeds:
        if not isinstance(s, int) or s < 0:
            _fail(raw, "run", "seeds", f"seeds must be nonnegative integers, got {s!r}")
    if len(set(seeds)) != len(seeds):
        _fail(raw, "run", "seeds", "duplicate seeds")
    kw["seeds"] = tuple(seeds)
    cps = get("run", "checkpoints", 8)
    if not isinstance(cps, int) or cps < 1:
        _fail(raw, "run", "checkpoints", "must be a positive integer")
    kw["checkpoints"] = cps
    mode = str(get("run", "mode", "rate"))
    if mode not in ("rate", "single"):
        _fail(raw, "run", "mode", "one of rate, single")
    kw["mode"] = mode
    if mode == "rate" and regime != "deterministic" and len(seeds) < MIN_RATE_SEEDS:
        _fail(raw, "run", "seeds" if get("run", "seeds") is not None else "seed",
              f"stochastic rate experiments need at least {MIN_RATE_SEEDS} seeds")
    if method.startswith("proxpoint") and name not in PROXPOINT_PROBLEMS:
        _fail(raw, "solver", "method", f"proximal point needs a smooth problem, not {name}")
    path = get("output", "path")
    kw["out_path"] = None if path is None else str(path)
    timing = str(get("output", "timing", "false")).lower()
    if timing not in ("true", "false"):
        _fail(raw, "output", "timing", "true or false")
    kw["timing"] = timing == "true"
    return ExperimentConfig(**kw)


def parse_config(path, seeds_override=None):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    return parse_config_text(raw, seeds_override, source=str(path))


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reference:
    x: np.ndarray
    y: np.ndarray
    value: float
    source: str

    @property
    def y_norm(self):
        y = np.nan_to_num(self.y, nan=0.0)
        return float(np.linalg.norm(y))


def reference_for(cfg, p=None):
    p = make_benchmark(cfg.problem, cfg.problem_params) if p is None else p
    x, y, v, src = best_known_solution(p)
    return Reference(np.asarray(x, dtype=float), np.asarray(y, dtype=float), float(v), src)


def line_search_B(p, cfg, eps, schedule="strongly-convex", H_floor=0.0, seed=0, B0=1.0):
    """Double B from 1 until the averaged point is eps-feasible at T(eps, B).

    Returns (B, history) with history a list of (B, T, infeas).
    """
    if cfg.regime == "fully-stochastic":
        raise ConfigurationError("line search needs exactly measurable constraints")
    history = []
    B = float(B0)
    while B <= B_CAP:
        if eps > 0:
            T = iterations_for_accuracy(eps, p, cfg, B=B, y_norm=B - 1.0, schedule=schedule,
                                        H_floor=H_floor)
            r = run_conex(p, cfg, ConExParams(T=T, B=B, schedule=schedule, H_floor=H_floor,
                                              y_norm=B - 1.0), seed=seed)
            _, infeas = optimality_and_infeasibility(p, r.x_bar, 0.0)
        else:
            T, infeas = 0, math.inf
        history.append((B, T, infeas))
        if infeas <= eps:
            return B, history
        B *= 2.0
    raise SearchFailure(f"no B <= 2^16 reached infeasibility {eps:g}", history)


def _resolve_B(cfg, p, ref):
    if cfg.B == "auto":
        return ref.y_norm + 1.0
    if cfg.B == "search":
        B, _ = line_search_B(p, cfg.noise(p), cfg.eps, cfg.schedule, cfg.H_floor)
        return B
    return float(cfg.B)


def run_cell(cfg, T, seed, ref, B):
    """One (budget, seed) cell. Returns an ordered row dict; never raises."""
    row = dict.fromkeys(COLUMNS, "")
    row.update(problem=cfg.problem, regime=cfg.regime, method=cfg.method,
               schedule=cfg.schedule if cfg.method == "conex" else "", T=T, seed=seed, B=B)
    t0 = time.perf_counter()
    try:
        p = make_benchmark(cfg.problem, cfg.problem_params)
        noise = cfg.noise(p)
        x0 = None if cfg.x0 is None else np.array(cfg.x0, dtype=float)
        if cfg.method == "conex":
            r = run_conex(p, noise, ConExParams(
                T=T, B=B, schedule=cfg.schedule, H_knob=cfg.H_knob, H_floor=cfg.H_floor,
                y_norm=cfg.y_norm if cfg.y_norm is not None else ref.y_norm, x0=x0,
                checkpoints=cfg.checkpoints), seed=seed)
            x = r.x_bar
            row["W_last"] = bregman_div(p.geometry.omega, ref.x, r.x_last)
        elif cfg.method == "baseline":
            x = projected_subgradient_baseline(p, T, B=B, x0=x0)
        else:
            x0 = p.X.centroid() if x0 is None else x0
            if cfg.method == "proxpoint-exact":
                tr = run_exact_proxpoint(p, x0, T, inner_accuracy=cfg.inner_accuracy)
                x, y = tr.xs[-1], tr.ys[-1]
            else:
                bound = uniform_inner_bound(p, ref.value)
                if bound is None:
                    raise ConfigurationError("strong-feasibility certificate fails at the centre")
                sched = tolerance_schedule(cfg.eps, bound[1], p.geometry.L_omega, p.mu0,
                                           float(np.max(p.mu)), c=cfg.c)
                tr = run_inexact_proxpoint(p, x0, T, (sched.delta, sched.delta_bar), seed=seed,
                                           cfg=noise, bound=bound, output=cfg.output)
                x, y = tr.xs[-1], tr.ys[-1]
            res = kkt_residual(p, x, y)
            row.update(kkt_feasibility=res.feasibility, kkt_complementarity=res.complementarity,
                       kkt_stationarity=res.stationarity)
        gap, infeas = optimality_and_infeasibility(p, x, ref.value)
        row.update(gap=gap, infeas=infeas, status="ok")
    except Exception as err:  # recorded per row, the sweep continues
        row["status"] = f"error: {type(err).__name__}: {err}".replace("\n", " ")
    if cfg.timing:
        row["wall_time"] = time.perf_counter() - t0
    return row


def _cell_task(args):
    return run_cell(*args)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def run_experiment(cfg, jobs=1):
    """All (budget, seed) rows, sorted by (T, seed)."""
    if not cfg.budgets:
        return []
    p = make_benchmark(cfg.problem, cfg.problem_params)
    ref = reference_for(cfg, p)
    B = _resolve_B(cfg, p, ref)
    tasks = [(cfg, T, s, ref, B) for T in cfg.budgets for s in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_task, tasks))
    else:
        rows = [run_cell(*t) for t in tasks]
    rows.sort(key=lambda r: (r["T"], r["seed"]))
    return rows


def rows_to_csv(rows, timing=False):
    cols = COLUMNS + (("wall_time",) if timing else ())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def bench_bytes(cfg, jobs=1):
    return rows_to_csv(run_experiment(cfg, jobs), cfg.timing).encode("utf-8")


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def _cmd_solve(args):
    cfg = parse_config(args.config, args.seeds)
    if not cfg.budgets:
        print("warning: no budgets configured, nothing to run", file=sys.stderr)
        return 0
    cfg = replace(cfg, timing=True)
    p = make_benchmark(cfg.problem, cfg.problem_params)
    ref = reference_for(cfg, p)
    B = _resolve_B(cfg, p, ref)
    row = run_cell(cfg, cfg.budgets[-1], cfg.seeds[0], ref, B)
    print(f"problem             {cfg.problem} ({p.n} variables, {p.m} constraints)")
    print(f"method              {cfg.method} / {cfg.regime}")
    print(f"reference           psi0* = {ref.value:.10g} ({ref.source})")
    for key in ("T", "seed", "B", "gap", "infeas", "W_last", "kkt_feasibility",
                "kkt_complementarity", "kkt_stationarity", "wall_time", "status"):
        if row.get(key, "") != "":
            print(f"{key:<19} {_fmt(row[key])}")
    return 0 if row["status"] == "ok" else 1


def _cmd_bench(args):
    cfg = parse_config(args.config, args.seeds)
    if not cfg.budgets:
        print("warning: no budgets configured, no rows written", file=sys.stderr)
    data = bench_bytes(cfg, args.jobs)
    out = args.out or cfg.out_path
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
    else:
        with open(out, "wb") as fh:
            fh.write(data)
    return 0


def _cmd_accept(args):
    from .acceptance import run_all
    only = None
    if args.only:
        only = {int(t) for t in args.only.split(",")}
    results = run_all(only=only, jobs=args.jobs, verbose=True)
    return 0 if all(r.passed for r in results) else 1


def build_parser():
    ap = argparse.ArgumentParser(
        prog="fcopt",
        description="Primal-dual and proximal-point solvers for function-constrained problems.",
        epilog="Config defaults: seed = 0, checkpoints = 8, B = auto (reference dual norm + 1), "
               "regime = deterministic, method = conex, schedule = strongly-convex, mode = rate.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "one run; prints a summary"),
                           ("bench", "config-driven sweep; writes CSV"),
                           ("accept", "acceptance suite; exit code 0 when every criterion passes")):
        sp = sub.add_parser(name, help=helptext)
        if name != "accept":
            sp.add_argument("--config", required=True, metavar="PATH")
        else:
            sp.add_argument("--only", metavar="LIST", help="comma-separated criterion numbers")
        sp.add_argument("--out", metavar="PATH")
        sp.add_argument("--seeds", type=int, metavar="N", help="use seeds 0..N-1")
        sp.add_argument("--jobs", type=int, default=1, metavar="N")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return {"solve": _cmd_solve, "bench": _cmd_bench, "accept": _cmd_accept}[args.command](args)
    except (ConfigError, ConfigurationError, SearchFailure) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
