"""Command-line interface.

Every command prints one JSON report (or CSV for the Tokunaga matrix) that
embeds the configuration that produced it.  Reports carry no timestamps, so
the same configuration always yields byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .dynamics import evolve, empirical_state_vector, initial_state, progeny_check, time_invariance_residual
from .newick import emit_newick, parse_newick_many, read_newick_file
from .oracle import enumerate_trees, prune_invariance_check
from .params import CriticalTokunaga, ParameterError, TokunagaParams, as_number
from .sampler import DEFAULT_MAX_VERTICES, sample_gw, sample_trees
from .stats import estimate_tokunaga, fit_tokunaga_ac, horton_report, FitError
from .tree import compute_orders, prune_trajectory

COMMANDS = ("generate", "prune", "stats", "dynamics", "invariance", "oracle")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    params: TokunagaParams = field(default_factory=lambda: CriticalTokunaga(2))
    n_samples: int = 1000
    Kmax: int = 40
    seed: int = 0
    format: str = "json"
    tol: float = 1e-9
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose one of {', '.join(COMMANDS)}")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.n_samples < 1:
            raise ConfigError("--n must be at least 1")
        if self.Kmax < 1:
            raise ConfigError("--kmax must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")

    def describe(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("params", "options")}
        d["params"] = self.params.describe()
        d["options"] = dict(sorted(self.options.items()))
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Fraction):
        return float(x)
    return x


def _dump(report) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def tokunaga_csv(tm) -> str:
    """Rows ``i``, columns ``j``; undefined cells are empty."""
    T = tm.T_hat
    K = max([j for _, j in T] + [1])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["i"] + [f"j={j}" for j in range(2, K + 1)])
    for i in range(1, K):
        w.writerow([i] + [repr(T[(i, j)]) if (i, j) in T else "" for j in range(2, K + 1)])
    return buf.getvalue()


# ----------------------------------------------------------------------
# commands


def _rng(cfg):
    return np.random.default_rng(cfg.seed)


def _ensemble(cfg):
    o = cfg.options
    if o.get("method") == "gw":
        ens = sample_gw(cfg.n_samples, _rng(cfg), max_vertices=o.get("max_vertices") or DEFAULT_MAX_VERTICES)
    else:
        ens = sample_trees(
            cfg.params,
            cfg.n_samples,
            _rng(cfg),
            order=o.get("order"),
            max_order=o.get("max_order"),
            max_vertices=o.get("max_vertices") or DEFAULT_MAX_VERTICES,
            method=o.get("method") or "recursive",
        )
    return ens


def _input_trees(cfg):
    path = cfg.options.get("input")
    if path == "-":
        return parse_newick_many(sys.stdin.read())
    return read_newick_file(path)


def cmd_generate(cfg):
    ens = _ensemble(cfg)
    orders = [compute_orders(t).tree_order for t in ens.trees]
    rep = {
        "n_trees": len(ens.trees),
        "rejected_order": ens.rejected_order,
        "aborted": ens.aborted,
        "orders": orders,
        "n_vertices": [t.n_vertices for t in ens.trees],
    }
    if cfg.options.get("newick"):
        rep["newick"] = [emit_newick(t) for t in ens.trees]
    return rep, True


def cmd_prune(cfg):
    rows = []
    for t in _input_trees(cfg):
        traj = prune_trajectory(t)
        rows.append(
            {
                "order": len(traj) - 1,
                "pruned": emit_newick(traj[1]) if len(traj) > 1 and not traj[1].is_empty else None,
                "trajectory_sizes": [x.n_vertices for x in traj],
            }
        )
    return {"trees": rows}, True


def cmd_stats(cfg):
    if cfg.options.get("input"):
        trees = _input_trees(cfg)
        extra = {"source": cfg.options["input"]}
    else:
        ens = _ensemble(cfg)
        trees = ens.trees
        extra = {"rejected_order": ens.rejected_order, "aborted": ens.aborted}
    tm = estimate_tokunaga(trees)
    if cfg.format == "csv":
        return tokunaga_csv(tm), True
    rep = {
        "n_trees": tm.n_trees,
        "T_hat": {f"{i},{j}": v for (i, j), v in sorted(tm.T_hat.items())},
        "se": {f"{i},{j}": tm.se(i, j) for (i, j) in sorted(tm.T_hat)},
        "N": tm.N,
        **extra,
    }
    try:
        fit = fit_tokunaga_ac(tm, min_count=cfg.options.get("min_count") or 0)
        rep["fit"] = {"a": fit.a, "c": fit.c, "residual": fit.residual, "a_minus_c_plus_1": fit.critical_gap}
    except FitError as e:
        rep["fit"] = {"error": str(e)}
    orders = {compute_orders(t).tree_order for t in trees}
    if len(orders) == 1 and min(orders) >= 4:
        h = horton_report(trees)
        rep["horton"] = {"ratios": h.ratios, "ratio_se": h.ratio_se, "R_b": h.R_b_estimate}
    return rep, True


def cmd_dynamics(cfg):
    s = cfg.options.get("steps") or 0
    x = evolve(cfg.params, s, cfg.Kmax)
    pi = initial_state(cfg.params.p, cfg.Kmax)
    rep = {"steps": s, "x": x.x, "pi": pi.x, "tail": pi.tail, "total": x.total}
    if cfg.options.get("empirical"):
        k = min(cfg.Kmax, cfg.options.get("empirical_kmax") or 10)
        ev = empirical_state_vector(cfg.params, s, cfg.n_samples, _rng(cfg), Kmax=k)
        rep["empirical"] = {"x": ev.x, "se": ev.se, "above_kmax": ev.tail, "n_samples": ev.n_samples}
    return rep, True


def cmd_invariance(cfg):
    r = time_invariance_residual(cfg.params, cfg.Kmax)
    prog = progeny_check(cfg.params)
    ok = r.value < cfg.tol and prog.ok
    rep = {
        "residual": r.value,
        "tail_bound": r.tail_bound,
        "tol": cfg.tol,
        "progeny": {"before": prog.before, "after": prog.after, "ok": prog.ok},
        "time_invariant": ok,
    }
    return rep, ok


def cmd_oracle(cfg):
    mo = cfg.options.get("max_order") or 2
    ms = cfg.options.get("max_side") if cfg.options.get("max_side") is not None else 2
    rows = prune_invariance_check(cfg.params, mo, ms, tol=cfg.tol)
    dist = enumerate_trees(mo, ms, cfg.params)
    ok = all(r.ok for r in rows)
    rep = {
        "shapes": [
            {"code": r.code, "mu": r.mu, "nu": r.nu, "tail": r.tail, "discrepancy": r.discrepancy, "ok": r.ok}
            for r in rows
        ],
        "enumerated_mass": sum(dist.mass.values()),
        "missing_mass": dist.tail,
        "prune_invariant": ok,
    }
    return rep, ok


HANDLERS = {
    "generate": cmd_generate,
    "prune": cmd_prune,
    "stats": cmd_stats,
    "dynamics": cmd_dynamics,
    "invariance": cmd_invariance,
    "oracle": cmd_oracle,
}


def run(cfg: RunConfig):
    """Returns ``(text, exit_status)``."""
    body, ok = HANDLERS[cfg.command](cfg)
    if isinstance(body, str):
        return body, 0 if ok else 1
    report = {"config": cfg.describe(), "version": __version__, "result": body, "ok": ok}
    return _dump(report), 0 if ok else 1


# ----------------------------------------------------------------------
# argument parsing


def _params_from_args(a) -> TokunagaParams:
    if a.c is not None and a.tok is not None:
        raise ConfigError("give either --c or --tok, not both")
    if a.tok is not None:
        T = tuple(as_number(x) for x in a.tok.split(",") if x.strip())
        p = as_number(a.p if a.p is not None else "1/2")
        if a.tail_ratio is not None:
            return TokunagaParams(T=T, p=p, tail="geometric", tail_ratio=as_number(a.tail_ratio))
        return TokunagaParams(T=T, p=p)
    if a.p is not None:
        raise ConfigError("--p applies to --tok sequences; the critical family fixes p = 1/2")
    return CriticalTokunaga(as_number(a.c if a.c is not None else "2"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tokunaga", description="Random self-similar trees and their checks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, n_default=1000):
        p.add_argument("--c", help="critical family parameter c >= 1 (default 2)")
        p.add_argument("--tok", help="comma-separated T_1,T_2,... (zero beyond, unless --tail-ratio)")
        p.add_argument("--tail-ratio", help="continue --tok geometrically with this ratio")
        p.add_argument("--p", help="root-order parameter for --tok (default 1/2)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n", type=int, default=n_default, help="number of samples")
        p.add_argument("--kmax", type=int, default=40)
        p.add_argument("--tol", type=float, default=1e-9)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="write the report here instead of stdout")

    def sampling(p):
        p.add_argument("--order", type=int, help="condition every tree on this order")
        p.add_argument("--max-order", type=int, help="reject draws above this order (counted)")
        p.add_argument("--max-vertices", type=int, help=f"per-tree vertex budget (default {DEFAULT_MAX_VERTICES})")
        p.add_argument("--method", choices=("recursive", "process", "gw"), default="recursive")

    p = sub.add_parser("generate", help="sample trees")
    common(p)
    sampling(p)
    p.add_argument("--newick", action="store_true", help="include every tree as Newick")
    p = sub.add_parser("prune", help="Horton-prune Newick trees")
    common(p)
    p.add_argument("--input", required=True, help="Newick file ('-' for stdin)")
    p = sub.add_parser("stats", help="Tokunaga matrix and Horton ratios")
    common(p)
    sampling(p)
    p.add_argument("--input", help="Newick file ('-' for stdin) instead of sampling")
    p.add_argument("--min-count", type=int, default=0)
    p = sub.add_parser("dynamics", help="evolve expected member counts")
    common(p)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--empirical", action="store_true", help="add a Monte Carlo estimate")
    p.add_argument("--empirical-kmax", type=int, default=10)
    p = sub.add_parser("invariance", help="time-invariance check (exit 1 on failure)")
    common(p)
    p = sub.add_parser("oracle", help="exact prune-invariance check (exit 1 on failure)")
    common(p)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--max-side", type=int, default=2)
    return ap


_OPTION_KEYS = ("order", "max_order", "max_vertices", "method", "newick", "input", "min_count", "steps", "empirical", "empirical_kmax", "max_side")


def config_from_args(a) -> RunConfig:
    params = _params_from_args(a)
    opts = {k: getattr(a, k) for k in _OPTION_KEYS if getattr(a, k, None) is not None}
    return RunConfig(a.command, params, a.n, a.kmax, a.seed, a.format, a.tol, opts)


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        cfg = config_from_args(a)
        text, status = run(cfg)
    except (ConfigError, ParameterError, ValueError, OSError) as e:
        print(f"tokunaga: error: {e}", file=sys.stderr)
        return 2
    if a.out:
        with open(a.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
