"""Command-line front end.

Commands
--------
arms      per-arm exponents and transmission coefficients of one multiplexer
prob      output photon-number distribution for one configuration
optimize  optimal mean photon number per N and the optimal N
sweep     difference of maximal single-photon probabilities over a loss grid
table1    maximal probabilities on the V_r x V_D x V_t reference grid
mc        Monte Carlo estimate next to the analytic distribution

Every parameter can also come from ``--config FILE`` (JSON object keyed by
the long option names with dashes replaced by underscores, or a manifest
written by an earlier run).  Flags given on the command line win.

Exit status: 0 success, 2 invalid arguments, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .engine import DetectionStrategy, SourceConfig, output_distribution
from .optimizer import DEFAULT_N_MAX, Axis, SweepGrid, optimize_n, sweep_difference
from .oracle import run_trials, z_scores
from .topology import Kind, LossModel, TopologySpec, arm_exponents, build_arm_transmissions, format_term

EXIT_INVALID = 2
EXIT_NUMERICAL = 3

DEFAULTS: dict[str, Any] = {
    "kind": "oibtm",
    "n": 8,
    "vr": 0.99,
    "vt": 0.985,
    "vd": 0.98,
    "vb": 0.98,
    "strategy": "1",
    "lam": 0.5,
    "i_max": 3,
    "n_max": DEFAULT_N_MAX,
    "symbolic": False,
    "list": False,
    "paper_rounding": False,
    "workers": None,
    "trials": 1_000_000,
    "seed": 0,
    "x": None,
    "y": None,
    "a": "oibtm",
    "a_strategy": None,
    "b": "cbtm",
    "b_strategy": None,
    "layout": "long",
    "output": None,
    "curve": None,
}

TABLE1_VR = (0.92, 0.97, 0.99)
TABLE1_VD = (0.8, 0.9, 0.95, 0.98)
TABLE1_VT = (0.9, 0.95, 0.985)


class NumericalFailure(RuntimeError):
    pass


def _fmt(x: float, paper: bool = False) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if not math.isfinite(x):
        raise NumericalFailure(f"non-finite value {x!r} in output")
    return f"{x:.3f}" if paper else format(float(x), ".17g")


def _param(x: float) -> str:
    # inputs print in their shortest round-trip form
    return repr(float(x))


def _round(x: float, paper: bool) -> float:
    if not math.isfinite(x):
        raise NumericalFailure(f"non-finite value {x!r} in output")
    return round(x, 3) if paper else float(x)


def _loss(p: dict) -> LossModel:
    return LossModel(float(p["vr"]), float(p["vt"]), float(p["vd"]), float(p["vb"]))


def _manifest(command: str, params: dict, seed: int | None = None) -> dict:
    out = {
        "command": command,
        "parameters": {k: v for k, v in params.items() if k not in ("output", "curve", "config")},
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if seed is not None:
        out["seed"] = seed
    return out


def _emit(text: str, path: str | None, manifest: dict) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    target = Path(path)
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    with open(target.with_name(target.name + ".manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json(obj: dict) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def cmd_arms(p: dict) -> None:
    spec = TopologySpec(Kind.parse(p["kind"]), int(p["n"]))
    loss = _loss(p)
    arms = build_arm_transmissions(spec, loss)
    exps = arm_exponents(spec)
    ranks = arms.position_to_priority
    if p["list"]:
        text = "[" + ", ".join(format_term(a, b) for a, b in exps) + "]\n"
    elif p["symbolic"]:
        rows = [(n, a, b, format_term(a, b), ranks[n - 1]) for n, (a, b) in enumerate(exps, start=1)]
        text = _csv(("n", "exp_vr", "exp_vt", "term", "priority_rank"), rows)
    else:
        paper = p["paper_rounding"]
        rows = [
            (n, a, b, _fmt(v, paper), _fmt(v * loss.v_b, paper), ranks[n - 1])
            for n, ((a, b), v) in enumerate(zip(exps, arms.positional), start=1)
        ]
        text = _csv(("n", "exp_vr", "exp_vt", "v_n", "v_total", "priority_rank"), rows)
    _emit(text, p["output"], _manifest("arms", p))


def _source(p: dict) -> SourceConfig:
    return SourceConfig(
        TopologySpec(Kind.parse(p["kind"]), int(p["n"])),
        _loss(p),
        DetectionStrategy.parse(str(p["strategy"])),
        float(p["lam"]),
    )


def cmd_prob(p: dict) -> None:
    config = _source(p)
    dist = output_distribution(config, int(p["i_max"]))
    paper = p["paper_rounding"]
    manifest = _manifest("prob", p)
    result = {
        "probabilities": [_round(x, paper) for x in dist.probabilities],
        "truncation_tail": dist.truncation_tail,
        "l_max": dist.l_max,
    }
    if p["output"] is None:
        result["manifest"] = manifest
    _emit(_json(result), p["output"], manifest)


def cmd_optimize(p: dict) -> None:
    kind = Kind.parse(p["kind"])
    outcome = optimize_n(kind, _loss(p), DetectionStrategy.parse(str(p["strategy"])), int(p["n_max"]))
    paper = p["paper_rounding"]
    manifest = _manifest("optimize", p)
    result = outcome.to_dict()
    result["p1_max"] = _round(outcome.p1_max, paper)
    result["lambda_opt"] = _round(outcome.lambda_opt, paper)
    result["power_of_two_only"] = kind is Kind.CBTM
    result["per_n"] = [
        {"n": o.n_units, "lambda_opt": _round(o.lambda_opt, paper), "p1_achievable": _round(o.p1_achievable, paper)}
        for o in outcome.per_n
    ]
    if p["output"] is None:
        result["manifest"] = manifest
    _emit(_json(result), p["output"], manifest)
    if p["curve"] is not None:
        rows = [(o.n_units, _fmt(o.lambda_opt, paper), _fmt(o.p1_achievable, paper)) for o in outcome.per_n]
        _emit(_csv(("n", "lambda_opt", "p1_achievable"), rows), p["curve"], manifest)


def cmd_sweep(p: dict) -> None:
    axes = tuple(Axis.parse(s) for s in (p["x"], p["y"]) if s)
    if not axes:
        raise ValueError("sweep needs at least --x")
    fixed = {"v_r": p["vr"], "v_t": p["vt"], "v_d": p["vd"], "v_b": p["vb"]}
    grid = SweepGrid(axes, {k: float(v) for k, v in fixed.items()})
    strategy = str(p["strategy"])
    side_a = (Kind.parse(p["a"]), DetectionStrategy.parse(str(p["a_strategy"] or strategy)))
    side_b = (Kind.parse(p["b"]), DetectionStrategy.parse(str(p["b_strategy"] or strategy)))
    rows = sweep_difference(grid, side_a, side_b, int(p["n_max"]), p["workers"])
    paper = p["paper_rounding"]
    header = ("index", "v_r", "v_t", "v_d", "v_b", "p1_max_a", "n_opt_a", "lambda_opt_a",
              "p1_max_b", "n_opt_b", "lambda_opt_b", "delta_p", "delta_n")
    body = [
        (r.index, _param(r.loss.v_r), _param(r.loss.v_t), _param(r.loss.v_d), _param(r.loss.v_b),
         _fmt(r.p1_max_a, paper), r.n_opt_a, _fmt(r.lambda_opt_a, paper),
         _fmt(r.p1_max_b, paper), r.n_opt_b, _fmt(r.lambda_opt_b, paper),
         _fmt(r.delta_p, paper), r.delta_n)
        for r in rows
    ]
    _emit(_csv(header, body), p["output"], _manifest("sweep", p))


def table1_rows(v_b: float = 0.98, kind: Kind | str = Kind.OIBTM, strategy: DetectionStrategy | None = None,
                n_max: int = DEFAULT_N_MAX) -> list[tuple[float, float, float, float, int, float]]:
    """(v_r, v_d, v_t, p1_max, n_opt, lambda_opt) in table order."""
    out = []
    for vr in TABLE1_VR:
        for vd in TABLE1_VD:
            for vt in TABLE1_VT:
                o = optimize_n(kind, LossModel(vr, vt, vd, v_b), strategy, n_max)
                out.append((vr, vd, vt, o.p1_max, o.n_opt, o.lambda_opt))
    return out


def cmd_table1(p: dict) -> None:
    rows = table1_rows(float(p["vb"]), Kind.parse(p["kind"]), DetectionStrategy.parse(str(p["strategy"])),
                       int(p["n_max"]))
    paper = p["paper_rounding"]
    if p["layout"] == "wide":
        header = ["v_r", "v_d"]
        for vt in TABLE1_VT:
            header += [f"p1_max@vt={vt}", f"n_opt@vt={vt}", f"lambda_opt@vt={vt}"]
        body = []
        for k in range(0, len(rows), len(TABLE1_VT)):
            group = rows[k : k + len(TABLE1_VT)]
            line: list[Any] = [_param(group[0][0]), _param(group[0][1])]
            for _, _, _, p1, n, lam in group:
                line += [_fmt(p1, paper), n, _fmt(lam, paper)]
            body.append(line)
    else:
        header = ["v_r", "v_d", "v_t", "p1_max", "n_opt", "lambda_opt"]
        body = [(_param(vr), _param(vd), _param(vt), _fmt(p1, paper), n, _fmt(lam, paper))
                for vr, vd, vt, p1, n, lam in rows]
    _emit(_csv(header, body), p["output"], _manifest("table1", p))


def cmd_mc(p: dict) -> None:
    config = _source(p)
    seed = int(p["seed"])
    estimate = run_trials(config, int(p["trials"]), seed, workers=int(p["workers"] or 1))
    i_max = int(p["i_max"])
    analytic = output_distribution(config, i_max)
    z = z_scores(estimate, analytic, range(i_max + 1))
    manifest = _manifest("mc", p, seed=seed)
    result = estimate.to_dict()
    result["comparison"] = [
        {
            "i": i,
            "p_hat": estimate.p(i),
            "std_err": float(estimate.std_err[i]) if i < len(estimate.counts) else 0.0,
            "analytic": analytic[i],
            "abs_diff_over_sigma": abs(z[i]),
        }
        for i in range(i_max + 1)
    ]
    if p["output"] is None:
        result["manifest"] = manifest
    _emit(_json(result), p["output"], manifest)


COMMANDS: dict[str, Callable[[dict], None]] = {
    "arms": cmd_arms,
    "prob": cmd_prob,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "table1": cmd_table1,
    "mc": cmd_mc,
}


def _add_loss(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("losses")
    g.add_argument("--vr", type=float, help="router reflection efficiency V_r (default 0.99)")
    g.add_argument("--vt", type=float, help="router transmission efficiency V_t (default 0.985)")
    g.add_argument("--vd", type=float, help="detector efficiency V_D (default 0.98)")
    g.add_argument("--vb", type=float, help="general transmission coefficient V_b (default 0.98)")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file with parameters (flags override it)")
    sp.add_argument("--output", "-o", help="write to this file (plus FILE.manifest.json) instead of stdout")
    sp.add_argument("--paper-rounding", action="store_true", default=None,
                    help="round probabilities and mean photon numbers to 3 decimals")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treemux", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    sp = sub.add_parser("arms", formatter_class=fmt, help="arm transmission coefficients",
                        description="CSV columns: n, exp_vr, exp_vt, v_n (router product), "
                                    "v_total (v_n * V_b), priority_rank (1 = preferred).\n"
                                    "--symbolic replaces the numeric columns by the term V_r^a V_t^b.")
    sp.add_argument("--kind", help="cbtm, iibtm or oibtm (default oibtm)")
    sp.add_argument("--n", type=int, help="number of multiplexed units")
    sp.add_argument("--symbolic", action="store_true", default=None, help="print exponent terms")
    sp.add_argument("--list", action="store_true", default=None, help="print the terms as one bracketed list")
    _add_loss(sp)
    _add_common(sp)

    for name, help_text in (("prob", "output photon-number distribution"),
                            ("mc", "Monte Carlo estimate with analytic comparison")):
        sp = sub.add_parser(name, help=help_text,
                            description="JSON output: probabilities P_0..P_imax" +
                                        (" with counts, std_err and |p_hat-P|/sigma per i" if name == "mc" else
                                         ", truncation tail and series order"))
        sp.add_argument("--kind")
        sp.add_argument("--n", type=int)
        sp.add_argument("--lam", type=float, help="input mean photon number (default 0.5)")
        sp.add_argument("--strategy", help="accepted detected counts, e.g. 1 or 1,2 or spd (default 1)")
        sp.add_argument("--i-max", type=int, help="largest output photon number reported (default 3)")
        if name == "mc":
            sp.add_argument("--trials", type=int, help="number of trials (default 1e6)")
            sp.add_argument("--seed", type=int, help="64-bit seed (default 0)")
            sp.add_argument("--workers", type=int, help="worker processes (default 1)")
        _add_loss(sp)
        _add_common(sp)

    sp = sub.add_parser("optimize", help="optimise lambda per N and select N",
                        description="JSON output with per_n list; --curve FILE writes CSV columns "
                                    "n, lambda_opt, p1_achievable. CBTM scans powers of two only.")
    sp.add_argument("--kind")
    sp.add_argument("--strategy")
    sp.add_argument("--n-max", type=int, help=f"largest N scanned (default {DEFAULT_N_MAX})")
    sp.add_argument("--curve", help="CSV file for the per-N curve")
    _add_loss(sp)
    _add_common(sp)

    sp = sub.add_parser("sweep", help="difference surfaces over a loss grid",
                        description="CSV columns: index, v_r, v_t, v_d, v_b, p1_max_a, n_opt_a, lambda_opt_a, "
                                    "p1_max_b, n_opt_b, lambda_opt_b, delta_p (a - b), delta_n (a - b). "
                                    "Rows follow grid order, first axis slowest.")
    sp.add_argument("--x", help="axis name:start:stop:step, e.g. vt:0.9:0.985:0.005")
    sp.add_argument("--y", help="second axis, e.g. vr:0.9:0.99:0.005")
    sp.add_argument("--a", help="minuend multiplexer kind (default oibtm)")
    sp.add_argument("--b", help="subtrahend multiplexer kind (default cbtm)")
    sp.add_argument("--strategy", help="strategy for both sides (default 1)")
    sp.add_argument("--a-strategy", help="strategy of the minuend")
    sp.add_argument("--b-strategy", help="strategy of the subtrahend")
    sp.add_argument("--n-max", type=int)
    sp.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    _add_loss(sp)
    _add_common(sp)

    sp = sub.add_parser("table1", help="maximal probabilities on the reference grid",
                        description="CSV columns (long): v_r, v_d, v_t, p1_max, n_opt, lambda_opt. "
                                    "--layout wide gives one row per (v_r, v_d) with a column group per v_t.")
    sp.add_argument("--kind")
    sp.add_argument("--strategy")
    sp.add_argument("--n-max", type=int)
    sp.add_argument("--vb", type=float, help="general transmission coefficient (default 0.98)")
    sp.add_argument("--layout", choices=("long", "wide"))
    _add_common(sp)
    return parser


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    if "parameters" in data and isinstance(data["parameters"], dict):
        data = data["parameters"]
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Built-in defaults < config file < command-line flags, limited to the command's options."""
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    params = {k: DEFAULTS[k] for k in given}
    if getattr(args, "config", None):
        params.update({k: v for k, v in load_config(args.config).items() if k in given})
    params.update({k: v for k, v in given.items() if v is not None})
    return params


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        params = resolve(args)
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            COMMANDS[args.command](params)
    except (NumericalFailure, FloatingPointError, ArithmeticError) as exc:
        print(f"treemux: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, OSError) as exc:
        print(f"treemux: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0


if __name__ == "__main__":
    sys.exit(main())
