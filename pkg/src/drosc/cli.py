"""Command-line entry point: estimate, infer, sweep, simulate, experiment.

Exit codes: 0 ok, 1 I/O or input error, 2 infeasible uncertainty class,
3 degenerate inference (every perturbation filtered or infeasible),
64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from drosc import __version__
from drosc.estimator import DroscConfig, EstimationInfeasible, estimate
from drosc.infer import InferConfig, InferenceDegenerate, RhoMEscalationError, infer
from drosc.lpsolve import LpFailure, LpInfeasible
from drosc.panel import PanelData, PanelError, basque_path, load_panel
from drosc.simlab import DEFAULT_KAPPAS, DEFAULT_TAU_GRID, SETTINGS, run_monte_carlo, stability_experiment, \
    weight_shift_experiment

EXIT_OK, EXIT_IO, EXIT_INFEASIBLE, EXIT_DEGENERATE, EXIT_USAGE = 0, 1, 2, 3, 64

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive of hi up to rounding) or a comma list."""
    try:
        if ":" in text:
            lo, hi, step = (float(s) for s in text.split(":"))
            if step <= 0 or hi < lo:
                raise UsageError(f"bad grid {text!r}: need lo <= hi and step > 0")
            count = int(math.floor((hi - lo) / step + 1e-9)) + 1
            # round to the step's decimals so 0.054 prints as 0.054
            digits = max(0, -int(math.floor(math.log10(step))) + 3)
            grid = [round(lo + k * step, digits) for k in range(count)]
        else:
            grid = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None
    if not grid:
        raise UsageError("grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError(f"grid {text!r} must be strictly increasing")
    return grid


def resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("DROSC_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DROSC_SEED must be an integer, got {env!r}") from None
    return 0


def _load(args) -> PanelData:
    if args.panel is None:
        path = basque_path()
        t0 = 15 if args.t0 is None else args.t0
    else:
        path = Path(args.panel)
        if args.t0 is None:
            raise UsageError("--t0 is required with --panel")
        t0 = args.t0
    return load_panel(path, t0)


def _named(panel: PanelData, beta) -> dict:
    return {name: float(w) for name, w in zip(panel.unit_names, beta)}


def estimate_record(panel: PanelData, lam: float):
    """JSON-ready estimate record and the underlying DroscEstimate."""
    est = estimate(panel, DroscConfig(lam=lam))
    rec = {
        "command": "estimate",
        "version": __version__,
        "lambda": lam,
        "t0": panel.t0,
        "tau_hat": est.tau_hat,
        "beta_hat": _named(panel, est.beta_hat),
        "beta_hat_note": "one attaining weight; minimizers may not be unique",
        "tau_interval": list(est.tau_interval),
        "case": est.case,
        "rho_final": est.rho_final,
        "escalations": est.escalations,
        "sc": {
            "tau_sc": est.sc.tau_sc,
            "beta_sc": _named(panel, est.sc.beta_sc),
            "sigma_hat_resid": est.sc.sigma_hat_resid,
            "pre_rmse": est.sc.pre_rmse,
        },
    }
    return rec, est


def _infer_cfg(args, lam: float, seed: int) -> InferConfig:
    try:
        return InferConfig(
            m_draws=args.draws,
            alpha=args.alpha,
            alpha0=args.alpha0,
            lam=lam,
            feasible_prop=args.feasible_prop,
            cov_mode=args.cov,
            refined=not args.unrefined,
            psd_filter=not args.no_psd_filter,
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def infer_record(panel: PanelData, cfg: InferConfig) -> dict:
    rec, est = estimate_record(panel, cfg.lam)
    ci = infer(panel, cfg, est)
    rec["command"] = "infer"
    rec["seed"] = cfg.seed
    rec["config"] = {k: v for k, v in asdict(cfg).items()}
    rec["ci"] = ci.to_dict()
    rec["ci"]["contains_zero"] = ci.contains(0.0)
    return rec


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        names = list(rows[0])
        for r in rows[1:]:
            names += [k for k in r if k not in names]
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return buf.getvalue()


def _flatten(rec: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in rec.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def _json_text(rec) -> str:
    return json.dumps(rec, indent=2, allow_nan=False, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _output(rec, args) -> None:
    if args.format == "csv":
        rows = rec if isinstance(rec, list) else [_flatten(rec)]
        _emit(_csv_text(rows), args.out)
    else:
        _emit(_json_text(rec), args.out)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    panel = _load(args)
    rec, _ = estimate_record(panel, args.lam)
    _output(rec, args)
    return EXIT_OK


def cmd_infer(args) -> int:
    panel = _load(args)
    cfg = _infer_cfg(args, args.lam, resolve_seed(args.seed))
    _output(infer_record(panel, cfg), args)
    return EXIT_OK


def sweep_row(panel: PanelData, lam: float, args, seed: int) -> dict:
    row = {"lambda": lam, "status": "ok", "tau_hat": None, "ci_lo_hull": None, "ci_hi_hull": None,
           "union_measure": None, "components": None, "contains_zero": None, "error": ""}
    try:
        rec = infer_record(panel, _infer_cfg(args, lam, seed))
    except (EstimationInfeasible, LpInfeasible) as exc:
        row.update(status="infeasible", error=str(exc))
        return row
    except (InferenceDegenerate, RhoMEscalationError, LpFailure) as exc:
        row.update(status="degenerate", error=str(exc))
        return row
    ci = rec["ci"]
    row.update(
        tau_hat=rec["tau_hat"],
        ci_lo_hull=ci["hull"][0],
        ci_hi_hull=ci["hull"][1],
        union_measure=ci["total_measure"],
        components=len(ci["components"]),
        contains_zero=ci["contains_zero"],
    )
    return row


def cmd_sweep(args) -> int:
    panel = _load(args)
    grid = parse_grid(args.lambda_grid) if args.lambda_grid else [args.lam]
    seed = resolve_seed(args.seed)
    _infer_cfg(args, grid[0], seed)  # validate once up front
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(lambda lam: sweep_row(panel, lam, args, seed), grid))
    else:
        rows = [sweep_row(panel, lam, args, seed) for lam in grid]
    if args.format == "json":
        _emit(_json_text({"command": "sweep", "version": __version__, "seed": seed, "rows": rows}), args.out)
    else:
        _emit(_csv_text(rows), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    name = args.setting.upper()
    if name not in SETTINGS:
        raise UsageError(f"unknown setting {args.setting!r}; choose S1|S2|S3")
    tau_grid = parse_grid(args.tau_grid) if args.tau_grid else list(DEFAULT_TAU_GRID)
    seed = resolve_seed(args.seed)
    cfg = _infer_cfg(args, 0.0, seed)
    report = run_monte_carlo(name, tau_grid, args.sim_t0, args.t1, args.phi, args.replicates, cfg,
                             n=args.n, seed=seed, threads=args.threads)
    prefix = Path(args.out) if args.out else Path(f"mc_{name}")
    report.to_csv(prefix.with_suffix(".csv"))
    report.to_json(prefix.with_suffix(".json"))
    print(report.summary())
    print(f"wrote {prefix.with_suffix('.csv')} and {prefix.with_suffix('.json')}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    panel = _load(args)
    seed = resolve_seed(args.seed)
    if args.kind == "stability":
        cs = parse_grid(args.noise_c)
        rows = []
        for c in cs:
            freq = stability_experiment(panel, c, args.replicates, seed=seed)
            rows.append({"noise_c": c, **{name: float(f) for name, f in zip(panel.unit_names, freq)}})
    else:
        kappas = parse_grid(args.kappas) if args.kappas else list(DEFAULT_KAPPAS)
        rows = weight_shift_experiment(panel, kappas, args.replicates, tau_bar=args.tau_bar, seed=seed)
    if args.format == "json":
        _emit(_json_text({"command": "experiment", "kind": args.kind, "seed": seed, "rows": rows}), args.out)
    else:
        _emit(_csv_text(rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p, *, panel=True, inference=False, fmt="json"):
    if panel:
        p.add_argument("--panel", help="wide CSV (time, treated, controls...); default: bundled Basque panel")
        p.add_argument("--t0", type=int, help="number of pre-treatment periods (default 15 for the bundled panel)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="weight-shift parameter (default 0)")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=fmt)
    p.add_argument("--seed", type=int, help="RNG seed (fallback: $DROSC_SEED, then 0)")
    p.add_argument("--threads", type=int, default=1, help="worker cap")
    if inference:
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--alpha0", type=float, default=0.01)
        p.add_argument("--draws", type=int, default=500, help="perturbation draws M")
        p.add_argument("--feasible-prop", type=float, default=0.10)
        p.add_argument("--cov", choices=("iid", "hac"), default="iid")
        p.add_argument("--unrefined", action="store_true",
                       help="aggregate over the filtered set without the lambda=0 feasibility screen")
        p.add_argument("--no-psd-filter", action="store_true",
                       help="keep perturbations whose Sigma draw is indefinite")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drosc", description="Distributionally robust synthetic control")
    parser.add_argument("--version", action="version", version=f"drosc {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="point estimate and SC baseline")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("infer", help="perturbation confidence set")
    _common(p, inference=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="estimate + CI over a lambda grid")
    _common(p, inference=True, fmt="csv")
    p.add_argument("--lambda-grid", help="lo:hi:step or comma list")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo coverage study")
    _common(p, panel=False, inference=True)
    p.add_argument("--setting", required=True, help="S1|S2|S3")
    p.add_argument("--tau-grid", help="tau_bar values, lo:hi:step or comma list")
    p.add_argument("--t0", dest="sim_t0", type=int, default=25)
    p.add_argument("--t1", type=int, default=25)
    p.add_argument("--phi", type=float, default=0.0)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--replicates", type=int, default=500)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="SC stability or weight-shift tables")
    _common(p, fmt="csv")
    p.add_argument("kind", choices=("stability", "weight-shift"))
    p.add_argument("--noise-c", default="0.05,0.1,0.15")
    p.add_argument("--kappas", help="kappa grid (default 0.05,0.1,0.2,0.3,0.4)")
    p.add_argument("--tau-bar", type=float, default=0.0)
    p.add_argument("--replicates", type=int, default=200)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"drosc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PanelError, OSError) as exc:
        print(f"drosc: input error while loading panel: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EstimationInfeasible, LpInfeasible) as exc:
        print(f"drosc: estimation infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InferenceDegenerate, RhoMEscalationError) as exc:
        print(f"drosc: inference degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except KeyError as exc:
        print(f"drosc: input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
