"""Command-line interface: fit models, check derivatives, sweep profiles,
and generate synthetic series.

Exit codes: 0 success, 1 tolerance/convergence failure, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import InitialCondition, SsmgradError
from .derivatives import evaluate
from .models import SeasonalArSpec, SeasonalSpec, TrendSpec
from .optimize import OptimizerConfig, multistart
from .simulate import simulate_series
from .verify import FdConfig, compare


class ParseError(SsmgradError):
    def __init__(self, line_no: int, text: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: cannot parse {text!r} as a number")


class NonFiniteValue(SsmgradError):
    def __init__(self, line_no: int):
        self.line_no = line_no
        super().__init__(f"line {line_no}: non-finite value")


def load_series(path: str, skip_header: bool = False) -> np.ndarray:
    """Read a one-value-per-line (or single-column CSV) series."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            text = raw.strip().rstrip(",").strip()
            if not text:
                continue
            if skip_header and not values and line_no == 1:
                continue
            try:
                v = float(text)
            except ValueError as exc:
                raise ParseError(line_no, text) from exc
            if not math.isfinite(v):
                raise NonFiniteValue(line_no)
            values.append(v)
    if len(values) < 2:
        raise SsmgradError(f"{path}: need at least 2 observations, got {len(values)}")
    return np.array(values)


def _fmt(x) -> str:
    # 17 significant digits round-trip a double exactly, so the human table
    # and the JSON output carry identical numbers.
    return format(float(x), ".17g")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def _np_to_plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def build_spec(args):
    if args.model == "trend":
        return TrendSpec(order=args.trend_order)
    if args.model == "seasonal":
        return SeasonalSpec(period=args.period)
    return SeasonalArSpec(
        period=args.period, ar_order=args.ar_order, parcor_bound=args.parcor_bound
    )


def _parse_theta(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split(",") if t.strip() != ""])


def _theta0(args, spec) -> np.ndarray:
    if args.theta0 is not None:
        return spec.validate_theta(_parse_theta(args.theta0))
    return spec.default_start()


def _init(args) -> InitialCondition:
    return InitialCondition(kappa=args.init_var)


def _model_descriptor(args, spec) -> dict:
    d = {"model": args.model, "p": spec.p, "m": spec.m, "k": spec.k}
    if args.model == "trend":
        d["trend_order"] = args.trend_order
    else:
        d["period"] = args.period
    if args.model == "seasonal-ar":
        d["ar_order"] = args.ar_order
        d["parcor_bound"] = args.parcor_bound
    d["init_var"] = args.init_var
    return d


def _result_payload(res, spec):
    neg_hess = -res.hessian_at_opt
    try:
        cov = np.linalg.inv(neg_hess)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(spec.p, np.nan)
    return {
        "theta_hat": res.theta_hat.tolist(),
        "natural": {k: _np_to_plain(v) for k, v in spec.describe(res.theta_hat).items()},
        "loglik": res.loglik,
        "sigma2": res.sigma2,
        "grad": res.grad_at_opt.tolist(),
        "hessian": res.hessian_at_opt.tolist(),
        "standard_errors_asymptotic": se.tolist(),
        "iterations": res.iterations,
        "converged": res.converged,
        "message": res.message,
    }


def _print_fit_table(payload, descriptor, runs):
    print("model:", " ".join(f"{k}={v}" for k, v in descriptor.items()))
    print("converged:", payload["converged"],
          f"(iterations={payload['iterations']}, {payload['message']})")
    print("theta_hat: ", " ".join(_fmt(v) for v in payload["theta_hat"]))
    for key, val in payload["natural"].items():
        if isinstance(val, list):
            print(f"{key}: ", " ".join(_fmt(v) for v in val))
        elif isinstance(val, float):
            print(f"{key}: ", _fmt(val))
        else:
            print(f"{key}: ", val)
    print("loglik:    ", _fmt(payload["loglik"]))
    print("sigma2:    ", _fmt(payload["sigma2"]))
    print("grad:      ", " ".join(_fmt(v) for v in payload["grad"]))
    print("hessian:")
    for row in payload["hessian"]:
        print("   ", " ".join(_fmt(v) for v in row))
    print("standard errors (asymptotic):",
          " ".join(_fmt(v) for v in payload["standard_errors_asymptotic"]))
    if len(runs) > 1:
        print("starts:")
        for run in runs:
            if run["error"] is not None:
                print("    theta0=", run["theta0"], " error:", run["error"])
            else:
                print(
                    "    theta0=", " ".join(_fmt(v) for v in run["theta0"]),
                    " loglik=", _fmt(run["loglik"]),
                    " converged=", run["converged"],
                )


def cmd_fit(args) -> int:
    spec = build_spec(args)
    y = load_series(args.data, skip_header=args.skip_header)
    if args.starts:
        starts = [
            spec.validate_theta(_parse_theta(chunk))
            for chunk in args.starts.split(";")
        ]
    else:
        starts = [_theta0(args, spec)]
    cfg = OptimizerConfig(
        method=args.method, grad_tol=args.grad_tol, max_iter=args.max_iter
    )
    ms = multistart(spec, starts, y, cfg=cfg, init=_init(args))
    payload = _result_payload(ms.best, spec)
    runs = [
        {
            "theta0": r.theta0.tolist(),
            "error": r.error,
            "loglik": None if r.result is None else r.result.loglik,
            "converged": None if r.result is None else r.result.converged,
            "theta_hat": None if r.result is None else r.result.theta_hat.tolist(),
        }
        for r in ms.runs
    ]
    descriptor = _model_descriptor(args, spec)
    if args.format == "json":
        _print_json({"model": descriptor, "best": payload, "starts": runs})
    else:
        _print_fit_table(payload, descriptor, runs)
    return 0 if ms.best.converged else 1


def cmd_gradcheck(args) -> int:
    spec = build_spec(args)
    y = load_series(args.data, skip_header=args.skip_header)
    theta = _theta0(args, spec)
    cfg = FdConfig(rel_step=args.fd_step, min_step=args.fd_step)
    report = compare(spec, theta, y, cfg=cfg, init=_init(args))
    ok = report.passes(grad_rel_tol=args.tol, hess_rel_tol=args.hess_tol)
    if args.format == "json":
        _print_json(
            {
                "theta": theta.tolist(),
                "loglik": report.analytic.loglik,
                "sigma2": report.analytic.sigma2,
                "grad_analytic": report.analytic.grad.tolist(),
                "grad_numeric": report.numeric_grad.tolist(),
                "hessian_analytic": report.analytic.hessian.tolist(),
                "hessian_numeric": report.numeric_hessian.tolist(),
                "max_rel_err_grad": report.max_rel_err_grad,
                "max_rel_err_hess": report.max_rel_err_hess,
                "analytic_seconds": report.analytic_seconds,
                "fd_seconds": report.fd_seconds,
                "pass": ok,
            }
        )
    else:
        print("theta:", " ".join(_fmt(v) for v in theta))
        print("loglik:", _fmt(report.analytic.loglik),
              " sigma2:", _fmt(report.analytic.sigma2))
        print(f"{'entry':>8s} {'analytic':>24s} {'numeric':>24s} {'rel_err':>10s}")
        for j, a, b, e in report.grad_entries:
            print(f"grad[{j}]".rjust(8), _fmt(a).rjust(24), _fmt(b).rjust(24),
                  f"{e:.2e}".rjust(10))
        for (i, j), a, b, e in report.hess_entries:
            print(f"h[{i},{j}]".rjust(8), _fmt(a).rjust(24), _fmt(b).rjust(24),
                  f"{e:.2e}".rjust(10))
        print(f"max rel err: grad {report.max_rel_err_grad:.3e}, "
              f"hessian {report.max_rel_err_hess:.3e}")
        print(f"wall time: analytic pass {report.analytic_seconds*1e3:.2f} ms, "
              f"FD gradient (2p evals) {report.fd_seconds*1e3:.2f} ms")
        print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _parse_grid(text: str, p: int):
    axes = []
    for part in text.split(","):
        idx, rng = part.split("=")
        lo, hi, count = rng.split(":")
        j = int(idx)
        if not 0 <= j < p:
            raise SsmgradError(f"grid index {j} out of range for p={p}")
        axes.append((j, np.linspace(float(lo), float(hi), int(count))))
    if not 1 <= len(axes) <= 2:
        raise SsmgradError("grid must cover 1 or 2 parameters")
    return axes


def cmd_profile(args) -> int:
    spec = build_spec(args)
    y = load_series(args.data, skip_header=args.skip_header)
    base = _theta0(args, spec)
    axes = _parse_grid(args.grid, spec.p)
    init = _init(args)

    points = []
    if len(axes) == 1:
        j, vals = axes[0]
        for v in vals:
            t = base.copy()
            t[j] = v
            points.append(t)
    else:
        (j1, v1), (j2, v2) = axes
        for a in v1:
            for b in v2:
                t = base.copy()
                t[j1] = a
                t[j2] = b
                points.append(t)

    def one(t):
        try:
            rep = evaluate(spec, t, y, init=init, order="hessian")
            return {
                "theta": t.tolist(),
                "loglik": rep.loglik,
                "sigma2": rep.sigma2,
                "grad": rep.grad.tolist(),
                "hessian": rep.hessian.tolist(),
                "error": None,
            }
        except Exception as exc:  # per-point failure: record and continue
            return {"theta": t.tolist(), "loglik": None, "sigma2": None,
                    "grad": None, "hessian": None, "error": str(exc)}

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(one, points))  # input order preserved
    else:
        rows = [one(t) for t in points]

    if args.format == "json":
        _print_json(rows)
    else:
        p = spec.p
        header = (
            [f"theta{j}" for j in range(p)]
            + ["loglik", "sigma2"]
            + [f"grad{j}" for j in range(p)]
            + [f"hess{i}_{j}" for i in range(p) for j in range(i, p)]
        )
        print(" ".join(header))
        for row in rows:
            if row["error"] is not None:
                cells = [_fmt(v) for v in row["theta"]]
                cells += ["nan"] * (len(header) - p)
            else:
                hess = row["hessian"]
                cells = (
                    [_fmt(v) for v in row["theta"]]
                    + [_fmt(row["loglik"]), _fmt(row["sigma2"])]
                    + [_fmt(v) for v in row["grad"]]
                    + [_fmt(hess[i][j]) for i in range(p) for j in range(i, p)]
                )
            print(" ".join(cells))
    return 0


def cmd_simulate(args) -> int:
    spec = build_spec(args)
    theta = spec.validate_theta(_parse_theta(args.theta))
    x0 = None if args.x0 is None else _parse_theta(args.x0)
    y = simulate_series(
        spec, theta, args.n, seed=args.seed, obs_std=args.obs_std, x0=x0
    )
    lines = "\n".join(repr(float(v)) for v in y) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(lines)
    else:
        sys.stdout.write(lines)
    return 0


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("--model", required=True,
                   choices=["trend", "seasonal", "seasonal-ar"])
    p.add_argument("--trend-order", type=int, default=1, choices=[1, 2])
    p.add_argument("--period", type=int, default=12)
    p.add_argument("--ar-order", type=int, default=1)
    p.add_argument("--parcor-bound", type=float, default=1.0)
    p.add_argument("--init-var", type=float, default=1e4,
                   help="initial state covariance scale kappa")
    p.add_argument("--theta0", type=str, default=None,
                   help="comma-separated working parameters")
    p.add_argument("--format", choices=["table", "json"], default="table")


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="single-column numeric file")
    p.add_argument("--skip-header", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmgrad",
        description="Fit structural time-series models by maximum likelihood "
                    "with exact filter-based gradients and Hessians.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="maximize the likelihood")
    _add_model_args(p_fit)
    _add_data_args(p_fit)
    p_fit.add_argument("--starts", type=str, default=None,
                       help="semicolon-separated theta starts for multistart")
    p_fit.add_argument("--method", choices=["bfgs", "newton"], default="bfgs")
    p_fit.add_argument("--grad-tol", type=float, default=1e-6)
    p_fit.add_argument("--max-iter", type=int, default=200)
    p_fit.set_defaults(func=cmd_fit)

    p_gc = sub.add_parser("gradcheck",
                          help="compare analytic and numeric derivatives")
    _add_model_args(p_gc)
    _add_data_args(p_gc)
    p_gc.add_argument("--tol", type=float, default=1e-4,
                      help="relative tolerance for the gradient check")
    p_gc.add_argument("--hess-tol", type=float, default=1e-5,
                      help="relative tolerance for the Hessian check")
    p_gc.add_argument("--fd-step", type=float, default=1e-4)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_pr = sub.add_parser("profile",
                          help="evaluate the likelihood surface on a grid")
    _add_model_args(p_pr)
    _add_data_args(p_pr)
    p_pr.add_argument("--grid", required=True,
                      help="axis spec 'j=lo:hi:count' (one or two, comma-joined)")
    p_pr.add_argument("--jobs", type=int, default=1)
    p_pr.set_defaults(func=cmd_profile)

    p_sim = sub.add_parser("simulate", help="draw a synthetic series")
    _add_model_args(p_sim)
    p_sim.add_argument("--theta", required=True,
                       help="comma-separated true parameters")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--obs-std", type=float, default=1.0)
    p_sim.add_argument("--x0", type=str, default=None)
    p_sim.add_argument("--out", type=str, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SsmgradError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
