"""Command-line front end.

Exit codes: 0 success, 2 invalid parameters or model document,
3 malformed stream, 4 Monte Carlo truncation policy tripped.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
from importlib import resources
from typing import Sequence, TextIO

from . import analytic, framework, simulate, stream
from .types import DriftChangeSpec, Regime, loglik_drift

EXIT_OK = 0
EXIT_PARAM = 2
EXIT_STREAM = 3
EXIT_POLICY = 4

SEED_ENV = "ECUSUM_SEED"


class ParamError(ValueError):
    pass


def _float_list(text: str) -> list[float]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ParamError("empty list")
    try:
        return [float(s) for s in items]
    except ValueError:
        raise ParamError(f"malformed number list {text!r}") from None


def _gamma_grid(text: str) -> list[float]:
    """Comma list, or ``lo:hi:n`` for ``n`` log-spaced points."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ParamError("log grid must be lo:hi:n")
        try:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ParamError(f"malformed log grid {text!r}") from None
        if not (0 < lo <= hi) or n < 1:
            raise ParamError("log grid needs 0 < lo <= hi and n >= 1")
        if n == 1:
            return [lo]
        step = (math.log(hi) - math.log(lo)) / (n - 1)
        return [math.exp(math.log(lo) + k * step) for k in range(n)]
    return _float_list(text)


def _emit(fh: TextIO, fmt: str, config: dict, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    def cell(v: object) -> str:
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    if fmt == "csv":
        for k, v in config.items():
            fh.write(f"# {k}={cell(v)}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")
    else:
        for k, v in config.items():
            fh.write(f"{k}: {cell(v)}\n")
        for i, row in enumerate(rows):
            if len(rows) > 1:
                fh.write(f"[row {i}]\n")
            for k, v in zip(header, row):
                fh.write(f"  {k}: {cell(v)}\n")


def _resolve_seed(args: argparse.Namespace) -> tuple[int, str]:
    if args.seed is not None:
        return args.seed, "flag"
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env), f"env:{SEED_ENV}"
        except ValueError:
            raise ParamError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0, "default"


def cmd_calibrate(args: argparse.Namespace, out: TextIO) -> int:
    spec = DriftChangeSpec(args.mu, args.lam)
    spec.require_rate()
    nu = analytic.calibrate_threshold(args.gamma, spec)
    op = analytic.ecusum_operating_point(nu, spec)
    config = {"command": "calibrate", "gamma": args.gamma, "mu": args.mu, "lambda": args.lam}
    header = ("nu_star", "delay", "false_alarm_period", "normalized_delay", "normalized_fa")
    _emit(out, args.format, config, header, [(float(nu), op.delay, op.false_alarm_period, op.normalized_delay, op.normalized_fa)])
    return EXIT_OK


def cmd_curves(args: argparse.Namespace, out: TextIO) -> int:
    ratios = _float_list(args.ratios)
    grid = _gamma_grid(args.gamma_grid)
    rows = analytic.curve_table(ratios, grid)
    config = {"command": "curves", "ratios": args.ratios, "gamma_grid": args.gamma_grid}
    _emit(out, args.format, config, analytic.CURVE_HEADER,
          [(r.ratio, r.gamma_norm, r.ecusum_delay_norm, r.cusum_delay_norm) for r in rows])
    return EXIT_OK


def cmd_mc(args: argparse.Namespace, out: TextIO) -> int:
    seed, seed_source = _resolve_seed(args)
    regime = Regime.parse(args.regime)
    spec = DriftChangeSpec(args.mu, args.lam)
    cfg = simulate.SimConfig(
        n_paths=args.paths, seed=seed, dt=args.dt, max_time=args.max_time, bridge=args.bridge, workers=args.workers
    )
    if args.y0 > args.nu:
        raise ParamError("--y0 must not exceed --nu")
    est = simulate.monte_carlo_run_length(regime, spec, args.nu, args.y0, cfg, args.variant)
    reference = None
    if args.variant == "ecusum" and spec.lam > 0:
        reference = analytic.expected_run_length(args.y0, args.nu, loglik_drift(regime, args.mu), args.mu, spec.lam)
    elif args.variant == "cusum" and args.y0 == 0.0:
        op = analytic.cusum_operating_point(args.nu, args.mu)
        reference = op.delay if regime is Regime.POST_CHANGE else op.false_alarm_period
    z = None if reference is None else est.z_score(reference)
    config = {
        "command": "mc", "regime": regime.value, "variant": args.variant, "mu": args.mu, "lambda": args.lam,
        "nu": args.nu, "y0": args.y0, "paths": args.paths, "dt": est.dt, "seed": seed, "seed_source": seed_source,
        "bridge": args.bridge, "max_time": args.max_time, "workers": args.workers,
    }
    header = simulate.REPORT_HEADER + ("analytic", "z_score")
    row = (regime.value, args.mu, args.lam, args.nu, args.y0, est.dt, est.n_paths, seed, est.mean, est.stderr,
           est.truncated, reference, z)
    _emit(out, args.format, config, header, [row])
    return EXIT_OK


def cmd_detect(args: argparse.Namespace, out: TextIO) -> int:
    fh = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8", newline="")
    try:
        report = stream.run_detector(stream.parse_records(fh, levels=args.levels), args.mu, args.nu, args.variant)
    finally:
        if fh is not sys.stdin:
            fh.close()
    config = {"command": "detect", "input": args.input, "mu": args.mu, "nu": args.nu, "variant": args.variant,
              "levels": args.levels}
    _emit(out, args.format, config, stream.REPORT_HEADER,
          [(report.alarm_time, report.final_y, report.n_records, report.n_occurrences)])
    return EXIT_OK


def bundled_example() -> str:
    return resources.files("ecusum").joinpath("data/bernoulli_first_one.toml").read_text(encoding="utf-8")


def cmd_framework(args: argparse.Namespace, out: TextIO) -> int:
    if args.spec == "example":
        text = bundled_example()
    else:
        with open(args.spec, encoding="utf-8") as fh:
            text = fh.read()
    doc = framework.load_document(text)
    lines = framework.evaluate_document(doc)
    config = {"command": "framework", "spec": args.spec, "horizon": doc.model.horizon,
              "alphabet": " ".join(doc.model.alphabet), "rule": doc.rule.name}
    _emit(out, args.format, config, ("measure", "result"), lines)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecusum", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("csv", "text"), default="csv",
                        help="csv with '# key=value' config header (default) or key: value text")
    common.add_argument("--out", default="-", help="output path, '-' for stdout")
    sub = parser.add_subparsers(dest="command", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("calibrate", parents=[common], formatter_class=raw,
                       help="threshold meeting a false-alarm period",
                       description="""Solve h_nu(0) = gamma for the ECUSUM threshold.

columns:
  nu_star             root of (2/mu^2)[(e^nu - nu - 1) + (e^nu - 1)/r0] = gamma
  delay               g(0) = (2/mu^2)[(nu - 1 + e^-nu) + (1 - e^-nu)/r_inf]
  false_alarm_period  h(0), equal to gamma
  normalized_*        mu^2 (.) / 2
with r0 = -1/2 + sqrt(1/4 + 2 lam/mu^2), r_inf = r0 + 1.""")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("curves", parents=[common], formatter_class=raw,
                       help="normalized delay vs false-alarm period table",
                       description="""Delay/false-alarm trade-off of ECUSUM and CUSUM.

columns:
  ratio              mu^2 / lam
  gamma_norm         normalized false-alarm period mu^2 gamma / 2
  ecusum_delay_norm  mu^2 g(0) / 2 at the ECUSUM threshold calibrated to gamma
  cusum_delay_norm   nu - 1 + e^-nu at the CUSUM threshold solving e^nu - nu - 1 = gamma_norm""")
    p.add_argument("--ratios", required=True, help="comma list of mu^2/lambda values")
    p.add_argument("--gamma-grid", required=True, help="comma list, or lo:hi:n for a log grid (normalized units)")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("mc", parents=[common], formatter_class=raw,
                       help="Monte Carlo run length against the closed form",
                       description="""Simulate the detector and compare with the closed-form mean run length.

columns:
  mean, stderr  sample mean of the stopping time and its standard error
  truncated     paths that reached the horizon
  analytic      f(y0) = (1/a)[nu - y0 + A(e^{-2 a y0/b^2} - e^{-2 a nu/b^2})] for y0 >= 0,
                f(0) + (1 - e^{r y0})/lam for y0 < 0; a = +-mu^2/2, b = mu
  z_score       |mean - analytic| / stderr""")
    p.add_argument("--regime", default="post", help="pre (no change) or post (change at 0)")
    p.add_argument("--variant", choices=stream.VARIANTS, default="ecusum")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=0.0)
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--dt", type=float, default=None, help="default min(1e-3, 0.02/mu^2)")
    p.add_argument("--max-time", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help=f"default 0, or ${SEED_ENV}")
    p.add_argument("--bridge", action="store_true", help="Brownian-bridge crossing correction between grid points")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("detect", parents=[common], formatter_class=raw,
                       help="run the detector over a t,dxi,occ CSV stream",
                       description="""Online detection on a recorded stream.

Each record updates y by du = -mu^2 (t - prev_t)/2 + mu dxi; y is clipped at 0
on occurrences (every record for cusum). Alarm at the first record with y >= nu.

columns:
  alarm_time     timestamp of the alarm record, empty when none
  final_y        statistic after the last processed record
  n_records      records processed (processing stops at the alarm)
  n_occurrences  occurrence marks among them""")
    p.add_argument("--input", default="-", help="CSV path or '-' for stdin")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--variant", choices=stream.VARIANTS, default="ecusum")
    p.add_argument("--levels", action="store_true", help="second column holds levels xi (header t,xi,occ)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("framework", parents=[common], formatter_class=raw,
                       help="exact performance measures on a discrete model",
                       description="""Evaluate a TOML model document (or 'example' for the bundled one).

rows:
  J_S[name]  sum_t w_t E_t[(T-t)^+] / sum_t w_t P_inf[T > t] for prior w
  J_P        max_t E_t[T - t | T > t]
  J_L        max over t and positive-probability histories of E_t[(T-t)^+ | F_t]
  J_EL[set]  J_L with t restricted to the listed change instants
each with its maximizer and the probability that the horizon forced the stop.""")
    p.add_argument("--spec", required=True, help="model document path, or 'example'")
    p.set_defaults(func=cmd_framework)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    buf = io.StringIO()
    try:
        code = args.func(args, buf)
    except stream.MalformedStreamError as exc:
        print(f"ecusum: malformed stream: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except simulate.TruncationError as exc:
        print(f"ecusum: simulation policy: {exc}", file=sys.stderr)
        return EXIT_POLICY
    except (ParamError, framework.ModelError, ValueError, OverflowError, OSError) as exc:
        print(f"ecusum: {exc}", file=sys.stderr)
        return EXIT_PARAM
    text = buf.getvalue()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
