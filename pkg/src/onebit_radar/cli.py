"""Command line front end: ``simulate``, ``estimate``, ``sweep`` and ``selftest``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import estimate as est
from . import harness, model, sampling, textio
from .errors import DegenerateFilterError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


# --- config handling ------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(d: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` to a nested dict; values are JSON when they parse as JSON."""
    if "=" not in assignment:
        raise UsageError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise UsageError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = _parse_value(value)


def load_config(path: Optional[str], overrides: List[str]) -> harness.ExperimentConfig:
    d: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    for o in overrides:
        apply_override(d, o)
    try:
        return harness.ExperimentConfig.from_dict(d)
    except (harness.ConfigError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def config_json(cfg: harness.ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


# --- plot data -------------------------------------------------------------------

PLOT_HEADER = ["method", "N", "noiseVar", "trials", "failures", "meanNormError", "medianNormError",
               "p10NormError", "p90NormError", "medianNuError"]


def _summary_rows(summary, key):
    rows = sorted(summary, key=key)
    return [[r.method, r.N, repr(float(r.noiseVar)), r.trials, r.failures, *(repr(float(v)) for v in r.normError),
             repr(float(r.nuError[1]))] for r in rows]


def emit_plot_data(result: harness.CampaignResult, outdir) -> List[Path]:
    """Error-versus-N, error-versus-noise and per-cell complex-plane scatter CSVs."""
    if not result.summary:
        raise ValueError("nothing to emit: empty summary")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    order = {m: i for i, m in enumerate(result.config.methods)}
    written = []
    views = {
        "error_vs_N.csv": lambda r: (order.get(r.method, 99), r.noiseVar, r.N),
        "error_vs_noiseVar.csv": lambda r: (order.get(r.method, 99), r.N, r.noiseVar),
    }
    for name, key in views.items():
        _write_text(out / name, harness._csv_text(PLOT_HEADER, _summary_rows(result.summary, key)))
        written.append(out / name)
    cells: dict = {}
    for r in result.records:
        cells.setdefault((r.N, r.noiseVar), []).append(r)
    for (N, v), recs in cells.items():
        rows, seen = [], set()
        for r in recs:
            if r.trialId not in seen:
                seen.add(r.trialId)
                rows.append(["truth", r.trialId, repr(r.alphaTruth.real), repr(r.alphaTruth.imag)])
            rows.append([r.method, r.trialId, repr(float(np.real(r.alphaHat))), repr(float(np.imag(r.alphaHat)))])
        path = out / f"scatter_N{N}_noise{v:g}.csv"
        _write_text(path, harness._csv_text(["method", "trialId", "re", "im"], rows))
        written.append(path)
    return written


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    N, v = int(cfg.Nlist[0]), float(cfg.noiseVarList[0])
    ss = harness.trial_seed(cfg.seed, N, v, args.trial)
    truth_ss, scene_ss, thr_ss = ss.spawn(3)
    rng = np.random.default_rng(truth_ss)
    alpha, nu = harness.draw_alpha(cfg, rng), harness.draw_nu(cfg, rng)
    s = model.generate_unimodular_sequence(N, cfg.sequence, seed=cfg.sequenceSeed)
    m = cfg.interference(N, v)
    R = model.interference_covariance(s, m)
    scene = model.synthesize_scene(s, alpha, nu, m, np.random.default_rng(scene_ss))
    bank = harness.threshold_bank(cfg, s, R, np.random.default_rng(thr_ss))
    if bank.kind == "pBit":
        raise UsageError("simulate writes one-bit observations only; unset pBits")
    obs = sampling.quantize(scene.y, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    textio.write_vector(out / "s.txt", s.samples)
    textio.write_vector(out / "y.txt", scene.y)
    textio.write_stack(out / "thresholds.txt", bank.vectors)
    textio.write_stack(out / "signs.txt", obs.gamma_r + 1j * obs.gamma_i)
    textio.write_matrix(out / "R.csv", R)
    truth = {"alpha": [alpha.real, alpha.imag], "nu": nu, "N": N, "noiseVar": v, "trial": args.trial}
    _write_text(out / "truth.json", json.dumps(truth, indent=2) + "\n")
    _write_text(out / "config.json", config_json(cfg))
    print(f"wrote scene (N={N}, noiseVar={v:g}) to {out}")
    return EXIT_OK


def _read(path: Optional[str], reader, what: str):
    if path is None:
        return None
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    try:
        return reader(path)
    except ValueError as exc:
        raise UsageError(f"cannot parse {what} file {path}: {exc}") from None


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, args.set)
    y = _read(args.y, textio.read_vector, "signal")
    signs = _read(args.signs, textio.read_stack, "signs")
    lams = _read(args.thresholds, textio.read_stack, "thresholds")
    s_file = _read(args.s, textio.read_vector, "sequence")
    R = _read(args.R, textio.read_matrix, "covariance")
    moving = cfg.scenario == "moving"

    if args.method == "fullPrecision":
        if y is None:
            raise UsageError("fullPrecision needs --y")
        N = y.size
    else:
        if signs is None or lams is None:
            raise UsageError(f"{args.method} needs --signs and --thresholds")
        if signs.shape != lams.shape:
            raise UsageError("signs and thresholds have different shapes")
        N = signs.shape[1]
    s = model.TransmitSequence(s_file) if s_file is not None else \
        model.generate_unimodular_sequence(N, cfg.sequence, seed=cfg.sequenceSeed)
    if s.N != N:
        raise UsageError(f"sequence length {s.N} does not match data length {N}")
    if R is None:
        R = model.interference_covariance(s, cfg.interference(N, float(cfg.noiseVarList[0])))
    elif R.shape != (N, N):
        raise UsageError(f"covariance is {R.shape}, expected {(N, N)}")
    ecfg = cfg.estimator_config()

    if args.method == "fullPrecision":
        e = est.estimate_full_precision(s, y, R=R, moving=moving, cfg=ecfg)
    else:
        if not (np.all(np.isin(signs.real, (-1, 1))) and np.all(np.isin(signs.imag, (-1, 1)))):
            raise UsageError("signs must be +-1 in both channels")
        bank = sampling.ThresholdBank.single(lams[0]) if lams.shape[0] == 1 else sampling.ThresholdBank.parallel(lams)
        obs = sampling.QuantizedObservation(signs.real.astype(np.int8), signs.imag.astype(np.int8), bank)
        if args.method == "proposed":
            runner = est.estimate_moving if moving else est.estimate_stationary
            e = runner(s, None, obs, cfg=ecfg, R=R)
        else:
            e = est.estimate_bussgang(s, R, obs, lam=bank.mean_threshold(), nu=None if moving else 0.0,
                                      cfg=ecfg, moving=moving)
    text = e.to_json()
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "estimate.json", text + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.print_config:
        sys.stdout.write(config_json(cfg))
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        if not args.quiet and (done == total or done % max(1, total // 20) == 0):
            print(f"  {done}/{total} scenes", file=sys.stderr)

    result = harness.run_campaign(cfg, workers=args.workers, progress=progress)
    _write_text(out / "config.json", config_json(cfg))
    _write_text(out / "records.csv", harness.records_csv(result.records))
    _write_text(out / "summary.csv", harness.summary_csv(result.summary))
    emit_plot_data(result, out)
    print(harness.format_summary(result.summary, moving=cfg.scenario == "moving"))
    return EXIT_OK


def run_selftest(verbose: bool = True) -> bool:
    """Quick numerical invariants; each prints one line."""
    from scipy.optimize import nnls as scipy_nnls

    from . import qpsolve

    rng = np.random.default_rng(7)
    checks = []

    s = model.generate_unimodular_sequence(6, "randomPhase", seed=1)
    m = model.StationaryInterferenceModel(0.3, 0.2 * np.eye(6))
    direct = sum(0.3 * np.outer(model.shift_apply(s.samples, k), model.shift_apply(s.samples, k).conj())
                 for k in range(-5, 6) if k) + 0.2 * np.eye(6)
    checks.append(("stationary covariance equals shifted outer-product sum",
                   np.abs(model.stationary_covariance(s, m) - direct).max() < 1e-12))

    R = model.stationary_covariance(s, m)
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    a = est.mmf_estimate_alpha(np.linalg.solve(R, s.samples), y, s.samples)
    grid_ok = all(est.wls_objective(y, a, 0.0, s, R) <= est.wls_objective(y, a + d, 0.0, s, R)
                  for d in (1e-3, -1e-3, 1e-3j, -1e-3j))
    checks.append(("mismatched filter minimizes the weighted residual", grid_ok))

    A = rng.standard_normal((12, 8))
    b = rng.standard_normal(12)
    z, _, status = qpsolve.nnls(A, b)
    checks.append(("active-set NNLS agrees with scipy", status == "optimal"
                   and np.abs(z - scipy_nnls(A, b)[0]).max() < 1e-8))

    lam = 0.3 * (rng.standard_normal(6) + 1j * rng.standard_normal(6))
    obs = sampling.quantize_one_bit(y, lam)
    F = est.CovarianceFactor(R)
    qp = qpsolve.build_recovery_qp(s.samples, F.solve(s.samples), R, obs, R_inv=F.inv)
    sol = qpsolve.solve(qp)
    checks.append(("recovery QP is KKT certified", sol.status == "optimal" and sol.kkt_residual <= 1e-8))

    x = rng.standard_normal((200_000, 2)) @ np.linalg.cholesky([[1, 0.5], [0.5, 1]]).T
    emp = np.mean(np.sign(x[:, 0]) * np.sign(x[:, 1]))
    checks.append(("one-bit correlation follows the arcsine law", abs(emp - 2 / np.pi * np.arcsin(0.5)) < 0.01))

    for name, ok in checks:
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return all(ok for _, ok in checks)


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest() else EXIT_NUMERICAL


# --- entry point -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="onebit-radar", description="One-bit radar parameter estimation experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_default):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dot paths for nested keys, JSON values)")
        sp.add_argument("--out", default=out_default, help="output directory")

    sp = sub.add_parser("simulate", help="draw one scene and its comparator outputs")
    common(sp, "scene")
    sp.add_argument("--trial", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="run one estimator on observation files")
    common(sp, None)
    sp.add_argument("--method", choices=harness.METHODS, default="proposed")
    sp.add_argument("--y", help="full-precision received signal")
    sp.add_argument("--signs", help="comparator outputs (+-1 +-1 per line, one block per comparator)")
    sp.add_argument("--thresholds", help="threshold vectors, one block per comparator")
    sp.add_argument("--s", help="transmit sequence (default: generated from the config)")
    sp.add_argument("--R", help="interference covariance CSV (default: built from the config)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("sweep", help="run a Monte Carlo campaign")
    common(sp, "results")
    sp.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    sp.add_argument("--workers", type=int, default=None,
                    help="worker processes (default: ONEBIT_RADAR_THREADS or the CPU count)")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("selftest", help="run quick numerical invariant checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except harness.ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateFilterError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
