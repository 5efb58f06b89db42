"""Deterministic Monte Carlo campaigns over sequence length, noise level and method.

Every trial draws its scene from a seed derived only from ``(seed, N, noiseVar,
trial)``, so all methods in a cell see the same target, clutter, noise and
thresholds, and the outcome does not depend on execution order or the number
of worker processes.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from threadpoolctl import threadpool_limits

from . import estimate as est
from . import model, sampling
from .errors import DegenerateFilterError, NumericalError

METHODS = ("proposed", "bussgang", "fullPrecision")
SCENARIOS = ("stationary", "moving")
POLICIES = ("mean", "random", "zero")
ALPHA_ANNULUS = (0.5, 1.5)
NU_RANGE = (-0.4, 0.4)

RECORD_HEADER = [
    "trialId", "N", "noiseVar", "method", "alphaTruthRe", "alphaTruthIm", "alphaHatRe", "alphaHatIm",
    "nuTruth", "nuHat", "normError", "nuError", "wallTimeMs", "status",
]
SUMMARY_HEADER = [
    "N", "noiseVar", "method", "trials", "failures",
    "normErrorMean", "normErrorMedian", "normErrorP10", "normErrorP90",
    "nuErrorMean", "nuErrorMedian", "nuErrorP10", "nuErrorP90",
]

# EstimatorConfig fields that a campaign config may set; the threshold prior is
# derived from the truth settings instead.
_ESTIMATOR_KEYS = tuple(f.name for f in fields(est.EstimatorConfig) if f.name not in ("alpha_prior", "alpha_power", "nu_init"))


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _complex_from_json(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"complex values are [re, im] pairs, got {v!r}")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def _complex_to_json(v):
    if isinstance(v, str):
        return v
    return [float(np.real(v)), float(np.imag(v))]


@dataclass
class ExperimentConfig:
    scenario: str = "stationary"
    Nlist: List[int] = field(default_factory=lambda: [10, 25, 50, 100])
    noiseVarList: List[float] = field(default_factory=lambda: [0.1])
    beta: float = 0.1
    alphaTruth: Union[complex, str] = "random"
    nuTruth: Union[float, str] = 0.0
    Nc: int = 2
    L: int = 10
    epsD: List[float] = field(default_factory=lambda: [-0.1, 0.1])  # clutter Doppler interval
    trials: int = 100
    seed: int = 20190517
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    thresholdPolicy: str = "random"
    thresholdCovariance: str = "diagonal"  # "full" draws with the complete covariance of y
    K: int = 1
    pBits: Optional[int] = None
    sequence: str = "quadraticPhase"
    sequenceSeed: int = 0
    recordWallTime: bool = False
    estimator: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if not self.Nlist or any(int(n) < 2 for n in self.Nlist):
            raise ConfigError("every N must be >= 2")
        if not self.noiseVarList or any(float(v) < 0 for v in self.noiseVarList):
            raise ConfigError("noise variances must be nonnegative")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {METHODS}")
        if self.thresholdPolicy not in POLICIES:
            raise ConfigError(f"thresholdPolicy must be one of {POLICIES}")
        if self.thresholdCovariance not in ("diagonal", "full"):
            raise ConfigError("thresholdCovariance must be 'diagonal' or 'full'")
        if int(self.K) < 1:
            raise ConfigError("K must be >= 1")
        if self.pBits is not None and int(self.pBits) < 1:
            raise ConfigError("pBits must be >= 1")
        if self.pBits is not None and int(self.K) != 1:
            raise ConfigError("p-bit sampling uses a single converter (K = 1)")
        if isinstance(self.alphaTruth, str) and self.alphaTruth != "random":
            raise ConfigError("alphaTruth must be a complex value or 'random'")
        if not isinstance(self.alphaTruth, str) and self.alphaTruth == 0:
            raise ConfigError("alphaTruth must be nonzero (the error metric divides by it)")
        if isinstance(self.nuTruth, str):
            if self.nuTruth != "random":
                raise ConfigError("nuTruth must be a real value or 'random'")
        elif not -0.5 <= float(self.nuTruth) < 0.5:
            raise ConfigError("nuTruth must lie in [-0.5, 0.5)")
        if self.scenario == "stationary" and self.nuTruth != 0.0:
            raise ConfigError("stationary scenarios need nuTruth = 0")
        lo, hi = (float(v) for v in self.epsD)
        if not -0.5 <= lo <= hi <= 0.5:
            raise ConfigError("epsD must be an interval inside [-0.5, 0.5]")
        if self.scenario == "moving" and (self.Nc < 1 or self.L < 1 or self.Nc > min(self.Nlist)):
            raise ConfigError("moving clutter needs 1 <= Nc <= min(N) and L >= 1")
        if self.sequence not in ("randomPhase", "quadraticPhase"):
            raise ConfigError("sequence must be randomPhase or quadraticPhase")
        unknown = [k for k in self.estimator if k not in _ESTIMATOR_KEYS]
        if unknown:
            raise ConfigError(f"unknown key 'estimator.{unknown[0]}'")

    # --- JSON round trip ---------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"unknown key '{k}'")
        d = dict(d)
        if "alphaTruth" in d:
            d["alphaTruth"] = _complex_from_json(d["alphaTruth"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphaTruth"] = _complex_to_json(self.alphaTruth)
        d["estimator"] = self.estimator_config_dict()
        return d

    def estimator_config_dict(self) -> dict:
        base = asdict(est.EstimatorConfig())
        out = {k: base[k] for k in _ESTIMATOR_KEYS}
        out.update(self.estimator)
        return out

    def estimator_config(self) -> est.EstimatorConfig:
        mean, power = self.alpha_prior()
        return est.EstimatorConfig(alpha_prior=mean, alpha_power=power, **self.estimator)

    # --- derived settings -----------------------------------------------------

    def alpha_prior(self):
        """Mean and mean power of the target amplitude implied by ``alphaTruth``."""
        if self.alphaTruth == "random":
            a, b = ALPHA_ANNULUS
            return 0j, (a * a + b * b) / 2  # area-uniform annulus
        a = complex(self.alphaTruth)
        return a, abs(a) ** 2

    def doppler_prior(self) -> sampling.DopplerPrior:
        if self.nuTruth == "random":
            lo, hi = NU_RANGE
            return sampling.DopplerPrior("uniform", (lo + hi) / 2, hi - lo)
        return sampling.DopplerPrior("point", float(self.nuTruth))

    def interference(self, N: int, noise_var: float) -> model.InterferenceModel:
        Gamma = noise_var * np.eye(N)
        if self.scenario == "stationary":
            return model.StationaryInterferenceModel(self.beta, Gamma)
        lo, hi = (float(v) for v in self.epsD)
        return model.MovingClutterModel(self.Nc, self.L, self.beta / self.L, (lo + hi) / 2, hi - lo, Gamma)


@dataclass
class TrialRecord:
    trialId: int
    N: int
    noiseVar: float
    method: str
    alphaTruth: complex
    alphaHat: complex
    nuTruth: float
    nuHat: float
    normError: float
    nuError: float
    wallTimeMs: Optional[float]
    status: str

    @property
    def failed(self) -> bool:
        return self.status != "optimal"

    def row(self) -> list:
        wall = "" if self.wallTimeMs is None else repr(float(self.wallTimeMs))
        return [
            self.trialId, self.N, repr(float(self.noiseVar)), self.method,
            repr(self.alphaTruth.real), repr(self.alphaTruth.imag),
            repr(float(np.real(self.alphaHat))), repr(float(np.imag(self.alphaHat))),
            repr(float(self.nuTruth)), repr(float(self.nuHat)),
            repr(float(self.normError)), repr(float(self.nuError)), wall, self.status,
        ]


@dataclass
class SummaryRow:
    N: int
    noiseVar: float
    method: str
    trials: int
    failures: int
    normError: tuple  # mean, median, p10, p90
    nuError: tuple

    @property
    def median(self) -> float:
        return self.normError[1]

    def row(self) -> list:
        return [self.N, repr(float(self.noiseVar)), self.method, self.trials, self.failures,
                *(repr(float(v)) for v in self.normError), *(repr(float(v)) for v in self.nuError)]


@dataclass
class CampaignResult:
    config: ExperimentConfig
    records: List[TrialRecord]
    summary: List[SummaryRow]

    def cell(self, N: int, noise_var: float, method: str) -> SummaryRow:
        for r in self.summary:
            if r.N == N and r.noiseVar == noise_var and r.method == method:
                return r
        raise KeyError((N, noise_var, method))


# --- seeding ---------------------------------------------------------------------

def _float_key(v: float) -> tuple:
    bits = int(np.float64(v).view(np.uint64))
    return bits & 0xFFFFFFFF, bits >> 32


def trial_seed(seed: int, N: int, noise_var: float, trial: int) -> np.random.SeedSequence:
    """Seed for one trial's scene, independent of method and run order."""
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(N), *_float_key(noise_var), int(trial)))


def draw_alpha(cfg: ExperimentConfig, rng: np.random.Generator) -> complex:
    if cfg.alphaTruth != "random":
        return complex(cfg.alphaTruth)
    a, b = ALPHA_ANNULUS
    r = np.sqrt(rng.uniform(a * a, b * b))
    return complex(r * np.exp(2j * np.pi * rng.uniform()))


def draw_nu(cfg: ExperimentConfig, rng: np.random.Generator) -> float:
    if cfg.nuTruth != "random":
        return float(cfg.nuTruth)
    return float(rng.uniform(*NU_RANGE))


def threshold_bank(cfg: ExperimentConfig, s, R, rng: np.random.Generator) -> sampling.ThresholdBank:
    a_mean, a_power = cfg.alpha_prior()
    prior = cfg.doppler_prior()
    mean, cov = sampling.threshold_statistics(s, a_mean, a_power, R, prior)
    if cfg.pBits is not None:
        return sampling.uniform_pbit_bank(mean, cov, int(cfg.pBits))
    K = int(cfg.K)
    if cfg.thresholdPolicy == "zero":
        lams = np.zeros((K, s.N), dtype=complex)
    elif cfg.thresholdPolicy == "mean":
        lams = np.repeat(mean[None, :], K, axis=0)
    elif cfg.thresholdCovariance == "full":
        lams = sampling.design_threshold_random(s, a_mean, a_power, R, K, prior, rng)
    else:
        lams = sampling.design_threshold_marginal(s, a_mean, a_power, R, K, prior, rng)
    return sampling.ThresholdBank.single(lams[0]) if K == 1 else sampling.ThresholdBank.parallel(lams)


# --- trials ------------------------------------------------------------------------

_RECOVERABLE = (DegenerateFilterError, NumericalError, np.linalg.LinAlgError, FloatingPointError)


def _nu_distance(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def run_trial(cfg: ExperimentConfig, N: int, noise_var: float, trial: int) -> List[TrialRecord]:
    """All methods on one scene. Estimator failures become tagged records."""
    ss = trial_seed(cfg.seed, N, noise_var, trial)
    truth_ss, scene_ss, thr_ss = ss.spawn(3)
    truth_rng = np.random.default_rng(truth_ss)
    alpha = draw_alpha(cfg, truth_rng)
    nu = draw_nu(cfg, truth_rng)

    s = model.generate_unimodular_sequence(N, cfg.sequence, seed=cfg.sequenceSeed)
    m = cfg.interference(N, noise_var)
    R = model.interference_covariance(s, m)
    scene = model.synthesize_scene(s, alpha, nu, m, np.random.default_rng(scene_ss))
    bank = threshold_bank(cfg, s, R, np.random.default_rng(thr_ss))
    obs = sampling.quantize(scene.y, bank)
    ecfg = cfg.estimator_config()
    moving = cfg.scenario == "moving"
    F = est.CovarianceFactor(R)

    out = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "fullPrecision":
                e = est.estimate_full_precision(s, scene.y, R=F, moving=moving, cfg=ecfg)
            elif method == "proposed":
                runner = est.estimate_moving if moving else est.estimate_stationary
                e = runner(s, m, obs, cfg=ecfg, R=F)
            else:
                lam = bank.mean_threshold()
                e = est.estimate_bussgang(s, R, obs, lam=lam, nu=None if moving else 0.0, cfg=ecfg, moving=moving)
            a_hat, nu_hat, status = complex(e.alpha_hat), float(e.nu_hat), e.status
        except _RECOVERABLE as exc:
            a_hat, nu_hat, status = complex(np.nan, np.nan), float("nan"), f"error:{type(exc).__name__}"
        wall = (time.perf_counter() - t0) * 1e3 if cfg.recordWallTime else None
        if not (np.isfinite(a_hat.real) and np.isfinite(a_hat.imag)) and status == "optimal":
            status = "nonFinite"
        out.append(TrialRecord(
            trialId=trial, N=N, noiseVar=float(noise_var), method=method,
            alphaTruth=alpha, alphaHat=a_hat, nuTruth=nu, nuHat=nu_hat,
            normError=abs(alpha - a_hat) / abs(alpha), nuError=_nu_distance(nu, nu_hat),
            wallTimeMs=wall, status=status,
        ))
    return out


def _run_unit(args) -> List[TrialRecord]:
    cfg, N, noise_var, trial = args
    with threadpool_limits(1):
        return run_trial(cfg, N, noise_var, trial)


def worker_count(default: Optional[int] = None) -> int:
    env = os.environ.get("ONEBIT_RADAR_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ONEBIT_RADAR_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return default or os.cpu_count() or 1


def run_campaign(cfg: ExperimentConfig, workers: Optional[int] = None, progress=None) -> CampaignResult:
    """Every (N, noiseVar, trial) scene under every method, then the summary table.

    Records come back ordered by N, noise variance, trial and method position,
    whatever the number of workers.
    """
    cfg.validate()
    units = [(cfg, int(N), float(v), t) for N in cfg.Nlist for v in cfg.noiseVarList for t in range(cfg.trials)]
    workers = worker_count() if workers is None else max(1, int(workers))
    records: List[TrialRecord] = []
    if workers == 1:
        for i, u in enumerate(units):
            records.extend(_run_unit(u))
            if progress:
                progress(i + 1, len(units))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, recs in enumerate(pool.map(_run_unit, units, chunksize=max(1, len(units) // (8 * workers)))):
                records.extend(recs)
                if progress:
                    progress(i + 1, len(units))
    return CampaignResult(cfg, records, summarize(records, method_order=cfg.methods))


# --- aggregation ------------------------------------------------------------------

def _stats(values: np.ndarray) -> tuple:
    if values.size == 0:
        return (np.nan,) * 4
    return (float(values.mean()), float(np.median(values)),
            float(np.percentile(values, 10)), float(np.percentile(values, 90)))


def summarize(records: Sequence[TrialRecord], method_order: Optional[Iterable[str]] = None) -> List[SummaryRow]:
    """Per (N, noiseVar, method): error statistics over successful trials and the failure count."""
    records = list(records)
    if not records:
        raise ValueError("summarize needs at least one record")
    order = list(method_order or [])
    for r in records:
        if r.method not in order:
            order.append(r.method)
    groups: dict = {}
    for r in records:
        groups.setdefault((r.N, r.noiseVar, r.method), []).append(r)
    keys = sorted(groups, key=lambda k: (k[0], k[1], order.index(k[2])))
    rows = []
    for key in keys:
        grp = groups[key]
        ok = [r for r in grp if not r.failed]
        rows.append(SummaryRow(
            N=key[0], noiseVar=key[1], method=key[2], trials=len(grp), failures=len(grp) - len(ok),
            normError=_stats(np.array([r.normError for r in ok])),
            nuError=_stats(np.array([r.nuError for r in ok])),
        ))
    return rows


# --- output -----------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def records_csv(records: Sequence[TrialRecord]) -> str:
    return _csv_text(RECORD_HEADER, (r.row() for r in records))


def summary_csv(summary: Sequence[SummaryRow]) -> str:
    return _csv_text(SUMMARY_HEADER, (r.row() for r in summary))


def format_summary(summary: Sequence[SummaryRow], moving: bool = False) -> str:
    cols = ["N", "noiseVar", "method", "fail", "mean", "median", "p10", "p90"]
    if moving:
        cols += ["nu median", "nu p90"]
    lines = []
    for r in summary:
        cells = [str(r.N), f"{r.noiseVar:g}", r.method, f"{r.failures}/{r.trials}",
                 *(f"{v:.4f}" for v in r.normError)]
        if moving:
            cells += [f"{r.nuError[1]:.2e}", f"{r.nuError[3]:.2e}"]
        lines.append(cells)
    widths = [max(len(c), *(len(l[i]) for l in lines)) for i, c in enumerate(cols)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(cols), fmt(["-" * w for w in widths]), *(fmt(l) for l in lines)])
