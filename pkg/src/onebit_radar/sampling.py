"""Comparator front ends and threshold design.

One-bit comparators return ``sgn(Re(y - lam))`` and ``sgn(Im(y - lam))`` with
``sgn(0) = +1``. A bank of K comparators observes the same ``y`` against K
threshold vectors; a p-bit ADC reports which of ``2**p`` intervals each channel
falls into (intervals closed below, open above).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .model import TransmitSequence, complex_gaussian, doppler_correlation, mean_steering_vector


def sgn(x) -> np.ndarray:
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class ThresholdBank:
    """Threshold vectors (``kind`` single / parallelK) or per-sample p-bit levels.

    ``vectors`` has shape ``(K, N)``. For ``pBit``, ``levels_r``/``levels_i`` have
    shape ``(N, 2**p - 1)`` and hold the finite, strictly increasing levels.
    """

    kind: str
    vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=complex))
    levels_r: Optional[np.ndarray] = None
    levels_i: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("single", "parallelK", "pBit"):
            raise ValueError(f"unknown threshold bank kind {self.kind!r}")
        if self.kind == "pBit":
            lr = np.atleast_2d(np.asarray(self.levels_r, dtype=float))
            li = np.atleast_2d(np.asarray(self.levels_i, dtype=float))
            if lr.shape != li.shape:
                raise ValueError("real and imaginary level tables differ in shape")
            n_levels = lr.shape[1]
            if n_levels < 1 or (n_levels + 1) & n_levels:
                raise ValueError(f"p-bit bank needs 2**p - 1 levels per sample, got {n_levels}")
            for name, lv in (("real", lr), ("imaginary", li)):
                if np.any(np.diff(lv, axis=1) <= 0):
                    raise ValueError(f"{name} p-bit levels must be strictly increasing")
            object.__setattr__(self, "levels_r", lr)
            object.__setattr__(self, "levels_i", li)
            object.__setattr__(self, "vectors", np.zeros((0, lr.shape[0]), dtype=complex))
        else:
            v = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
            if self.kind == "single" and v.shape[0] != 1:
                raise ValueError("a single-comparator bank holds exactly one threshold vector")
            object.__setattr__(self, "vectors", v)

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def N(self) -> int:
        return self.levels_r.shape[0] if self.kind == "pBit" else self.vectors.shape[1]

    @property
    def bits(self) -> int:
        if self.kind != "pBit":
            return 1
        return int(np.log2(self.levels_r.shape[1] + 1))

    def mean_threshold(self) -> np.ndarray:
        """Centre used by the recovery ridge: the mean threshold vector (middle level for p-bit)."""
        if self.kind == "pBit":
            mid = self.levels_r.shape[1] // 2
            return self.levels_r[:, mid] + 1j * self.levels_i[:, mid]
        return self.vectors.mean(axis=0)

    @classmethod
    def single(cls, lam) -> "ThresholdBank":
        return cls("single", np.asarray(lam, dtype=complex)[None, :])

    @classmethod
    def parallel(cls, lams) -> "ThresholdBank":
        return cls("parallelK", np.atleast_2d(lams))


@dataclass(frozen=True)
class QuantizedObservation:
    """Comparator outputs. ``gamma_r``/``gamma_i`` are ``(K, N)`` arrays of +-1.

    For p-bit observations ``bucket_r``/``bucket_i`` hold the interval index per
    sample and ``gamma_r``/``gamma_i`` are the signs against the middle level.
    """

    gamma_r: np.ndarray
    gamma_i: np.ndarray
    thresholds: ThresholdBank
    bucket_r: Optional[np.ndarray] = None
    bucket_i: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.gamma_r.shape[1]

    @property
    def K(self) -> int:
        return self.gamma_r.shape[0]

    @property
    def gamma(self) -> np.ndarray:
        """``(gamma_r + j gamma_i) / sqrt(2)`` of the first comparator."""
        return (self.gamma_r[0] + 1j * self.gamma_i[0]) / np.sqrt(2)

    def omega_r(self, k: int = 0) -> np.ndarray:
        return np.diag(self.gamma_r[k]).astype(float)

    def omega_i(self, k: int = 0) -> np.ndarray:
        return np.diag(self.gamma_i[k]).astype(float)

    def is_consistent(self, y) -> bool:
        """True when ``y`` satisfies every comparator's sign (or interval) constraint."""
        y = np.asarray(y)
        if self.thresholds.kind == "pBit":
            return bool(
                np.array_equal(self.bucket_r, _bucket(y.real, self.thresholds.levels_r))
                and np.array_equal(self.bucket_i, _bucket(y.imag, self.thresholds.levels_i))
            )
        d = y[None, :] - self.thresholds.vectors
        return bool(np.all(self.gamma_r * d.real >= 0) and np.all(self.gamma_i * d.imag >= 0))


def quantize(y, bank: ThresholdBank) -> QuantizedObservation:
    y = np.asarray(y, dtype=complex)
    if y.ndim != 1 or y.size != bank.N:
        raise ValueError(f"signal length {y.size} does not match threshold length {bank.N}")
    if bank.kind == "pBit":
        return quantize_p_bit(y, bank)
    d = y[None, :] - bank.vectors
    return QuantizedObservation(sgn(d.real), sgn(d.imag), bank)


def quantize_one_bit(y, lam) -> QuantizedObservation:
    y = np.asarray(y, dtype=complex).ravel()
    lam = np.asarray(lam, dtype=complex).ravel()
    if y.shape != lam.shape:
        raise ValueError(f"length mismatch: y has {y.size} samples, threshold has {lam.size}")
    return quantize(y, ThresholdBank.single(lam))


def _bucket(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # count of levels <= value gives the closed-below interval index
    return (values[:, None] >= levels).sum(axis=1)


def quantize_p_bit(y, bank: ThresholdBank) -> QuantizedObservation:
    if bank.kind != "pBit":
        raise ValueError("quantize_p_bit needs a pBit threshold bank")
    y = np.asarray(y, dtype=complex)
    if y.size != bank.N:
        raise ValueError(f"signal length {y.size} does not match bank length {bank.N}")
    br = _bucket(y.real, bank.levels_r)
    bi = _bucket(y.imag, bank.levels_i)
    mid = bank.mean_threshold()
    return QuantizedObservation(
        sgn(y.real - mid.real)[None, :], sgn(y.imag - mid.imag)[None, :], bank, bucket_r=br, bucket_i=bi
    )


def pbit_interval_bounds(obs: QuantizedObservation):
    """Lower and upper bounds (with +-inf at the ends) per sample and channel."""
    bank = obs.thresholds

    def bounds(levels, idx):
        padded = np.hstack([np.full((levels.shape[0], 1), -np.inf), levels, np.full((levels.shape[0], 1), np.inf)])
        rows = np.arange(levels.shape[0])
        return padded[rows, idx], padded[rows, idx + 1]

    lo_r, hi_r = bounds(bank.levels_r, obs.bucket_r)
    lo_i, hi_i = bounds(bank.levels_i, obs.bucket_i)
    return lo_r, hi_r, lo_i, hi_i


@dataclass(frozen=True)
class DopplerPrior:
    """Prior over the target Doppler used by threshold design.

    ``point`` concentrates on ``center``; ``uniform`` spreads over
    ``[center - width/2, center + width/2]``.
    """

    kind: str = "point"
    center: float = 0.0
    width: float = 0.0

    def mean_steering(self, N: int) -> np.ndarray:
        w = self.width if self.kind == "uniform" else 0.0
        return mean_steering_vector(N, self.center, w)

    def steering_correlation(self, N: int) -> np.ndarray:
        w = self.width if self.kind == "uniform" else 0.0
        return doppler_correlation(N, self.center, w)


def design_threshold_mean(s: Union[TransmitSequence, np.ndarray], alpha_prior: complex) -> np.ndarray:
    x = s.samples if isinstance(s, TransmitSequence) else np.asarray(s, dtype=complex)
    return complex(alpha_prior) * x


def threshold_statistics(s, alpha_mean: complex, alpha_power: float, R, nu_prior: Optional[DopplerPrior] = None):
    """Mean and covariance a random threshold should share with the received signal."""
    x = s.samples if isinstance(s, TransmitSequence) else np.asarray(s, dtype=complex)
    N = x.size
    prior = nu_prior or DopplerPrior()
    mean = complex(alpha_mean) * x * prior.mean_steering(N)
    cov = alpha_power * np.outer(x, x.conj()) * prior.steering_correlation(N) + np.asarray(R)
    return mean, cov


def design_threshold_random(
    s,
    alpha_mean: complex,
    alpha_power: float,
    R,
    K: int = 1,
    nu_prior: Optional[DopplerPrior] = None,
    seed: Union[int, np.random.Generator, None] = None,
) -> np.ndarray:
    """K Gaussian threshold vectors with the first two moments of ``y``. Shape ``(K, N)``."""
    if K < 1:
        raise ValueError("need at least one comparator")
    if alpha_power < 0:
        raise ValueError("prior power must be nonnegative")
    mean, cov = threshold_statistics(s, alpha_mean, alpha_power, R, nu_prior)
    if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
        raise ValueError("threshold covariance is not positive semidefinite")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return complex_gaussian(rng, cov, mean=mean, size=K)


def design_threshold_marginal(
    s,
    alpha_mean: complex,
    alpha_power: float,
    R,
    K: int = 1,
    nu_prior: Optional[DopplerPrior] = None,
    seed: Union[int, np.random.Generator, None] = None,
) -> np.ndarray:
    """K threshold vectors with independent samples matching each sample's mean and variance of ``y``.

    Drawing with the full covariance of ``y`` makes the thresholds nearly
    collinear with the signature when the target term dominates, so every
    comparator asks almost the same question; independent samples keep the
    per-sample spread but decorrelate the comparisons.
    """
    if K < 1:
        raise ValueError("need at least one comparator")
    if alpha_power < 0:
        raise ValueError("prior power must be nonnegative")
    mean, cov = threshold_statistics(s, alpha_mean, alpha_power, R, nu_prior)
    var = np.maximum(np.real(np.diag(cov)), 0.0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (K, mean.size)
    w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(var / 2)
    return mean[None, :] + w


def uniform_pbit_bank(mean, cov, p: int) -> ThresholdBank:
    """p-bit levels spaced uniformly over +-3 standard deviations of each channel."""
    if p < 1:
        raise ValueError("p must be >= 1")
    mean = np.asarray(mean, dtype=complex)
    std = np.sqrt(np.maximum(np.real(np.diag(cov)), 0.0) / 2)
    std = np.where(std > 0, std, 1.0)
    n_levels = 2**p - 1
    offsets = np.linspace(-3.0, 3.0, n_levels) if n_levels > 1 else np.zeros(1)
    levels_r = mean.real[:, None] + std[:, None] * offsets
    levels_i = mean.imag[:, None] + std[:, None] * offsets
    return ThresholdBank("pBit", levels_r=levels_r, levels_i=levels_i)
