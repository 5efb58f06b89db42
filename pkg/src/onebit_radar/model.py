"""Signal model: transmit codes, delay/Doppler structure, interference statistics.

The received vector for a stationary target is

    y = alpha0 * s + sum_{k != 0} alpha_k J_k s + eps

and for a moving target

    y = alpha0 * (s * p(nu)) + sum_{k, l} alpha_{k,l} J_k (s * p(nu_{k,l})) + n

where ``J_k`` delays a length-N vector by ``k`` samples (advances for ``k < 0``)
and ``p(nu)`` is the unit-modulus Doppler steering vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import toeplitz

CHOLESKY_JITTER = 1e-12


@dataclass(frozen=True)
class TransmitSequence:
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex).ravel()
        if s.size == 0:
            raise ValueError("transmit sequence must be non-empty")
        object.__setattr__(self, "samples", s)

    @property
    def N(self) -> int:
        return self.samples.size

    @classmethod
    def normalized(cls, samples) -> "TransmitSequence":
        """Rescale an arbitrary nonzero vector to energy N."""
        s = np.asarray(samples, dtype=complex).ravel()
        energy = np.vdot(s, s).real
        if energy <= 0:
            raise ValueError("cannot normalize an all-zero sequence")
        return cls(s * np.sqrt(s.size / energy))


def generate_unimodular_sequence(N: int, kind: str = "randomPhase", seed: int = 0) -> TransmitSequence:
    """Unit-modulus probing code (peak-to-average power ratio 1).

    ``randomPhase`` draws i.i.d. uniform phases from ``seed``; ``quadraticPhase``
    is the chirp-like code ``exp(j*pi*n^2/N)`` and ignores the seed.
    """
    if N < 1:
        raise ValueError(f"sequence length must be >= 1, got {N}")
    n = np.arange(N)
    if kind == "randomPhase":
        phase = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, N)
    elif kind == "quadraticPhase":
        phase = np.pi * n**2 / N
    else:
        raise ValueError(f"unknown sequence kind {kind!r}")
    return TransmitSequence(np.exp(1j * phase))


def shift_apply(s, k: int) -> np.ndarray:
    """Apply ``J_k``: delay by ``k`` with leading zeros, or advance when ``k < 0``."""
    s = np.asarray(s)
    N = s.shape[0]
    if abs(k) >= N:
        raise ValueError(f"shift |k|={abs(k)} must be <= N-1={N - 1}")
    out = np.zeros_like(s)
    if k >= 0:
        out[k:] = s[: N - k]
    else:
        out[: N + k] = s[-k:]
    return out


def shift_matrix(N: int, k: int) -> np.ndarray:
    """Dense ``J_k`` (ones on the k-th subdiagonal)."""
    if abs(k) >= N:
        raise ValueError(f"shift |k|={abs(k)} must be <= N-1={N - 1}")
    return np.eye(N, k=-k)


def delay_spread_matrix(s) -> np.ndarray:
    """Columns are J_k s for k = 0, 1, ..., N-1, -(N-1), ..., -1 (the ``A^H`` layout)."""
    s = np.asarray(s, dtype=complex)
    N = s.size
    shifts = list(range(N)) + list(range(-(N - 1), 0))
    return np.column_stack([shift_apply(s, k) for k in shifts])


def steering_vector(nu: float, N: int) -> np.ndarray:
    return np.exp(2j * np.pi * nu * np.arange(N))


@dataclass(frozen=True)
class StationaryInterferenceModel:
    """Clutter power ``beta`` per adjacent range cell plus noise covariance ``Gamma``."""

    beta: float
    Gamma: np.ndarray

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("clutter power beta must be nonnegative")
        object.__setattr__(self, "Gamma", _check_psd(self.Gamma, "Gamma"))

    @property
    def N(self) -> int:
        return self.Gamma.shape[0]


@dataclass(frozen=True)
class MovingClutterModel:
    """Range-azimuth clutter cells with uniform Doppler spread, plus noise covariance.

    ``sigma_sq``, ``nu_bar`` and ``eps_d`` are ``(Nc, L)`` arrays (scalars broadcast).
    ``rings`` lists the delay of each range ring; the default ``0..Nc-1`` follows the
    usual ring layout, other values allow advanced (negative) rings.
    """

    Nc: int
    L: int
    sigma_sq: np.ndarray
    nu_bar: np.ndarray
    eps_d: np.ndarray
    Gamma: np.ndarray
    rings: Optional[tuple] = None

    def __post_init__(self):
        shape = (self.Nc, self.L)
        for name in ("sigma_sq", "nu_bar", "eps_d"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape).copy()
            object.__setattr__(self, name, arr)
        Gamma = _check_psd(self.Gamma, "Gamma")
        object.__setattr__(self, "Gamma", Gamma)
        N = Gamma.shape[0]
        if self.rings is None and self.Nc > N:
            raise ValueError(f"Nc={self.Nc} range rings exceed sequence length N={N}")
        rings = tuple(range(self.Nc)) if self.rings is None else tuple(int(k) for k in self.rings)
        if len(rings) != self.Nc or any(abs(k) >= N for k in rings):
            raise ValueError("rings must list Nc delays with |k| <= N-1")
        object.__setattr__(self, "rings", rings)
        if np.any(self.sigma_sq < 0) or np.any(self.eps_d < 0):
            raise ValueError("clutter powers and Doppler spreads must be nonnegative")
        if np.any(np.abs(self.nu_bar) + self.eps_d / 2 > 0.5 + 1e-12):
            raise ValueError("clutter Doppler interval leaves [-0.5, 0.5]")

    @property
    def N(self) -> int:
        return self.Gamma.shape[0]


InterferenceModel = Union[StationaryInterferenceModel, MovingClutterModel]


def _check_psd(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.conj().T), initial=0.0) > 1e-12 * scale:
        raise ValueError(f"{name} is not Hermitian")
    if M.size and np.linalg.eigvalsh(M).min() < -1e-10 * scale:
        raise ValueError(f"{name} is not positive semidefinite")
    return M


def stationary_covariance(s: TransmitSequence, m: StationaryInterferenceModel) -> np.ndarray:
    """Interference covariance ``beta * sum_{k != 0} J_k s s^H J_k^H + Gamma``.

    Summing over every shift visits every alignment of ``s`` with itself, so the
    full sum is the Toeplitz autocorrelation matrix; the k = 0 term is removed.
    """
    x = s.samples
    N = x.size
    if m.N != N:
        raise ValueError(f"Gamma is {m.N}x{m.N} but sequence has length {N}")
    # r[d] = sum_m x[m] conj(x[m - d]), d = 0..N-1
    r = np.correlate(x, x, mode="full")[N - 1:]
    T = toeplitz(r, r.conj())
    return m.beta * (T - np.outer(x, x.conj())) + m.Gamma


def doppler_correlation(N: int, nu_bar: float, eps_d: float) -> np.ndarray:
    """``E{p(nu) p(nu)^H}`` for nu uniform on ``(nu_bar - eps_d/2, nu_bar + eps_d/2)``."""
    d = np.subtract.outer(np.arange(N), np.arange(N))
    return np.exp(2j * np.pi * d * nu_bar) * np.sinc(d * eps_d)


def mean_steering_vector(N: int, center: float, width: float) -> np.ndarray:
    """``E{p(nu)}`` for nu uniform on ``(center - width/2, center + width/2)``."""
    n = np.arange(N)
    return np.exp(2j * np.pi * n * center) * np.sinc(n * width)


def _shift_both(X: np.ndarray, k: int) -> np.ndarray:
    """``J_k X J_k^H``."""
    N = X.shape[0]
    out = np.zeros_like(X)
    if k >= 0:
        out[k:, k:] = X[: N - k, : N - k]
    else:
        out[: N + k, : N + k] = X[-k:, -k:]
    return out


def moving_clutter_covariance(s: TransmitSequence, m: MovingClutterModel) -> np.ndarray:
    x = s.samples
    N = x.size
    if m.N != N:
        raise ValueError(f"Gamma is {m.N}x{m.N} but sequence has length {N}")
    S = np.outer(x, x.conj())
    Sigma = np.zeros((N, N), dtype=complex)
    for i, k in enumerate(m.rings):
        ring = np.zeros((N, N), dtype=complex)
        for l in range(m.L):
            if m.sigma_sq[i, l] == 0:
                continue
            ring += m.sigma_sq[i, l] * doppler_correlation(N, m.nu_bar[i, l], m.eps_d[i, l])
        Sigma += _shift_both(S * ring, k)
    return Sigma


def total_covariance_moving(Sigma_c: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    Sigma_c = np.asarray(Sigma_c)
    Gamma = np.asarray(Gamma)
    if Sigma_c.shape != Gamma.shape:
        raise ValueError(f"shape mismatch {Sigma_c.shape} vs {Gamma.shape}")
    return Sigma_c + Gamma


def interference_covariance(s: TransmitSequence, m: InterferenceModel) -> np.ndarray:
    if isinstance(m, MovingClutterModel):
        return total_covariance_moving(moving_clutter_covariance(s, m), m.Gamma)
    return stationary_covariance(s, m)


def complex_gaussian(rng: np.random.Generator, cov: np.ndarray, mean=None, size: Optional[int] = None) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws via a jittered Cholesky factor.

    Returns shape ``(N,)`` when ``size`` is None, else ``(size, N)``.
    """
    cov = np.asarray(cov, dtype=complex)
    N = cov.shape[0]
    shape = (N,) if size is None else (size, N)
    w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    if not np.any(cov):
        # exact zero covariance: keep the stream position but add nothing
        z = np.zeros(shape, dtype=complex)
    else:
        chol = np.linalg.cholesky(cov + CHOLESKY_JITTER * np.eye(N))
        z = w @ chol.T
    if mean is not None:
        z = z + np.asarray(mean)
    return z


@dataclass
class SceneRealization:
    alpha0: complex
    nu: float
    signature: np.ndarray  # s * p(nu)
    clutter_coeffs: np.ndarray
    clutter: np.ndarray
    noise: np.ndarray
    y: np.ndarray
    clutter_dopplers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def synthesized(self) -> np.ndarray:
        return self.alpha0 * self.signature + self.clutter + self.noise


def synthesize_scene(
    s: TransmitSequence,
    alpha0: complex,
    nu: float,
    m: InterferenceModel,
    seed: Union[int, np.random.Generator, None] = None,
) -> SceneRealization:
    """Draw one received vector.

    Clutter coefficients are zero-mean circular complex Gaussian with the cell's
    power; moving-clutter Doppler shifts are uniform over each cell's interval;
    noise is complex Gaussian with covariance ``Gamma``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = s.samples
    N = x.size
    if m.N != N:
        raise ValueError(f"interference model is for N={m.N}, sequence has N={N}")
    if not -0.5 <= nu < 0.5:
        raise ValueError(f"normalized Doppler {nu} outside [-0.5, 0.5)")
    signature = x * steering_vector(nu, N)

    if isinstance(m, MovingClutterModel):
        coeffs = np.sqrt(m.sigma_sq / 2) * (
            rng.standard_normal(m.sigma_sq.shape) + 1j * rng.standard_normal(m.sigma_sq.shape)
        )
        dopplers = rng.uniform(m.nu_bar - m.eps_d / 2, m.nu_bar + m.eps_d / 2)
        clutter = np.zeros(N, dtype=complex)
        n = np.arange(N)
        for i, k in enumerate(m.rings):
            # sum over azimuth sectors before shifting
            ring = (coeffs[i][:, None] * np.exp(2j * np.pi * np.outer(dopplers[i], n))).sum(axis=0)
            clutter += shift_apply(x * ring, k)
    else:
        coeffs = np.sqrt(m.beta / 2) * (rng.standard_normal(2 * N - 1) + 1j * rng.standard_normal(2 * N - 1))
        coeffs[N - 1] = 0.0  # index N-1 is the k = 0 (target) cell
        dopplers = np.zeros(0)
        # coeffs[i] multiplies J_{i-(N-1)} s
        clutter = np.convolve(coeffs, x)[N - 1 : 2 * N - 1]

    noise = complex_gaussian(rng, m.Gamma)
    y = alpha0 * signature + clutter + noise
    return SceneRealization(
        alpha0=complex(alpha0),
        nu=float(nu),
        signature=signature,
        clutter_coeffs=coeffs,
        clutter=clutter,
        noise=noise,
        y=y,
        clutter_dopplers=dopplers,
    )
