"""Target parameter estimators.

* ``fullPrecision``: mismatched filter on the unquantized ``y``.
* ``proposed``: recover ``y`` from comparator outputs by the sign-constrained
  weighted least squares program, then apply the mismatched filter. Moving
  targets alternate between filter, signal and Doppler updates.
* ``bussgang``: fit the normalized covariance predicted by the arcsine law to
  the single-snapshot sign covariance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import minimize
from scipy.stats import truncnorm

from . import qpsolve
from .errors import DegenerateFilterError, NumericalError
from .model import (
    CHOLESKY_JITTER,
    InterferenceModel,
    MovingClutterModel,
    TransmitSequence,
    interference_covariance,
    steering_vector,
)
from .sampling import QuantizedObservation, pbit_interval_bounds

GOLDEN = (np.sqrt(5) - 1) / 2


@dataclass
class EstimatorConfig:
    qp_tol: float = qpsolve.DEFAULT_TOL
    qp_max_iter: Optional[int] = None
    qp_method: str = "auto"
    ridge: Optional[float] = None  # None: 1e-6 * trace(R^-1) / N
    doppler_grid: int = 1024
    doppler_tol: float = 1e-6
    max_cycles: int = 100
    cycle_tol: float = 1e-6
    nu_init: Optional[float] = None
    alpha_prior: complex = 0.0
    alpha_power: float = 1.0  # prior mean of |alpha0|^2, used to start the cyclic estimator
    bussgang_grid: int = 101
    bussgang_radius: Optional[float] = None  # None: 3 * |alpha_prior|, or 3 when the prior is 0
    bussgang_nu_grid: int = 64
    bussgang_moving_alpha_grid: int = 21
    extrapolate: bool = True  # safeguarded Doppler line search after each cycle


@dataclass(frozen=True)
class ReceiveFilter:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex).ravel()
        if not np.linalg.norm(w) > 0:
            raise ValueError("receive filter must be nonzero")
        object.__setattr__(self, "w", w)


@dataclass
class TargetEstimate:
    alpha_hat: complex
    nu_hat: float
    y_hat: np.ndarray
    objective: float
    cycles: int
    method: str
    status: str = "optimal"
    kkt_residual: float = 0.0
    history: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "alphaHat": [float(np.real(self.alpha_hat)), float(np.imag(self.alpha_hat))],
            "nuHat": float(self.nu_hat),
            "objective": float(self.objective),
            "cycles": int(self.cycles),
            "solverStatus": self.status,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


class CovarianceFactor:
    """Cholesky factor of ``R`` (with jitter) reused for every solve against it."""

    def __init__(self, R):
        R = np.asarray(R, dtype=complex)
        self.R = R
        N = R.shape[0]
        try:
            self._c = cho_factor(R + CHOLESKY_JITTER * np.eye(N), lower=True)
        except LinAlgError as exc:
            raise NumericalError("interference covariance is singular") from exc
        self.inv = cho_solve(self._c, np.eye(N, dtype=complex))
        self.inv = (self.inv + self.inv.conj().T) / 2

    def solve(self, b) -> np.ndarray:
        return cho_solve(self._c, np.asarray(b, dtype=complex))


def _factor(R) -> CovarianceFactor:
    return R if isinstance(R, CovarianceFactor) else CovarianceFactor(R)


def _samples(s) -> np.ndarray:
    return s.samples if isinstance(s, TransmitSequence) else np.asarray(s, dtype=complex)


def mmf_filter(signature, R) -> ReceiveFilter:
    """``w = R^{-1} s_t`` (unnormalized)."""
    return ReceiveFilter(_factor(R).solve(signature))


def mmf_estimate_alpha(w, y, signature) -> complex:
    w = w.w if isinstance(w, ReceiveFilter) else np.asarray(w, dtype=complex)
    denom = np.vdot(w, signature)
    if abs(denom) <= 1e-12:
        raise DegenerateFilterError(f"|w^H s| = {abs(denom):.3g} is below 1e-12")
    return complex(np.vdot(w, y) / denom)


def wls_objective(y, alpha0, nu, s, R) -> float:
    """``(y - alpha0 s_t)^H R^{-1} (y - alpha0 s_t)`` with ``s_t = s * p(nu)``."""
    x = _samples(s)
    r = np.asarray(y) - alpha0 * x * steering_vector(nu, x.size)
    return float(np.vdot(r, _factor(R).solve(r)).real)


def doppler_objective_g(nu: float, y, s, R, alpha_hat: Optional[complex] = None) -> float:
    """Doppler criterion written as a Hermitian form in ``[1; p(nu)]``.

    ``alpha_hat`` defaults to the mismatched-filter estimate at this ``nu``; the
    result then equals the weighted residual minus ``y^H R^{-1} y``.
    """
    x = _samples(s)
    y = np.asarray(y, dtype=complex)
    F = _factor(R)
    Rinv = F.inv
    p = steering_vector(nu, x.size)
    if alpha_hat is None:
        sig = x * p
        alpha_hat = mmf_estimate_alpha(Rinv @ sig, y, sig)
    a = alpha_hat * x
    N = x.size
    M = np.zeros((N + 1, N + 1), dtype=complex)
    M[0, 1:] = -a * (y.conj() @ Rinv)
    M[1:, 0] = -a.conj() * (Rinv @ y)
    M[1:, 1:] = abs(alpha_hat) ** 2 * Rinv * np.outer(x, x.conj()).conj()
    v = np.concatenate([[1.0], p])
    return float(np.vdot(v, M @ v).real)


class DopplerProfile:
    """Concentrated criterion ``J(nu) = min_alpha (y - alpha s_t)^H R^{-1} (y - alpha s_t)``.

    With ``c(nu) = s_t^H R^{-1} y`` and ``d(nu) = s_t^H R^{-1} s_t`` it reads
    ``y^H R^{-1} y - |c|^2 / d``; both are trigonometric polynomials in ``nu``.
    """

    def __init__(self, y, s, F: CovarianceFactor):
        x = _samples(s)
        N = x.size
        Riy = F.solve(y)
        self.base = float(np.vdot(y, Riy).real)
        self.a = x.conj() * Riy
        G = x.conj()[:, None] * F.inv * x[None, :]
        self.lags = np.arange(-(N - 1), N)
        self.h = np.array([np.trace(G, offset=-m) for m in self.lags])
        self.n = np.arange(N)

    def __call__(self, nu) -> np.ndarray:
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        c = np.exp(-2j * np.pi * np.outer(nu, self.n)) @ self.a
        d = (np.exp(-2j * np.pi * np.outer(nu, self.lags)) @ self.h).real
        return self.base - np.abs(c) ** 2 / d


def _wrap(nu: float) -> float:
    return (nu + 0.5) % 1.0 - 0.5


def golden_section(f, a: float, b: float, tol: float):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def search_doppler(profile: DopplerProfile, N: int, grid: int = 1024, tol: float = 1e-6):
    """Grid over [-0.5, 0.5) then golden-section refinement. Returns ``(nu, J(nu))``."""
    while grid < 2 * N:
        grid *= 2
    nus = -0.5 + np.arange(grid) / grid
    vals = profile(nus)
    i = int(np.argmin(vals))
    step = 1.0 / grid
    nu, val = golden_section(lambda v: float(profile(v)[0]), nus[i] - step, nus[i] + step, tol)
    if val > vals[i]:
        nu, val = nus[i], float(vals[i])
    return _wrap(nu), float(val)


def _covariance(s, m, R):
    if R is not None:
        return _factor(R)
    return CovarianceFactor(interference_covariance(s, m))


def estimate_full_precision(s, y, m: Optional[InterferenceModel] = None, R=None, moving: bool = False,
                            cfg: Optional[EstimatorConfig] = None) -> TargetEstimate:
    cfg = cfg or EstimatorConfig()
    x = _samples(s)
    F = _covariance(s, m, R)
    y = np.asarray(y, dtype=complex)
    nu = 0.0
    if moving:
        nu, _ = search_doppler(DopplerProfile(y, x, F), x.size, cfg.doppler_grid, cfg.doppler_tol)
    sig = x * steering_vector(nu, x.size)
    w = F.solve(sig)
    alpha = mmf_estimate_alpha(w, y, sig)
    obj = wls_objective(y, alpha, nu, x, F)
    return TargetEstimate(alpha, nu, y.copy(), obj, 0, "fullPrecision")


def _solve_recovery(x, w, F, obs, nu, cfg, x0=None):
    qp = qpsolve.build_recovery_qp(x, w, F.R, obs, nu=nu, ridge=cfg.ridge, R_inv=F.inv)
    sol = qpsolve.solve(qp, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, method=cfg.qp_method, x0=x0)
    return qp, sol


def estimate_stationary(s, m: Optional[InterferenceModel], obs: QuantizedObservation,
                        cfg: Optional[EstimatorConfig] = None, R=None) -> TargetEstimate:
    """Filter, recover ``y`` from the comparator outputs, then apply the filter."""
    cfg = cfg or EstimatorConfig()
    x = _samples(s)
    if obs.N != x.size:
        raise ValueError(f"observation has {obs.N} samples, sequence has {x.size}")
    F = _covariance(s, m, R)
    w = F.solve(x)
    qp, sol = _solve_recovery(x, w, F, obs, None, cfg)
    if sol.x is None:
        return TargetEstimate(complex(np.nan, np.nan), 0.0, np.full(x.size, np.nan), np.nan, 0,
                              "proposed", sol.status, np.inf)
    alpha = mmf_estimate_alpha(w, sol.y, x)
    return TargetEstimate(alpha, 0.0, sol.y, qp.objective(sol.x, ridged=False), 1, "proposed",
                          sol.status, sol.kkt_residual, [sol.objective])


def _comparator_intervals(obs: QuantizedObservation):
    """Per-sample interval of each channel allowed by all comparators."""
    if obs.thresholds.kind == "pBit":
        return pbit_interval_bounds(obs)
    lam = obs.thresholds.vectors
    lo_r = np.where(obs.gamma_r > 0, lam.real, -np.inf).max(axis=0)
    hi_r = np.where(obs.gamma_r < 0, lam.real, np.inf).min(axis=0)
    lo_i = np.where(obs.gamma_i > 0, lam.imag, -np.inf).max(axis=0)
    hi_i = np.where(obs.gamma_i < 0, lam.imag, np.inf).min(axis=0)
    return lo_r, hi_r, lo_i, hi_i


def initial_signal_guess(obs: QuantizedObservation, R, prior_mean=None, alpha_power: float = 1.0) -> np.ndarray:
    """Conditional mean of ``y`` given the comparator intervals, sample by sample.

    Each channel is modelled as an independent Gaussian with mean ``prior_mean``
    and variance ``(alpha_power + R_nn) / 2``, truncated to the interval the
    comparators allow.
    """
    R = R.R if isinstance(R, CovarianceFactor) else np.asarray(R)
    N = obs.N
    mean = np.zeros(N, dtype=complex) if prior_mean is None else np.asarray(prior_mean, dtype=complex)
    sd = np.sqrt((alpha_power + np.real(np.diag(R))) / 2)
    lo_r, hi_r, lo_i, hi_i = _comparator_intervals(obs)

    def channel(lo, hi, m):
        a, b = (lo - m) / sd, (hi - m) / sd
        # far tails make truncnorm lose precision; fall back to the nearest bound there
        with np.errstate(invalid="ignore"):
            v = truncnorm.mean(a, b, loc=m, scale=sd)
        bad = ~np.isfinite(v)
        if np.any(bad):
            v = np.where(bad, np.where(np.isfinite(lo), lo, hi), v)
        return np.clip(v, lo, hi)

    return channel(lo_r, hi_r, mean.real) + 1j * channel(lo_i, hi_i, mean.imag)


def estimate_moving(s, m: Optional[InterferenceModel], obs: QuantizedObservation,
                    cfg: Optional[EstimatorConfig] = None, R=None) -> TargetEstimate:
    """Cyclic minimization over filter, recovered signal and Doppler.

    The tracked objective is the ridged recovery objective, which every step
    leaves nonincreasing: the filter step is implicit (the filter is optimal for
    the current Doppler), the signal step warm-starts a monotone QP solve from
    the previous signal, and the Doppler step keeps the old value unless the
    search finds a strictly lower criterion.
    """
    cfg = cfg or EstimatorConfig()
    x = _samples(s)
    N = x.size
    if obs.N != N:
        raise ValueError(f"observation has {obs.N} samples, sequence has {N}")
    F = _covariance(s, m, R)
    y = initial_signal_guess(obs, F, cfg.alpha_prior * x, cfg.alpha_power)
    if cfg.nu_init is None:
        nu, _ = search_doppler(DopplerProfile(y, x, F), N, cfg.doppler_grid, cfg.doppler_tol)
    else:
        nu = _wrap(cfg.nu_init)
    xr = qpsolve.to_real(y)
    history: list = []
    status = "maxIter"
    qp_status = "optimal"
    kkt = 0.0
    cycles = 0
    for cycles in range(1, cfg.max_cycles + 1):
        nu_start = nu
        sig = x * steering_vector(nu, N)
        w = F.solve(sig)
        qp, sol = _solve_recovery(x, w, F, obs, nu, cfg, x0=xr)
        if sol.x is None:
            return TargetEstimate(complex(np.nan, np.nan), nu, y, np.nan, cycles, "proposed", sol.status, np.inf)
        if cycles == 1 or qp.objective(sol.x) <= qp.objective(xr):
            xr = sol.x
            qp_status, kkt = sol.status, sol.kkt_residual
        y = qpsolve.to_complex(xr)
        profile = DopplerProfile(y, x, F)
        nu_new, j_new = search_doppler(profile, N, cfg.doppler_grid, cfg.doppler_tol)
        j_old = float(profile(nu)[0])
        if j_new < j_old:
            nu, j_cur = nu_new, j_new
        else:
            j_cur = j_old
        ridge_term = qp.objective(xr) - qp.objective(xr, ridged=False)
        f_cur = j_cur + ridge_term
        if cfg.extrapolate and nu != nu_start:
            # y and nu drift together along a shallow valley; step further along
            # the last Doppler move and keep the point only if it is lower
            step = nu - nu_start
            base = nu
            for t in 2.0 ** np.arange(11):
                nu_try = _wrap(base + t * step)
                sig_try = x * steering_vector(nu_try, N)
                qp_try, sol_try = _solve_recovery(x, F.solve(sig_try), F, obs, nu_try, cfg, x0=xr)
                if sol_try.x is None:
                    break
                f_try = qp_try.objective(sol_try.x)
                if not f_try < f_cur:
                    break
                nu, xr, f_cur = nu_try, sol_try.x, f_try
                qp_status, kkt = sol_try.status, sol_try.kkt_residual
            y = qpsolve.to_complex(xr)
        history.append(f_cur)
        if len(history) > 1 and history[-2] - history[-1] <= cfg.cycle_tol * max(abs(history[-2]), 1e-300):
            status = "optimal"
            break
    sig = x * steering_vector(nu, N)
    w = F.solve(sig)
    alpha = mmf_estimate_alpha(w, y, sig)
    if status == "optimal" and qp_status != "optimal":
        status = qp_status
    return TargetEstimate(alpha, nu, y, wls_objective(y, alpha, nu, x, F), cycles, "proposed",
                          status, kkt, history)


# --- Bussgang-aided baseline -------------------------------------------------

def arcsine_inverse(R_gamma) -> np.ndarray:
    """Normalized input covariance from the sign covariance, real and imaginary parts separately."""
    R_gamma = np.asarray(R_gamma)
    return np.sin(np.pi / 2 * R_gamma.real) + 1j * np.sin(np.pi / 2 * R_gamma.imag)


def normalize_covariance(M) -> np.ndarray:
    """``D^{-1/2} M D^{-1/2}`` with ``D`` the diagonal of ``M``."""
    M = np.asarray(M)
    d = np.real(np.diagonal(M, axis1=-2, axis2=-1))
    if np.any(d <= 0):
        raise NumericalError("cannot normalize a covariance with a nonpositive diagonal")
    u = 1 / np.sqrt(d)
    return M * u[..., :, None] * u[..., None, :]


def shifted_covariance(alpha0, signature, lam, R) -> np.ndarray:
    """Covariance of ``y - lam`` for a known threshold: ``E{(y - lam)(y - lam)^H}``."""
    sig = np.asarray(signature)
    lam = np.asarray(lam)
    X = alpha0 * np.outer(sig, lam.conj())
    return abs(alpha0) ** 2 * np.outer(sig, sig.conj()) + np.outer(lam, lam.conj()) + R - X - X.conj().T


@dataclass
class BussgangFit:
    R_gamma: np.ndarray
    R_bar: np.ndarray
    grid: np.ndarray


def _bussgang_misfit(alphas: np.ndarray, sig, lam, R, R_bar) -> np.ndarray:
    """Frobenius misfit ``||R_bar - N(R_{y-lam}(alpha))||`` for a batch of ``alphas``.

    The shifted covariance factors as ``e e^H + R`` with ``e = alpha*sig - lam``,
    so after scaling by ``u = diag^{-1/2}`` the squared misfit expands into a few
    quadratic forms and one batched matrix product per term.
    """
    alphas = np.asarray(alphas, dtype=complex).ravel()
    E = alphas[:, None] * sig[None, :] - lam[None, :]
    d = np.abs(E) ** 2 + np.real(np.diag(R))[None, :]
    u = 1 / np.sqrt(np.maximum(d, 1e-300))
    F = u * E
    G = u * F
    v = u**2
    quad = lambda A, Z: np.real(np.sum(Z.conj() * (Z @ A.T), axis=1))
    sq = (
        np.sum(np.abs(R_bar) ** 2)
        + np.sum(np.abs(F) ** 2, axis=1) ** 2
        + np.sum(v * (v @ (np.abs(R) ** 2).T), axis=1)
        - 2 * quad(R_bar, F)
        - 2 * np.real(np.sum(u * (u @ (np.conj(R_bar) * R).T), axis=1))
        + 2 * quad(R, G)
    )
    return np.sqrt(np.maximum(sq, 0.0))


def _disk_grid(radius: float, n: int) -> np.ndarray:
    t = np.linspace(-radius, radius, n)
    g = (t[None, :] + 1j * t[:, None]).ravel()
    return g[np.abs(g) <= radius + 1e-12]


def estimate_bussgang(s, R, obs: QuantizedObservation, lam=None, nu: Optional[float] = None,
                      cfg: Optional[EstimatorConfig] = None, moving: bool = False) -> TargetEstimate:
    """Grid search plus Nelder-Mead polish of the arcsine-law covariance fit.

    ``nu`` fixes the Doppler; with ``moving=True`` and ``nu`` None the search runs
    over the product of an alpha grid and a Doppler grid.
    """
    cfg = cfg or EstimatorConfig()
    x = _samples(s)
    N = x.size
    R = R.R if isinstance(R, CovarianceFactor) else np.asarray(R, dtype=complex)
    lam = obs.thresholds.vectors[0] if lam is None else np.asarray(lam, dtype=complex)
    gamma = obs.gamma
    R_gamma = np.outer(gamma, gamma.conj())
    R_bar = arcsine_inverse(R_gamma)
    radius = cfg.bussgang_radius
    if radius is None:
        radius = 3 * abs(cfg.alpha_prior) if cfg.alpha_prior else 3.0

    def misfit(alpha, nu_):
        sig = x * steering_vector(nu_, N)
        return float(_bussgang_misfit(np.array([alpha]), sig, lam, R, R_bar)[0])

    if moving and nu is None:
        grid = _disk_grid(radius, cfg.bussgang_moving_alpha_grid)
        nus = -0.5 + np.arange(cfg.bussgang_nu_grid) / cfg.bussgang_nu_grid
        best = (np.inf, 0j, 0.0)
        for nu_ in nus:
            vals = _bussgang_misfit(grid, x * steering_vector(nu_, N), lam, R, R_bar)
            i = int(np.argmin(vals))
            if vals[i] < best[0]:
                best = (float(vals[i]), grid[i], float(nu_))
        _, a0, nu0 = best
        res = minimize(lambda v: misfit(v[0] + 1j * v[1], _wrap(v[2])), [a0.real, a0.imag, nu0],
                       method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 2000})
        alpha, nu_hat = complex(res.x[0], res.x[1]), _wrap(float(res.x[2]))
        value = float(res.fun)
        if value > best[0]:
            alpha, nu_hat, value = a0, nu0, best[0]
    else:
        nu_hat = 0.0 if nu is None else float(nu)
        sig = x * steering_vector(nu_hat, N)
        grid = _disk_grid(radius, cfg.bussgang_grid)
        vals = _bussgang_misfit(grid, sig, lam, R, R_bar)
        i = int(np.argmin(vals))
        res = minimize(lambda v: misfit(v[0] + 1j * v[1], nu_hat), [grid[i].real, grid[i].imag],
                       method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 1000})
        alpha, value = complex(res.x[0], res.x[1]), float(res.fun)
        if value > vals[i]:
            alpha, value = complex(grid[i]), float(vals[i])
    return TargetEstimate(alpha, nu_hat, np.full(N, np.nan, dtype=complex), value, 0, "bussgang")
