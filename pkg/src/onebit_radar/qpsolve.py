"""Sign-constrained weighted least squares for one-bit signal recovery.

The recovery problem is

    minimize    y^H B^H R^{-1} B y  +  eps * ||y - lam_bar||^2
    subject to  gamma_r * (Re y - Re lam) >= 0,  gamma_i * (Im y - Im lam) >= 0

with ``B = I - s_t w^H / (w^H s_t)``. In the real embedding ``x = [Re y; Im y]``
every constraint touches a single coordinate, so all comparators of one
coordinate collapse into an interval ``l <= x <= u``. Reflecting each bounded
coordinate about its active threshold (``z = sign * (x - t)``) turns the problem
into a nonnegativity-constrained least squares, solved here with a
Lawson-Hanson / Bro-de Jong active-set method that also honours finite upper
bounds (p-bit intervals) and free coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DegenerateFilterError
from .sampling import QuantizedObservation, pbit_interval_bounds

DEFAULT_TOL = 1e-8
PG_SWITCH_DIM = 1024  # real dimension (N >= 512 complex samples)
PG_MAX_ITER = 5000


def embed_hermitian(A: np.ndarray) -> np.ndarray:
    """Real symmetric ``E`` with ``y^H A y == x^T E x`` for ``x = [Re y; Im y]``."""
    Ar, Ai = A.real, A.imag
    return np.block([[Ar, -Ai], [Ai, Ar]])


def to_real(y) -> np.ndarray:
    y = np.asarray(y, dtype=complex)
    return np.concatenate([y.real, y.imag])


def to_complex(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    return x[:n] + 1j * x[n:]


@dataclass
class SignConstrainedQP:
    """``minimize x^T H x + ridge * ||x - center||^2`` under single-coordinate halfspaces.

    Constraint ``j`` reads ``sign[j] * (x[index[j]] - threshold[j]) >= 0``; infinite
    thresholds are vacuous. Coordinates listed in no constraint must be flagged
    in ``free``.
    """

    H: np.ndarray
    sign: np.ndarray
    index: np.ndarray
    threshold: np.ndarray
    ridge: float = 0.0
    center: Optional[np.ndarray] = None
    free: Optional[np.ndarray] = None
    signature: Optional[np.ndarray] = None  # complex s_t, kept for diagnostics

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("quadratic form must be square")
        self.sign = np.asarray(self.sign, dtype=int).ravel()
        self.index = np.asarray(self.index, dtype=int).ravel()
        self.threshold = np.asarray(self.threshold, dtype=float).ravel()
        if not (self.sign.size == self.index.size == self.threshold.size):
            raise ValueError("constraint arrays differ in length")
        if np.any(np.abs(self.sign) != 1):
            raise ValueError("constraint signs must be +1 or -1")
        if self.index.size and (self.index.min() < 0 or self.index.max() >= n):
            raise ValueError("constraint index out of range")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.center = np.zeros(n) if self.center is None else np.asarray(self.center, dtype=float)
        free = np.zeros(n, bool) if self.free is None else np.asarray(self.free, dtype=bool)
        constrained = np.zeros(n, bool)
        constrained[self.index] = True
        if np.any(~constrained & ~free):
            raise ValueError("every variable needs a constraint or an explicit free flag")
        self.free = free
        if np.linalg.eigvalsh((self.H + self.H.T) / 2).min() < -1e-10 * max(1.0, np.abs(self.H).max()):
            raise ValueError("quadratic form is not positive semidefinite")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.sign.size

    def bounds(self):
        lower = np.full(self.n, -np.inf)
        upper = np.full(self.n, np.inf)
        pos = self.sign > 0
        np.maximum.at(lower, self.index[pos], self.threshold[pos])
        np.minimum.at(upper, self.index[~pos], self.threshold[~pos])
        return lower, upper

    def objective(self, x, ridged: bool = True) -> float:
        x = np.asarray(x, dtype=float)
        val = float(x @ self.H @ x)
        if ridged and self.ridge:
            d = x - self.center
            val += self.ridge * float(d @ d)
        return val

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 2 * (self.H @ x) + 2 * self.ridge * (x - self.center)

    def with_ridge(self, ridge: float) -> "SignConstrainedQP":
        return SignConstrainedQP(
            self.H, self.sign, self.index, self.threshold, ridge, self.center, self.free, self.signature
        )


@dataclass
class QPSolution:
    x: Optional[np.ndarray]
    objective: float
    kkt_residual: float
    iterations: int
    status: str  # optimal | maxIter | infeasibleInput
    history: list = field(default_factory=list)

    @property
    def y(self) -> np.ndarray:
        return to_complex(self.x)


def default_ridge(R_inv: np.ndarray) -> float:
    N = R_inv.shape[0]
    return 1e-6 * float(np.trace(R_inv).real) / N


def recovery_projector(signature, w) -> np.ndarray:
    """``B = I - s_t w^H / (w^H s_t)``: removes the MMF-fitted target component."""
    signature = np.asarray(signature, dtype=complex)
    w = np.asarray(w, dtype=complex)
    denom = np.vdot(w, signature)
    if abs(denom) < 1e-12:
        raise DegenerateFilterError(f"|w^H s| = {abs(denom):.3g} is below 1e-12")
    return np.eye(signature.size) - np.outer(signature, w.conj()) / denom


def observation_constraints(obs: QuantizedObservation):
    """Constraint triplets (sign, index, threshold) in the real embedding."""
    N = obs.N
    n = np.arange(N)
    bank = obs.thresholds
    if bank.kind == "pBit":
        lo_r, hi_r, lo_i, hi_i = pbit_interval_bounds(obs)
        sign = np.concatenate([np.ones(N), np.ones(N), -np.ones(N), -np.ones(N)])
        index = np.concatenate([n, N + n, n, N + n])
        threshold = np.concatenate([lo_r, lo_i, hi_r, hi_i])
        return sign, index, threshold
    lam = bank.vectors
    sign = np.concatenate([obs.gamma_r.ravel(), obs.gamma_i.ravel()])
    index = np.concatenate([np.tile(n, obs.K), np.tile(N + n, obs.K)])
    threshold = np.concatenate([lam.real.ravel(), lam.imag.ravel()])
    return sign, index, threshold


def build_recovery_qp(
    s,
    w,
    R,
    obs: QuantizedObservation,
    nu: Optional[float] = None,
    ridge: Optional[float] = None,
    R_inv: Optional[np.ndarray] = None,
) -> SignConstrainedQP:
    """Recovery QP for a stationary (``nu`` None) or Doppler-shifted signature."""
    x = getattr(s, "samples", s)
    x = np.asarray(x, dtype=complex)
    N = x.size
    if obs.N != N:
        raise ValueError(f"observation has {obs.N} samples, sequence has {N}")
    signature = x if nu is None else x * np.exp(2j * np.pi * nu * np.arange(N))
    if R_inv is None:
        R_inv = np.linalg.inv(np.asarray(R, dtype=complex))
    B = recovery_projector(signature, w)
    A = B.conj().T @ R_inv @ B
    A = (A + A.conj().T) / 2
    sign, index, threshold = observation_constraints(obs)
    return SignConstrainedQP(
        H=embed_hermitian(A),
        sign=sign,
        index=index,
        threshold=threshold,
        ridge=default_ridge(R_inv) if ridge is None else ridge,
        center=to_real(obs.thresholds.mean_threshold()),
        signature=signature,
    )


def kkt_check(qp: SignConstrainedQP, x) -> float:
    """Max of projected-gradient norm, bound violation and complementary slackness."""
    x = np.asarray(x, dtype=float)
    if x.shape != (qp.n,):
        raise ValueError(f"point has shape {x.shape}, QP dimension is {qp.n}")
    lower, upper = qp.bounds()
    g = qp.gradient(x)
    feas = max(float(np.max(lower - x, initial=0.0)), float(np.max(x - upper, initial=0.0)))
    at_lower = x <= lower
    at_upper = x >= upper
    pg = np.where(at_lower, np.minimum(g, 0.0), np.where(at_upper, np.maximum(g, 0.0), g))
    stationarity = float(np.max(np.abs(pg), initial=0.0))
    # multipliers implied by the gradient, paired with finite slacks
    slack_l = np.where(np.isfinite(lower), x - lower, 0.0)
    slack_u = np.where(np.isfinite(upper), upper - x, 0.0)
    comp = np.maximum(g, 0.0) * np.abs(slack_l) * np.isfinite(lower)
    comp = np.maximum(comp, np.maximum(-g, 0.0) * np.abs(slack_u) * np.isfinite(upper))
    # a coordinate strictly inside is already covered by stationarity
    comp = np.where(at_lower | at_upper, comp, 0.0)
    return max(stationarity, feas, float(np.max(comp, initial=0.0)))


def _reflect(qp: SignConstrainedQP):
    """Change of variables ``x = t + D z`` with ``z`` in ``[lb, ub]``, ``lb`` 0 or -inf."""
    lower, upper = qp.bounds()
    has_l = np.isfinite(lower)
    has_u = np.isfinite(upper)
    D = np.where(has_l | ~has_u, 1.0, -1.0)
    t = np.where(has_l, lower, np.where(has_u, upper, 0.0))
    lb = np.where(has_l | has_u, 0.0, -np.inf)
    ub = np.where(has_l & has_u, upper - lower, np.inf)
    return D, t, lb, ub


def _as_half_quadratic(qp: SignConstrainedQP, D, t):
    """``f(t + D z) = 0.5 z^T P z + q^T z + const``."""
    Q = qp.H + qp.ridge * np.eye(qp.n)
    P = 2 * (D[:, None] * Q * D[None, :])
    q = 2 * D * (Q @ t - qp.ridge * qp.center)
    return P, q


def solve(
    qp: SignConstrainedQP,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    method: str = "auto",
    x0: Optional[np.ndarray] = None,
) -> QPSolution:
    """Solve ``qp`` to a KKT-certified point.

    ``method`` is ``activeSet``, ``projectedGradient`` or ``auto`` (projected
    gradient from real dimension 1024 on). ``x0`` warm-starts from a point that is
    clipped into the feasible box.
    """
    lower, upper = qp.bounds()
    if np.any(lower > upper):
        bad = int(np.argmax(lower > upper))
        return QPSolution(None, np.nan, np.inf, 0, "infeasibleInput", [f"l > u at coordinate {bad}"])
    D, t, lb, ub = _reflect(qp)
    P, q = _as_half_quadratic(qp, D, t)
    z0 = None
    if x0 is not None:
        z0 = np.clip(D * (np.asarray(x0, dtype=float) - t), lb, ub)
    if method == "auto":
        method = "projectedGradient" if qp.n >= PG_SWITCH_DIM else "activeSet"
    if method == "activeSet":
        iters = 10 * qp.n if max_iter is None else max_iter
        z, it, status, hist = box_active_set(P, q, lb, ub, z0=z0, tol=tol / 2, max_iter=iters)
    elif method == "projectedGradient":
        iters = PG_MAX_ITER if max_iter is None else max_iter
        z, it, status, hist = projected_gradient(P, q, lb, ub, z0=z0, tol=tol / 2, max_iter=iters)
        if status != "optimal":
            # the accelerated iterate fixes the active set; finish with exact face solves
            z, it2, status, hist2 = box_active_set(P, q, lb, ub, z0=z, tol=tol / 2, max_iter=10 * qp.n)
            it += it2
            hist += hist2
    else:
        raise ValueError(f"unknown QP method {method!r}")
    x = t + D * z
    # lower + (upper - lower) need not round back to upper; put active coordinates exactly on their bound
    x = np.where(np.isfinite(lb) & (z <= lb), t, x)
    x = np.where(np.isfinite(ub) & (z >= ub), upper, x)
    const = qp.objective(t)
    history = [h + const for h in hist]
    res = kkt_check(qp, x)
    if status == "optimal" and res > tol:
        status = "maxIter"
    return QPSolution(x, qp.objective(x), res, it, status, history)


def _face_solve(P, q, z, passive):
    """Minimize over the passive coordinates with the others held fixed."""
    idx = np.flatnonzero(passive)
    zs = z.copy()
    if idx.size == 0:
        return zs
    fixed = ~passive
    rhs = -(q[idx] + P[np.ix_(idx, fixed)] @ z[fixed])
    Pff = P[np.ix_(idx, idx)]
    try:
        c = cho_factor(Pff)
        sol = cho_solve(c, rhs)
        # one step of iterative refinement
        sol += cho_solve(c, rhs - Pff @ sol)
    except LinAlgError:
        sol = np.linalg.lstsq(Pff, rhs, rcond=None)[0]
    zs[idx] = sol
    return zs


def box_active_set(P, q, lb, ub, z0=None, tol: float = 1e-9, max_iter: int = 1000):
    """Primal active-set method for ``min 0.5 z^T P z + q^T z`` on ``lb <= z <= ub``.

    With ``lb = 0`` and ``ub = inf`` this is the Lawson-Hanson NNLS iteration in
    normal-equation form. Coordinates with ``lb = -inf`` start (and stay) passive.
    Returns ``(z, iterations, status, objective_history)``.
    """
    n = q.size
    bounded = np.isfinite(lb)
    if z0 is None:
        z = np.where(bounded, lb, 0.0).astype(float)
        passive = ~bounded
    else:
        z = np.asarray(z0, dtype=float).copy()
        passive = ~bounded | ((z > lb) & (z < ub))

    def f(v):
        return float(0.5 * v @ P @ v + q @ v)

    history = [f(z)]
    it = 0
    status = "maxIter"
    while it < max_iter:
        # inner loop: move to the face minimizer, dropping blocking coordinates
        while True:
            zs = _face_solve(P, q, z, passive)
            viol = passive & bounded & ((zs < lb) | (zs > ub))
            if not viol.any():
                z = zs
                break
            it += 1
            step = zs - z
            with np.errstate(divide="ignore", invalid="ignore"):
                to_lb = np.where(viol & (zs < lb), (lb - z) / step, np.inf)
                to_ub = np.where(viol & (zs > ub), (ub - z) / step, np.inf)
            alpha = float(np.clip(min(to_lb.min(), to_ub.min()), 0.0, 1.0))
            z = z + alpha * step
            hit_l = passive & bounded & (z - lb <= 1e-14 * np.maximum(1.0, np.abs(lb)))
            with np.errstate(invalid="ignore"):
                hit_u = passive & np.isfinite(ub) & (ub - z <= 1e-14 * np.maximum(1.0, np.abs(ub)))
            # the coordinate(s) that limited the step always leave the passive set
            limiting = viol & (np.minimum(to_lb, to_ub) <= alpha)
            hit_l |= limiting & (zs < lb)
            hit_u |= limiting & (zs > ub)
            z[hit_l] = lb[hit_l]
            z[hit_u] = ub[hit_u]
            passive &= ~(hit_l | hit_u)
            if it >= max_iter:
                history.append(f(z))
                return z, it, status, history
        history.append(f(z))
        g = P @ z + q
        at_lb = bounded & ~passive & (z <= lb)
        at_ub = bounded & ~passive & (z >= ub)
        push = np.where(at_lb, -g, 0.0) + np.where(at_ub, g, 0.0)
        j = int(np.argmax(push))
        if push[j] <= tol:
            status = "optimal"
            break
        passive[j] = True
        it += 1
    return z, it, status, history


def projected_gradient(P, q, lb, ub, z0=None, tol: float = 1e-9, max_iter: int = PG_MAX_ITER):
    """Nesterov-accelerated projected gradient with restart on objective increase."""
    n = q.size
    L = float(np.linalg.eigvalsh(P).max())
    if L <= 0:
        L = 1.0
    z = np.clip(np.zeros(n) if z0 is None else np.asarray(z0, dtype=float), lb, ub)

    def f(v):
        return float(0.5 * v @ P @ v + q @ v)

    v = z.copy()
    theta = 1.0
    fz = f(z)
    history = [fz]
    status = "maxIter"
    for it in range(1, max_iter + 1):
        z_new = np.clip(v - (P @ v + q) / L, lb, ub)
        f_new = f(z_new)
        if f_new > fz:
            # restart momentum, take a plain projected step from z
            z_new = np.clip(z - (P @ z + q) / L, lb, ub)
            f_new = f(z_new)
            theta = 1.0
            v = z_new.copy()
        else:
            theta_next = (1 + np.sqrt(1 + 4 * theta**2)) / 2
            v = z_new + ((theta - 1) / theta_next) * (z_new - z)
            theta = theta_next
        z, fz = z_new, f_new
        history.append(fz)
        g = P @ z + q
        pg = np.where(z <= lb, np.minimum(g, 0.0), np.where(z >= ub, np.maximum(g, 0.0), g))
        if np.max(np.abs(pg), initial=0.0) <= tol:
            status = "optimal"
            break
    return z, it, status, history


def nnls(A, b, tol: float = 1e-10, max_iter: Optional[int] = None):
    """``argmin ||A z - b||`` over ``z >= 0`` by the active-set iteration above."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    P = 2 * A.T @ A
    q = -2 * A.T @ b
    z, _, status, _ = box_active_set(
        P, q, np.zeros(n), np.full(n, np.inf), tol=tol, max_iter=max_iter or 30 * n
    )
    return z, float(np.linalg.norm(A @ z - b)), status


def write_qp(path, qp: SignConstrainedQP) -> None:
    """Debug dump: dimensions, quadratic form as CSV rows, then constraint triplets."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"n {qp.n}\nconstraints {qp.n_constraints}\nridge {qp.ridge!r}\n")
        fh.write("H\n")
        for row in qp.H:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
        fh.write("center\n" + ",".join(repr(float(v)) for v in qp.center) + "\n")
        fh.write("sign,index,threshold\n")
        for sg, ix, th in zip(qp.sign, qp.index, qp.threshold):
            fh.write(f"{int(sg)},{int(ix)},{float(th)!r}\n")


def read_qp(path) -> SignConstrainedQP:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    n = int(lines[0].split()[1])
    m = int(lines[1].split()[1])
    ridge = float(lines[2].split()[1])
    H = np.array([[float(v) for v in ln.split(",")] for ln in lines[4 : 4 + n]])
    center = np.array([float(v) for v in lines[5 + n].split(",")])
    rows = [ln.split(",") for ln in lines[7 + n : 7 + n + m]]
    sign = np.array([int(r[0]) for r in rows], dtype=int)
    index = np.array([int(r[1]) for r in rows], dtype=int)
    threshold = np.array([float(r[2]) for r in rows])
    return SignConstrainedQP(H, sign, index, threshold, ridge, center)
