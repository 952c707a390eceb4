"""Cumulant-matching estimator of the branching-ratio matrix.

Fits R by minimising

    L(R) = (1 - kappa) ||Kc(R) - Kc_hat||_F^2 + kappa ||C(R) - C_hat||_F^2

with the mean intensities held at their empirical values, then returns
G = I - R^-1, mu = R^-1 Lambda and Psi = R - I.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateCumulants, DegenerateLambda, SingularRHat
from .model import CumulantSet, covariance_from_r, largest_singular_value, skewness_slice_from_r, spectral_norm

log = logging.getLogger(__name__)


class StepRule(str, enum.Enum):
    FIXED = "fixed"
    BACKTRACKING = "backtracking"
    LBFGS = "lbfgs"
    LEVENBERG_MARQUARDT = "lm"


_LBFGS_MEMORY = 10


@dataclass(frozen=True)
class NphcConfig:
    max_iterations: int = 20000
    tolerance: float = 1e-12
    restarts: int = 0
    perturbation_scale: float = 0.1
    step_rule: StepRule = StepRule.LEVENBERG_MARQUARDT
    fixed_step: float = 1e-3
    seed: int = 0
    # starts drawn as R = (I - G)^-1 from random sparse nonnegative G
    random_starts: int = 0
    # stop trying further starts once a fit is exact to this relative level
    exact_fit: float = 1e-24

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.random_starts < 0:
            raise ValueError("random_starts must be >= 0")
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))


@dataclass(frozen=True, eq=False)
class EstimationResult:
    R_hat: np.ndarray
    G_hat: np.ndarray
    Psi_hat: np.ndarray
    mu_hat: np.ndarray
    Lambda_hat: np.ndarray
    kappa: float
    final_loss: float
    loss_trajectory: tuple
    spectral_radius: float
    largest_singular_value: float
    converged: bool
    restart_index: int
    iterations: int
    nonstationary: bool = False
    negative_mu: bool = False
    alternative_optima: tuple = ()
    restart_losses: tuple = ()
    cumulants: Optional[CumulantSet] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.G_hat.shape[0]


def kappa(C_hat, Kc_hat) -> float:
    """Weight of the covariance term: ||Kc||^2 / (||Kc||^2 + ||C||^2)."""
    k2 = float(np.sum(np.square(Kc_hat)))
    c2 = float(np.sum(np.square(C_hat)))
    if k2 + c2 == 0:
        raise DegenerateCumulants("both C and Kc are zero")
    return k2 / (k2 + c2)


def _residuals(R, cumulants: CumulantSet):
    lam = cumulants.Lambda
    C = covariance_from_r(R, lam)
    K = skewness_slice_from_r(R, lam, C)
    return C, K, C - cumulants.C, K - cumulants.Kc


def loss(R, cumulants: CumulantSet, kappa: float) -> float:
    R = np.asarray(R, dtype=float)
    _, _, dC, dK = _residuals(R, cumulants)
    return float((1.0 - kappa) * np.sum(dK * dK) + kappa * np.sum(dC * dC))


def _loss_and_gradient(R, cumulants: CumulantSet, kap: float):
    lam = cumulants.Lambda
    C, _, dC, dK = _residuals(R, cumulants)
    value = (1.0 - kap) * np.sum(dK * dK) + kap * np.sum(dC * dC)
    GK = 2.0 * (1.0 - kap) * dK
    GC = 2.0 * kap * dC
    S = R * R
    GR = GK @ R
    # adjoint of Kc = S C + 2 (R o C) R^T - 2 (S diag(lam)) R^T, C = R diag(lam) R^T
    M = GC + S.T @ GK + 2.0 * R * GR
    grad = (M + M.T) @ (R * lam)
    grad += 2.0 * R * (GK @ C.T)
    grad += 2.0 * C * GR
    grad += 2.0 * GK.T @ (R * C)
    grad -= 4.0 * R * (GR * lam)
    grad -= 2.0 * GK.T @ (S * lam)
    return float(value), grad


def loss_gradient(R, cumulants: CumulantSet, kappa: float) -> np.ndarray:
    """Analytic dL/dR."""
    return _loss_and_gradient(np.asarray(R, dtype=float), cumulants, kappa)[1]


def _residual_vector(R, cumulants: CumulantSet, kap: float) -> np.ndarray:
    _, _, dC, dK = _residuals(R, cumulants)
    return np.concatenate([math.sqrt(1.0 - kap) * dK.ravel(), math.sqrt(kap) * dC.ravel()])


def residual_jacobian(R, cumulants: CumulantSet, kap: float) -> np.ndarray:
    """Jacobian of the weighted residual vector w.r.t. vec(R), shape (2 d^2, d^2)."""
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    lam = cumulants.Lambda
    C = covariance_from_r(R, lam)
    S = R * R
    E = np.eye(d * d).reshape(d * d, d, d)
    Et = E.transpose(0, 2, 1)
    RD = R * lam
    dC = E @ RD.T + RD @ Et
    dS = 2.0 * R * E
    dK = (
        dS @ C
        + S @ dC
        + 2.0 * (E * C + R * dC) @ R.T
        + 2.0 * (R * C) @ Et
        - 2.0 * (dS * lam) @ R.T
        - 2.0 * (S * lam) @ Et
    )
    J = np.concatenate([math.sqrt(1.0 - kap) * dK.reshape(d * d, -1), math.sqrt(kap) * dC.reshape(d * d, -1)], axis=1)
    return J.T


def initialize_R(cumulants: CumulantSet) -> np.ndarray:
    """Starting point from C = R diag(Lambda) R^T: sqrt(PSD(C)) diag(Lambda)^-1/2."""
    lam = np.asarray(cumulants.Lambda, dtype=float)
    if np.any(lam <= 0):
        bad = np.nonzero(lam <= 0)[0].tolist()
        raise DegenerateLambda(f"components {bad} have zero mean intensity; drop them before estimating")
    C = 0.5 * (cumulants.C + cumulants.C.T)
    w, V = np.linalg.eigh(C)
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return root / np.sqrt(lam)


def _lbfgs_direction(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(np.vdot(y, s))
        a = rho * float(np.vdot(s, q))
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(np.vdot(s, y)) / float(np.vdot(y, y))
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(np.vdot(y, q))
        q += (a - b) * s
    return -q


def _levenberg_marquardt(R0, cumulants, kap, cfg: NphcConfig):
    R = np.array(R0, dtype=float)
    d = R.shape[0]
    r = _residual_vector(R, cumulants, kap)
    f = float(r @ r)
    traj = [f]
    floor = 1e-30 * max(f, 1e-300)
    damping = 1e-3
    converged = False
    stalls = 0
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if f <= floor:
            converged = True
            break
        J = residual_jacobian(R, cumulants, kap)
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        while True:
            try:
                step = np.linalg.solve(A + damping * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                R_new = R + step.reshape(d, d)
                r_new = _residual_vector(R_new, cumulants, kap)
                f_new = float(r_new @ r_new)
                if np.isfinite(f_new) and f_new < f:
                    damping = max(damping / 3.0, 1e-12)
                    break
            damping *= 4.0
            if damping > 1e16:
                f_new = f
                break
        if f_new >= f:
            converged = True
            break
        decrease = (f - f_new) / f
        R, r, f = R_new, r_new, f_new
        traj.append(f)
        stalls = stalls + 1 if decrease < cfg.tolerance else 0
        if stalls >= 3:
            converged = True
            break
    return R, f, tuple(traj), converged, it


def _descend(R0, cumulants, kap, cfg: NphcConfig):
    """Monotone descent from ``R0``; returns (R, loss, trajectory, converged, iterations)."""
    if cfg.step_rule is StepRule.LEVENBERG_MARQUARDT:
        return _levenberg_marquardt(R0, cumulants, kap, cfg)
    R = np.array(R0, dtype=float)
    f, g = _loss_and_gradient(R, cumulants, kap)
    traj = [f]
    floor = 1e-30 * max(f, 1e-300)
    s_hist, y_hist = [], []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gnorm2 = float(np.sum(g * g))
        if gnorm2 == 0.0 or f <= floor:
            converged = True
            break
        if cfg.step_rule is StepRule.FIXED:
            R_new = R - cfg.fixed_step * g
            f_new, g_new = _loss_and_gradient(R_new, cumulants, kap)
        else:
            if cfg.step_rule is StepRule.LBFGS:
                direction = _lbfgs_direction(g, s_hist, y_hist)
                slope = float(np.vdot(g, direction))
                if slope >= 0:
                    s_hist.clear()
                    y_hist.clear()
                    direction, slope = -g, -gnorm2
                step = 1.0 if s_hist else 1e-2 * max(np.abs(R).max(), 1.0) / math.sqrt(gnorm2)
            else:
                direction, slope = -g, -gnorm2
                if s_hist:
                    s, y = s_hist[-1], y_hist[-1]
                    step = float(np.vdot(s, s)) / float(np.vdot(s, y))
                else:
                    step = 1e-2 * max(np.abs(R).max(), 1.0) / math.sqrt(gnorm2)
            # Armijo backtracking
            while True:
                R_new = R + step * direction
                f_new, g_new = _loss_and_gradient(R_new, cumulants, kap)
                if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                    break
                step *= 0.5
                if step * math.sqrt(float(np.sum(direction * direction))) < 1e-17 * max(np.abs(R).max(), 1.0):
                    R_new, f_new, g_new = R, f, g
                    break
            if f_new == f:
                converged = True
                break
            s_vec, y_vec = R_new - R, g_new - g
            if float(np.vdot(s_vec, y_vec)) > 1e-300:
                s_hist.append(s_vec)
                y_hist.append(y_vec)
                if len(s_hist) > _LBFGS_MEMORY:
                    s_hist.pop(0)
                    y_hist.pop(0)
        decrease = (f - f_new) / f if f > 0 else 0.0
        R, f, g = R_new, f_new, g_new
        traj.append(f)
        if not np.isfinite(f):
            break
        if 0 <= decrease < cfg.tolerance:
            converged = True
            break
    return R, f, tuple(traj), converged, it


def random_start(d: int, rng: np.random.Generator) -> np.ndarray:
    """R = (I - G)^-1 for a random sparse nonnegative G with spectral radius in (0.05, 0.95)."""
    G = rng.uniform(0.0, 1.0, (d, d)) * (rng.uniform(size=(d, d)) < rng.uniform(0.3, 1.0))
    radius = spectral_norm(G)
    if radius > 0:
        G *= rng.uniform(0.05, 0.95) / radius
    return np.linalg.inv(np.eye(d) - G)


def estimate(cumulants: CumulantSet, cfg: Optional[NphcConfig] = None) -> EstimationResult:
    """Fit R to the (C, Kc) moments and derive G, mu and Psi."""
    cfg = cfg or NphcConfig()
    kap = kappa(cumulants.C, cumulants.Kc)
    R0 = initialize_R(cumulants)
    d = R0.shape[0]
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    scale = max(float(np.sum(cumulants.C ** 2) + np.sum(cumulants.Kc ** 2)), 1e-300)

    def starts():
        yield R0
        for _ in range(cfg.restarts):
            yield R0 * (1.0 + cfg.perturbation_scale * rng.standard_normal(R0.shape))
        for _ in range(cfg.random_starts):
            yield random_start(d, rng)

    runs = []
    for idx, start in enumerate(starts()):
        R, f, traj, conv, iters = _descend(start, cumulants, kap, cfg)
        try:
            G = np.eye(d) - np.linalg.inv(R)
        except np.linalg.LinAlgError:
            G = None
        runs.append((f, idx, R, G, traj, conv, iters))
        log.debug("start %d: loss=%.6g iterations=%d converged=%s", idx, f, iters, conv)
        # the loss is nonnegative, so an exact fit cannot be improved on
        if idx >= cfg.restarts and G is not None and f <= cfg.exact_fit * scale:
            break

    def rank(run):
        f, _, _, G, *_ = run
        return (f if np.isfinite(f) else math.inf, np.linalg.norm(G) if G is not None else math.inf)

    runs.sort(key=rank)
    f, idx, R, G, traj, conv, iters = runs[0]
    if G is None or not np.all(np.isfinite(R)):
        raise SingularRHat("fitted R is not invertible")
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularRHat(f"fitted R is numerically singular (condition number {cond:.3g})")

    # distinct near-optimal solutions signal a non-identified fit
    alternatives = []
    for other in runs[1:]:
        if other[3] is None:
            continue
        if other[0] <= max(10.0 * f, 1e-12 * scale) and np.max(np.abs(other[3] - G)) > 1e-3:
            alternatives.append(other[1])
    if alternatives:
        log.warning("restarts %s reached near-optimal loss with a different G", alternatives)

    lam = np.asarray(cumulants.Lambda, dtype=float)
    mu = np.linalg.solve(R, lam)
    radius = spectral_norm(G)
    if radius >= 1:
        log.warning("estimated G has spectral radius %.4g >= 1", radius)
    return EstimationResult(
        R_hat=R,
        G_hat=G,
        Psi_hat=R - np.eye(R.shape[0]),
        mu_hat=mu,
        Lambda_hat=lam.copy(),
        kappa=kap,
        final_loss=f,
        loss_trajectory=traj,
        spectral_radius=radius,
        largest_singular_value=largest_singular_value(G),
        converged=conv,
        restart_index=idx,
        iterations=iters,
        nonstationary=radius >= 1,
        negative_mu=bool(np.any(mu < 0)),
        alternative_optima=tuple(alternatives),
        restart_losses=tuple(r[0] for r in sorted(runs, key=lambda r: r[1])),
        cumulants=cumulants,
    )
