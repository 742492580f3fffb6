"""In-sample uncertainty: bounds on ``p'(beta0 - beta_hat)`` by Gaussian simulation.

For each draw ``G ~ N(0, Sigma)`` the linear functional ``p' D^{-1} delta``
is maximized and minimized over ``{delta in Delta* : delta'Q delta - 2 G'delta <= 0}``;
the empirical quantiles of those extremes give ``(M1_L, M1_U)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._regression import least_squares, polynomial_basis
from .constraints import DeltaStarSpec, build_delta_star
from .errors import ConfigError, ConvergenceError, DataError
from .fit import FittedSC
from .panel import PredictorVector, SCDesign
from .qclp import OPTIMAL, UNBOUNDED, solve_batch

__all__ = [
    "SIGMA_METHODS",
    "SigmaEstimate",
    "InSampleResult",
    "conditional_mean_residuals",
    "estimate_sigma",
    "default_bandwidth",
    "rho_formula",
    "rho_rule",
    "simulate_bounds",
    "simulate_many",
    "in_sample_uncertainty",
]

LOGGER = logging.getLogger(__name__)

SIGMA_METHODS = ("plugin_diag", "hc_iid", "long_run", "cointegration_plugin")
STORED_LEVELS = (0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975, 0.99, 0.995)


@dataclass(frozen=True)
class SigmaEstimate:
    Sigma: np.ndarray
    method: str
    centered_residuals: np.ndarray
    bandwidth: int = 0
    clipped: bool = False


@dataclass(frozen=True)
class InSampleResult:
    M1_L: float
    M1_U: float
    alpha1: float
    draws: int
    rho: float
    seed: int
    dropped: int = 0
    sigma_method: str = ""
    sim_quantiles: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "M1_L": self.M1_L,
            "M1_U": self.M1_U,
            "alpha1": self.alpha1,
            "rho": self.rho,
            "sigma_method": self.sigma_method,
            "draws": self.draws,
            "dropped": self.dropped,
            "seed": self.seed,
        }


# ------------------------------------------------------------ residual mean


def conditional_mean_residuals(residuals, regressors=None, degree: int = 1, groups=None) -> np.ndarray:
    """Fitted values of a polynomial regression of the residuals on ``regressors``.

    Degree 0 (or no regressors) gives the sample mean.  ``groups`` (one
    label per row) fits each group separately, e.g. one fit per equation.
    """
    u = np.asarray(residuals, dtype=float).ravel()
    if degree not in (0, 1, 2):
        raise ConfigError("mean-model degree must be 0, 1 or 2")
    if regressors is not None:
        regressors = np.asarray(regressors, dtype=float)
        if regressors.ndim == 1:
            regressors = regressors[:, None]
        if regressors.shape[0] != u.size:
            raise DataError("regressors and residuals differ in length")
        if regressors.shape[1] == 0:
            regressors = None
    if groups is None:
        groups = np.zeros(u.size, dtype=int)
    groups = np.asarray(groups)
    fitted = np.empty_like(u)
    for g in np.unique(groups):
        rows = groups == g
        X = None if regressors is None else regressors[rows]
        basis = polynomial_basis(X, degree if X is not None else 0, n=int(rows.sum()))
        coef, _ = least_squares(basis, u[rows])
        fitted[rows] = basis @ coef
    return fitted


# ---------------------------------------------------------------- variance


def default_bandwidth(T0: int) -> int:
    return int(np.floor(4.0 * (T0 / 100.0) ** (2.0 / 9.0)))


def _period_scores(design: SCDesign, u: np.ndarray) -> np.ndarray:
    """``s_t = sum_l z_{t,l} u_{t,l}`` as a ``(T0, d)`` array."""
    Z = design.Z
    T0, M = design.T0, design.M
    return (Z * u[:, None]).reshape(M, T0, -1).sum(axis=0)


def estimate_sigma(
    design: SCDesign,
    fitted: FittedSC | None,
    centered_residuals,
    method: str = "plugin_diag",
    bandwidth: int | None = None,
) -> SigmaEstimate:
    """Variance of ``D^{-1} Z'u`` from centred residuals.

    ``plugin_diag``
        ``D^-1 Z' diag(u^2) Z D^-1``.
    ``hc_iid``
        ``D^-1 (sum_t s_t s_t') D^-1`` with ``s_t`` the period-``t`` score
        summed over equations; equal to ``plugin_diag`` when ``M = 1``.
    ``long_run``
        ``hc_iid`` plus Bartlett-weighted autocovariances of ``s_t``.
    ``cointegration_plugin``
        ``(1/T0) sum_t Zc_t u_t u_t' Zc_t'`` with the weight rows of
        ``Zc_t`` divided by ``sqrt(T0)``.
    """
    if method not in SIGMA_METHODS:
        raise ConfigError(f"unknown sigma method {method!r}; choose from {SIGMA_METHODS}")
    u = np.asarray(centered_residuals, dtype=float).ravel()
    if u.size != design.A.size:
        raise DataError("centred residuals must have T0*M entries")
    if not np.any(u):
        warnings.warn("all residuals are zero; the simulated bounds collapse to zero", RuntimeWarning, stacklevel=2)
    Dinv = 1.0 / design.D
    bw = 0
    if method == "plugin_diag":
        Zs = design.Z * Dinv
        S = (Zs * (u * u)[:, None]).T @ Zs
    elif method in ("hc_iid", "long_run"):
        s = _period_scores(design, u) * Dinv
        S = s.T @ s
        if method == "long_run":
            bw = default_bandwidth(design.T0) if bandwidth is None else int(bandwidth)
            if bw < 0:
                raise ConfigError("bandwidth must be nonnegative")
            for h in range(1, min(bw, design.T0 - 1) + 1):
                gamma = s[h:].T @ s[:-h]
                S = S + (1.0 - h / (bw + 1.0)) * (gamma + gamma.T)
    else:
        T0, M, J = design.T0, design.M, design.J
        scale = np.ones(design.d)
        scale[:J] = 1.0 / np.sqrt(T0)
        Zc = (design.Z * scale).reshape(M, T0, -1)  # Zc[l, t] is the column for (t, l)
        U = u.reshape(M, T0)
        S = np.zeros((design.d, design.d))
        for t in range(T0):
            v = Zc[:, t, :].T @ U[:, t]
            S += np.outer(v, v)
        S /= T0
    S = 0.5 * (S + S.T)
    eig, vec = np.linalg.eigh(S)
    clipped = False
    if eig[0] < 0:
        if eig[0] < -1e-10 * max(eig[-1], 1.0):
            warnings.warn(f"clipping negative eigenvalue {eig[0]:.3g} of Sigma", RuntimeWarning, stacklevel=2)
        clipped = True
        S = (vec * np.maximum(eig, 0.0)) @ vec.T
        S = 0.5 * (S + S.T)
    return SigmaEstimate(S, method, u, bw, clipped)


# -------------------------------------------------------------- threshold


def rho_formula(sigma_u: float, min_sigma_b: float, T0: int, regime: str = "iid") -> float:
    c = 1.0 if regime == "cointegration" else 0.5
    return float(sigma_u * np.log(T0) ** c / (min_sigma_b * np.sqrt(T0)))


def rho_rule(residuals, donor_matrix, regime: str = "iid", T0: int | None = None) -> float:
    """Data-driven weight threshold.

    ``sigma_u`` is the residual standard deviation and ``sigma_b_j`` the
    root second moment of donor column ``j``; zero columns are skipped.
    """
    u = np.asarray(residuals, dtype=float).ravel()
    B = np.asarray(donor_matrix, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    T0 = B.shape[0] if T0 is None else T0
    if T0 < 2:
        raise DataError("threshold rule needs T0 >= 2")
    sigma_u = float(np.std(u, ddof=1)) if u.size > 1 else 0.0
    sigma_b = np.sqrt(np.mean(B * B, axis=0))
    usable = sigma_b > 0
    if not usable.all():
        warnings.warn(f"{int((~usable).sum())} donor column(s) are identically zero", RuntimeWarning, stacklevel=2)
    if not usable.any():
        raise DataError("every donor column is zero")
    return rho_formula(sigma_u, float(sigma_b[usable].min()), T0, regime)


# -------------------------------------------------------------- simulation


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    eig, vec = np.linalg.eigh(0.5 * (S + S.T))
    # eigenvalues at roundoff level of the largest one are numerically zero
    eig[eig <= S.shape[0] * np.finfo(float).eps * max(eig[-1], 0.0)] = 0.0
    return vec * np.sqrt(np.maximum(eig, 0.0))


def gaussian_draws(Sigma: np.ndarray, draws: int, seed: int, *path: int) -> np.ndarray:
    """``draws`` rows of ``N(0, Sigma)``; the first rows do not depend on ``draws``."""
    root = _sqrt_psd(Sigma)
    normals = _rng.stream(seed, _rng.SIMULATION, *path).standard_normal((draws, Sigma.shape[0]))
    return normals @ root.T


def _validate_level(alpha1: float, draws: int) -> None:
    if not 0.0 < alpha1 < 0.5:
        raise ConfigError(f"alpha1 must lie in (0, 0.5), got {alpha1}")
    if draws < 100:
        raise ConfigError("at least 100 draws are required")


def simulate_many(
    Q_hat: np.ndarray,
    Sigma: np.ndarray,
    delta_star: DeltaStarSpec,
    P: np.ndarray,
    alpha1: float,
    draws: int = 1000,
    seed: int = 0,
    path: tuple = (),
) -> tuple[np.ndarray, np.ndarray, int, np.ndarray, np.ndarray]:
    """Bounds for several predictor rows ``P`` sharing the same draws.

    Returns ``(M1_L, M1_U, dropped, sup, inf)`` with one entry (column) per
    predictor row.
    """
    _validate_level(alpha1, draws)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    C = P / delta_star.D
    G = gaussian_draws(Sigma, draws, seed, *path)
    sup, inf, codes = solve_batch(Q_hat, G, C, delta_star)
    if np.all(codes == UNBOUNDED):
        warnings.warn("simulation region is unbounded; in-sample bounds are infinite", RuntimeWarning, stacklevel=2)
        m = P.shape[0]
        return np.full(m, -np.inf), np.full(m, np.inf), draws, sup, inf
    ok = codes == OPTIMAL
    dropped = int((~ok).sum())
    if dropped > 0.01 * draws:
        raise ConvergenceError(f"{dropped} of {draws} simulation draws failed to solve")
    if dropped:
        LOGGER.warning("dropped %d of %d simulation draws", dropped, draws)
    sup, inf = sup[ok], inf[ok]
    M1_L = -np.quantile(sup, 1.0 - alpha1 / 2.0, axis=0)
    M1_U = -np.quantile(inf, alpha1 / 2.0, axis=0)
    return M1_L, M1_U, dropped, sup, inf


def simulate_bounds(
    fitted: FittedSC,
    sigma: SigmaEstimate,
    delta_star: DeltaStarSpec,
    p,
    alpha1: float = 0.05,
    draws: int = 1000,
    seed: int = 0,
) -> InSampleResult:
    """``(M1_L, M1_U)`` for one predictor vector."""
    pvec = p.p if isinstance(p, PredictorVector) else np.asarray(p, dtype=float).ravel()
    if pvec.size != fitted.d:
        raise DataError("predictor length does not match the fit")
    lo, hi, dropped, sup, inf = simulate_many(fitted.Q_hat, sigma.Sigma, delta_star, pvec, alpha1, draws, seed)
    quant = {
        "levels": list(STORED_LEVELS),
        "inf": np.quantile(inf[:, 0], STORED_LEVELS).tolist() if inf.size else [],
        "sup": np.quantile(sup[:, 0], STORED_LEVELS).tolist() if sup.size else [],
    }
    return InSampleResult(float(lo[0]), float(hi[0]), alpha1, draws, delta_star.rho, seed, dropped, sigma.method, quant)


def in_sample_uncertainty(
    design: SCDesign,
    fitted: FittedSC,
    p,
    alpha1: float = 0.05,
    draws: int = 1000,
    seed: int = 0,
    sigma_method: str = "plugin_diag",
    mean_degree: int = 1,
    rho: float | str = "auto",
    bandwidth: int | None = None,
) -> tuple[InSampleResult, DeltaStarSpec, SigmaEstimate]:
    """Threshold, centre residuals, estimate Sigma and simulate, in that order."""
    if rho == "auto" or rho is None:
        rho = rho_rule(fitted.residuals, design.B, design.regime, design.T0)
    rho = float(rho)
    delta_star = build_delta_star(fitted.beta_hat, design.D, design.J, design.constraint, rho)
    support = np.flatnonzero(delta_star.beta_star[: design.J] != 0)
    regressors = design.B[:, support] if support.size else None
    mean = conditional_mean_residuals(fitted.residuals, regressors, mean_degree, groups=design.equation)
    sigma = estimate_sigma(design, fitted, fitted.residuals - mean, sigma_method, bandwidth)
    result = simulate_bounds(fitted, sigma, delta_star, p, alpha1, draws, seed)
    return result, delta_star, sigma
