"""Out-of-sample uncertainty: bounds ``(M2_L, M2_U)`` on the post-treatment error.

Four constructions are offered:

* ``subgaussian``: ``m -+ s * sqrt(2 log(2 / alpha2))``.
* ``polynomial(k)``: ``m -+ (k-th central moment / alpha2) ** (1/k)``.
* ``location_scale``: ``m(x) + s(x) * q`` with ``q`` the empirical quantiles
  of standardized pre-period residuals.
* ``quantile_reg``: linear quantile regression of the residuals at
  ``alpha2/2`` and ``1 - alpha2/2``.

Conditional mean and variance come from :class:`ResidualModel`: least
squares for the mean and least squares on the log squared deviations for
the variance, so the fitted variance is always positive.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ._regression import least_squares, polynomial_basis
from .errors import ConfigError, ConvergenceError, UnderdeterminedError, UsageError

__all__ = [
    "APPROACHES",
    "LOG_CHISQ1_MEAN",
    "DEFAULT_FACTORS",
    "OutSampleResult",
    "ResidualModel",
    "fit_residual_model",
    "bound_subgaussian",
    "bound_polynomial",
    "bound_location_scale",
    "bound_quantile_regression",
    "fit_quantile",
    "pinball_loss",
    "sensitivity_grid",
    "zero_bound",
    "parse_approach",
    "out_of_sample_bound",
]

LOGGER = logging.getLogger(__name__)

APPROACHES = ("subgaussian", "polynomial", "location_scale", "quantile_reg")
LOG_CHISQ1_MEAN = -1.2704  # E[log X] for X ~ chi-square(1)
DEFAULT_FACTORS = (0.25, 0.5, 1.0, 1.5, 2.0)
_SHORT = {"subg": "subgaussian", "locscale": "location_scale", "qreg": "quantile_reg", "poly": "polynomial"}


@dataclass(frozen=True)
class OutSampleResult:
    M2_L: float
    M2_U: float
    alpha2: float
    approach: str
    conditional_mean: float | None = None
    conditional_sd: float | None = None
    model_report: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "M2_L": self.M2_L,
            "M2_U": self.M2_U,
            "alpha2": self.alpha2,
            "approach": self.approach,
            "conditional_mean": self.conditional_mean,
            "conditional_sd": self.conditional_sd,
        }


def parse_approach(text: str) -> tuple[str, int | None]:
    """``"subg"`` -> ``("subgaussian", None)``, ``"poly:4"`` -> ``("polynomial", 4)``."""
    name, _, arg = str(text).strip().partition(":")
    name = _SHORT.get(name, name)
    if name not in APPROACHES:
        raise ConfigError(f"unknown approach {text!r}")
    if name == "polynomial":
        k = int(arg) if arg else 2
        if k < 2:
            raise ConfigError("polynomial bound needs k >= 2")
        return name, k
    if arg:
        raise ConfigError(f"approach {name} takes no argument")
    return name, None


def _check_alpha(alpha2: float) -> None:
    if not 0.0 < alpha2 < 1.0:
        raise UsageError(f"alpha2 must lie in (0, 1), got {alpha2}")


def zero_bound(alpha2: float = 0.0, approach: str = "none") -> OutSampleResult:
    """Placeholder when out-of-sample uncertainty is switched off."""
    return OutSampleResult(0.0, 0.0, alpha2, approach, 0.0, 0.0)


# ------------------------------------------------------------ residual model


@dataclass(frozen=True)
class ResidualModel:
    mean_coeffs: np.ndarray
    logvar_coeffs: np.ndarray
    degree: int
    n_regressors: int
    bias_shift: float
    var_floor: float
    regressors: tuple = ()

    def basis(self, X) -> np.ndarray:
        if self.n_regressors == 0:
            n = 1 if X is None else max(np.atleast_2d(np.asarray(X, dtype=float)).shape[0], 1)
            return np.ones((n, 1))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.n_regressors)
        return polynomial_basis(X, self.degree)

    def mean(self, X) -> np.ndarray:
        return self.basis(X) @ self.mean_coeffs

    def raw_variance(self, X) -> np.ndarray:
        return np.exp(self.basis(X) @ self.logvar_coeffs + self.bias_shift)

    def variance(self, X) -> np.ndarray:
        return np.maximum(self.raw_variance(X), self.var_floor)

    def sd(self, X) -> np.ndarray:
        return np.sqrt(self.variance(X))


def fit_residual_model(
    e_proxy,
    regressors=None,
    degree: int = 1,
    bias_correct: bool = True,
    labels: tuple = (),
) -> ResidualModel:
    """Fit mean and log-variance regressions of ``e_proxy`` on a polynomial basis.

    With ``bias_correct`` the log-variance fit is shifted by ``-E[log chi2_1]``
    before exponentiating, which makes the back-transform unbiased for
    Gaussian errors.
    """
    e = np.asarray(e_proxy, dtype=float).ravel()
    n = e.size
    if regressors is not None:
        regressors = np.asarray(regressors, dtype=float)
        if regressors.ndim == 1:
            regressors = regressors[:, None]
        if regressors.shape[0] != n:
            raise ConfigError("regressors and residuals differ in length")
        if regressors.shape[1] == 0:
            regressors = None
    k = 0 if regressors is None else regressors.shape[1]
    deg = degree if k else 0
    basis = polynomial_basis(regressors, deg, n=n)
    if n < 3 * basis.shape[1]:
        raise UnderdeterminedError(f"{n} observations are too few for a basis of {basis.shape[1]} columns")
    mean_coef, _ = least_squares(basis, e)
    dev = e - basis @ mean_coef
    var_e = float(np.var(e))
    floor = 1e-8 * var_e
    sq = np.maximum(dev * dev, max(floor, 1e-300))
    logvar_coef, _ = least_squares(basis, np.log(sq))
    shift = -LOG_CHISQ1_MEAN if bias_correct else 0.0
    return ResidualModel(mean_coef, logvar_coef, deg, k, shift, floor, tuple(labels))


# --------------------------------------------------------------- closed forms


def bound_subgaussian(m: float, s: float, alpha2: float) -> OutSampleResult:
    """Invert ``2 exp(-eps^2 / (2 s^2)) = alpha2``."""
    _check_alpha(alpha2)
    if s < 0:
        raise UsageError("scale s must be nonnegative")
    eps = s * np.sqrt(2.0 * np.log(2.0 / alpha2))
    return OutSampleResult(float(m - eps), float(m + eps), alpha2, "subgaussian", float(m), float(s), {"epsilon": float(eps)})


def bound_polynomial(m: float, central_moment_k: float, k: int, alpha2: float) -> OutSampleResult:
    """Invert the Markov-type bound ``E|e - m|^k / eps^k = alpha2``."""
    _check_alpha(alpha2)
    if k < 2:
        raise UsageError("moment order k must be at least 2")
    if central_moment_k < 0:
        raise UsageError("central moment must be nonnegative")
    eps = (central_moment_k / alpha2) ** (1.0 / k)
    return OutSampleResult(float(m - eps), float(m + eps), alpha2, f"polynomial({k})", float(m), None,
                           {"epsilon": float(eps), "moment": float(central_moment_k)})


def bound_location_scale(model: ResidualModel, residuals, regressors, x_row, alpha2: float) -> OutSampleResult:
    """Location-scale bound with empirical quantiles of the standardized residuals."""
    _check_alpha(alpha2)
    e = np.asarray(residuals, dtype=float).ravel()
    X = None if model.n_regressors == 0 else regressors
    raw = model.raw_variance(X) if X is not None else np.full(e.size, model.raw_variance(None)[0])
    low = raw < model.var_floor
    if low.any():
        warnings.warn(f"{int(low.sum())} fitted variances below the floor were raised", RuntimeWarning, stacklevel=2)
    s_t = np.sqrt(np.maximum(raw, model.var_floor))
    m_t = model.mean(X) if X is not None else np.full(e.size, model.mean(None)[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        std = np.where(s_t > 0, (e - m_t) / s_t, 0.0)
    qlo, qhi = np.quantile(std, [alpha2 / 2.0, 1.0 - alpha2 / 2.0])
    xr = None if model.n_regressors == 0 else np.asarray(x_row, dtype=float).reshape(1, -1)
    m_T = float(model.mean(xr)[0])
    s_T = float(model.sd(xr)[0])
    return OutSampleResult(m_T + s_T * float(qlo), m_T + s_T * float(qhi), alpha2, "location_scale", m_T, s_T,
                           {"q_low": float(qlo), "q_high": float(qhi)})


# --------------------------------------------------------- quantile regression


def pinball_loss(resid, level: float) -> float:
    resid = np.asarray(resid, dtype=float)
    return float(np.sum(np.where(resid >= 0, level * resid, (level - 1.0) * resid)))


def fit_quantile(y, basis, level: float) -> tuple[np.ndarray, float]:
    """Exact pinball-loss minimizer as a linear program (HiGHS).

    Variables ``(theta, u_plus, u_minus)`` with ``basis theta + u_plus - u_minus = y``.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(basis, dtype=float)
    n, k = X.shape
    if not 0.0 < level < 1.0:
        raise UsageError("quantile level must lie in (0, 1)")
    cost = np.concatenate([np.zeros(k), np.full(n, level), np.full(n, 1.0 - level)])
    A_eq = np.hstack([X, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise ConvergenceError(f"quantile regression LP failed: {res.message}")
    theta = res.x[:k]
    return theta, pinball_loss(y - X @ theta, level)


def bound_quantile_regression(residuals, regressors, x_row, alpha2: float, degree: int = 1) -> OutSampleResult:
    """Quantile-regression bound at levels ``alpha2/2`` and ``1 - alpha2/2``."""
    _check_alpha(alpha2)
    e = np.asarray(residuals, dtype=float).ravel()
    if regressors is not None:
        regressors = np.asarray(regressors, dtype=float)
        if regressors.ndim == 1:
            regressors = regressors[:, None]
        if regressors.shape[1] == 0:
            regressors = None
    deg = degree if regressors is not None else 0
    basis = polynomial_basis(regressors, deg, n=e.size)
    if e.size < 3 * basis.shape[1] or np.linalg.matrix_rank(basis) < basis.shape[1]:
        raise UnderdeterminedError("quantile regression design is degenerate")
    if regressors is None:
        row = np.ones((1, 1))
    else:
        row = polynomial_basis(np.asarray(x_row, dtype=float).reshape(1, -1), deg)
    lo_level, hi_level = alpha2 / 2.0, 1.0 - alpha2 / 2.0
    th_lo, obj_lo = fit_quantile(e, basis, lo_level)
    th_hi, obj_hi = fit_quantile(e, basis, hi_level)
    lo, hi = float((row @ th_lo)[0]), float((row @ th_hi)[0])
    if lo > hi:
        warnings.warn("fitted quantiles crossed at the evaluation point; swapping", RuntimeWarning, stacklevel=2)
        lo, hi = hi, lo
    return OutSampleResult(lo, hi, alpha2, "quantile_reg", None, None,
                           {"theta_low": th_lo.tolist(), "theta_high": th_hi.tolist(),
                            "objective_low": obj_lo, "objective_high": obj_hi})


# -------------------------------------------------------------- sensitivity


def sensitivity_grid(m: float, s: float, alpha2: float, factors=DEFAULT_FACTORS) -> list[tuple[float, OutSampleResult]]:
    """Subgaussian bounds with the scale multiplied by each factor."""
    factors = [float(f) for f in factors]
    if any(f <= 0 for f in factors):
        raise UsageError("sensitivity factors must be positive")
    return [(f, bound_subgaussian(m, f * s, alpha2)) for f in factors]


def out_of_sample_bound(
    approach: str,
    e_proxy,
    regressors,
    x_row,
    alpha2: float,
    degree: int = 1,
    bias_correct: bool = True,
    scale: float = 1.0,
    model: ResidualModel | None = None,
) -> OutSampleResult:
    """Dispatch one approach string (``subg``, ``poly:k``, ``locscale``, ``qreg``).

    ``scale`` multiplies the conditional standard deviation of the
    subgaussian and polynomial bounds.  A pre-fitted ``model`` is reused
    when given.
    """
    name, k = parse_approach(approach)
    if name == "quantile_reg":
        return bound_quantile_regression(e_proxy, regressors, x_row, alpha2, degree)
    if model is None:
        model = fit_residual_model(e_proxy, regressors, degree, bias_correct)
    if name == "location_scale":
        return bound_location_scale(model, e_proxy, regressors, x_row, alpha2)
    xr = None if model.n_regressors == 0 else np.asarray(x_row, dtype=float).reshape(1, -1)
    m = float(model.mean(xr)[0])
    s = float(model.sd(xr)[0]) * scale
    if name == "subgaussian":
        return bound_subgaussian(m, s, alpha2)
    e = np.asarray(e_proxy, dtype=float).ravel()
    X = None if model.n_regressors == 0 else regressors
    n = e.size
    m_t = model.mean(X) if X is not None else np.full(n, m)
    s_t = model.sd(X) if X is not None else np.full(n, float(model.sd(None)[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        std = np.where(s_t > 0, (e - m_t) / s_t, 0.0)
    moment = s**k * float(np.mean(np.abs(std) ** k))
    return bound_polynomial(m, moment, k, alpha2)
