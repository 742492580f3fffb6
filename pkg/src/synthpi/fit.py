"""Constrained least-squares estimation of the synthetic-control coefficients."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSpec, project
from .errors import ConvergenceError, DataError, UsageError
from .panel import PredictorVector, SCDesign

__all__ = ["FittedSC", "fit", "predict", "treatment_effect"]

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class FittedSC:
    beta_hat: np.ndarray
    residuals: np.ndarray
    Q_hat: np.ndarray
    objective: float
    J: int
    solver_report: dict = field(default_factory=dict)

    @property
    def w_hat(self) -> np.ndarray:
        return self.beta_hat[: self.J]

    @property
    def r_hat(self) -> np.ndarray:
        return self.beta_hat[self.J :]

    @property
    def d(self) -> int:
        return self.beta_hat.size

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "w_hat": self.w_hat.tolist(),
            "r_hat": self.r_hat.tolist(),
            "residuals": self.residuals.tolist(),
            "objective": self.objective,
            "solver_report": self.solver_report,
        }


def _simplex_kkt(grad: np.ndarray, w: np.ndarray, tol: float = 1e-10) -> float:
    support = w > tol
    if not support.any():
        return np.inf
    lam = grad[support].mean()
    stat = np.max(np.abs(grad[support] - lam))
    off = grad[~support] - lam
    dual = max(0.0, -off.min()) if off.size else 0.0
    return float(max(stat, dual))


def _polish_simplex(G: np.ndarray, h: np.ndarray, w: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Solve the equality-constrained quadratic on the support of ``w``; grow it while KKT fails."""
    J = w.size
    support = w > tol
    for _ in range(J + 1):
        idx = np.flatnonzero(support)
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * G[np.ix_(idx, idx)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([2.0 * h[idx], [1.0]])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        if np.any(sol[:k] < -1e-14):
            return w
        cand = np.zeros(J)
        cand[idx] = np.maximum(sol[:k], 0.0)
        cand /= cand.sum()
        grad = 2.0 * (G @ cand - h)
        lam = grad[idx].mean()
        reduced = grad - lam
        reduced[idx] = 0.0
        worst = int(np.argmin(reduced))
        if reduced[worst] >= -1e-10 * (1.0 + np.abs(grad).max()):
            return cand
        support = support.copy()
        support[worst] = True
    return w


def _fista(G, h, w0, spec, max_iter, rel_tol=1e-12, proj_tol=1e-10):
    L = 2.0 * np.linalg.eigvalsh(G)[-1]
    if L <= 0:
        return w0, 0, 0.0
    step = 1.0 / L

    def obj(w):
        return w @ G @ w - 2.0 * h @ w

    w = project(w0, spec)
    y, t = w.copy(), 1.0
    f_old = obj(w)
    resid = np.inf
    for it in range(1, max_iter + 1):
        grad_y = 2.0 * (G @ y - h)
        w_new = project(y - step * grad_y, spec)
        f_new = obj(w_new)
        if f_new > f_old:  # adaptive restart
            y, t = w.copy(), 1.0
            grad_y = 2.0 * (G @ y - h)
            w_new = project(y - step * grad_y, spec)
            f_new = obj(w_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        grad_w = 2.0 * (G @ w_new - h)
        resid = np.linalg.norm(w_new - project(w_new - step * grad_w, spec))
        scale = 1.0 + abs(f_new) + h @ h
        done = abs(f_old - f_new) <= rel_tol * scale and resid <= proj_tol * (1.0 + np.linalg.norm(w_new))
        w, t, f_old = w_new, t_new, f_new
        if done:
            return w, it, resid
    return w, max_iter, resid


def fit(design: SCDesign, max_iter: int = 50_000, start=None) -> FittedSC:
    """Minimize ``||A - B w - C r||^2`` over the design's constraint set.

    ``r`` is profiled out exactly (``r = C^+ (A - B w)``); the weights are
    found by accelerated projected gradient on the profiled problem, and
    simplex fits are finished by an exact solve on the detected support.
    """
    A, B, C = design.A, design.B, design.C
    spec: ConstraintSpec = design.constraint
    J, KM = design.J, design.KM
    if A.size == 0:
        raise DataError("empty design")

    rank_deficient = False
    if KM and spec.r_space == "free":
        C_pinv = np.linalg.pinv(C)
        rank = np.linalg.matrix_rank(C)
        if rank < KM:
            rank_deficient = True
            warnings.warn("control matrix C is rank deficient; using minimum-norm r", RuntimeWarning, stacklevel=2)
        A_t = A - C @ (C_pinv @ A)
        B_t = B - C @ (C_pinv @ B)
    else:
        C_pinv = None
        A_t, B_t = A, B

    iterations, resid = 0, 0.0
    if spec.kind == "unconstrained":
        w = np.linalg.lstsq(B_t, A_t, rcond=None)[0]
    else:
        G = B_t.T @ B_t
        h = B_t.T @ A_t
        w0 = np.full(J, 1.0 / J) if start is None else np.asarray(start, dtype=float)
        w, iterations, resid = _fista(G, h, w0, spec, max_iter)
        if spec.kind == "simplex":
            w = _polish_simplex(G, h, w)
            resid = float(np.linalg.norm(w - project(w - (G @ w - h) / max(np.linalg.eigvalsh(G)[-1], 1e-300), spec)))
        if iterations >= max_iter and resid > 1e-6 * (1.0 + np.linalg.norm(w)):
            raise ConvergenceError(f"weights did not converge in {max_iter} iterations (residual {resid:.3g})", best=w)

    if C_pinv is not None:
        r = C_pinv @ (A - B @ w)
    else:
        r = np.zeros(KM)
    beta = np.concatenate([w, r])
    Z = design.Z
    residuals = A - Z @ beta
    Dinv = 1.0 / design.D
    Q_hat = (Z * Dinv).T @ (Z * Dinv)
    Q_hat = 0.5 * (Q_hat + Q_hat.T)
    eig = np.linalg.eigvalsh(Q_hat)
    degenerate = bool(eig[0] <= 1e-12 * max(eig[-1], 1e-300))
    grad = 2.0 * Z.T @ (Z @ beta - A)
    kkt = _simplex_kkt(grad[:J], w) if spec.kind == "simplex" else float(resid)
    report = {
        "iterations": int(iterations),
        "kkt_residual": float(kkt),
        "projection_residual": float(resid),
        "singular_gram": degenerate,
        "rank_deficient_controls": rank_deficient,
    }
    return FittedSC(beta, residuals, Q_hat, float(residuals @ residuals), J, report)


def _as_p(p) -> np.ndarray:
    return p.p if isinstance(p, PredictorVector) else np.asarray(p, dtype=float).ravel()


def predict(fitted: FittedSC, p) -> float:
    """Counterfactual prediction ``p' beta_hat``."""
    vec = _as_p(p)
    if vec.size != fitted.d:
        raise DataError(f"predictor has length {vec.size}, expected {fitted.d}")
    return float(vec @ fitted.beta_hat)


def treatment_effect(fitted: FittedSC, p: PredictorVector) -> float:
    """``y1_observed - p' beta_hat``."""
    if not isinstance(p, PredictorVector) or p.y1_observed is None:
        raise UsageError("treatment effect needs the observed treated outcome")
    return float(p.y1_observed - predict(fitted, p))
