"""Feasible sets for the weights and their local relaxation used in simulation.

Weights live in one of the sets below; the control coefficients ``r`` are
either free or pinned to zero.

=============  ==========================================================
kind           set for ``w``
=============  ==========================================================
simplex        ``w >= 0, sum(w) == 1``
l1             ``||w||_1 <= Q``
l2             ``||w||_2 <= Q``
simplex_l2     simplex intersected with ``||w||_2 <= Q``
elastic_net    ``alpha * ||w||_1 + (1 - alpha) * ||w||_2^2 <= Q``
unconstrained  all of ``R^J``
=============  ==========================================================
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "KINDS",
    "ConstraintSpec",
    "DeltaStarSpec",
    "LinearRegion",
    "parse_constraint",
    "contains",
    "project",
    "project_simplex",
    "project_l1",
    "project_l2",
    "project_simplex_l2",
    "project_elastic_net",
    "threshold_weights",
    "build_delta_star",
]

LOGGER = logging.getLogger(__name__)

KINDS = ("simplex", "l1", "l2", "simplex_l2", "elastic_net", "unconstrained")
_ALIASES = {"enet": "elastic_net", "lasso": "l1", "ridge": "l2", "ols": "unconstrained", "none": "unconstrained"}


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str = "simplex"
    Q: float = 1.0
    alpha: float = 0.5
    r_space: str = "free"

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown constraint kind {self.kind!r}")
        if kind in ("l1", "l2", "simplex_l2", "elastic_net") and not self.Q > 0:
            raise ConfigError("constraint size Q must be positive")
        if kind == "elastic_net" and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("elastic-net mixing alpha must lie in [0, 1]")
        if self.r_space not in ("free", "zero"):
            raise ConfigError("r_space must be 'free' or 'zero'")

    @property
    def is_simplex_family(self) -> bool:
        return self.kind in ("simplex", "simplex_l2")

    def to_string(self) -> str:
        parts = [self.kind]
        if self.kind in ("l1", "l2", "simplex_l2", "elastic_net"):
            parts.append(f"Q={self.Q!r}")
        if self.kind == "elastic_net":
            parts.append(f"alpha={self.alpha!r}")
        if self.r_space != "free":
            parts.append(f"r={self.r_space}")
        return " ".join(parts)


def parse_constraint(text: str | ConstraintSpec) -> ConstraintSpec:
    """Parse strings such as ``"simplex"``, ``"l1 Q=1"`` or ``"enet Q=1 alpha=0.3"``."""
    if isinstance(text, ConstraintSpec):
        return text
    tokens = re.split(r"[\s,;]+", str(text).strip().strip('"').strip("'"))
    if not tokens or not tokens[0]:
        raise ConfigError("empty constraint specification")
    kwargs = {"kind": tokens[0].lower()}
    for tok in tokens[1:]:
        if not tok:
            continue
        if "=" not in tok:
            raise ConfigError(f"cannot parse constraint token {tok!r}")
        key, val = tok.split("=", 1)
        key = key.strip().lower()
        if key == "q":
            kwargs["Q"] = float(val)
        elif key == "alpha":
            kwargs["alpha"] = float(val)
        elif key in ("r", "r_space"):
            kwargs["r_space"] = val.strip().lower()
        else:
            raise ConfigError(f"unknown constraint parameter {key!r}")
    return ConstraintSpec(**kwargs)


# ----------------------------------------------------------------- projections


def project_simplex(v, s: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = s}`` by sorting."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise DataError("cannot project an empty vector")
    if s == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - s
    k = np.arange(1, v.size + 1)
    cond = u - css / k > 0
    rho = k[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_l1(v, Q: float = 1.0) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise DataError("cannot project an empty vector")
    if np.abs(v).sum() <= Q:
        return v.copy()
    return np.sign(v) * project_simplex(np.abs(v), Q)


def project_l2(v, Q: float = 1.0) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    norm = np.linalg.norm(v)
    return v.copy() if norm <= Q else v * (Q / norm)


def project_simplex_l2(v, Q: float, tol: float = 1e-15) -> np.ndarray:
    """Projection onto the simplex intersected with an L2 ball.

    The solution is ``project_simplex(v / (1 + mu))`` for the ball multiplier
    ``mu >= 0``; the squared norm is monotone in ``mu``, so bisection finds it.
    """
    v = np.asarray(v, dtype=float).ravel()
    if Q * Q * v.size < 1.0 - 1e-12:
        raise ConfigError(f"simplex and L2 ball of radius {Q} do not intersect for J={v.size}")
    w = project_simplex(v)
    if w @ w <= Q * Q:
        return w
    if Q * Q * v.size <= 1.0 + 1e-12:
        return np.full(v.size, 1.0 / v.size)
    lo, hi = 0.0, 1.0
    while np.sum(project_simplex(v / (1.0 + hi)) ** 2) > Q * Q:
        hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if np.sum(project_simplex(v / (1.0 + mid)) ** 2) > Q * Q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * (1.0 + hi):
            break
    return project_simplex(v / (1.0 + hi))


def project_elastic_net(v, Q: float, alpha: float, tol: float = 1e-14) -> np.ndarray:
    """Projection onto ``{alpha*||w||_1 + (1-alpha)*||w||_2^2 <= Q}`` by bisection on the multiplier."""
    v = np.asarray(v, dtype=float).ravel()

    def penalty(w):
        return alpha * np.abs(w).sum() + (1 - alpha) * np.dot(w, w)

    def shrink(lam):
        return np.sign(v) * np.maximum(np.abs(v) - lam * alpha, 0.0) / (1.0 + 2.0 * lam * (1 - alpha))

    if penalty(v) <= Q:
        return v.copy()
    lo, hi = 0.0, 1.0
    while penalty(shrink(hi)) > Q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if penalty(shrink(mid)) > Q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return shrink(hi)


def project(v, spec: ConstraintSpec) -> np.ndarray:
    """Project the weight vector ``v`` onto the set described by ``spec``."""
    if spec.kind == "simplex":
        return project_simplex(v)
    if spec.kind == "l1":
        return project_l1(v, spec.Q)
    if spec.kind == "l2":
        return project_l2(v, spec.Q)
    if spec.kind == "simplex_l2":
        return project_simplex_l2(v, spec.Q)
    if spec.kind == "elastic_net":
        return project_elastic_net(v, spec.Q, spec.alpha)
    return np.asarray(v, dtype=float).copy()


# ----------------------------------------------------------- relaxed region


@dataclass(frozen=True)
class LinearRegion:
    """``{delta : lb <= delta <= ub, E delta = e}``; infinite bounds allowed."""

    lb: np.ndarray
    ub: np.ndarray
    E: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.lb).shape[0]
        object.__setattr__(self, "lb", np.asarray(self.lb, dtype=float).reshape(d))
        object.__setattr__(self, "ub", np.asarray(self.ub, dtype=float).reshape(d))
        object.__setattr__(self, "E", np.asarray(self.E, dtype=float).reshape(-1, d))
        object.__setattr__(self, "e", np.asarray(self.e, dtype=float).reshape(-1))
        if np.any(self.lb > self.ub):
            raise DataError("region lower bound exceeds upper bound")

    @property
    def d(self) -> int:
        return self.lb.shape[0]

    @classmethod
    def free(cls, d: int) -> "LinearRegion":
        return cls(np.full(d, -np.inf), np.full(d, np.inf), np.zeros((0, d)), np.zeros(0))

    def contains(self, delta, tol: float = 1e-8) -> bool:
        delta = np.asarray(delta, dtype=float)
        if np.any(delta < self.lb - tol) or np.any(delta > self.ub + tol):
            return False
        return bool(self.E.shape[0] == 0 or np.all(np.abs(self.E @ delta - self.e) <= tol))

    def is_compact(self) -> bool:
        """True when every coordinate is bounded on the region."""
        bounded = np.isfinite(self.lb) & np.isfinite(self.ub)
        # coordinates tied by one equality row with positive coefficients and finite
        # lower bounds are bounded above too
        for row in self.E:
            idx = np.flatnonzero(row != 0)
            if idx.size and np.all(row[idx] > 0) and np.all(np.isfinite(self.lb[idx])):
                bounded[idx] = True
            if idx.size and np.all(row[idx] < 0) and np.all(np.isfinite(self.ub[idx])):
                bounded[idx] = True
        return bool(np.all(bounded))


@dataclass(frozen=True)
class DeltaStarSpec:
    """Relaxed set ``{delta = D (beta - beta_star) : beta feasible for the local set}``.

    For the simplex family the local set is ``w >= 0`` with
    ``sum(w) = l1_target``; other kinds get an experimental face (see
    :func:`build_delta_star`).
    """

    base: ConstraintSpec
    beta_star: np.ndarray
    rho: float
    D: np.ndarray
    l1_target: float
    J: int
    region: LinearRegion

    def contains(self, delta, tol: float = 1e-8) -> bool:
        return self.region.contains(delta, tol)


def threshold_weights(beta_hat, rho: float, J: int | None = None) -> tuple[np.ndarray, float]:
    """Zero every weight with ``|w_j| <= rho``; the ``r`` block is left alone."""
    if rho < 0:
        raise ConfigError("threshold rho must be nonnegative")
    beta = np.asarray(beta_hat, dtype=float).copy()
    J = beta.size if J is None else J
    w = beta[:J]
    w[np.abs(w) <= rho] = 0.0
    l1 = float(np.abs(w).sum())
    if J and l1 == 0.0 and np.any(np.asarray(beta_hat)[:J] != 0):
        warnings.warn(f"thresholding at rho={rho:g} removed every weight", RuntimeWarning, stacklevel=2)
    return beta, l1


def build_delta_star(beta_hat, D, J: int, base: ConstraintSpec, rho: float) -> DeltaStarSpec:
    """Threshold ``beta_hat`` and express the relaxed set as a :class:`LinearRegion`.

    If thresholding wipes out all weights the threshold falls back to
    ``max|w_j| / 2`` with a warning.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    D = np.asarray(D, dtype=float)
    d = beta_hat.size
    w_hat = beta_hat[:J]
    if J and np.all(np.abs(w_hat) <= rho) and np.any(w_hat != 0):
        new_rho = float(np.max(np.abs(w_hat)) / 2)
        warnings.warn(
            f"threshold rho={rho:g} removes every weight; falling back to rho={new_rho:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        rho = new_rho
    beta_star, l1 = threshold_weights(beta_hat, rho, J)
    w_star = beta_star[:J]

    lb = np.full(d, -np.inf)
    ub = np.full(d, np.inf)
    rows, rhs = [], []
    if base.is_simplex_family:
        lb[:J] = -D[:J] * w_star
        row = np.zeros(d)
        row[:J] = 1.0 / D[:J]
        rows.append(row)
        rhs.append(0.0)
    elif base.kind == "l1" and np.abs(w_hat).sum() >= base.Q * (1 - 1e-6):
        # experimental: active L1 ball, keep the sign pattern of the surviving weights
        sgn = np.sign(w_star)
        for j in range(J):
            if sgn[j] > 0:
                lb[j] = -D[j] * w_star[j]
            elif sgn[j] < 0:
                ub[j] = -D[j] * w_star[j]
            else:
                lb[j] = ub[j] = 0.0
        row = np.zeros(d)
        row[:J] = sgn / D[:J]
        rows.append(row)
        rhs.append(0.0)
    elif base.kind != "unconstrained":
        LOGGER.info("constraint %s is slack or curved; relaxed set treats weights as locally free", base.kind)
    if base.r_space == "zero":
        lb[J:] = 0.0
        ub[J:] = 0.0
    E = np.array(rows).reshape(len(rows), d)
    region = LinearRegion(lb, ub, E, np.array(rhs))
    return DeltaStarSpec(base, beta_star, float(rho), D, l1, J, region)


# ------------------------------------------------------------------ membership


def contains(point, spec, tol: float = 1e-8, J: int | None = None) -> bool:
    """Membership test within ``tol``.

    For a :class:`ConstraintSpec` the point is ``beta = (w, r)`` with ``J``
    weights (all of it when ``J`` is None); for a :class:`DeltaStarSpec` it
    is a ``delta``.
    """
    point = np.asarray(point, dtype=float).ravel()
    if isinstance(spec, DeltaStarSpec):
        if point.size != spec.region.d:
            raise DataError("dimension mismatch")
        return spec.contains(point, tol)
    J = point.size if J is None else J
    w, r = point[:J], point[J:]
    if spec.r_space == "zero" and r.size and np.any(np.abs(r) > tol):
        return False
    kind = spec.kind
    if kind in ("simplex", "simplex_l2"):
        ok = np.all(w >= -tol) and abs(w.sum() - 1.0) <= tol
        if kind == "simplex_l2":
            ok = ok and np.linalg.norm(w) <= spec.Q + tol
        return bool(ok)
    if kind == "l1":
        return bool(np.abs(w).sum() <= spec.Q + tol)
    if kind == "l2":
        return bool(np.linalg.norm(w) <= spec.Q + tol)
    if kind == "elastic_net":
        return bool(spec.alpha * np.abs(w).sum() + (1 - spec.alpha) * np.dot(w, w) <= spec.Q + tol)
    return True
