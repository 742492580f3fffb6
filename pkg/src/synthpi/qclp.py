"""Linear objective over an ellipsoid-polyhedron intersection.

Solves ``sup c'delta`` subject to ``delta' Q delta - 2 xi' delta <= 0`` and
``delta`` in a :class:`~synthpi.constraints.LinearRegion` (box bounds plus
equality rows).  The region always contains ``delta = 0``.

Method: a primal active-set scheme on the box bounds.  For a working set of
fixed coordinates the face problem has a closed form: the quadratic
restricted to the face is a (possibly degenerate) ellipsoid whose centre and
extreme point along ``c`` come from two equality-constrained linear solves.
A first phase minimizes the quadratic itself over the region, which gives a
strictly interior start point shared by every objective of the same draw and
removes degenerate single-point faces.  Everything runs under numba; the
batch entry point spreads draws over threads.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    # probing an old TBB emits a warning on every run; try it last
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .constraints import DeltaStarSpec, LinearRegion, build_delta_star
from .errors import DataError, SchemaError

__all__ = [
    "ConicProblem",
    "ConicSolution",
    "prepare_Q",
    "solve",
    "solve_batch",
    "oracle_xi",
    "sandwich_bounds",
    "sandwich_check",
    "STATUS",
]

LOGGER = logging.getLogger(__name__)

OPTIMAL, MAX_ITER, UNBOUNDED, FAILED = 0, 1, 2, 3
STATUS = {OPTIMAL: "optimal", MAX_ITER: "max_iter", UNBOUNDED: "unbounded_flagged", FAILED: "failed"}

FREE, AT_LOWER, AT_UPPER, FIXED = 0, 1, 2, 3


# ------------------------------------------------------------------ kernels


@njit(cache=True)
def _chol(A, n):
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def _cho_solve(L, b, n):
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _psd_solve(S, b, k):
    """Solve a small PSD system, zeroing directions with negligible pivots."""
    A = S.copy()
    rhs = b.copy()
    x = np.zeros(k)
    skip = np.zeros(k, dtype=np.bool_)
    scale = 0.0
    for i in range(k):
        scale = max(scale, abs(A[i, i]))
    tol = 1e-13 * max(scale, 1e-300)
    for p in range(k):
        if A[p, p] <= tol:
            skip[p] = True
            continue
        for i in range(p + 1, k):
            f = A[i, p] / A[p, p]
            for j in range(p, k):
                A[i, j] -= f * A[p, j]
            rhs[i] -= f * rhs[p]
    for p in range(k - 1, -1, -1):
        if skip[p]:
            continue
        s = rhs[p]
        for j in range(p + 1, k):
            s -= A[p, j] * x[j]
        x[p] = s / A[p, p]
    return x, skip


@njit(cache=True)
def _hval(Q, xi, x):
    d = x.shape[0]
    s = 0.0
    for i in range(d):
        qi = 0.0
        for j in range(d):
            qi += Q[i, j] * x[j]
        s += x[i] * (qi - 2.0 * xi[i])
    return s


@njit(cache=True)
def _face(Q, xi, c, E, e, status, delta, want_dir):
    """Centre and ``c``-extreme direction of the quadratic on the current face.

    Returns ``ok, xc, dx, q, lam, lam2`` with full-length ``xc``/``dx``
    (working coordinates copied from ``delta`` / zero).
    """
    d = Q.shape[0]
    k = E.shape[0]
    nF = 0
    for j in range(d):
        if status[j] == FREE:
            nF += 1
    F = np.empty(nF, dtype=np.int64)
    m = 0
    for j in range(d):
        if status[j] == FREE:
            F[m] = j
            m += 1
    xc = delta.copy()
    dx = np.zeros(d)
    lam = np.zeros(k)
    lam2 = np.zeros(k)
    # reduced data
    Qf = np.empty((nF, nF))
    xit = np.empty(nF)
    cf = np.empty(nF)
    for a in range(nF):
        i = F[a]
        s = xi[i]
        for j in range(d):
            if status[j] != FREE:
                s -= Q[i, j] * delta[j]
        xit[a] = s
        cf[a] = c[i]
        for b in range(nF):
            Qf[a, b] = Q[i, F[b]]
    et = e.copy()
    for r in range(k):
        for j in range(d):
            if status[j] != FREE:
                et[r] -= E[r, j] * delta[j]
    if nF == 0:
        for r in range(k):
            if abs(et[r]) > 1e-9 * (1.0 + abs(e[r])):
                return False, xc, dx, 0.0, lam, lam2
        return True, xc, dx, 0.0, lam, lam2
    L, ok = _chol(Qf, nF)
    if not ok:
        return False, xc, dx, 0.0, lam, lam2
    x0 = _cho_solve(L, xit, nF)
    V = np.empty((nF, k))
    Ef = np.empty((k, nF))
    S = np.empty((k, k))
    if k > 0:
        for r in range(k):
            for a in range(nF):
                Ef[r, a] = E[r, F[a]]
            V[:, r] = _cho_solve(L, Ef[r].copy(), nF)
        for r in range(k):
            for s_ in range(k):
                acc = 0.0
                for a in range(nF):
                    acc += Ef[r, a] * V[a, s_]
                S[r, s_] = acc
        rhs = np.empty(k)
        for r in range(k):
            acc = -et[r]
            for a in range(nF):
                acc += Ef[r, a] * x0[a]
            rhs[r] = acc
        lam, skip = _psd_solve(S, rhs, k)
        for r in range(k):
            if skip[r] and abs(et[r]) > 1e-9 * (1.0 + abs(e[r])):
                return False, xc, dx, 0.0, lam, lam2
        for a in range(nF):
            acc = x0[a]
            for r in range(k):
                acc -= V[a, r] * lam[r]
            xc[F[a]] = acc
    else:
        for a in range(nF):
            xc[F[a]] = x0[a]
    q = 0.0
    if want_dir:
        c0 = _cho_solve(L, cf, nF)
        if k > 0:
            rhs2 = np.empty(k)
            for r in range(k):
                acc = 0.0
                for a in range(nF):
                    acc += Ef[r, a] * c0[a]
                rhs2[r] = acc
            lam2, skip2 = _psd_solve(S, rhs2, k)
            for a in range(nF):
                acc = c0[a]
                for r in range(k):
                    acc -= V[a, r] * lam2[r]
                dx[F[a]] = acc
        else:
            for a in range(nF):
                dx[F[a]] = c0[a]
        for a in range(nF):
            q += cf[a] * dx[F[a]]
        if q < 0.0:
            q = 0.0
    return True, xc, dx, q, lam, lam2


@njit(cache=True)
def _ratio(delta, target, lb, ub, status):
    """Largest step in [0, 1] from delta toward target that keeps the free bounds."""
    step = 1.0
    block = -1
    side = FREE
    for j in range(delta.shape[0]):
        if status[j] != FREE:
            continue
        move = target[j] - delta[j]
        if move < 0.0 and target[j] < lb[j]:
            s = (lb[j] - delta[j]) / move
            if s < step:
                step, block, side = max(s, 0.0), j, AT_LOWER
        elif move > 0.0 and target[j] > ub[j]:
            s = (ub[j] - delta[j]) / move
            if s < step:
                step, block, side = max(s, 0.0), j, AT_UPPER
    return step, block, side


@njit(cache=True)
def _init_status(lb, ub, delta):
    d = lb.shape[0]
    status = np.zeros(d, dtype=np.int8)
    for j in range(d):
        if lb[j] == ub[j]:
            status[j] = FIXED
        elif delta[j] <= lb[j]:
            status[j] = AT_LOWER
        elif delta[j] >= ub[j]:
            status[j] = AT_UPPER
    return status


@njit(cache=True)
def _place(delta, lb, ub, status):
    for j in range(delta.shape[0]):
        if status[j] == AT_LOWER or status[j] == FIXED:
            delta[j] = lb[j]
        elif status[j] == AT_UPPER:
            delta[j] = ub[j]


@njit(cache=True)
def _pick_drop(res, status, tol):
    best = -1
    worst = tol
    for j in range(res.shape[0]):
        if status[j] == AT_LOWER and res[j] > worst:
            worst, best = res[j], j
        elif status[j] == AT_UPPER and -res[j] > worst:
            worst, best = -res[j], j
    return best


@njit(cache=True)
def _phase1(Q, xi, E, e, lb, ub, max_iter):
    """Minimize the quadratic over the region starting from the origin."""
    d = Q.shape[0]
    delta = np.zeros(d)
    status = _init_status(lb, ub, delta)
    _place(delta, lb, ub, status)
    zero = np.zeros(d)
    scale = 1.0
    for j in range(d):
        scale = max(scale, abs(xi[j]))
    for it in range(max_iter):
        ok, xc, dx, q, lam, lam2 = _face(Q, xi, zero, E, e, status, delta, False)
        if not ok:
            return delta, status, FAILED
        step, block, side = _ratio(delta, xc, lb, ub, status)
        if block >= 0:
            for j in range(d):
                delta[j] += step * (xc[j] - delta[j])
            status[block] = side
            _place(delta, lb, ub, status)
            continue
        delta[:] = xc
        _place(delta, lb, ub, status)
        # multipliers for -grad h = E' nu on the free coordinates, nu = 2 lam
        res = np.empty(d)
        for j in range(d):
            g = 0.0
            for i in range(d):
                g += Q[j, i] * delta[i]
            g = 2.0 * (g - xi[j])
            acc = -g
            for r in range(E.shape[0]):
                acc -= E[r, j] * 2.0 * lam[r]
            res[j] = acc
        drop = _pick_drop(res, status, 1e-11 * scale)
        if drop < 0:
            return delta, status, OPTIMAL
        status[drop] = FREE
    return delta, status, MAX_ITER


@njit(cache=True)
def _point_multiplier(Q, xi, c, E, status, delta, tol):
    """Quadratic-constraint multiplier at a face that is a single point.

    With the face direction gone the multiplier ``mu`` is not pinned down
    by the face, so look for any ``mu >= 0`` (equality multipliers solved
    from the free coordinates) whose bound residuals have the right signs.
    Returns ``found, mu, nu``; when nothing qualifies, ``mu`` minimizes the
    largest sign violation.
    """
    d = Q.shape[0]
    k = E.shape[0]
    g = np.empty(d)
    for j in range(d):
        acc = 0.0
        for i in range(d):
            acc += Q[j, i] * delta[i]
        g[j] = 2.0 * (acc - xi[j])
    nu_c = np.zeros(k)
    nu_g = np.zeros(k)
    if k > 0:
        S = np.zeros((k, k))
        rc = np.zeros(k)
        rg = np.zeros(k)
        for j in range(d):
            if status[j] != FREE:
                continue
            for r in range(k):
                rc[r] += E[r, j] * c[j]
                rg[r] += E[r, j] * g[j]
                for s_ in range(k):
                    S[r, s_] += E[r, j] * E[s_, j]
        nu_c, _ = _psd_solve(S, rc, k)
        nu_g, _ = _psd_solve(S, rg, k)
    # residual_j(mu) = a_j - mu * b_j; lower-bound rows need <= 0, upper-bound rows >= 0
    a = np.empty(d)
    b = np.empty(d)
    for j in range(d):
        ea = c[j]
        eb = g[j]
        for r in range(k):
            ea -= E[r, j] * nu_c[r]
            eb -= E[r, j] * nu_g[r]
        sgn = 0.0
        if status[j] == AT_LOWER:
            sgn = 1.0
        elif status[j] == AT_UPPER:
            sgn = -1.0
        a[j] = sgn * ea
        b[j] = sgn * eb

    def worst(mu):
        w = 0.0
        for j in range(d):
            if status[j] == AT_LOWER or status[j] == AT_UPPER:
                w = max(w, a[j] - mu * b[j])
        return w

    best_mu = 0.0
    best = worst(0.0)
    for j in range(d):
        if (status[j] == AT_LOWER or status[j] == AT_UPPER) and b[j] != 0.0:
            mu = a[j] / b[j]
            if mu > 0.0:
                w = worst(mu)
                if w < best:
                    best, best_mu = w, mu
    nu = np.empty(k)
    for r in range(k):
        nu[r] = nu_c[r] - best_mu * nu_g[r]
    return best <= tol, best_mu, nu


@njit(cache=True)
def _phase2(Q, xi, c, E, e, lb, ub, start, start_status, max_iter):
    """Maximize c'delta from a feasible start that minimizes the quadratic."""
    d = Q.shape[0]
    delta = start.copy()
    status = start_status.copy()
    cscale = 1e-300
    for j in range(d):
        cscale = max(cscale, abs(c[j]))
    tol = 1e-10 * cscale
    last_drop = -1
    for it in range(max_iter):
        ok, xc, dx, q, lam, lam2 = _face(Q, xi, c, E, e, status, delta, True)
        if not ok:
            return delta, FAILED, 0.0
        rsq = -_hval(Q, xi, xc)
        if rsq < 0.0:
            rsq = 0.0
        if q <= 1e-300:
            target = delta.copy()
            mu = 0.0
        else:
            t = np.sqrt(rsq / q)
            target = xc + t * dx
            mu = 0.5 / t if t > 0.0 else 1e300
        step, block, side = _ratio(delta, target, lb, ub, status)
        if block >= 0:
            if step <= 0.0 and block == last_drop:
                # dropping this bound gave no feasible progress
                status[block] = side
                _place(delta, lb, ub, status)
                return delta, OPTIMAL, 0.0
            for j in range(d):
                delta[j] += step * (target[j] - delta[j])
            status[block] = side
            _place(delta, lb, ub, status)
            last_drop = -1
            continue
        delta[:] = target
        _place(delta, lb, ub, status)
        if mu >= 1e300:
            return delta, OPTIMAL, 0.0
        nu = np.empty(E.shape[0])
        for r in range(E.shape[0]):
            nu[r] = lam2[r] + mu * 2.0 * lam[r]
        hscale = 1.0
        for j in range(d):
            hscale = max(hscale, abs(xi[j] * delta[j]))
        nfree = 0
        for j in range(d):
            if status[j] == FREE:
                nfree += 1
        point = q <= 1e-300 or nfree <= E.shape[0]
        if point and _hval(Q, xi, delta) >= -1e-12 * hscale:
            # the face is a single point on the quadratic boundary
            found, mu, nu = _point_multiplier(Q, xi, c, E, status, delta, tol)
            if found:
                return delta, OPTIMAL, 0.0
        res = np.empty(d)
        kkt = 0.0
        for j in range(d):
            g = 0.0
            for i in range(d):
                g += Q[j, i] * delta[i]
            g = 2.0 * (g - xi[j])
            acc = c[j] - mu * g
            for r in range(E.shape[0]):
                acc -= E[r, j] * nu[r]
            res[j] = acc
            if status[j] == FREE:
                kkt = max(kkt, abs(acc))
        drop = _pick_drop(res, status, tol)
        if drop < 0:
            for j in range(d):
                if status[j] == AT_LOWER:
                    kkt = max(kkt, res[j])
                elif status[j] == AT_UPPER:
                    kkt = max(kkt, -res[j])
            return delta, OPTIMAL, kkt
        status[drop] = FREE
        last_drop = drop
    return delta, MAX_ITER, np.inf


@njit(cache=True)
def _solve_one(Q, xi, c, E, e, lb, ub, max_iter):
    start, st, code = _phase1(Q, xi, E, e, lb, ub, max_iter)
    if code == FAILED:
        return start, FAILED, np.inf
    return _phase2(Q, xi, c, E, e, lb, ub, start, st, max_iter)


@njit(cache=True, parallel=True)
def _batch(Q, Xi, C, E, e, lb, ub, max_iter):
    B = Xi.shape[0]
    m = C.shape[0]
    sup = np.empty((B, m))
    inf = np.empty((B, m))
    codes = np.zeros(B, dtype=np.int8)
    for b in prange(B):
        xi = Xi[b]
        start, st, code = _phase1(Q, xi, E, e, lb, ub, max_iter)
        worst = code if code == FAILED else OPTIMAL
        for k in range(m):
            c = C[k].copy()
            x, code_u, _ = _phase2(Q, xi, c, E, e, lb, ub, start, st, max_iter)
            v = 0.0
            for j in range(c.shape[0]):
                v += c[j] * x[j]
            sup[b, k] = v
            worst = max(worst, code_u)
            neg = -c
            x, code_l, _ = _phase2(Q, xi, neg, E, e, lb, ub, start, st, max_iter)
            v = 0.0
            for j in range(c.shape[0]):
                v += c[j] * x[j]
            inf[b, k] = v
            worst = max(worst, code_l)
        codes[b] = worst
    return sup, inf, codes


# --------------------------------------------------------------- public API


def prepare_Q(Q, clip_tol: float = 1e-10, ridge: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Symmetrize, clip small negative eigenvalues and ridge a singular ``Q``.

    The ridge makes the quadratic region slightly smaller (an inner
    approximation).  Returns the matrix and whether it was singular.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DataError("Q must be square")
    Q = 0.5 * (Q + Q.T)
    eig, vec = np.linalg.eigh(Q)
    top = max(eig[-1], 0.0)
    if eig[0] < -clip_tol * max(1.0, top):
        raise DataError(f"Q is not positive semidefinite (min eigenvalue {eig[0]:.3g})")
    floor = ridge * max(top, 1e-300)
    singular = bool(eig[0] <= floor)
    if eig[0] < 0 or singular:
        eig = np.maximum(eig, 0.0) + (floor if singular else 0.0)
        Q = (vec * eig) @ vec.T
        Q = 0.5 * (Q + Q.T)
    return np.ascontiguousarray(Q), singular


def _region_of(region) -> LinearRegion:
    if isinstance(region, DeltaStarSpec):
        return region.region
    if isinstance(region, LinearRegion):
        return region
    raise DataError("region must be a LinearRegion or DeltaStarSpec")


def _max_iter(d: int) -> int:
    return 100 + 20 * d


@dataclass(frozen=True)
class ConicProblem:
    objective: np.ndarray
    Q: np.ndarray
    xi: np.ndarray
    region: LinearRegion | DeltaStarSpec
    sense: str = "sup"
    radius: float | None = None

    def __post_init__(self):
        if self.sense not in ("sup", "inf"):
            raise DataError("sense must be 'sup' or 'inf'")
        for name in ("objective", "xi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        d = self.objective.size
        if self.xi.size != d or self.Q.shape != (d, d) or _region_of(self.region).d != d:
            raise DataError("problem dimensions disagree")

    def to_dict(self) -> dict:
        reg = _region_of(self.region)
        enc = lambda a: [None if not np.isfinite(v) else float(v) for v in np.asarray(a).ravel()]  # noqa: E731
        return {
            "objective": self.objective.tolist(),
            "Q": self.Q.tolist(),
            "xi": self.xi.tolist(),
            "lb": enc(reg.lb),
            "ub": enc(reg.ub),
            "E": reg.E.tolist(),
            "e": reg.e.tolist(),
            "sense": self.sense,
            "radius": self.radius,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConicProblem":
        try:
            c = np.asarray(data["objective"], dtype=float)
            d = c.size
            dec = lambda a, fill: np.array([fill if v is None else v for v in a], dtype=float)  # noqa: E731
            lb = dec(data.get("lb", [None] * d), -np.inf)
            ub = dec(data.get("ub", [None] * d), np.inf)
            E = np.asarray(data.get("E", []), dtype=float).reshape(-1, d)
            e = np.asarray(data.get("e", np.zeros(E.shape[0])), dtype=float)
            return cls(c, np.asarray(data["Q"]), np.asarray(data["xi"]), LinearRegion(lb, ub, E, e),
                       data.get("sense", "sup"), data.get("radius"))
        except KeyError as exc:
            raise SchemaError(f"problem file lacks key {exc}") from None

    @classmethod
    def load(cls, path) -> "ConicProblem":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ConicSolution:
    value: float
    argpoint: np.ndarray
    kkt_residual: float
    status: str
    constraint_violation: float = 0.0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "argpoint": self.argpoint.tolist(),
            "kkt_residual": self.kkt_residual,
            "status": self.status,
            "constraint_violation": self.constraint_violation,
        }


def _unbounded(Q_singular: bool, region: LinearRegion) -> bool:
    return Q_singular and not region.is_compact()


def solve(problem: ConicProblem, tol: float = 1e-9) -> ConicSolution:
    """Solve one instance; ``inf`` is handled as ``-sup(-c)``."""
    region = _region_of(problem.region)
    Q, singular = prepare_Q(problem.Q)
    d = Q.shape[0]
    c = problem.objective if problem.sense == "sup" else -problem.objective
    if _unbounded(singular, region):
        sign = 1.0 if problem.sense == "sup" else -1.0
        return ConicSolution(sign * np.inf, np.full(d, np.nan), np.inf, STATUS[UNBOUNDED])
    x, code, kkt = _solve_one(Q, problem.xi, np.ascontiguousarray(c), np.ascontiguousarray(region.E),
                              region.e, region.lb, region.ub, _max_iter(d))
    if problem.radius is not None:
        x, code = _radius_capped(problem, region, x)
    viol = max(_hval(problem.Q, problem.xi, x), 0.0)
    viol = max(viol, float(np.max(np.maximum(region.lb - x, 0.0), initial=0.0)),
               float(np.max(np.maximum(x - region.ub, 0.0), initial=0.0)))
    if region.E.shape[0]:
        viol = max(viol, float(np.max(np.abs(region.E @ x - region.e))))
    value = float(problem.objective @ x)
    return ConicSolution(value, x, float(kkt), STATUS[int(code)], float(viol))


def _radius_capped(problem: ConicProblem, region: LinearRegion, x0: np.ndarray):
    """Diagnostic variant with the extra ball ``||delta|| <= radius`` (SLSQP)."""
    from scipy.optimize import minimize

    sign = 1.0 if problem.sense == "sup" else -1.0
    c, Q, xi, R = problem.objective, problem.Q, problem.xi, float(problem.radius)
    norm = np.linalg.norm(x0)
    start = x0 if norm <= R else x0 * (R / norm)
    cons = [
        {"type": "ineq", "fun": lambda x: -(x @ Q @ x - 2 * xi @ x), "jac": lambda x: -(2 * Q @ x - 2 * xi)},
        {"type": "ineq", "fun": lambda x: R * R - x @ x, "jac": lambda x: -2 * x},
    ]
    if region.E.shape[0]:
        cons.append({"type": "eq", "fun": lambda x: region.E @ x - region.e, "jac": lambda x: region.E})
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in zip(region.lb, region.ub)]
    res = minimize(lambda x: -sign * c @ x, start, jac=lambda x: -sign * c, bounds=bounds,
                   constraints=cons, method="SLSQP", options={"maxiter": 1000, "ftol": 1e-12})
    return res.x, (OPTIMAL if res.success else MAX_ITER)


def solve_batch(Q, xis, objectives, region) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sup and inf of every objective for every draw of ``xi``.

    Returns ``(sup, inf, codes)`` with shapes ``(B, m)``, ``(B, m)``, ``(B,)``;
    ``codes`` holds the worst solver status per draw.
    """
    region = _region_of(region)
    Q, singular = prepare_Q(Q)
    Xi = np.ascontiguousarray(np.atleast_2d(np.asarray(xis, dtype=float)))
    C = np.ascontiguousarray(np.atleast_2d(np.asarray(objectives, dtype=float)))
    B, m = Xi.shape[0], C.shape[0]
    if _unbounded(singular, region):
        return np.full((B, m), np.inf), np.full((B, m), -np.inf), np.full(B, UNBOUNDED, dtype=np.int8)
    return _batch(Q, Xi, C, np.ascontiguousarray(region.E), region.e, region.lb, region.ub, _max_iter(Q.shape[0]))


# -------------------------------------------------------- optimality sandwich


def oracle_xi(design, beta0) -> np.ndarray:
    """``D^{-1} Z'(A - Z beta0)``, the linear term that pins the estimation error."""
    Z = design.Z
    return (Z.T @ (design.A - Z @ np.asarray(beta0, dtype=float))) / design.D


def sandwich_bounds(fitted, design, beta0, p, xi) -> tuple[float, float]:
    """``(inf, sup)`` of ``p' D^{-1} delta`` over the un-relaxed region centred at ``beta0``."""
    spec = build_delta_star(beta0, design.D, design.J, design.constraint, 0.0)
    pvec = p.p if hasattr(p, "p") else np.asarray(p, dtype=float)
    c = pvec / design.D
    lo = solve(ConicProblem(c, fitted.Q_hat, xi, spec, "inf")).value
    hi = solve(ConicProblem(c, fitted.Q_hat, xi, spec, "sup")).value
    return lo, hi


def sandwich_check(fitted, design, beta0, p, xi=None, tol: float = 1e-7) -> bool:
    """Whether ``p' D^{-1} delta_hat`` with ``delta_hat = D (beta_hat - beta0)`` lies in the bounds.

    ``xi`` defaults to the oracle value computed from the known ``beta0``.
    """
    beta0 = np.asarray(beta0, dtype=float)
    xi = oracle_xi(design, beta0) if xi is None else np.asarray(xi, dtype=float)
    pvec = p.p if hasattr(p, "p") else np.asarray(p, dtype=float)
    value = float(pvec @ (fitted.beta_hat - beta0))
    lo, hi = sandwich_bounds(fitted, design, beta0, pvec, xi)
    slack = tol * (1.0 + abs(lo) + abs(hi))
    return bool(lo - slack <= value <= hi + slack)
