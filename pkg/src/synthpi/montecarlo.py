"""Coverage experiments on simulated synthetic-control panels.

Donors follow ``b_jt = rho * b_j(t-1) + v_jt`` with standard normal
innovations; the treated outcome is ``b_t'w + u_t``.  Intervals for the
untreated outcome are evaluated at points that move the first donor by
``c`` pre-period standard deviations.

Method strings name an out-of-sample approach plus an optional mean-model
degree after ``@``:

``subg``, ``subg-s`` (scale doubled), ``locscale``, ``qreg``, ``poly:k``
    in-sample simulation plus that out-of-sample bound;
``insample``
    simulation bound alone, judged against the synthetic-control component;
``oracle``
    true weights and true error quantiles (harness calibration);
``infinite``
    the whole real line (harness sanity check).
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import _rng
from .constraints import build_delta_star
from .errors import ConfigError, ConvergenceError, SynthPIError
from .fit import fit
from .insample import conditional_mean_residuals, estimate_sigma, rho_rule, simulate_many
from .outsample import fit_residual_model, out_of_sample_bound, parse_approach
from .panel import PanelDataset, build_design

__all__ = ["DGPSpec", "CoverageRow", "CoverageTable", "MethodSpec", "parse_method", "generate", "run_coverage"]

LOGGER = logging.getLogger(__name__)

DEFAULT_SHIFTS = (-1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class DGPSpec:
    rho: float = 0.0
    T0: int = 100
    T1: int = 1
    N: int = 10
    w_true: tuple = ()
    sigma_u2: float = 0.5
    misspecified: bool = False
    eval_shifts: tuple = DEFAULT_SHIFTS
    conditioning: str = "fixed_design"
    burn_in: int = 100

    def __post_init__(self):
        if not self.w_true:
            w = np.zeros(self.N)
            w[:3] = (0.3, 0.4, 0.3)
            object.__setattr__(self, "w_true", tuple(w.tolist()))
        w = np.asarray(self.w_true, dtype=float)
        if w.size != self.N:
            raise ConfigError(f"w_true has {w.size} entries for N={self.N} donors")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("w_true must lie on the simplex")
        if self.rho not in (0, 0.5, 1):
            raise ConfigError("rho must be 0, 0.5 or 1")
        if self.conditioning not in ("fixed_design", "redrawn"):
            raise ConfigError("conditioning must be 'fixed_design' or 'redrawn'")
        if self.T0 < 2 or self.T1 < 1 or self.N < 1:
            raise ConfigError("need T0 >= 2, T1 >= 1 and N >= 1")
        object.__setattr__(self, "eval_shifts", tuple(float(c) for c in self.eval_shifts))

    @property
    def regime(self) -> str:
        return "cointegration" if self.rho == 1 else "iid"


def _donors(spec: DGPSpec, gen: np.random.Generator) -> np.ndarray:
    """``(T0 + T1, N)`` donor path."""
    T = spec.T0 + spec.T1
    burn = spec.burn_in if spec.rho == 0.5 else 0
    v = gen.standard_normal((T + burn, spec.N))
    if spec.rho == 0:
        return v[burn:]
    b = np.empty_like(v)
    prev = np.zeros(spec.N)
    for t in range(T + burn):
        prev = spec.rho * prev + v[t]
        b[t] = prev
    return b[burn:]


def _systematic_error(spec: DGPSpec, b1: np.ndarray, b1_lag: np.ndarray) -> np.ndarray:
    """Part of ``u_t`` explained by the first donor (zero when correctly specified)."""
    if not spec.misspecified:
        return np.zeros_like(b1)
    if spec.rho == 1:
        return 0.9 * (b1 - b1_lag)
    return 0.2 * b1


def generate(spec: DGPSpec, seed: int, rep: int = 0) -> tuple[PanelDataset, dict]:
    """Simulate one panel and the quantities needed to score intervals.

    Under ``fixed_design`` the donor path depends only on ``seed``; the
    error draw depends on ``(seed, rep)``.  Under ``redrawn`` both do.
    """
    donor_path = (_rng.DGP_DONORS,) if spec.conditioning == "fixed_design" else (_rng.DGP_DONORS, rep)
    b = _donors(spec, _rng.stream(seed, *donor_path))
    T = spec.T0 + spec.T1
    zeta = _rng.stream(seed, _rng.DGP_ERRORS, rep).standard_normal(T) * math.sqrt(spec.sigma_u2)
    b1 = b[:, 0]
    b1_lag = np.concatenate([[0.0], b1[:-1]])
    u = _systematic_error(spec, b1, b1_lag) + zeta
    w = np.asarray(spec.w_true)
    y = b @ w + u

    t_eval = spec.T0  # first post-treatment period (0-based)
    sd_b1 = float(np.std(b1[: spec.T0], ddof=1))
    shifts = np.asarray(spec.eval_shifts)
    x_eval = np.repeat(b[t_eval][None, :], shifts.size, axis=0)
    x_eval[:, 0] += shifts * sd_b1
    sys_eval = _systematic_error(spec, x_eval[:, 0], np.full(shifts.size, b1_lag[t_eval]))
    e_eval = sys_eval + zeta[t_eval]
    y_eval = x_eval @ w + e_eval

    values = np.vstack([y[None, :], b.T])
    panel = PanelDataset.from_array(values, spec.T0)
    truth = {
        "w_true": w,
        "beta0": None if spec.misspecified else w.copy(),
        "u": u,
        "u_T": float(u[t_eval]),
        "tau_T": 0.0,
        "sd_b1": sd_b1,
        "x_eval": x_eval,
        "y_eval": y_eval,
        "e_mean_eval": sys_eval,
        "donor_hash": hashlib.sha256(np.ascontiguousarray(b).tobytes()).hexdigest(),
    }
    return panel, truth


# ------------------------------------------------------------------ methods


@dataclass(frozen=True)
class MethodSpec:
    label: str
    kind: str  # "combined", "insample", "oracle", "infinite"
    approach: str = ""
    degree: int = 1
    scale: float = 1.0


def parse_method(text: str) -> MethodSpec:
    label = text.strip()
    name, _, deg = label.partition("@")
    degree = int(deg) if deg else 1
    if degree not in (0, 1, 2):
        raise ConfigError(f"mean-model degree must be 0, 1 or 2 in {label!r}")
    if name in ("oracle", "infinite"):
        return MethodSpec(label, name)
    if name == "insample":
        return MethodSpec(label, "insample", degree=degree)
    scale = 1.0
    if name == "subg-s":
        name, scale = "subg", 2.0
    parse_approach(name)
    return MethodSpec(label, "combined", name, degree, scale)


# -------------------------------------------------------------------- table


@dataclass(frozen=True)
class CoverageRow:
    method: str
    shift: float
    CP: float
    AL: float
    reps: int

    @property
    def mc_se(self) -> float:
        return math.sqrt(self.CP * (1.0 - self.CP) / self.reps) if self.reps else float("nan")


@dataclass(frozen=True)
class CoverageTable:
    rows: tuple
    spec: DGPSpec
    failed_reps: int = 0
    donor_hashes: tuple = ()
    elapsed: float = field(default=0.0, compare=False)

    def get(self, method: str, shift: float) -> CoverageRow:
        for row in self.rows:
            if row.method == method and row.shift == shift:
                return row
        raise KeyError((method, shift))

    def average_cp(self, method: str) -> tuple[float, float]:
        """CP averaged over shifts and its standard error (rows treated as independent)."""
        rows = [r for r in self.rows if r.method == method]
        cp = float(np.mean([r.CP for r in rows]))
        se = math.sqrt(sum(r.mc_se**2 for r in rows)) / len(rows)
        return cp, se

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "shift", "CP", "AL", "reps", "mc_se"])
        for r in self.rows:
            writer.writerow([r.method, repr(r.shift), repr(r.CP), repr(r.AL), r.reps, repr(r.mc_se)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


# --------------------------------------------------------------------- runs


def _rep_intervals(spec, panel, truth, methods, alpha, draws, seed, rep):
    """``{label: (lower, upper)}`` arrays over shifts for one replication."""
    alpha1 = alpha2 = alpha / 2.0
    design = build_design(panel, regime=spec.regime, constraint="simplex")
    fitted = fit(design)
    rho = rho_rule(fitted.residuals, design.B, design.regime, design.T0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        delta_star = build_delta_star(fitted.beta_hat, design.D, design.J, design.constraint, rho)
    support = np.flatnonzero(delta_star.beta_star[: design.J] != 0)
    regs = design.B[:, support]
    X = truth["x_eval"]
    y_hat = X @ fitted.w_hat
    n_shift = X.shape[0]
    out = {}
    sigmas, sims, models = {}, {}, {}

    def simulated(degree, a1):
        if degree not in sigmas:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean = conditional_mean_residuals(fitted.residuals, regs, degree)
                sigmas[degree] = estimate_sigma(design, fitted, fitted.residuals - mean, "plugin_diag").Sigma
        if (degree, a1) not in sims:
            # every (degree, level) pair reuses the replication's normal draws
            res = simulate_many(fitted.Q_hat, sigmas[degree], delta_star, X, a1, draws, seed, (rep,))
            sims[degree, a1] = res[:2]
        return sims[degree, a1]

    for m in methods:
        if m.kind == "infinite":
            out[m.label] = (np.full(n_shift, -np.inf), np.full(n_shift, np.inf))
            continue
        if m.kind == "oracle":
            z = NormalDist().inv_cdf(1.0 - alpha / 2.0) * math.sqrt(spec.sigma_u2)
            centre = X @ truth["w_true"] + truth["e_mean_eval"]
            out[m.label] = (centre - z, centre + z)
            continue
        a1 = alpha if m.kind == "insample" else alpha1
        M1_L, M1_U = simulated(m.degree, a1)
        if m.kind == "insample":
            out[m.label] = (y_hat + M1_L, y_hat + M1_U)
            continue
        key = m.degree
        if key not in models and parse_approach(m.approach)[0] != "quantile_reg":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                models[key] = fit_residual_model(fitted.residuals, regs, m.degree)
        lo = np.empty(n_shift)
        hi = np.empty(n_shift)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for i in range(n_shift):
                b2 = out_of_sample_bound(m.approach, fitted.residuals, regs, X[i, support], alpha2, m.degree,
                                         scale=m.scale, model=models.get(key))
                lo[i] = y_hat[i] + M1_L[i] + b2.M2_L
                hi[i] = y_hat[i] + M1_U[i] + b2.M2_U
        out[m.label] = (lo, hi)
    return out


def run_coverage(
    spec: DGPSpec,
    methods=("subg",),
    reps: int = 1000,
    base_seed: int = 0,
    parallelism: int | None = None,
    draws: int = 1000,
    alpha: float = 0.1,
    min_reps: int = 100,
) -> CoverageTable:
    """Coverage probability and average length of each method at each shift.

    Replications run in sequence; ``parallelism`` sets the number of threads
    used inside each replication's batch of simulation solves.  A method
    whose target is the synthetic-control component (``insample``) is
    scored against ``x'w_true`` on correctly specified designs.
    """
    if reps < min_reps:
        raise ConfigError(f"reps must be at least {min_reps}")
    if parallelism:
        import numba

        numba.set_num_threads(min(int(parallelism), numba.config.NUMBA_NUM_THREADS))
    parsed = [parse_method(m) if isinstance(m, str) else m for m in methods]
    labels = [m.label for m in parsed]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate method labels")
    n_shift = len(spec.eval_shifts)
    hits = {m.label: np.zeros(n_shift) for m in parsed}
    lengths = {m.label: np.zeros(n_shift) for m in parsed}
    failures = 0
    hashes = set()
    good = 0
    start = time.perf_counter()
    for rep in range(reps):
        panel, truth = generate(spec, base_seed, rep)
        hashes.add(truth["donor_hash"])
        try:
            ivs = _rep_intervals(spec, panel, truth, parsed, alpha, draws, base_seed, rep)
        except SynthPIError as exc:
            failures += 1
            LOGGER.warning("replication %d failed: %s", rep, exc)
            if failures > 0.01 * reps:
                raise ConvergenceError(f"{failures} replications failed (last: {exc})") from exc
            continue
        good += 1
        for m in parsed:
            lo, hi = ivs[m.label]
            target = truth["y_eval"]
            if m.kind == "insample":
                target = truth["x_eval"] @ truth["w_true"]
            hits[m.label] += (lo <= target) & (target <= hi)
            lengths[m.label] += hi - lo
    rows = []
    for m in parsed:
        for i, c in enumerate(spec.eval_shifts):
            cp = float(hits[m.label][i] / good) if good else float("nan")
            al = float(lengths[m.label][i] / good) if good else float("nan")
            rows.append(CoverageRow(m.label, c, cp, al, good))
    elapsed = time.perf_counter() - start
    return CoverageTable(tuple(rows), spec, failures, tuple(sorted(hashes)), elapsed)
