import random
import warnings
from fractions import Fraction

import numpy as np
import pytest

from synthpi.errors import UsageError
from synthpi.fit import fit, treatment_effect
from synthpi.insample import in_sample_uncertainty
from synthpi.intervals import Bounds, as_bounds, assemble_counterfactual, assemble_tau
from synthpi.montecarlo import DGPSpec, generate
from synthpi.outsample import OutSampleResult, out_of_sample_bound
from synthpi.panel import build_design, build_predictor


def _random_bounds(gen, alpha):
    lo, hi = sorted(Fraction(gen.randint(-10**6, 10**6), gen.randint(1, 997)) for _ in range(2))
    return Bounds(lo, hi, alpha)


def test_degenerate_components():
    iv = assemble_tau(2.5, (0.0, 0.0, 0.05), (0.0, 0.0, 0.05))
    assert iv.lower == iv.upper == 2.5
    cf = assemble_counterfactual(1.25, (0.0, 0.0, 0.05), (0.0, 0.0, 0.05))
    assert cf.lower == cf.upper == 1.25


def test_worked_example():
    iv = assemble_tau(2.0, (-0.5, 0.5, 0.05), (-1.0, 1.0, 0.05))
    assert (iv.lower, iv.upper) == (0.5, 3.5)
    assert iv.alpha_total == pytest.approx(0.1)
    assert iv.contains(2.0) and not iv.contains(3.6)


def test_exact_width_and_reflection():
    gen = random.Random(20)
    for _ in range(100):
        a1, a2 = Fraction(gen.randint(1, 40), 100), Fraction(gen.randint(1, 40), 100)
        M1, M2 = _random_bounds(gen, a1), _random_bounds(gen, a2)
        y1 = Fraction(gen.randint(-10**5, 10**5), gen.randint(1, 101))
        y_hat = Fraction(gen.randint(-10**5, 10**5), gen.randint(1, 101))
        tau = assemble_tau(y1 - y_hat, M1, M2)
        cf = assemble_counterfactual(y_hat, M1, M2)
        assert tau.width == cf.width == (M1.upper - M1.lower) + (M2.upper - M2.lower)
        assert (y1 - cf.upper, y1 - cf.lower) == (tau.lower, tau.upper)
        assert tau.alpha_total == a1 + a2 == cf.alpha_total
        assert isinstance(tau.lower, Fraction)


def test_translation_equivariance():
    gen = random.Random(3)
    M1, M2 = _random_bounds(gen, Fraction(1, 20)), _random_bounds(gen, Fraction(1, 20))
    y_hat, y1, k = Fraction(7, 3), Fraction(11, 2), Fraction(-5, 7)
    base = assemble_tau(y1 - y_hat, M1, M2)
    moved = assemble_tau(y1 + k - y_hat, M1, M2)
    assert (moved.lower - base.lower, moved.upper - base.upper) == (k, k)
    # shifting y1 moves the reflected counterfactual endpoints back onto the same interval
    cf = assemble_counterfactual(y_hat, M1, M2)
    assert (y1 + k - moved.upper, y1 + k - moved.lower) == (cf.lower, cf.upper)


def test_level_errors():
    with pytest.raises(UsageError):
        assemble_tau(0.0, (0.0, 1.0, 0.6), (0.0, 1.0, 0.5))
    with pytest.raises(UsageError):
        Bounds(1.0, 0.0, 0.05)
    with pytest.raises(UsageError):
        Bounds(0.0, 1.0, 1.0)
    with pytest.raises(UsageError):
        as_bounds("nonsense")


def test_as_bounds_reads_results():
    out = OutSampleResult(-1.0, 2.0, 0.05, "subgaussian")
    b = as_bounds(out)
    assert (b.lower, b.upper, b.alpha, b.method) == (-1.0, 2.0, 0.05, "subgaussian")


def test_to_dict_is_plain():
    iv = assemble_tau(Fraction(1, 2), (Fraction(-1, 4), Fraction(1, 4), 0.05), (0.0, 0.0, 0.0))
    d = iv.to_dict()
    assert d == {"target": "tau", "point": 0.5, "lower": 0.25, "upper": 0.75, "alpha1": 0.05, "alpha2": 0.0}


@pytest.mark.slow
def test_tau_coverage_on_simulated_draws():
    """The treatment-effect interval covers tau_T in at least 88% of 2000 draws at nominal 90%."""
    spec = DGPSpec(conditioning="redrawn")
    hits, reps = 0, 2000
    for rep in range(reps):
        panel, truth = generate(spec, 5, rep)
        design = build_design(panel)
        fitted = fit(design)
        p = build_predictor(panel, design, panel.periods[-1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m1, ds, _ = in_sample_uncertainty(design, fitted, p, 0.05, 500, seed=rep)
            support = ds.beta_star[: design.J] != 0
            m2 = out_of_sample_bound("subg", fitted.residuals, design.B[:, support], p.x[support], 0.05)
        iv = assemble_tau(treatment_effect(fitted, p), m1, m2)
        hits += iv.contains(truth["tau_T"])
    assert hits / reps >= 0.88
