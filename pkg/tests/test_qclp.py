import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from synthpi.constraints import ConstraintSpec, LinearRegion, build_delta_star
from synthpi.errors import DataError
from synthpi.fit import fit
from synthpi.panel import build_predictor
from synthpi.qclp import ConicProblem, oracle_xi, prepare_Q, sandwich_bounds, sandwich_check, solve, solve_batch

from conftest import dgp_design

SIMPLEX = ConstraintSpec("simplex")


def random_instance(rng, d=3, unit_objective=False):
    """Simplex-type region with D = 1 around an interior point, plus a random ellipsoid through 0.

    ``unit_objective`` rescales ``c`` to unit length so absolute tolerances mean the same
    thing across instances.
    """
    w_star = rng.dirichlet(np.ones(d))
    region = build_delta_star(w_star, np.ones(d), d, SIMPLEX, 0.0)
    M = rng.normal(size=(d, d))
    Q = M @ M.T + 0.3 * np.eye(d)
    xi = rng.normal(size=d) * 0.5
    c = rng.normal(size=d)
    if unit_objective:
        c /= np.linalg.norm(c)
    return ConicProblem(c, Q, xi, region), w_star


def rejection_max(problem, rng, n_feasible=1_000_000, batch=1_000_000):
    """Largest ``c'delta`` over ``n_feasible`` uniform feasible points of the planar region.

    Points are drawn in the free coordinates ``(delta_0, delta_1)``; ``delta_2``
    closes the sum-to-zero row.  The sampling box is the ellipse's bounding box
    cut down by the simplex bounds.
    """
    Q, xi, c = problem.Q, problem.xi, problem.objective
    lb = problem.region.region.lb
    Qi = np.linalg.inv(Q)
    centre = Qi @ xi
    half = np.sqrt(xi @ Qi @ xi) * np.sqrt(np.diag(Qi))
    # delta_2 = -(delta_0 + delta_1) >= lb_2 caps each free coordinate from above
    lo = np.maximum(centre[:2] - half[:2], lb[:2])
    hi = np.minimum(centre[:2] + half[:2], -lb[2] - lb[1::-1])
    best, got = -np.inf, 0
    while got < n_feasible:
        u = lo + rng.uniform(size=(batch, 2)) * (hi - lo)
        delta = np.column_stack([u, -u.sum(axis=1)])
        quad = np.einsum("ij,jk,ik->i", delta, Q, delta) - 2 * delta @ xi
        ok = (quad <= 0) & (delta[:, 2] >= lb[2])
        vals = delta[ok] @ c
        got += vals.size
        if vals.size:
            best = max(best, float(vals.max()))
    return best


def test_identity_zero_xi_collapses_to_origin():
    region = build_delta_star(np.array([0.2, 0.3, 0.5]), np.ones(3), 3, SIMPLEX, 0.0)
    for sense in ("sup", "inf"):
        sol = solve(ConicProblem(np.array([1.0, -2.0, 0.5]), np.eye(3), np.zeros(3), region, sense))
        assert sol.value == pytest.approx(0.0, abs=1e-9)
        assert sol.status == "optimal"


def test_disk_geometry():
    sol = solve(ConicProblem(np.array([1.0, 0.0]), np.eye(2), np.array([1.0, 0.0]), LinearRegion.free(2)))
    assert sol.value == pytest.approx(2.0, abs=1e-9)
    assert_allclose(sol.argpoint, [2.0, 0.0], atol=1e-8)
    low = solve(ConicProblem(np.array([1.0, 0.0]), np.eye(2), np.array([1.0, 0.0]), LinearRegion.free(2), "inf"))
    assert low.value == pytest.approx(0.0, abs=1e-9)


def test_rejection_sampling_oracle_small():
    rng = np.random.default_rng(7)
    for _ in range(3):
        problem, _ = random_instance(rng)
        sol = solve(problem)
        sampled = rejection_max(problem, rng, n_feasible=200_000, batch=400_000)
        assert sol.value >= sampled - 1e-9
        assert sol.value - sampled <= 5e-3


def test_solution_invariants(rng):
    for _ in range(50):
        problem, _ = random_instance(rng, d=4)
        for sense in ("sup", "inf"):
            p = ConicProblem(problem.objective, problem.Q, problem.xi, problem.region, sense)
            sol = solve(p)
            assert sol.status == "optimal"
            assert sol.constraint_violation <= 1e-7
            assert abs(sol.value - problem.objective @ sol.argpoint) <= 1e-12 * (1 + abs(sol.value))


def test_matches_slsqp(rng):
    from scipy.optimize import minimize

    for _ in range(20):
        problem, _ = random_instance(rng, d=5)
        sol = solve(problem)
        reg = problem.region.region
        Q, xi, c = problem.Q, problem.xi, problem.objective
        ref = minimize(lambda x: -c @ x, np.zeros(5), jac=lambda x: -c, method="SLSQP",
                       bounds=[(lb, None) for lb in reg.lb],
                       constraints=[{"type": "ineq", "fun": lambda x: 2 * xi @ x - x @ Q @ x},
                                    {"type": "eq", "fun": lambda x: reg.E @ x - reg.e}],
                       options={"ftol": 1e-13, "maxiter": 500})
        assert sol.value >= -ref.fun - 1e-6


def test_monotone_in_xi_scale(rng):
    for _ in range(30):
        problem, _ = random_instance(rng, d=4)
        a = solve(problem).value
        b = solve(ConicProblem(problem.objective, problem.Q, 2 * problem.xi, problem.region)).value
        assert b >= a - 1e-9


def test_midpoints_feasible(rng):
    for _ in range(30):
        problem, _ = random_instance(rng, d=4)
        x1 = solve(problem).argpoint
        x2 = solve(ConicProblem(-problem.objective, problem.Q, problem.xi, problem.region)).argpoint
        for t in np.linspace(0, 1, 11):
            x = t * x1 + (1 - t) * x2
            assert x @ problem.Q @ x - 2 * problem.xi @ x <= 1e-9
            assert problem.region.contains(x, tol=1e-9)


def test_bit_identical(rng):
    problem, _ = random_instance(rng, d=6)
    a, b = solve(problem), solve(problem)
    assert a.argpoint.tobytes() == b.argpoint.tobytes()
    assert a.value == b.value


def test_batch_matches_single(rng):
    problem, _ = random_instance(rng, d=4)
    xis = rng.normal(size=(25, 4))
    objectives = rng.normal(size=(3, 4))
    sup, inf, codes = solve_batch(problem.Q, xis, objectives, problem.region)
    assert np.all(codes == 0)
    for b in (0, 7, 24):
        for k in range(3):
            s = solve(ConicProblem(objectives[k], problem.Q, xis[b], problem.region)).value
            i = solve(ConicProblem(objectives[k], problem.Q, xis[b], problem.region, "inf")).value
            assert sup[b, k] == pytest.approx(s, abs=1e-9)
            assert inf[b, k] == pytest.approx(i, abs=1e-9)


def test_non_psd_rejected():
    with pytest.raises(DataError):
        prepare_Q(np.diag([1.0, -0.5]))
    Q, singular = prepare_Q(np.diag([1.0, -1e-14]))
    assert singular and np.linalg.eigvalsh(Q)[0] > 0


def test_singular_unbounded_flagged():
    sol = solve(ConicProblem(np.array([0.0, 1.0]), np.diag([1.0, 0.0]), np.array([0.0, 1.0]), LinearRegion.free(2)))
    assert sol.status == "unbounded_flagged" and sol.value == np.inf


def test_singular_compact_region_solves(rng):
    region = build_delta_star(np.array([0.3, 0.3, 0.4]), np.ones(3), 3, SIMPLEX, 0.0)
    v = rng.normal(size=3)
    Q = np.outer(v, v)
    sol = solve(ConicProblem(rng.normal(size=3), Q, rng.normal(size=3), region))
    assert sol.status == "optimal"


def test_json_roundtrip(tmp_path, rng):
    problem, _ = random_instance(rng)
    path = tmp_path / "p.json"
    import json

    path.write_text(json.dumps(problem.to_dict()))
    back = ConicProblem.load(path)
    assert solve(back).value == solve(problem).value


def test_radius_cap_shrinks_value(rng):
    problem, _ = random_instance(rng)
    free = solve(problem)
    capped = solve(ConicProblem(problem.objective, problem.Q, problem.xi, problem.region, radius=0.05))
    assert np.linalg.norm(capped.argpoint) <= 0.05 + 1e-6
    assert capped.value <= free.value + 1e-9


def test_sandwich_holds_on_draws():
    for rep in range(40):
        _, panel, truth, design = dgp_design(seed=1, rep=rep)
        fitted = fit(design)
        p = build_predictor(panel, design, panel.periods[-1])
        assert sandwich_check(fitted, design, truth["beta0"], p)


def test_sandwich_noiseless_trivial():
    _, panel, truth, design = dgp_design(seed=2, sigma_u2=0.0)
    fitted = fit(design)
    p = build_predictor(panel, design, panel.periods[-1])
    lo, hi = sandwich_bounds(fitted, design, truth["beta0"], p, oracle_xi(design, truth["beta0"]))
    assert lo <= 1e-9 and hi >= -1e-9
    assert sandwich_check(fitted, design, truth["beta0"], p)


def test_sandwich_negative_control():
    _, panel, truth, design = dgp_design(seed=3)
    fitted = fit(design)
    p = build_predictor(panel, design, panel.periods[-1])
    # with xi = 0 the region is the origin alone, which cannot hold a nonzero error
    assert not sandwich_check(fitted, design, truth["beta0"], p, xi=np.zeros(design.d))


def test_speed_per_instance(rng):
    problem, _ = random_instance(rng)
    solve(problem)
    start = time.perf_counter()
    solve(problem)
    assert time.perf_counter() - start < 1.0


def test_single_point_region_is_optimal(rng):
    # |delta|^2 <= 2 delta_1 with delta_1 = -(delta_0 + delta_2) <= 0 leaves only the origin
    region = LinearRegion(np.array([0.0, -1.0, 0.0]), np.full(3, np.inf), np.ones((1, 3)), np.zeros(1))
    xi = np.array([0.0, 1.0, 0.0])
    for _ in range(20):
        c = rng.normal(size=3)
        for sense in ("sup", "inf"):
            sol = solve(ConicProblem(c, np.eye(3), xi, region, sense))
            assert sol.status == "optimal"
            assert sol.value == pytest.approx(0.0, abs=1e-12)
    sup, inf, codes = solve_batch(np.eye(3), np.tile(xi, (5, 1)), rng.normal(size=(2, 3)), region)
    assert np.all(codes == 0) and np.max(np.abs(sup)) <= 1e-12 and np.max(np.abs(inf)) <= 1e-12
