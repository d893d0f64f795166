import numpy as np
import pytest

import equiterm as eq
from equiterm.errors import InfeasibleError
from equiterm.players import ACT_TOL
from tests.corpus import build_scenario, desk_identity


@pytest.fixture(scope="module")
def identity():
    return desk_identity()


@pytest.fixture(scope="module")
def consumer_problem(identity):
    return eq.assemble_consumer(identity.consumers[0], identity)


@pytest.fixture(scope="module")
def producer_problem(identity):
    return eq.assemble_producer(identity.producers[0], identity)


@pytest.fixture(scope="module")
def rich_scenario():
    return build_scenario(
        seed=77, sizes=(2, 1), fuels={"coal": 0.9, "gas": 0.5},
        producers=[(1.2, [("gas", 6.0, 4.0, -4.0, 2.0), ("coal", 8.0, 8.0, -8.0, 1.1)])],
        consumers=[(0.8, 1.0, 0.0)], demand_frac=(0.45, 0.5))


@pytest.fixture(scope="module")
def rich_producer(rich_scenario):
    return eq.assemble_producer(rich_scenario.producers[0], rich_scenario)


# ---- solve_qp -------------------------------------------------------------

def test_consumer_even_split_at_flat_prices(consumer_problem):
    sol = eq.solve_qp(consumer_problem, np.zeros(2))
    np.testing.assert_allclose(sol.primal, [2.5, 2.5], atol=1e-12)
    assert sol.kkt_residual <= 1e-9


def test_consumer_tilts_away_from_expensive_time(consumer_problem):
    sol = eq.solve_qp(consumer_problem, np.array([1.0, 0.0]))
    np.testing.assert_allclose(sol.primal, [2.0, 3.0], atol=1e-12)


def test_idle_producer_at_zero_power_price(producer_problem):
    sol = eq.solve_qp(producer_problem, np.zeros(2))
    np.testing.assert_allclose(sol.primal, np.zeros(7), atol=1e-12)
    assert sol.kkt_residual <= 1e-9


def test_infeasible_consumer_raises():
    sc = desk_identity()
    squeezed = eq.Scenario(sc.grid, sc.producers, sc.consumers, sc.fuels, sc.exogenous,
                           eq.Bounds(1.0, 500.0, 1000.0))  # 2 * 1.0 < demand 5
    prob = eq.assemble_consumer(squeezed.consumers[0], squeezed)
    with pytest.raises(InfeasibleError):
        eq.solve_qp(prob, np.zeros(2))


def test_identical_calls_identical_bits(rich_producer):
    prices = np.full(3, 12.0)
    a = eq.solve_qp(rich_producer, prices)
    b = eq.solve_qp(rich_producer, prices)
    assert a.primal.tobytes() == b.primal.tobytes()
    assert a.volumes.tobytes() == b.volumes.tobytes()


def test_objective_value_definition(consumer_problem):
    prices = np.array([1.0, 0.0])
    sol = eq.solve_qp(consumer_problem, prices)
    assert sol.objective == pytest.approx(consumer_problem.objective(sol.primal, prices))


def test_warm_start_from_previous_solution(rich_producer):
    p0 = np.full(3, 11.0)
    cold = eq.solve_qp(rich_producer, p0)
    warm = eq.solve_qp(rich_producer, np.full(3, 11.05), warm_start=cold)
    assert warm.kkt_residual <= 1e-9


# ---- kkt_residual ---------------------------------------------------------

def test_residuals_vanish_at_hand_solution(consumer_problem):
    prices = np.array([1.0, 0.0])
    sol = eq.solve_qp(consumer_problem, prices)
    rep = eq.kkt_residual(consumer_problem, sol)
    assert rep.max_violation <= 1e-12


def test_primal_perturbation_breaks_stationarity(consumer_problem):
    from dataclasses import replace

    prices = np.array([1.0, 0.0])
    sol = eq.solve_qp(consumer_problem, prices)
    bumped = sol.primal.copy()
    bumped[0] += 1e-3
    rep = eq.kkt_residual(consumer_problem, replace(sol, primal=bumped))
    # stationarity moves by |Q row . delta| = 1e-3 for the identity block
    assert rep.stationarity == pytest.approx(1e-3, rel=1e-6)


def test_zero_vector_feasibility_residual(consumer_problem):
    from dataclasses import replace

    sol = eq.solve_qp(consumer_problem, np.zeros(2))
    zeroed = replace(sol, primal=np.zeros(2), eq_duals=np.zeros(1),
                     ineq_duals=np.zeros(4))
    rep = eq.kkt_residual(consumer_problem, zeroed)
    assert rep.primal_equality == pytest.approx(5.0)


def test_duals_respect_sign_and_complementarity(rich_producer):
    sol = eq.solve_qp(rich_producer, np.full(3, 40.0))
    assert sol.ineq_duals.min() >= -1e-12
    slack = rich_producer.ineq_matrix @ sol.primal - rich_producer.ineq_rhs
    assert np.max(np.abs(sol.ineq_duals * slack)) <= 1e-8
    assert slack.max() <= ACT_TOL


# ---- optimality properties --------------------------------------------------

def _random_feasible(problem, rng):
    """Project a random point onto the equality constraints, then pull it
    toward a strictly feasible anchor until the boxes hold."""
    anchor = eq.solve_qp(problem, np.zeros(problem.n_prices)).primal
    x = anchor + rng.standard_normal(problem.n_vars)
    A = problem.eq_matrix
    x -= A.T @ np.linalg.lstsq(A @ A.T, A @ x - problem.eq_rhs, rcond=None)[0]
    for _ in range(60):
        if (problem.ineq_matrix @ x <= problem.ineq_rhs + 1e-12).all():
            return x
        x = anchor + 0.5 * (x - anchor)
    return anchor


@pytest.mark.parametrize("which", ["producer", "consumer"])
def test_returned_point_beats_random_feasible_points(rich_scenario, which):
    if which == "producer":
        problem = eq.assemble_producer(rich_scenario.producers[0], rich_scenario)
    else:
        problem = eq.assemble_consumer(rich_scenario.consumers[0], rich_scenario)
    rng = np.random.default_rng(42)
    prices = 10.0 + rng.standard_normal(3)
    sol = eq.solve_qp(problem, prices)
    for _ in range(100):
        x = _random_feasible(problem, rng)
        assert problem.objective(x, prices) <= sol.objective + 1e-9


def test_concavity_certificate(rich_producer):
    rng = np.random.default_rng(7)
    prices = np.full(3, 9.0)
    for _ in range(25):
        v1 = _random_feasible(rich_producer, rng)
        v2 = _random_feasible(rich_producer, rng)
        theta = rng.uniform(0.05, 0.95)
        lhs = rich_producer.objective(theta * v1 + (1 - theta) * v2, prices)
        rhs = theta * rich_producer.objective(v1, prices) \
            + (1 - theta) * rich_producer.objective(v2, prices)
        assert lhs >= rhs - 1e-12


def test_piecewise_affine_along_a_segment(rich_producer):
    rng = np.random.default_rng(11)
    base = np.full(3, 10.0)
    direction = rng.standard_normal(3)
    ts = np.linspace(0.0, 4.0, 81)
    vols = np.array([eq.best_response_volumes(rich_producer, base + t * direction)
                     for t in ts])
    fingerprints = [eq.response_jacobian(rich_producer, expected_prices=base + t * direction).selection_id
                    for t in ts]
    second = np.abs(np.diff(vols, n=2, axis=0)).max(axis=1)
    same_piece = [fingerprints[k] == fingerprints[k + 1] == fingerprints[k + 2]
                  for k in range(len(ts) - 2)]
    inside = second[same_piece]
    assert inside.size > 10
    assert inside.max() <= 1e-9


def test_fuel_and_emission_positions_stay_off_their_boxes(rich_scenario, rich_producer):
    rng = np.random.default_rng(13)
    ft = rich_scenario.bounds.f_trade
    im = rich_producer.index_map
    for _ in range(20):
        prices = 12.0 + 4.0 * rng.standard_normal(3)
        sol = eq.solve_qp(rich_producer, prices)
        traded = sol.primal[im.n_v : im.n_traded]
        assert np.abs(traded).max() < ft * (1 - 1e-6)


# ---- response jacobians ------------------------------------------------------

def test_consumer_jacobian_closed_form(consumer_problem):
    rj = eq.response_jacobian(consumer_problem, expected_prices=np.array([1.0, 0.0]))
    np.testing.assert_allclose(rj.matrix, [[-0.5, 0.5], [0.5, -0.5]], atol=1e-12)
    eigs = np.linalg.eigvalsh(0.5 * (rj.matrix + rj.matrix.T))
    np.testing.assert_allclose(eigs, [-1.0, 0.0], atol=1e-12)


def test_consumer_closed_form_matches_general_kkt_path(identity):
    # solve the sensitivity system directly and compare with the shortcut
    prob = eq.assemble_consumer(identity.consumers[0], identity)
    sol = eq.solve_qp(prob, np.array([1.0, 0.0]))
    n = prob.n_vars
    C = prob.eq_matrix
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = prob.quadratic
    K[:n, n:] = C.T
    K[n:, :n] = C
    rhs = np.zeros((n + 1, 2))
    rhs[:2, :2] = -np.eye(2)
    direct = np.linalg.solve(K, rhs)[:2, :]
    rj = eq.response_jacobian(prob, sol)
    np.testing.assert_allclose(rj.matrix, direct, atol=1e-12)


def test_uniform_price_shift_does_not_move_consumer(consumer_problem):
    base = np.array([1.0, 0.0])
    v0 = eq.best_response_volumes(consumer_problem, base)
    v1 = eq.best_response_volumes(consumer_problem, base + 3.7)
    np.testing.assert_allclose(v0, v1, atol=1e-10)
    rj = eq.response_jacobian(consumer_problem, expected_prices=base)
    np.testing.assert_allclose(rj.matrix @ np.ones(2), np.zeros(2), atol=1e-12)


def test_jacobians_negative_semidefinite_and_symmetric(rich_scenario):
    rng = np.random.default_rng(5)
    problems = eq.assemble_all(rich_scenario)
    for _ in range(12):
        prices = 11.0 + 3.0 * rng.standard_normal(3)
        for prob in problems:
            rj = eq.response_jacobian(prob, expected_prices=prices)
            assert np.abs(rj.matrix - rj.matrix.T).max() <= 1e-9
            eig_max = np.linalg.eigvalsh(0.5 * (rj.matrix + rj.matrix.T))[-1]
            assert eig_max <= 1e-9


def test_jacobian_matches_finite_differences(rich_scenario):
    rng = np.random.default_rng(19)
    problems = eq.assemble_all(rich_scenario)
    hits = 0
    for _ in range(10):
        prices = 11.0 + 2.0 * rng.standard_normal(3)
        direction = rng.standard_normal(3)
        for prob in problems:
            rj = eq.response_jacobian(prob, expected_prices=prices)
            if rj.on_boundary:
                continue  # kink: one-sided selections differ
            fd = eq.finite_difference_volumes(prob, prices, direction)
            np.testing.assert_allclose(rj.matrix @ direction, fd, atol=1e-5)
            hits += 1
    assert hits >= 10


def test_selection_fingerprint_tracks_active_set(rich_producer):
    low = eq.response_jacobian(rich_producer, expected_prices=np.full(3, 2.0))
    high = eq.response_jacobian(rich_producer, expected_prices=np.full(3, 60.0))
    assert low.selection_id != high.selection_id
