import numpy as np
import pytest

from sliceplan.errors import UnsupportedInstanceError
from sliceplan.exact_ot import ot_assignment
from sliceplan.measures import DiscreteMeasure, pairwise_costs, uniform_measure
from sliceplan.slicer import LinearSlicer, PerturbationConfig, random_linear_slicer, random_mlp_slicer
from sliceplan.stp import estimate_J_eta, lift_plan, nw_corner, stp_value, two_branch_plan


def crossed_pair():
    return uniform_measure([[0, 0], [1, 1]]), uniform_measure([[0, 1], [1, 0]])


def test_nw_corner_square_is_diagonal():
    t = nw_corner(3, 3)
    assert t.triples() == [(0, 0, pytest.approx(1 / 3)), (1, 1, pytest.approx(1 / 3)), (2, 2, pytest.approx(1 / 3))]


def test_nw_corner_forced_split():
    assert nw_corner(2, 4).triples() == [
        (0, 0, 0.25),
        (0, 1, 0.25),
        (1, 2, 0.25),
        (1, 3, 0.25),
    ]


def test_nw_corner_hand_run_3x2():
    assert nw_corner(3, 2).triples() == [
        (0, 0, pytest.approx(1 / 3)),
        (1, 0, pytest.approx(1 / 6)),
        (1, 1, pytest.approx(1 / 6)),
        (2, 1, pytest.approx(1 / 3)),
    ]


def test_nw_corner_staircase_and_marginals():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = rng.integers(1, 12, size=2)
        t = nw_corner(int(n), int(m))
        dense = t.dense()
        np.testing.assert_allclose(dense.sum(axis=1), 1.0 / n, atol=1e-12)
        np.testing.assert_allclose(dense.sum(axis=0), 1.0 / m, atol=1e-12)
        both = np.array(t.triples())
        assert np.all(np.diff(both[:, 0]) >= 0) and np.all(np.diff(both[:, 1]) >= 0)


def test_lift_crossed_pair_cost_one():
    mu, nu = crossed_pair()
    res = lift_plan(LinearSlicer([1.0, 0.0]), mu, nu)
    assert res.cost == pytest.approx(1.0, abs=1e-12)
    assert stp_value(res) == pytest.approx(1.0, abs=1e-12)


def test_lift_identity_zero_cost():
    rng = np.random.default_rng(1)
    mu = uniform_measure(rng.standard_normal((8, 2)))
    res = lift_plan(LinearSlicer([0.3, 0.7]), mu, mu)
    assert res.cost == 0.0
    np.testing.assert_allclose(res.plan.entries, np.eye(8) / 8, atol=1e-15)


def test_lift_upper_bounds_exact_ot():
    rng = np.random.default_rng(2)
    for k in range(10):
        mu = uniform_measure(rng.standard_normal((6, 2)))
        nu = uniform_measure(rng.standard_normal((6, 2)))
        f = random_linear_slicer(2, seed=k)
        assert lift_plan(f, mu, nu).cost >= ot_assignment(mu, nu).cost - 1e-9


def test_lift_symmetry():
    rng = np.random.default_rng(3)
    mu = uniform_measure(rng.standard_normal((6, 2)))
    nu = uniform_measure(rng.standard_normal((9, 2)))
    f = random_linear_slicer(2, seed=5)
    assert lift_plan(f, mu, nu).cost == pytest.approx(lift_plan(f, nu, mu).cost, abs=1e-10)


def test_lift_requires_uniform_weights():
    mu = DiscreteMeasure(np.zeros((2, 2)), np.array([0.7, 0.3]))
    with pytest.raises(UnsupportedInstanceError):
        lift_plan(LinearSlicer([1.0, 0.0]), mu, uniform_measure(np.zeros((2, 2))))


def test_two_branch_hard_limit():
    rng = np.random.default_rng(4)
    mu = uniform_measure(rng.standard_normal((5, 2)))
    nu = uniform_measure(rng.standard_normal((5, 2)))
    f = LinearSlicer([0.2, -0.9])
    plan, cost, _ = two_branch_plan(f, mu, nu, alpha=1e-8)
    hard = lift_plan(f, mu, nu)
    assert np.max(np.abs(plan.entries - hard.plan.entries)) < 1e-6
    assert cost == pytest.approx(hard.cost, abs=1e-6)


def test_two_branch_marginals_any_alpha():
    rng = np.random.default_rng(5)
    mu = uniform_measure(rng.standard_normal((6, 2)))
    nu = uniform_measure(rng.standard_normal((4, 2)))
    for alpha in (0.05, 0.5, 5.0):
        plan, _, _ = two_branch_plan(LinearSlicer([1.0, 0.5]), mu, nu, alpha=alpha)
        np.testing.assert_allclose(plan.entries.sum(axis=1), 1 / 6, atol=1e-9)
        np.testing.assert_allclose(plan.entries.sum(axis=0), 1 / 4, atol=1e-9)


@pytest.mark.parametrize("variant", ["linear", "mlp"])
def test_two_branch_gradient_finite_differences(variant):
    rng = np.random.default_rng(6)
    n = 6
    mu = uniform_measure(rng.standard_normal((n, 2)))
    nu = uniform_measure(rng.standard_normal((n, 2)))
    f = random_linear_slicer(2, 0) if variant == "linear" else random_mlp_slicer(2, (5, 4), seed=0)
    _, _, grad = two_branch_plan(f, mu, nu, alpha=0.4)
    p0 = f.get_params()
    h = 1e-5
    fd = np.zeros_like(p0)
    for j in range(p0.size):
        for sign in (1.0, -1.0):
            p = p0.copy()
            p[j] += sign * h
            f.set_params(p)
            _, c, _ = two_branch_plan(f, mu, nu, alpha=0.4)
            fd[j] += sign * c
        fd[j] /= 2 * h
    f.set_params(p0)
    assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-4


def test_jeta_zero_eta_is_exact():
    mu, nu = crossed_pair()
    f = LinearSlicer([1.0, 0.0])
    mean, se = estimate_J_eta(f, mu, nu, PerturbationConfig(eta=0.0, num_samples=50, seed=0))
    assert mean == lift_plan(f, mu, nu).cost
    assert se == 0.0


def test_jeta_feasibility_lower_bound():
    rng = np.random.default_rng(7)
    mu = uniform_measure(rng.standard_normal((8, 2)))
    nu = uniform_measure(rng.standard_normal((8, 2)))
    ot = ot_assignment(mu, nu).cost
    f = random_linear_slicer(2, 3)
    for eta in (0.5, 0.1, 0.02):
        mean, _ = estimate_J_eta(f, mu, nu, PerturbationConfig(eta=eta, num_samples=200, seed=1))
        assert mean >= ot - 1e-9


def test_jeta_deterministic_given_seed():
    rng = np.random.default_rng(8)
    mu = uniform_measure(rng.standard_normal((6, 2)))
    nu = uniform_measure(rng.standard_normal((6, 2)))
    f = random_linear_slicer(2, 1)
    cfg = PerturbationConfig(eta=0.2, num_samples=64, seed=11)
    a = estimate_J_eta(f, mu, nu, cfg)
    b = estimate_J_eta(f, mu, nu, cfg)
    assert a == b


def test_stp_value_wrapper():
    mu, nu = crossed_pair()
    res = lift_plan(LinearSlicer([1.0, 0.0]), mu, nu, p=2.0)
    assert stp_value(res) == res.cost ** 0.5
    res4 = lift_plan(LinearSlicer([1.0, 0.0]), mu, nu, p=4.0)
    assert stp_value(res4) == pytest.approx(res4.cost ** 0.25)
