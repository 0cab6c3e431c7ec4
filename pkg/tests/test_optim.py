import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from goalphs import models
from goalphs.errors import ConfigError, ContractError, DivergenceError, NumericInputError
from goalphs.optim import (GoalPolicy, Mode, Monitor, PhsConfig, PhsState, StepBudget,
                           apply_braking, goal_trigger, hamiltonian, is_stable, phs_step,
                           run_optimizer, sgd_step, spectral_radius)


def gd_trajectory(theta0, curvature, step, n):
    """Plain-Python gradient descent on 0.5 * curvature * x**2 (oracle)."""
    xs = [float(theta0)]
    for _ in range(n):
        xs.append(xs[-1] - step * curvature * xs[-1])
    return xs


# -- sgd_step -----------------------------------------------------------------

def test_sgd_step_linear_arithmetic():
    np.testing.assert_allclose(sgd_step([1.0, 1.0], [2.0, 2.0], 0.1), [0.8, 0.8])


def test_sgd_step_fixed_point():
    assert sgd_step([0.0], [0.0], 0.1).tolist() == [0.0]


def test_sgd_quadratic_contraction():
    f = models.quadratic(1)
    theta = np.array([1.0])
    for k in range(1, 101):
        theta = sgd_step(theta, f.grad(theta), 0.1)
        assert abs(theta[0]) == pytest.approx(0.9 ** k, rel=1e-12)
    oracle = gd_trajectory(1.0, 1.0, 0.1, 100)
    assert theta[0] == pytest.approx(oracle[-1], rel=1e-12)


def test_sgd_step_errors():
    with pytest.raises(ContractError):
        sgd_step([1.0, 2.0], [1.0], 0.1)
    with pytest.raises(NumericInputError):
        sgd_step([1.0], [np.nan], 0.1)


# -- phs_step -----------------------------------------------------------------

@pytest.mark.parametrize("friction", [0.0, 0.3, 50.0])
def test_phs_step_from_rest(friction):
    state = PhsState([0.5, -2.0])
    grad = np.array([1.5, -0.25])
    nxt = phs_step(state, grad, PhsConfig(0.1, 2.0, friction))
    np.testing.assert_array_equal(nxt.theta, state.theta)
    np.testing.assert_allclose(nxt.momentum, -0.1 * grad)
    assert nxt.step == 1


def test_phs_step_ballistic():
    nxt = phs_step(PhsState([0.0], [1.0]), np.zeros(1), PhsConfig(0.1, 1.0, 0.0))
    assert nxt.theta[0] == pytest.approx(0.1)
    assert nxt.momentum[0] == 1.0


def test_phs_step_reads_old_momentum_in_both_updates():
    rng = np.random.default_rng(3)
    for _ in range(20):
        th, p, g = rng.normal(size=(3, 4))
        a, m, gam = rng.uniform(0.01, 0.5), rng.uniform(0.1, 3), rng.uniform(0, 2)
        # order 1: theta first
        th1 = th + a / m * p
        p1 = p - a * gam / m * p - a * g
        # order 2: momentum first, theta still from the old p
        p2 = p - a * gam / m * p - a * g
        th2 = th + a / m * p
        out = phs_step(PhsState(th, p), g, PhsConfig(a, m, gam))
        np.testing.assert_array_equal(out.theta, th1)
        np.testing.assert_array_equal(out.theta, th2)
        np.testing.assert_array_equal(out.momentum, p1)
        np.testing.assert_array_equal(out.momentum, p2)


def test_phs_step_errors():
    with pytest.raises(ContractError):
        phs_step(PhsState([0.0, 1.0]), np.zeros(3), PhsConfig(0.1))
    with pytest.raises(NumericInputError):
        phs_step(PhsState([0.0]), np.array([np.inf]), PhsConfig(0.1))
    with pytest.raises(ContractError):
        PhsState([0.0, 1.0], [0.0])
    with pytest.raises(NumericInputError):
        PhsState([np.nan])


def test_viscous_limit_500_steps():
    f = models.quadratic(1)
    cfg = PhsConfig(0.01, 1.0, 100.0)
    state = PhsState([1.0])
    phs = []
    for _ in range(500):
        state = phs_step(state, f.grad(state.theta), cfg)
        phs.append(state.theta[0])
    burn = math.ceil(10 * cfg.mass / (cfg.alpha * cfg.friction))
    gd = gd_trajectory(phs[burn - 1], 1.0, cfg.alpha / cfg.friction, 500 - burn)
    for a, b in zip(phs[burn - 1:], gd):
        assert abs(a - b) <= 1e-3 * abs(b)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-2, 100.0), st.floats(0.0, 100.0),
       st.floats(-0.9, 0.9))
def test_zero_momentum_critical_points_are_fixed(alpha, mass, friction, offset):
    f = models.double_well(offset)
    for crit in f.stationary_points():
        theta = np.array([crit])
        # polish the root so the gradient vanishes to rounding
        for _ in range(3):
            x = theta[0]
            theta[0] = x - f.grad(theta)[0] / (12 * x * x - 4)
        state = PhsState(theta, np.zeros(1))
        nxt = phs_step(state, f.grad(theta), PhsConfig(alpha, mass, friction))
        assert abs(nxt.theta[0] - theta[0]) == 0.0
        assert abs(nxt.momentum[0]) <= alpha * 1e-14


def test_zero_momentum_fixed_point_exact_quadratic():
    f = models.quadratic(3, [1.0, 2.0, 5.0])
    state = PhsState(np.zeros(3))
    nxt = phs_step(state, f.grad(state.theta), PhsConfig(0.3, 0.7, 1.1))
    assert np.all(nxt.theta == 0) and np.all(nxt.momentum == 0)


# -- energy -------------------------------------------------------------------

def test_hamiltonian_examples():
    e = hamiltonian(PhsState([1.0, 2.0]), 0.7, 1.0)
    assert (e.kinetic, e.potential, e.total) == (0.0, 0.7, 0.7)
    e = hamiltonian(PhsState([0.0, 0.0], [3.0, 4.0]), 0.0, 2.0)
    assert e.kinetic == 6.25 and e.total == 6.25
    with pytest.raises(NumericInputError):
        hamiltonian(PhsState([0.0]), float("nan"), 1.0)


def test_energy_total_is_sum():
    rng = np.random.default_rng(0)
    for _ in range(50):
        e = hamiltonian(PhsState(rng.normal(size=3), rng.normal(size=3)), rng.normal(), 0.3)
        assert e.total == e.kinetic + e.potential and e.kinetic >= 0


def test_first_step_from_rest_gains_kinetic_energy():
    # the explicit update leaves theta in place and creates momentum -alpha*grad
    f = models.quadratic(1)
    s0 = PhsState([1.0])
    s1 = phs_step(s0, f.grad(s0.theta), PhsConfig(0.01, 1.0, 1.0))
    h0 = hamiltonian(s0, f.loss(s0.theta), 1.0).total
    h1 = hamiltonian(s1, f.loss(s1.theta), 1.0).total
    assert h1 - h0 == pytest.approx(0.5 * 0.01 ** 2, rel=1e-9)


def test_staggered_energy_is_monotone():
    # pairing p_k with L(theta_{k+1}) yields a non-increasing energy sequence
    f = models.quadratic(1)
    cfg = PhsConfig(0.01, 1.0, 1.0)
    s = PhsState([1.0])
    energies = []
    for _ in range(1000):
        nxt = phs_step(s, f.grad(s.theta), cfg)
        energies.append(s.momentum @ s.momentum / 2 + f.loss(nxt.theta))
        s = nxt
    assert np.all(np.diff(energies) <= 1e-12)


@pytest.mark.parametrize("alpha", [1e-4, 1e-3, 5e-3, 1e-2])
def test_frictionless_energy_drift_is_order_alpha(alpha):
    # unit quadratic, gamma = 0: each step scales |(theta, p)|^2 by (1 + alpha^2),
    # so the relative drift after N steps is (1 + alpha^2)^N - 1 <= (e - 1) alpha^2 N
    # and for alpha <= N**-0.5 this is at most C * alpha with C = (e - 1) sqrt(N).
    n = 10_000
    f = models.quadratic(1)
    cfg = PhsConfig(alpha, 1.0, 0.0)
    s = PhsState([1.0])
    h0 = hamiltonian(s, f.loss(s.theta), 1.0).total
    for _ in range(n):
        s = phs_step(s, f.grad(s.theta), cfg)
    drift = hamiltonian(s, f.loss(s.theta), 1.0).total / h0 - 1
    assert drift == pytest.approx((1 + alpha ** 2) ** n - 1, rel=1e-8)
    assert 0 < drift < (math.e - 1) * math.sqrt(n) * alpha


# -- goal policy ----------------------------------------------------------------

def test_goal_trigger_examples():
    pol = GoalPolicy(0.65, 49)
    assert not goal_trigger(0.36, 1.0, pol)
    assert goal_trigger(0.34, 1.0, pol)
    assert pol.latched
    assert not goal_trigger(0.0, 1.0, pol)


def test_threshold_modes():
    assert GoalPolicy(0.65, 2).threshold(2.0) == pytest.approx(0.7)
    assert GoalPolicy(0.15, 2, Mode.ABSOLUTE_FRACTION).threshold(2.0) == pytest.approx(0.3)


def test_goal_policy_validation():
    with pytest.raises(ConfigError):
        GoalPolicy(0.5, 1.0)
    with pytest.raises(ConfigError):
        GoalPolicy(1.0, 5.0)
    with pytest.raises(ConfigError):
        goal_trigger(0.1, 0.0, GoalPolicy(0.5, 5))
    with pytest.raises(ConfigError):
        Monitor("weekly")


def test_latch_cannot_be_reset():
    pol = GoalPolicy(0.5, 5)
    goal_trigger(0.0, 1.0, pol)
    with pytest.raises(ContractError):
        pol.latched = False


def test_apply_braking_examples():
    pol = GoalPolicy(0.65, 49)
    with pytest.raises(ContractError):
        apply_braking(PhsConfig(0.1, 1.0, 0.1), pol)
    pol.latched = True
    assert apply_braking(PhsConfig(0.1, 100, 0.1), pol).friction == pytest.approx(4.9)
    pol50 = GoalPolicy(0.15, 50, latched=True)
    assert apply_braking(PhsConfig(0.1, 10, 0.1), pol50).friction == pytest.approx(5.0)


@given(st.floats(1e-6, 10), st.floats(1e-6, 100), st.floats(0, 100), st.floats(1.0001, 1000))
def test_braking_changes_only_friction(alpha, mass, friction, factor):
    cfg = PhsConfig(alpha, mass, friction)
    out = apply_braking(cfg, GoalPolicy(0.5, factor, latched=True))
    assert out.alpha == cfg.alpha and out.mass == cfg.mass
    assert out.friction == friction * factor


def test_config_validation_lists_fields():
    with pytest.raises(ConfigError) as exc:
        PhsConfig(-1.0, 0.0, -2.0)
    assert exc.value.fields == ["alpha", "mass", "friction"]


# -- stability -----------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-3, 10.0), st.floats(0.0, 50.0), st.floats(0.1, 100))
def test_jury_conditions_match_spectral_radius(alpha, mass, friction, lam):
    cfg = PhsConfig(alpha, mass, friction)
    rho = spectral_radius(cfg, lam)
    if abs(rho - 1) > 1e-9:
        assert is_stable(cfg, lam) == (rho < 1)


def test_stability_against_brute_force_growth():
    f = models.quadratic(1, [10.0])
    for cfg, expect in ((PhsConfig(0.01, 1.0, 1.0), True),     # damped
                        (PhsConfig(0.01, 1.0, 0.0), False),    # explicit Euler gains energy
                        (PhsConfig(0.5, 0.01, 1.0), False)):   # alpha*gamma/m = 50
        s = PhsState([1.0])
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for _ in range(3000):
                    s = phs_step(s, f.grad(s.theta), cfg)
            bounded = np.hypot(s.theta[0], s.momentum[0]) < 1.0
        except NumericInputError:
            bounded = False
        assert bounded == expect
        assert is_stable(cfg, 10.0) == expect


# -- run loop ------------------------------------------------------------------

def _dw():
    return models.NoisyGradient(models.double_well(0.3), 0.05)


def test_run_determinism():
    kw = dict(schedule=StepBudget(steps=500), rng_seed=11)
    a = run_optimizer(_dw(), PhsState([1.6]), PhsConfig(0.01, 1, 0.2), GoalPolicy(0.95, 10), **kw)
    b = run_optimizer(_dw(), PhsState([1.6]), PhsConfig(0.01, 1, 0.2), GoalPolicy(0.95, 10), **kw)
    assert a.to_dict() == b.to_dict()


def test_run_does_not_touch_caller_policy():
    pol = GoalPolicy(0.95, 10)
    rec = run_optimizer(_dw(), PhsState([1.6]), PhsConfig(0.01, 1, 0.2), pol,
                        StepBudget(steps=3000))
    assert rec.trigger_step is not None and not pol.latched


def test_double_well_basins():
    dw = models.double_well(0.3)
    left, _, right = dw.stationary_points()
    sgd = run_optimizer(dw, PhsState([1.2]), PhsConfig(0.01), None, StepBudget(steps=4000),
                        method="sgd")
    assert sgd.final_state.theta[0] == pytest.approx(right, abs=1e-6)
    phs = run_optimizer(dw, PhsState([1.6]), PhsConfig(0.01, 1.0, 0.2), None,
                        StepBudget(steps=15000))
    assert phs.final_state.theta[0] == pytest.approx(left, abs=1e-3)
    goal = run_optimizer(dw, PhsState([1.6]), PhsConfig(0.01, 1.0, 0.2), GoalPolicy(0.95, 10),
                         StepBudget(steps=15000))
    # the goal is only reachable in the deep well, so braking happens after the escape
    k = goal.trigger_step
    assert k is not None
    assert all(f == 0.2 for f in goal.frictions[:k])
    assert all(f == pytest.approx(2.0) for f in goal.frictions[k:])
    assert goal.final_loss <= phs.final_loss + 1e-12


def test_sgd_rejects_policy_and_mismatched_init():
    with pytest.raises(ConfigError):
        run_optimizer(models.quadratic(1), PhsState([1.0]), PhsConfig(0.1), GoalPolicy(0.5, 5),
                      StepBudget(steps=3), method="sgd")
    with pytest.raises(ContractError):
        run_optimizer(models.quadratic(2), PhsState([1.0]), PhsConfig(0.1))


def test_divergence_keeps_partial_record():
    f = models.quadratic(1, [1.0])
    with pytest.raises(DivergenceError) as exc:
        run_optimizer(f, PhsState([1.0]), PhsConfig(0.5, 0.001, 1.0), None,
                      StepBudget(steps=5000))
    rec = exc.value.record
    assert rec.diverged and rec.losses and rec.diagnostic
    assert len(rec.losses) < 5000


def test_step_budget_validation():
    with pytest.raises(ConfigError):
        StepBudget()
    with pytest.raises(ConfigError):
        StepBudget(steps=10, epochs=1)
    with pytest.raises(ConfigError):
        StepBudget(steps=0)
