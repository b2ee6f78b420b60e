import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normcontrol.optim import (
    OptimizerConfig,
    OptimizerState,
    Variant,
    adam_moment_update,
    adam_param_update,
    regularize_decay,
    regularize_norm_control,
    sgd_step_coupled_decay,
    step,
)
from normcontrol.params import ParamGroup, ParamStore
from normcontrol.schedules import PiecewiseLinearSpec, ScheduleSpec, TargetNormMode

EPS = np.finfo(np.float64).eps


def one_group_store(vals, initial_norm=None):
    arr = np.asarray(vals, dtype=float)
    return ParamStore(arr, [ParamGroup("w", 0, arr.size, True)], initial_norm=initial_norm)


def mixed_store(controlled, uncontrolled):
    theta = np.concatenate([controlled, uncontrolled])
    return ParamStore(theta, [
        ParamGroup("w", 0, len(controlled), True),
        ParamGroup("u", len(controlled), len(uncontrolled), False),
    ])


class TestMomentUpdate:
    def test_first_step_m(self):
        state = OptimizerState.zeros(1)
        state.t = 1
        m_hat, _ = adam_moment_update(state, np.array([1.0]), OptimizerConfig())
        assert state.m[0] == pytest.approx(0.1, rel=1e-15)
        assert m_hat[0] == 1.0

    def test_first_step_v(self):
        state = OptimizerState.zeros(1)
        state.t = 1
        _, v_hat = adam_moment_update(state, np.array([2.0]), OptimizerConfig())
        assert state.v[0] == pytest.approx(0.004, rel=1e-15)
        assert v_hat[0] == 4.0

    def test_two_steps_constant_gradient(self):
        # hand-unrolled: m2 = 0.9*0.1 + 0.1 = 0.19, bias divisor 1 - 0.81 = 0.19
        state = OptimizerState.zeros(1)
        g = np.array([1.0])
        cfg = OptimizerConfig()
        state.t = 1
        adam_moment_update(state, g, cfg)
        state.t = 2
        m_hat, _ = adam_moment_update(state, g, cfg)
        assert state.m[0] == pytest.approx(0.19, rel=1e-15)
        assert m_hat[0] == pytest.approx(1.0, rel=1e-14)

    def test_requires_incremented_t(self):
        state = OptimizerState.zeros(1)
        with pytest.raises(ValueError, match="incremented"):
            adam_moment_update(state, np.array([1.0]), OptimizerConfig())

    def test_shape_mismatch(self):
        state = OptimizerState.zeros(2)
        state.t = 1
        with pytest.raises(ValueError, match="shape"):
            adam_moment_update(state, np.array([1.0]), OptimizerConfig())

    def test_bias_correction_exact_for_random_gradients(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            g = rng.normal(size=8) * 10.0 ** rng.uniform(-3, 3)
            state = OptimizerState.zeros(8)
            state.t = 1
            m_hat, v_hat = adam_moment_update(state, g, OptimizerConfig())
            assert np.array_equal(m_hat, g)
            assert np.array_equal(v_hat, g * g)


class TestParamUpdate:
    def test_direct_substitution(self):
        store = one_group_store([0.0])
        adam_param_update(store, np.array([1.0]), np.array([1.0]), 1.0, OptimizerConfig())
        assert store.theta[0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-15)

    def test_zero_gradient_leaves_theta(self):
        store = one_group_store([1.5, -2.5])
        adam_param_update(store, np.zeros(2), np.ones(2), 1.0, OptimizerConfig())
        assert list(store.theta) == [1.5, -2.5]

    def test_scalar_evaluation(self):
        store = one_group_store([1.0])
        adam_param_update(store, np.array([4.0]), np.array([4.0]), 0.5, OptimizerConfig())
        expected = 1.0 - 0.5 * 0.001 * 4.0 / (2.0 + 1e-8)
        assert store.theta[0] == pytest.approx(expected, rel=1e-15)
        assert store.theta[0] == pytest.approx(0.999, abs=1e-5)

    def test_applies_to_uncontrolled_groups_too(self):
        store = mixed_store([1.0], [1.0])
        adam_param_update(store, np.ones(2), np.ones(2), 1.0, OptimizerConfig())
        assert store.theta[0] == store.theta[1]  # loss update never masked


class TestRegularizeDecay:
    def test_basic_decay(self):
        store = one_group_store([2.0, -2.0])
        regularize_decay(store, 0.1)
        assert list(store.theta) == [1.8, -1.8]

    def test_zero_rate_identity(self):
        store = one_group_store([1.23])
        regularize_decay(store, 0.0)
        assert store.theta[0] == 1.23

    def test_full_decay(self):
        store = one_group_store([1.0])
        regularize_decay(store, 1.0)
        assert store.theta[0] == 0.0

    def test_skips_uncontrolled(self):
        store = mixed_store([2.0], [2.0])
        regularize_decay(store, 0.5)
        assert store.theta[0] == 1.0
        assert store.theta[1] == 2.0


class TestNormControl:
    def test_full_projection(self):
        store = one_group_store([3.0, 4.0], initial_norm=2.0)
        regularize_norm_control(store, 1.0, 1.0)
        assert store.theta == pytest.approx([1.2, 1.6], rel=2 * EPS)
        assert store.controlled_norm() == 2.0

    def test_r_zero_reduces_to_decay(self):
        store = one_group_store([3.0, 4.0])
        regularize_norm_control(store, 0.0, 0.1)
        assert list(store.theta) == [2.7, 3.6]

    def test_convex_combination_case(self):
        # factor (1-k) + k*target/n = 0.5 + 0.5*(10/5) = 1.5
        store = one_group_store([3.0, 4.0], initial_norm=5.0)
        regularize_norm_control(store, 2.0, 0.5)
        assert list(store.theta) == [4.5, 6.0]
        assert store.controlled_norm() == 7.5
        assert store.controlled_norm() == 0.5 * 5.0 + 0.5 * 10.0

    def test_absolute_target_mode(self):
        store = one_group_store([3.0, 4.0], initial_norm=123.0)
        regularize_norm_control(store, 2.5, 1.0, mode=TargetNormMode.ABSOLUTE)
        assert store.controlled_norm() == pytest.approx(2.5, rel=8 * EPS)

    def test_zero_vector_is_noop_for_positive_target(self):
        store = one_group_store([0.0, 0.0], initial_norm=1.0)
        with pytest.warns(RuntimeWarning, match="norm control skipped"):
            regularize_norm_control(store, 1.5, 0.5)
        assert list(store.theta) == [0.0, 0.0]

    def test_r_zero_on_zero_vector_needs_no_division(self):
        store = one_group_store([0.0], initial_norm=1.0)
        regularize_norm_control(store, 0.0, 0.5)
        assert store.theta[0] == 0.0

    def test_k_out_of_range(self):
        store = one_group_store([1.0])
        with pytest.raises(ValueError, match="k_t"):
            regularize_norm_control(store, 1.0, 1.5)

    def test_uncontrolled_untouched(self):
        store = mixed_store([3.0, 4.0], [7.0])
        regularize_norm_control(store, 2.0, 1.0)
        assert store.theta[2] == 7.0


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 200),
    st.floats(0.0, 1.0, allow_nan=False),
    st.floats(1e-6, 3.0, allow_nan=False),
    st.integers(0, 2**32 - 1),
)
def test_convex_combination_law(dim, k, r, seed):
    rng = np.random.default_rng(seed)
    store = one_group_store(rng.normal(size=dim))
    store.theta += rng.normal(size=dim) * 0.5
    n = store.controlled_norm()
    if n < 1e-30 or store.initial_norm == 0.0:
        return
    target = r * store.initial_norm
    regularize_norm_control(store, r, k)
    assert abs(store.controlled_norm() - ((1 - k) * n + k * target)) <= 1e-10 * max(1.0, target)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 200), st.floats(0.0, 0.999), st.floats(1e-3, 3.0), st.integers(0, 2**32 - 1))
def test_direction_preserved(dim, k, r, seed):
    rng = np.random.default_rng(seed)
    store = one_group_store(rng.normal(size=dim))
    signs = np.sign(store.theta).copy()
    regularize_norm_control(store, r, k)
    assert np.all(np.sign(store.theta) == signs)


class TestCoupledSgd:
    def test_pure_decay_term(self):
        store = one_group_store([1.0])
        sgd_step_coupled_decay(store, np.array([0.0]), 0.01, 0.1)
        assert store.theta[0] == 0.9

    def test_pure_gradient_term(self):
        store = one_group_store([0.0])
        sgd_step_coupled_decay(store, np.array([1.0]), 0.01, 0.1)
        assert store.theta[0] == -0.01

    def test_fused_update(self):
        store = one_group_store([2.0])
        sgd_step_coupled_decay(store, np.array([1.0]), 0.1, 0.5)
        assert store.theta[0] == (1.0 - 0.5) * 2.0 - 0.1 * 1.0
        assert store.theta[0] == 0.9

    def test_uncontrolled_gets_plain_gradient_step(self):
        store = mixed_store([2.0], [2.0])
        sgd_step_coupled_decay(store, np.array([1.0, 1.0]), 0.1, 0.5)
        assert store.theta[0] == 0.9
        assert store.theta[1] == pytest.approx(1.9)


class _EtaTiedKt:
    """Schedules expressing a decay variant as norm-control parameters."""

    target_mode = TargetNormMode.RELATIVE

    def __init__(self, base, alpha0, lam, coupled):
        self.base = base
        self.alpha0 = alpha0
        self.lam = lam
        self.coupled = coupled

    def eta_at(self, t):
        return self.base.eta_at(t)

    def rt_at(self, t):
        return 0.0

    def kt_at(self, t):
        eta = self.base.eta_at(t)
        return eta * self.alpha0 * self.lam if self.coupled else eta * self.lam


def _run_steps(variant, sched, lam, grads):
    dim = grads.shape[1]
    store = one_group_store(np.linspace(-1.0, 1.0, dim) + 0.1)
    state = OptimizerState.zeros(dim)
    cfg = OptimizerConfig(weight_decay=lam, variant=variant)
    for t in range(1, grads.shape[0] + 1):
        step(store, state, grads[t - 1], t, sched, cfg)
    return store.theta


@pytest.mark.parametrize("coupled", [True, False])
def test_step_decay_is_special_case_of_norm_control(coupled):
    rng = np.random.default_rng(11)
    grads = rng.normal(size=(200, 10))
    lam = 0.1
    base = ScheduleSpec(horizon=200)
    decay_variant = Variant.DECAY_COUPLED_LR if coupled else Variant.DECAY_DECOUPLED
    theta_decay = _run_steps(decay_variant, base, lam, grads)
    tied = _EtaTiedKt(base, OptimizerConfig().alpha, lam, coupled)
    theta_nc = _run_steps(Variant.NORM_CONTROL, tied, lam, grads)
    assert np.array_equal(theta_decay, theta_nc)  # bitwise by construction


def test_step_variant_none_is_bare_adam():
    rng = np.random.default_rng(12)
    grads = rng.normal(size=(50, 6))
    base = ScheduleSpec(horizon=50)
    theta_none = _run_steps(Variant.NONE, base, 0.3, grads)

    store = one_group_store(np.linspace(-1.0, 1.0, 6) + 0.1)
    state = OptimizerState.zeros(6)
    cfg = OptimizerConfig()
    for t in range(1, 51):
        state.t = t
        m_hat, v_hat = adam_moment_update(state, grads[t - 1], cfg)
        adam_param_update(store, m_hat, v_hat, base.eta_at(t), cfg)
    assert np.array_equal(theta_none, store.theta)


def test_step_rejects_nonconsecutive_t():
    store = one_group_store([1.0])
    state = OptimizerState.zeros(1)
    with pytest.raises(ValueError, match="consecutive"):
        step(store, state, np.array([0.1]), 5, ScheduleSpec(horizon=10), OptimizerConfig())


def test_step_report_fields():
    store = one_group_store([3.0, 4.0])
    state = OptimizerState.zeros(2)
    sched = ScheduleSpec(horizon=10, rt=PiecewiseLinearSpec.const(1.0),
                         kt=PiecewiseLinearSpec.const(0.5))
    cfg = OptimizerConfig(variant=Variant.NORM_CONTROL)
    report = step(store, state, np.array([0.0, 0.0]), 1, sched, cfg)
    assert report.t == 1 and state.t == 1
    assert report.pre_norm == 5.0
    assert report.eta_t == sched.eta_at(1)
    assert report.r_t == 1.0 and report.k_t == 0.5
    assert report.post_norm == store.controlled_norm()


def test_config_validation():
    with pytest.raises(ValueError, match="beta1"):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ValueError, match="alpha"):
        OptimizerConfig(alpha=0.0)
    with pytest.raises(ValueError, match="weight_decay"):
        OptimizerConfig(weight_decay=-0.1)
