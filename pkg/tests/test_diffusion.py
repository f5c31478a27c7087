import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndif import autodiff as ad
from ndif.autodiff import Tensor
from ndif.diffusion import (
    NoiseSchedule,
    forward_step,
    linear_beta_schedule,
    p_sample_step,
    q_sample,
    sample_unconditional,
    training_loss,
)


def schedule_from_betas(betas) -> NoiseSchedule:
    """Hand-built schedule for examples that are not linear in t."""
    betas = np.asarray(betas, dtype=float)
    alphas = 1.0 - betas
    return NoiseSchedule(len(betas), betas, alphas, np.cumprod(alphas), float(betas[0]), float(betas[-1]))


class ConstantDenoiser:
    def __init__(self, value):
        self.value = value

    def __call__(self, x, t):
        return Tensor(np.broadcast_to(self.value, x.shape).copy())


class OracleDenoiser:
    """Returns the exact noise implied by a fixed clean series x0*."""

    def __init__(self, x0, schedule):
        self.x0 = np.asarray(x0)
        self.schedule = schedule

    def __call__(self, x, t):
        ab = self.schedule.alpha_bar(np.asarray(t)).reshape(-1, 1, 1)
        return Tensor((x.data - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab))


# --- schedule -----------------------------------------------------------------


def test_single_step_schedule():
    s = linear_beta_schedule(1, 0.5, 0.5)
    np.testing.assert_array_equal(s.betas, [0.5])
    np.testing.assert_array_equal(s.alpha_bars, [0.5])


def test_three_step_schedule_products():
    s = linear_beta_schedule(3, 0.1, 0.3)
    np.testing.assert_allclose(s.betas, [0.1, 0.2, 0.3], atol=1e-15)
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.72, 0.504], atol=1e-12)


def test_default_schedule_terminal_signal():
    s = linear_beta_schedule()
    assert s.T == 50
    assert s.alpha_bar(50) < 0.01
    oracle = np.exp(np.sum(np.log1p(-np.linspace(1e-4, 0.25, 50))))
    assert s.alpha_bar(50) == pytest.approx(oracle, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    T=st.integers(1, 300),
    lo=st.floats(1e-5, 0.4),
    span=st.floats(0.0, 0.5),
)
def test_schedule_invariants(T, lo, span):
    s = linear_beta_schedule(T, lo, lo + span)
    assert np.all((s.betas > 0) & (s.betas < 1))
    np.testing.assert_array_equal(s.alphas, 1.0 - s.betas)
    assert s.alpha_bar(0) == 1.0
    for t in range(1, T + 1):
        assert abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) <= 1e-12
    assert np.all(np.diff(s.alpha_bars) < 0)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 1e-4, 1.0)])
def test_schedule_bounds_rejected(args):
    with pytest.raises(ValueError):
        linear_beta_schedule(*args)


def test_schedule_roundtrip_dict():
    s = linear_beta_schedule(20, 1e-3, 0.1)
    s2 = NoiseSchedule.from_dict(s.to_dict())
    assert s2.betas.tobytes() == s.betas.tobytes()


# --- forward process ----------------------------------------------------------


def test_forward_step_examples():
    zero_beta = schedule_from_betas([0.0])
    x = np.array([1.5, -2.0])
    np.testing.assert_array_equal(forward_step(x, 1, zero_beta, np.array([9.0, 9.0])), x)
    near_one = schedule_from_betas([1.0 - 1e-12])
    np.testing.assert_allclose(forward_step(np.zeros(2), 1, near_one, np.array([0.3, -1.0])), [0.3, -1.0], atol=1e-6)
    s = schedule_from_betas([0.19])
    assert forward_step(2.0, 1, s, 1.0) == pytest.approx(2.23589, abs=1e-5)


def test_q_sample_examples():
    s = linear_beta_schedule(4, 0.1, 0.2)
    x0 = np.array([1.0, 2.0])
    np.testing.assert_array_equal(q_sample(x0, 0, s, np.array([5.0, 5.0])), x0)
    # alpha_bar = 0.25 at t=2 for betas (0.5, 0.5)
    s2 = schedule_from_betas([0.5, 0.5])
    assert q_sample(2.0, 2, s2, 1.0) == pytest.approx(1.866025, abs=1e-6)
    tiny = schedule_from_betas([1.0 - 1e-12])
    assert q_sample(3.0, 1, tiny, 0.7) == pytest.approx(0.7, abs=1e-5)


def test_q_sample_per_row_steps():
    s = linear_beta_schedule()
    x0 = np.ones((3, 1, 4))
    noise = np.zeros((3, 1, 4))
    out = q_sample(x0, np.array([0, 10, 50]), s, noise)
    np.testing.assert_allclose(out[:, 0, 0], np.sqrt([1.0, s.alpha_bar(10), s.alpha_bar(50)]))


@pytest.mark.parametrize("t", [1, 5, 25, 50])
def test_forward_marginal_matches_closed_form(t):
    s = linear_beta_schedule()
    rng = np.random.default_rng(t)
    x0 = 0.8
    x = np.full(10_000, x0)
    for k in range(1, t + 1):
        x = forward_step(x, k, s, rng.standard_normal(x.shape))
    ab = s.alpha_bar(t)
    assert abs(x.mean() - np.sqrt(ab) * x0) < 0.02
    assert abs(x.var() / (1.0 - ab) - 1.0) < 0.05


# --- objective ---------------------------------------------------------------


class EchoNoise:
    """Denoiser that recovers the injected noise from a known x0."""

    def __init__(self, x0, schedule):
        self.inner = OracleDenoiser(x0, schedule)

    def __call__(self, x, t):
        return self.inner(x, t)


def test_training_loss_oracle_is_zero():
    s = linear_beta_schedule()
    x0 = np.random.default_rng(0).uniform(-1, 1, (4, 1, 16))
    loss = training_loss(EchoNoise(x0, s), x0, s, np.random.default_rng(1))
    assert float(loss.data) < 1e-20


def test_training_loss_zero_denoiser_is_unit():
    s = linear_beta_schedule()
    x0 = np.zeros((10_000, 1, 1))
    loss = training_loss(ConstantDenoiser(0.0), x0, s, np.random.default_rng(2))
    assert abs(float(loss.data) - 1.0) < 0.05


def test_training_loss_is_differentiable():
    s = linear_beta_schedule(10)
    w = Tensor(np.array([0.3]), requires_grad=True)

    def model(x, t):
        return x * w

    x0 = np.random.default_rng(3).standard_normal((2, 1, 5))
    ad.backward(training_loss(model, x0, s, np.random.default_rng(4)))
    assert w.grad.shape == (1,) and np.isfinite(w.grad).all()


# --- reverse process ---------------------------------------------------------


def test_p_sample_identity_when_alpha_one():
    s = schedule_from_betas([1e-12, 1e-12])
    x = np.array([[[0.5, -1.5]]])
    out = p_sample_step(ConstantDenoiser(0.0), x, 2, s, np.zeros_like(x))
    np.testing.assert_allclose(out, x, rtol=1e-9)


def test_p_sample_posterior_mean_example():
    # alpha_t = 0.96, beta_t = 0.04, alpha_bar_t = 0.5
    alphas = np.array([0.5 / 0.96, 0.96])
    s = NoiseSchedule(2, 1.0 - alphas, alphas, np.array([0.5 / 0.96, 0.5]), 0.0, 0.0)
    out = p_sample_step(ConstantDenoiser(0.2), np.array([[[1.0]]]), 2, s, np.zeros((1, 1, 1)))
    assert out.item() == pytest.approx(1.00907, abs=1e-5)


def test_last_step_adds_no_noise():
    s = linear_beta_schedule()
    x = np.random.default_rng(5).standard_normal((2, 1, 8))
    model = ConstantDenoiser(0.1)
    a = p_sample_step(model, x, 1, s, np.ones_like(x))
    b = p_sample_step(model, x, 1, s, -np.ones_like(x))
    np.testing.assert_array_equal(a, b)


def test_single_step_oracle_inverts_q_sample():
    s = linear_beta_schedule(1, 0.3, 0.3)
    x0 = np.array([[[0.25, -0.5, 0.9, 0.0]]])
    for seed in range(3):
        out = sample_unconditional(OracleDenoiser(x0, s), s, 4, 1, np.random.default_rng(seed))
        np.testing.assert_allclose(out, x0, atol=1e-12)


def test_deterministic_chain_with_oracle_recovers_x0():
    s = linear_beta_schedule()
    x0 = np.random.default_rng(6).uniform(-1, 1, (2, 1, 12))
    out = sample_unconditional(OracleDenoiser(x0, s), s, 12, 2, np.random.default_rng(7), sigma_scale=0.0)
    np.testing.assert_allclose(out, x0, atol=1e-9)


def test_sample_unconditional_shape_and_determinism():
    s = linear_beta_schedule(5)
    model = ConstantDenoiser(0.0)
    a = sample_unconditional(model, s, 8, 3, np.random.default_rng(11))
    b = sample_unconditional(model, s, 8, 3, np.random.default_rng(11))
    assert a.shape == (3, 1, 8)
    assert a.tobytes() == b.tobytes()


def test_sample_unconditional_rejects_bad_length():
    s = linear_beta_schedule(5)
    with pytest.raises(ValueError):
        sample_unconditional(ConstantDenoiser(0.0), s, 10, 1, np.random.default_rng(0), length_divisor=4)


def test_step_out_of_range():
    s = linear_beta_schedule(5)
    with pytest.raises(ValueError):
        p_sample_step(ConstantDenoiser(0.0), np.zeros((1, 1, 4)), 6, s, np.zeros((1, 1, 4)))
