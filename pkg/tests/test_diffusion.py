import math

import numpy as np
import pytest

from oracles import true_noise_round_trip
from xray_ddpm.core import ConfigError, NumericError, ShapeError, make_rng
from xray_ddpm.denoiser import linear_oracle_denoiser
from xray_ddpm.diffusion import (forward_closed_form, forward_kernel, forward_step, fraction_to_step, noise_levels,
                                 reverse_step, sample)
from xray_ddpm.schedule import linear_schedule


class ZeroDenoiser:
    def predict(self, x_t, t):
        return np.zeros_like(x_t)


def test_forward_kernel_zero_beta_is_identity(rng):
    x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    out = forward_kernel(x, 0.0, rng.standard_normal(x.shape).astype(np.float32))
    np.testing.assert_array_equal(out, x)


def test_forward_step_variance_from_zero():
    s = linear_schedule(10, 1e-4, 0.02)
    t = 7
    x = forward_step(np.zeros((1, 1, 1000, 1000), np.float32), t, s, make_rng(3)).astype(np.float64)
    assert abs(x.var() / s.beta[t - 1] - 1) < 0.01


def test_forward_step_deterministic():
    s = linear_schedule(10)
    x = np.full((2, 1, 4, 4), 0.3, np.float32)
    a = forward_step(x, 4, s, make_rng(11))
    b = forward_step(x, 4, s, make_rng(11))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("t", [0, 11])
def test_forward_step_index_error(t):
    with pytest.raises(IndexError):
        forward_step(np.zeros((1, 1, 2, 2), np.float32), t, linear_schedule(10), make_rng(0))


def test_closed_form_small_t_tail_bound():
    s = linear_schedule(50, 1e-4, 0.02)
    x0 = make_rng(2).uniform(-1, 1, (4, 1, 8, 8)).astype(np.float32)
    fs = forward_closed_form(x0, 1, s, make_rng(5))
    assert np.abs(fs.x_t - x0).max() <= 5 * math.sqrt(1 - s.alpha_bar[0])


def test_closed_form_zero_signal_bitwise():
    s = linear_schedule(20)
    t = np.array([1, 5, 20])
    fs = forward_closed_form(np.zeros((3, 1, 4, 4), np.float32), t, s, make_rng(8))
    expected = s.sqrt_one_minus_alpha_bar[t - 1].astype(np.float32).reshape(-1, 1, 1, 1) * fs.eps
    assert fs.x_t.tobytes() == expected.tobytes()
    assert fs.x_t.shape == fs.eps.shape
    np.testing.assert_array_equal(fs.t, t)


def test_closed_form_moments_match_analytic():
    s = linear_schedule(10, 1e-4, 0.02)
    x0 = np.full((200_000, 1, 1, 1), 0.6, np.float32)
    x = forward_closed_form(x0, 10, s, make_rng(4)).x_t.astype(np.float64)
    assert abs(x.mean() - 0.6 * s.sqrt_alpha_bar[9]) < 5 * math.sqrt((1 - s.alpha_bar[9]) / x.size)
    assert abs(x.var() / (1 - s.alpha_bar[9]) - 1) < 0.02


def test_closed_form_index_error_and_domain_warning(caplog):
    s = linear_schedule(10)
    with pytest.raises(IndexError):
        forward_closed_form(np.zeros((2, 1, 2, 2), np.float32), [1, 11], s, make_rng(0))
    with caplog.at_level("WARNING"):
        fs = forward_closed_form(np.full((1, 1, 2, 2), 3.0, np.float32), 2, s, make_rng(0))
    assert np.all(np.isfinite(fs.x_t))
    assert "outside [-1, 1]" in caplog.text


def test_round_trip_recovers_x0():
    s = linear_schedule(50, 1e-4, 0.02)
    x0 = make_rng(1).uniform(-1, 1, (3, 1, 8, 8)).astype(np.float32)
    assert np.abs(true_noise_round_trip(x0, s, make_rng(2)) - x0).max() < 1e-3


def test_reverse_last_step_deterministic(rng):
    s = linear_schedule(10)
    x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    e = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    a = reverse_step(x, 1, e, s, make_rng(1))
    b = reverse_step(x, 1, e, s, make_rng(2))
    assert a.tobytes() == b.tobytes()


def test_reverse_identity_limit(rng):
    from xray_ddpm.schedule import from_betas

    s = from_betas([1e-10, 1e-10, 1e-10])
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    out = reverse_step(x, 3, np.zeros_like(x), s, rng)
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_reverse_shape_mismatch():
    with pytest.raises(ShapeError):
        reverse_step(np.zeros((1, 1, 2, 2)), 2, np.zeros((1, 1, 2, 3)), linear_schedule(5), make_rng(0))


def test_sample_shape_range_and_determinism(smoke_schedule):
    a = sample(ZeroDenoiser(), (3, 1, 4, 4), smoke_schedule, make_rng(5))
    b = sample(ZeroDenoiser(), (3, 1, 4, 4), smoke_schedule, make_rng(5))
    assert a.shape == (3, 1, 4, 4)
    assert np.all(np.isfinite(a)) and a.min() >= -1 and a.max() <= 1
    assert a.tobytes() == b.tobytes()


def test_sample_does_not_clamp_intermediates(smoke_schedule):
    seen = []
    out = sample(ZeroDenoiser(), (4, 1, 8, 8), smoke_schedule, make_rng(0),
                 on_step=lambda t, x: seen.append((t, x.copy())))
    assert [t for t, _ in seen] == list(range(smoke_schedule.T, 0, -1))
    assert max(np.abs(x).max() for _, x in seen) > 1.0
    np.testing.assert_array_equal(out, np.clip(seen[-1][1], -1, 1))


def test_sample_with_oracle_converges():
    s = linear_schedule(50, 1e-4, 0.02)
    v = make_rng(9).uniform(-0.8, 0.8, (1, 1, 4, 4)).astype(np.float32)
    out = sample(linear_oracle_denoiser(v, s), (64, 1, 4, 4), s, make_rng(10))
    assert np.abs(out.mean(axis=0) - v[0]).max() < 0.15


def test_sample_non_finite_denoiser_names_step(smoke_schedule):
    class Bad:
        def predict(self, x, t):
            out = np.zeros_like(x)
            if t[0] == 37:
                out[0, 0, 0, 0] = np.nan
            return out

    with pytest.raises(NumericError, match="t=37"):
        sample(Bad(), (1, 1, 4, 4), smoke_schedule, make_rng(0))


def test_sample_shape_mismatch(smoke_schedule):
    class Wrong:
        def predict(self, x, t):
            return np.zeros((1, 1, 2, 2), np.float32)

    with pytest.raises(ShapeError):
        sample(Wrong(), (1, 1, 4, 4), smoke_schedule, make_rng(0))


def test_fraction_to_step():
    s = linear_schedule(1000)
    assert fraction_to_step(0.25, s) == 250
    assert fraction_to_step(1.0, s) == 1000
    assert fraction_to_step(1e-6, s) == 1
    assert fraction_to_step(0.5, linear_schedule(5)) == 3
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            fraction_to_step(bad, s)


def test_full_noise_decorrelates():
    from xray_ddpm.synthetic import shapes_corpus

    x0 = shapes_corpus(8, 64, seed=2)
    s = linear_schedule(1000)
    levels = noise_levels(x0, [0.25, 1.0], s, make_rng(0))
    assert [t for t, _ in levels] == [250, 1000]
    for orig, quarter, full in zip(x0, levels[0][1], levels[1][1]):
        sd = orig.std()
        expected = math.sqrt(s.alpha_bar[249]) * sd / math.sqrt(s.alpha_bar[249] * sd**2 + 1 - s.alpha_bar[249])
        assert abs(np.corrcoef(orig.ravel(), quarter.ravel())[0, 1] - expected) < 0.05
        assert abs(np.corrcoef(orig.ravel(), full.ravel())[0, 1]) < 0.1
