import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from remixit.exceptions import SignalError
from remixit.signal import (NormStats, StftConfig, check_batch, denormalize, istft, istft_adjoint, mix_at_snr,
                            mix_plain, mixture_consistency, normalize, stft)

finite = st.floats(-10, 10, allow_nan=False, width=64)


def test_normalize_constant_signal_uses_std_floor():
    y, stats = normalize([1.0, 1.0, 1.0, 1.0])
    np.testing.assert_array_equal(y, np.zeros(4))
    assert stats == NormStats(1.0, 1e-8)


def test_normalize_population_std():
    y, stats = normalize([0.0, 2.0])
    np.testing.assert_allclose(y, [-1.0, 1.0])
    assert stats == NormStats(1.0, 1.0)


@given(arrays(np.float64, st.integers(1, 64), elements=finite))
def test_normalize_round_trip(x):
    y, stats = normalize(x)
    np.testing.assert_allclose(denormalize(y, stats), x, atol=1e-6)


@pytest.mark.parametrize("y, stats, expected", [
    ([0.0, 0.0], NormStats(2.0, 3.0), [2.0, 2.0]),
    ([-1.0, 1.0], NormStats(1.0, 1.0), [0.0, 2.0]),
    ([0.3, -7.0], NormStats(0.0, 1.0), [0.3, -7.0]),
])
def test_denormalize_examples(y, stats, expected):
    np.testing.assert_allclose(denormalize(y, stats), expected)


def test_normalize_rejects_bad_input():
    with pytest.raises(SignalError):
        normalize([])
    with pytest.raises(SignalError):
        normalize([1.0, np.nan])
    with pytest.raises(SignalError):
        normalize(np.zeros((2, 2)))


@pytest.mark.parametrize("ps, snr_db, gain", [(1.0, 0.0, 1.0), (4.0, 0.0, 2.0), (1.0, 20.0, 0.1)])
def test_mix_at_snr_gain(ps, snr_db, gain):
    s = np.array([np.sqrt(ps), 0.0])
    n = np.array([0.0, 1.0])
    m, n_scaled = mix_at_snr(s, n, snr_db)
    np.testing.assert_allclose(n_scaled, gain * n)
    np.testing.assert_allclose(m, s + n_scaled)


@given(st.floats(-30, 30), st.integers(0, 2**31 - 1))
def test_mix_at_snr_hits_target(snr_db, seed):
    r = np.random.default_rng(seed)
    s, n = r.standard_normal(50), r.standard_normal(50)
    _, n_scaled = mix_at_snr(s, n, snr_db)
    assert abs(10 * np.log10(s @ s / (n_scaled @ n_scaled)) - snr_db) < 1e-6


def test_mix_at_snr_degenerate():
    with pytest.raises(SignalError, match="degenerate source"):
        mix_at_snr([1.0, 2.0], [0.0, 0.0], 0.0)
    with pytest.raises(SignalError, match="length mismatch"):
        mix_at_snr([1.0, 2.0], [1.0], 0.0)


def test_mix_plain_examples():
    np.testing.assert_array_equal(mix_plain([1, 0], [0, 1]), [1, 1])
    x = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(mix_plain(x, -x), np.zeros(3))
    np.testing.assert_array_equal(mix_plain([0.5], [0.25]), [0.75])


def test_stft_config_validation():
    with pytest.raises(ValueError):
        StftConfig(fft_size=32, hop=0)
    with pytest.raises(ValueError):
        StftConfig(fft_size=32, hop=64)


def test_stft_zero_and_linearity(rng):
    cfg = StftConfig(64, 16)
    assert not np.any(stft(np.zeros(300), cfg))
    x = rng.standard_normal(300)
    np.testing.assert_allclose(stft(-2.5 * x, cfg), -2.5 * stft(x, cfg), atol=1e-12)


def test_stft_bin_center_sinusoid_concentrates_energy():
    cfg = StftConfig(256, 64)
    k = 20
    t = np.arange(4096)
    spec = stft(np.cos(2 * np.pi * k * t / cfg.fft_size), cfg)
    power = np.abs(spec[..., 8:-8]) ** 2                 # interior frames, away from padding
    share = power[k] / power.sum(axis=0)
    assert share.min() >= 0.6                               # Hann main lobe spans k-1..k+1
    lobe = power[k - 1:k + 2].sum(axis=0) / power.sum(axis=0)
    assert lobe.min() >= 0.9


@pytest.mark.parametrize("fft_size, hop", [(512, 128), (32, 8), (64, 16), (64, 32)])
def test_istft_reconstructs(rng, fft_size, hop):
    cfg = StftConfig(fft_size, hop)
    x = rng.standard_normal(1000)
    y = istft(stft(x, cfg), cfg, len(x))
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-5


def test_istft_zero_and_linearity(rng):
    cfg = StftConfig(64, 16)
    s1 = stft(rng.standard_normal(400), cfg)
    s2 = stft(rng.standard_normal(400), cfg)
    assert not np.any(istft(np.zeros_like(s1), cfg, 400))
    np.testing.assert_allclose(istft(s1 + s2, cfg, 400), istft(s1, cfg, 400) + istft(s2, cfg, 400), atol=1e-12)


def test_istft_adjoint_matches_inner_product(rng):
    # <istft(mask * X), g> == sum(mask * Re(X * adjoint(g))) for real masks
    cfg = StftConfig(32, 8)
    x = rng.standard_normal(200)
    spec = stft(x, cfg)
    mask = rng.uniform(size=spec.shape)
    g = rng.standard_normal(200)
    lhs = istft(mask * spec, cfg, 200) @ g
    rhs = np.sum(mask * np.real(spec * istft_adjoint(g, cfg, spec.shape[-1])))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_mixture_consistency_examples():
    est = np.array([[[0.5, 0.5]], [[0.25, 0.25]]])
    out = mixture_consistency(est, np.array([[1.0, 1.0]]))
    np.testing.assert_allclose(out[0, 0], [0.625, 0.625])
    np.testing.assert_allclose(out[1, 0], [0.375, 0.375])


@given(st.integers(2, 3), st.integers(0, 2**31 - 1))
def test_mixture_consistency_sum_and_idempotence(m, seed):
    r = np.random.default_rng(seed)
    est = r.standard_normal((m, 3, 20))
    mix = r.standard_normal((3, 20))
    once = mixture_consistency(est, mix)
    np.testing.assert_allclose(once.sum(axis=0), mix, atol=1e-12)
    np.testing.assert_allclose(mixture_consistency(once, mix), once, atol=1e-12)
    consistent = np.stack([mix - once[1:].sum(axis=0), *once[1:]])
    np.testing.assert_allclose(mixture_consistency(consistent, mix), consistent, atol=1e-12)


def test_check_batch_promotes_and_validates():
    assert check_batch([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(SignalError):
        check_batch(np.zeros((2, 2, 2)))
