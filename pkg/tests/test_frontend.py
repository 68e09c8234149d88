import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdfbank import frontend as fe
from tdfbank import gradcheck
from tdfbank.filter_init import init_gabor, mel_grid, squared_hanning
from tdfbank.signal_io import Waveform
from tdfbank.tensor_core import ContractError, InputTooShortError, Param, finite_diff_grad, \
    relative_grad_error


def enumerate_frames(length, pre_emphasis=False, width=400, hop=160, lp=400):
    """Frame count by walking every valid window position."""
    n = length - 1 if pre_emphasis else length
    conv = sum(1 for s in range(n) if s + width <= n)
    frames = 0
    m = 0
    while m * hop + lp <= conv:
        frames += 1
        m += 1
    return frames


# --------------------------------------------------------------------------
# layer examples

def test_preemphasis_examples():
    k = np.array([-0.97, 1.0])
    np.testing.assert_allclose(fe.preemphasis_forward([1, 1, 1], k), [0.03, 0.03], atol=1e-15)
    np.testing.assert_allclose(fe.preemphasis_forward([0, 1], k), [1.0])
    with pytest.raises(ContractError):
        fe.preemphasis_forward([1.0], k)


def test_preemphasis_kernel_grad():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(50)
    k = Param(np.array([[-0.97, 1.0]]))
    fe.preemphasis_backward(np.ones(49), x, k)
    num = finite_diff_grad(lambda kk: fe.preemphasis_forward(x, kk).sum(), k.value)
    assert relative_grad_error(k.grad, num) < 1e-6


def test_conv_impulse_and_identity_tap():
    rng = np.random.default_rng(1)
    f = rng.standard_normal((3, 400))
    x = np.zeros(600)
    x[0] = 1.0
    out = fe.conv1d_forward(x, f)
    assert out.shape == (3, 201)
    np.testing.assert_allclose(out[:, 0], f[:, 0], atol=1e-12)
    x = rng.standard_normal(1000)
    one_hot = np.zeros((1, 400))
    one_hot[0, 0] = 1
    np.testing.assert_allclose(fe.conv1d_forward(x, one_hot)[0], x[:601], atol=1e-12)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(700)
    f = rng.standard_normal((2, 400))
    direct = np.array([[f[c] @ x[n:n + 400] for n in range(301)] for c in range(2)])
    np.testing.assert_allclose(fe.conv1d_forward(x, f), direct, atol=1e-10)


def test_conv_too_short():
    with pytest.raises(InputTooShortError) as e:
        fe.conv1d_forward(np.zeros(399), np.zeros((1, 400)))
    assert e.value.minimum == 400 and "400" in str(e.value)


def test_conv_filter_grad():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(1000)
    f = Param(rng.uniform(-0.05, 0.05, (2, 400)))
    fe.conv1d_backward(np.ones((2, 601)), x, f)
    num = finite_diff_grad(lambda ff: fe.conv1d_forward(x, ff).sum(), f.value)
    assert relative_grad_error(f.grad, num) < 1e-6


def test_squared_l2_pool_examples():
    a = np.array([[3.0, 0.0], [4.0, 0.0]])
    np.testing.assert_array_equal(fe.squared_l2_pool(a), [[25.0, 0.0]])
    assert not fe.squared_l2_pool(np.zeros((80, 5))).any()
    with pytest.raises(ContractError):
        fe.squared_l2_pool(np.zeros((3, 5)))


@pytest.mark.parametrize("seed", range(5))
def test_complex_conv_equivalence(seed):
    rng = np.random.default_rng(seed)
    grid = mel_grid(40, 0, 8000)
    f = init_gabor(grid).filters
    x = rng.standard_normal(1200)
    pooled = fe.squared_l2_pool(fe.conv1d_forward(x, f))
    atoms = f[0::2] + 1j * f[1::2]
    frames = np.lib.stride_tricks.sliding_window_view(x, 400)
    direct = np.abs(frames @ atoms.T).T ** 2
    np.testing.assert_allclose(pooled, direct, rtol=0, atol=1e-9)


def test_relu_examples():
    np.testing.assert_array_equal(fe.relu([-1.0, 0.0, 2.0]), [0, 0, 2])
    np.testing.assert_array_equal(fe.relu_backward(np.ones(3), [-1.0, 0.0, 2.0]), [0, 0, 1])


def test_relu_dead_region_blocks_conv_grad():
    x = np.abs(np.random.default_rng(4).standard_normal(800))
    f = Param(-np.ones((2, 400)))
    z = fe.conv1d_forward(x, f)
    assert np.all(z < 0)
    fe.conv1d_backward(fe.relu_backward(np.ones_like(z), z), x, f)
    assert not f.grad.any()


def test_lowpass_constant_input():
    w = squared_hanning(400)
    out = fe.lowpass_window(np.ones((40, 1200)), w)
    assert out.shape == (40, 6)
    total = math.fsum(w.tolist())
    np.testing.assert_allclose(out, total, rtol=1e-12)
    assert total == pytest.approx(149.625, abs=1e-9)


def test_lowpass_one_hot_decimates():
    a = np.random.default_rng(5).standard_normal((4, 1000))
    w = np.zeros(400)
    w[0] = 1
    np.testing.assert_array_equal(fe.lowpass_window(a, w), a[:, 0:601:160])


def test_lowpass_too_short():
    with pytest.raises(InputTooShortError):
        fe.lowpass_window(np.ones((2, 399)), squared_hanning(400))
    with pytest.raises(InputTooShortError):
        fe.lowpass_maxpool(np.ones((2, 399)))


def test_lowpass_weight_grad():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((3, 900))
    w = Param(squared_hanning(400)[None])
    r = rng.standard_normal((3, 4))
    fe.lowpass_window_backward(r, a, w)
    num = finite_diff_grad(lambda ww: np.sum(r * fe.lowpass_window(a, ww)), w.value)
    assert relative_grad_error(w.grad, num) < 1e-6


def test_maxpool_single_maximum():
    a = np.zeros((1, 400))
    a[0, 123] = 7.0
    assert fe.lowpass_maxpool(a)[0, 0] == 7.0
    g = fe.lowpass_maxpool_backward(np.ones((1, 1)), a)
    assert g[0, 123] == 1.0 and g.sum() == 1.0


def test_maxpool_tie_goes_to_first_index():
    a = np.full((2, 720), 3.0)
    np.testing.assert_array_equal(fe.lowpass_maxpool(a), 3.0)
    g = fe.lowpass_maxpool_backward(np.ones((2, 3)), a)
    assert set(np.flatnonzero(g[0])) == {0, 160, 320}


def test_maxpool_grad_distinct_values():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 900)) + np.arange(2700).reshape(3, 900) * 1e-3
    vals = np.sort(np.lib.stride_tricks.sliding_window_view(a, 400, axis=1)[:, ::160], axis=2)
    assert np.min(vals[..., -1] - vals[..., -2]) > 2e-4  # no tie within reach of h
    r = rng.standard_normal((3, 4))
    g = fe.lowpass_maxpool_backward(r, a)
    num = finite_diff_grad(lambda aa: np.sum(r * fe.lowpass_maxpool(aa)), a)
    assert relative_grad_error(g, num) < 1e-4


def test_log_compress_examples():
    assert fe.log_compress(0.0, 1.0) == 0.0
    assert fe.log_compress(0.0, 0.01) == pytest.approx(-4.6052, abs=1e-4)
    assert fe.log_compress_backward(1.0, 0.0, 1.0) == 0.0
    with pytest.raises(ContractError):
        fe.log_compress(1.0, 0.0)


@pytest.mark.parametrize("offset", [1.0, 0.01])
def test_log_compress_grad(offset):
    rng = np.random.default_rng(8)
    a = rng.uniform(0.01, 5.0, (4, 20))
    g = fe.log_compress_backward(np.ones_like(a), a, offset)
    num = finite_diff_grad(lambda aa: fe.log_compress(aa, offset).sum(), a)
    assert relative_grad_error(g, num) < 1e-6


def test_instance_norm_stats_and_constant():
    a = np.random.default_rng(9).standard_normal((40, 50)) * 4 + 2
    y = fe.instance_norm(a)
    assert np.max(np.abs(y.mean(axis=1))) < 1e-10
    assert np.max(np.abs(y.var(axis=1) - 1)) < 1e-6
    np.testing.assert_allclose(fe.instance_norm(np.full((2, 10), 3.0)), 0.0, atol=1e-12)
    with pytest.raises(ContractError):
        fe.instance_norm(np.ones((2, 1)))


def test_instance_norm_grad():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((5, 30))
    r = rng.standard_normal(a.shape)
    g = fe.instance_norm_backward(r, a)
    num = finite_diff_grad(lambda aa: np.sum(r * fe.instance_norm(aa)), a)
    assert relative_grad_error(g, num) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.floats(-50, 50), st.integers(0, 2 ** 31))
def test_instance_norm_affine_invariance(scale, shift, seed):
    a = np.random.default_rng(seed).standard_normal((3, 40))
    np.testing.assert_allclose(fe.instance_norm(scale * a + shift, eps=0.0),
                               fe.instance_norm(a, eps=0.0), atol=1e-6)
    if scale >= 0.5:
        # the variance floor moves outputs by about |y| eps / (2 var)
        np.testing.assert_allclose(fe.instance_norm(scale * a + shift), fe.instance_norm(a),
                                   atol=1e-6)


# --------------------------------------------------------------------------
# config and params

@pytest.mark.parametrize("kw", [
    dict(variant="scattering", lowpass="max_pool"),
    dict(variant="gammatone", init="gamm", lowpass="han_learnt"),
    dict(variant="scattering", init="gamm"),
    dict(variant="gammatone", init="scatt"),
    dict(variant="scattering", log_offset=0.0),
    dict(variant="spectral"),
])
def test_config_rejects(kw):
    with pytest.raises(ContractError):
        fe.FrontendConfig(**kw)


def test_config_defaults():
    assert fe.FrontendConfig("scattering").log_offset == 1.0
    assert fe.FrontendConfig("gammatone", "gamm").log_offset == 0.01
    assert fe.FrontendConfig("scattering").conv_rows == 80
    assert fe.FrontendConfig("gammatone", "gamm").conv_rows == 40


@pytest.mark.parametrize("cfg", [
    fe.FrontendConfig("scattering", "scatt", "han_fixed"),
    fe.FrontendConfig("scattering", "rand", "han_learnt", use_pre_emphasis=True),
    fe.FrontendConfig("gammatone", "gamm", "max_pool"),
])
def test_init_params_flags(cfg):
    p = fe.init_params(cfg, seed=3)
    assert p.conv.shape == (cfg.conv_rows, 400)
    assert p.pre_emphasis.trainable == cfg.use_pre_emphasis
    if cfg.lowpass == "max_pool":
        assert p.lowpass_weights is None
    else:
        assert p.lowpass_weights.shape == (1, 400)
        assert p.lowpass_weights.trainable == (cfg.lowpass == "han_learnt")


# --------------------------------------------------------------------------
# pipeline

SCAT = fe.FrontendConfig("scattering", "scatt", "han_fixed")
GAMM_MAX = fe.FrontendConfig("gammatone", "gamm", "max_pool")


def test_one_second_gives_96_frames():
    wave = Waveform(np.random.default_rng(11).standard_normal(16000))
    fmap, _ = fe.frontend_forward(wave, fe.init_params(SCAT), SCAT)
    assert (fmap.channels, fmap.frames) == (40, 96)
    assert enumerate_frames(16000) == 96
    assert np.max(np.abs(fmap.values.mean(axis=1))) < 1e-6


def test_pre_emphasis_frame_count():
    cfg = fe.FrontendConfig("scattering", "scatt", "han_fixed", use_pre_emphasis=True)
    for length in (16000, 16159, 16160, 16161):
        wave = Waveform(np.random.default_rng(length).standard_normal(length))
        fmap, cache = fe.frontend_forward(wave, fe.init_params(cfg), cfg)
        assert fmap.frames == enumerate_frames(length, pre_emphasis=True)
        assert cache.stages["conv_out"].shape[1] == length - 1 - 399


def test_frame_count_random_lengths():
    rng = np.random.default_rng(12)
    for length in rng.integers(1000, 64000, 20):
        for pe in (False, True):
            cfg = fe.FrontendConfig("scattering", use_pre_emphasis=pe)
            assert cfg.frames_for(int(length)) == enumerate_frames(int(length), pe)


@pytest.mark.parametrize("cfg", [SCAT, GAMM_MAX,
                                 fe.FrontendConfig("scattering", use_pre_emphasis=True),
                                 fe.FrontendConfig("gammatone", "gamm", use_instance_norm=False)])
def test_minimum_length_is_exact(cfg):
    p = fe.init_params(cfg)
    n = cfg.min_length()
    fmap, _ = fe.frontend_forward(Waveform(np.random.default_rng(0).standard_normal(n)), p, cfg)
    assert fmap.frames == (2 if cfg.use_instance_norm else 1)
    with pytest.raises(InputTooShortError) as e:
        fe.frontend_forward(Waveform(np.ones(n - 1)), p, cfg)
    assert e.value.minimum == n


def test_forward_deterministic():
    wave = Waveform(np.random.default_rng(13).standard_normal(8000))
    cfg = fe.FrontendConfig("gammatone", "rand", "han_fixed")
    a, _ = fe.frontend_forward(wave, fe.init_params(cfg, 5), cfg)
    b, _ = fe.frontend_forward(wave, fe.init_params(cfg, 5), cfg)
    assert a.values.tobytes() == b.values.tobytes()


def test_forward_rejects_wrong_conv_rows():
    p = fe.init_params(GAMM_MAX)
    with pytest.raises(ContractError):
        fe.frontend_forward(Waveform(np.ones(2000)), p, SCAT)


def test_backward_shape_mismatch():
    wave = Waveform(np.random.default_rng(14).standard_normal(4000))
    _, cache = fe.frontend_forward(wave, fe.init_params(SCAT), SCAT)
    with pytest.raises(ContractError):
        fe.frontend_backward(np.ones((40, 3)), cache)


def test_scattering_conv_spot_check_and_frozen_lowpass():
    rng = np.random.default_rng(15)
    assert gradcheck.check_e2e(SCAT, rng) < 1e-4
    wave = Waveform(rng.standard_normal(3000))
    p = fe.init_params(SCAT)
    fmap, cache = fe.frontend_forward(wave, p, SCAT)
    fe.frontend_backward(rng.standard_normal(fmap.values.shape), cache)
    assert not p.lowpass_weights.grad.any()
    assert not p.pre_emphasis.grad.any()
    assert p.conv.grad.any()


def test_gammatone_maxpool_spot_check():
    assert gradcheck.check_e2e(GAMM_MAX, np.random.default_rng(16)) < 1e-4


def test_input_grad_optional():
    wave = Waveform(np.random.default_rng(17).standard_normal(3000))
    cfg = fe.FrontendConfig("scattering", use_pre_emphasis=True)
    p = fe.init_params(cfg)
    fmap, cache = fe.frontend_forward(wave, p, cfg)
    g = np.ones(fmap.values.shape)
    assert fe.frontend_backward(g, cache, input_grad=False) is None
    first = p.pre_emphasis.grad.copy()
    p.zero_grad()
    assert fe.frontend_backward(g, cache).shape == (3000,)
    np.testing.assert_array_equal(p.pre_emphasis.grad, first)


def test_feature_dump_round_trip(tmp_path):
    wave = Waveform(np.random.default_rng(18).standard_normal(16000))
    fmap, _ = fe.frontend_forward(wave, fe.init_params(SCAT), SCAT)
    fe.write_feature_dump(fmap, tmp_path / "f.tdft", csv_path=tmp_path / "f.csv")
    buf = (tmp_path / "f.tdft").read_bytes()
    assert buf[:4] == b"TDFT" and len(buf) == 13 + 4 * 40 * 96
    np.testing.assert_array_equal(fe.read_feature_dump(tmp_path / "f.tdft"),
                                  fmap.values.astype(np.float32))
    assert np.loadtxt(tmp_path / "f.csv", delimiter=",").shape == (96, 40)
