"""Finite-difference checks of every backward pass.

Each check builds a random problem, computes the analytic gradient through
the layer's backward function, estimates the same gradient with central
differences, and returns the largest relative error it saw. Losses are
random weighted sums of the layer output so that no gradient is trivially
uniform.
"""
from __future__ import annotations

import numpy as np

from . import frontend as fe
from .filter_init import squared_hanning
from .signal_io import Waveform
from .tensor_core import Param, finite_diff_grad, relative_grad_error

H = 1e-4
TOLERANCE = 1e-4


def _rel(analytic, f, x, indices=None, h=H):
    numeric = finite_diff_grad(f, x, h, indices)
    if indices is not None:
        sel = tuple(np.array(indices).T)
        return relative_grad_error(np.asarray(analytic)[sel], numeric[sel])
    return relative_grad_error(analytic, numeric)


def check_preemphasis(rng) -> float:
    x = rng.standard_normal(50)
    r = rng.standard_normal(49)
    k = Param(rng.standard_normal((1, 2)))
    gx = fe.preemphasis_backward(r, x, k)
    e1 = _rel(k.grad, lambda kk: r @ fe.preemphasis_forward(x, kk), k.value)
    e2 = _rel(gx[None], lambda xx: r @ fe.preemphasis_forward(xx[0], k.value), x[None])
    return max(e1, e2)


def check_conv1d(rng) -> float:
    x = rng.standard_normal(1200)
    f = Param(rng.uniform(-0.05, 0.05, (3, 400)))
    r = rng.standard_normal((3, 801))
    gx = fe.conv1d_backward(r, x, f)
    e1 = _rel(f.grad, lambda ff: np.sum(r * fe.conv1d_forward(x, ff)), f.value)
    e2 = _rel(gx[None], lambda xx: np.sum(r * fe.conv1d_forward(xx[0], f.value)), x[None])
    return max(e1, e2)


def check_squared_l2_pool(rng) -> float:
    a = rng.standard_normal((6, 20))
    r = rng.standard_normal((3, 20))
    g = fe.squared_l2_pool_backward(r, a)
    return _rel(g, lambda aa: np.sum(r * fe.squared_l2_pool(aa)), a)


def check_relu(rng) -> float:
    a = rng.standard_normal((4, 30))
    a += np.where(a >= 0, 1e-2, -1e-2)  # keep away from the kink
    r = rng.standard_normal(a.shape)
    return _rel(fe.relu_backward(r, a), lambda aa: np.sum(r * fe.relu(aa)), a)


def _check_lowpass_window(rng, trainable: bool) -> float:
    a = rng.standard_normal((3, 1200)) ** 2
    w = Param(squared_hanning(400)[None], trainable=trainable)
    r = rng.standard_normal((3, 6))
    g = fe.lowpass_window_backward(r, a, w)
    err = _rel(g, lambda aa: np.sum(r * fe.lowpass_window(aa, w.value)), a)
    if trainable:
        err = max(err, _rel(w.grad, lambda ww: np.sum(r * fe.lowpass_window(a, ww)), w.value))
    elif np.any(w.grad):
        return np.inf
    return err


def check_lowpass_window_fixed(rng) -> float:
    return _check_lowpass_window(rng, False)


def check_lowpass_window_learnt(rng) -> float:
    return _check_lowpass_window(rng, True)


def check_lowpass_maxpool(rng) -> float:
    # a shuffled grid of distinct values: every pair differs by far more than h
    a = rng.permutation(3 * 1200).reshape(3, 1200) * 1e-2
    r = rng.standard_normal((3, 6))
    g = fe.lowpass_maxpool_backward(r, a)
    return _rel(g, lambda aa: np.sum(r * fe.lowpass_maxpool(aa)), a)


def _check_log(rng, offset) -> float:
    a = rng.uniform(0.05, 3.0, (4, 30)) * rng.choice([-1.0, 1.0], (4, 30))
    r = rng.standard_normal(a.shape)
    g = fe.log_compress_backward(r, a, offset)
    return _rel(g, lambda aa: np.sum(r * fe.log_compress(aa, offset)), a)


def check_log_compress_1(rng) -> float:
    return _check_log(rng, 1.0)


def check_log_compress_001(rng) -> float:
    return _check_log(rng, 0.01)


def check_instance_norm(rng) -> float:
    a = rng.standard_normal((4, 30)) * 3 + 1
    r = rng.standard_normal(a.shape)
    g = fe.instance_norm_backward(r, a)
    return _rel(g, lambda aa: np.sum(r * fe.instance_norm(aa)), a)


# --------------------------------------------------------------------------
# whole front-end

E2E_CONFIGS = {
    "e2e_scattering_han_fixed": fe.FrontendConfig("scattering", "scatt", "han_fixed"),
    "e2e_scattering_han_learnt": fe.FrontendConfig("scattering", "rand", "han_learnt",
                                                   use_pre_emphasis=True),
    "e2e_gammatone_han_fixed": fe.FrontendConfig("gammatone", "rand", "han_fixed",
                                                 use_pre_emphasis=True),
    "e2e_gammatone_max_pool": fe.FrontendConfig("gammatone", "gamm", "max_pool"),
}


def _kink_free(cache, c, w, h):
    """True if moving conv weight ``(c, w)`` by up to `h` crosses no ReLU kink
    that matters and changes no max-pool winner.

    The move shifts ``z[c, n]`` by ``h * x[n + w]``.
    """
    cfg, st = cache.config, cache.stages
    if cfg.variant != "gammatone":
        return True
    x = st["conv_in"]
    z = st["conv_out"][c]
    shift = h * np.abs(x[w:w + z.size])
    if cfg.lowpass == "max_pool":
        win = fe._windows(st["nonlin"][c:c + 1], cfg.lowpass_width, cfg.hop)[0]
        top2 = np.sort(win, axis=1)[:, -2:]
        reach = 2 * h * np.max(np.abs(x))
        # winners must stay positive and clear of the runner-up
        return bool(np.all(top2[:, 1] > reach) and np.all(top2[:, 1] - top2[:, 0] > 2 * reach))
    return bool(np.all(np.abs(z) > 2 * shift))


def _pre_emphasis_kink_free(cache, h):
    """True if moving either pre-emphasis tap by up to `h` crosses no ReLU
    kink and changes no max-pool winner.

    Tap ``j`` feeds every conv output, shifting ``z[c, n]`` by ``h * d_j[c, n]``
    with ``d_j`` the conv of the normalized input offset by ``j``.
    """
    cfg, st = cache.config, cache.stages
    if cfg.variant != "gammatone" or not cfg.use_pre_emphasis:
        return True
    x, w = st["norm"], cache.params.conv.value
    d = np.maximum(np.abs(fe.conv1d_forward(x[:-1], w)), np.abs(fe.conv1d_forward(x[1:], w)))
    z = st["conv_out"]
    if cfg.lowpass == "max_pool":
        top2 = np.sort(fe._windows(st["nonlin"], cfg.lowpass_width, cfg.hop), axis=2)[..., -2:]
        reach = 2 * h * np.max(d)
        return bool(np.all(top2[..., 1] > reach) and np.all(top2[..., 1] - top2[..., 0] > 2 * reach))
    return bool(np.all(np.abs(z) > 2 * h * d))


def e2e_problem(config: fe.FrontendConfig, rng, length: int = 1600, n_spot: int = 8, h=H):
    """Random waveform, params, loss weights, and kink-free spot-check weights.

    Candidate conv weights are drawn until `n_spot` of them sit safely away
    from non-differentiable points (ReLU zero crossings, max-pool ties).
    With pre-emphasis on a ReLU front-end, the waveform and filters are
    redrawn until no conv output sits within reach of a kink, since the
    pre-emphasis taps move every output at once.
    """
    for _ in range(200):
        wave = Waveform(rng.standard_normal(length))
        params = fe.init_params(config, int(rng.integers(1 << 30)))
        fmap, cache = fe.frontend_forward(wave, params, config)
        if _pre_emphasis_kink_free(cache, h):
            break
    else:
        raise RuntimeError("could not draw a kink-free pre-emphasis problem")
    r = rng.standard_normal(fmap.values.shape)
    spots = []
    for _ in range(100 * n_spot):
        c, w = int(rng.integers(config.conv_rows)), int(rng.integers(config.conv_width))
        if (c, w) not in spots and _kink_free(cache, c, w, h):
            spots.append((c, w))
            if len(spots) == n_spot:
                return wave, params, r, spots
    raise RuntimeError("could not draw kink-free gradient-check weights")


def check_e2e(config: fe.FrontendConfig, rng) -> float:
    wave, params, r, spots = e2e_problem(config, rng)
    params.zero_grad()
    _, cache = fe.frontend_forward(wave, params, config)
    gx = fe.frontend_backward(r, cache)

    def loss_with(name, value):
        p = params.copy()
        getattr(p, name).value = value
        return np.sum(r * fe.frontend_forward(wave, p, config)[0].values)

    errs = [_rel(params.conv.grad, lambda v: loss_with("conv", v), params.conv.value, spots)]
    if config.lowpass == "han_learnt":
        idx = [(0, int(i)) for i in rng.choice(config.lowpass_width, 16, replace=False)]
        errs.append(_rel(params.lowpass_weights.grad, lambda v: loss_with("lowpass_weights", v),
                         params.lowpass_weights.value, idx))
    elif params.lowpass_weights is not None and np.any(params.lowpass_weights.grad):
        return np.inf
    if config.use_pre_emphasis:
        errs.append(_rel(params.pre_emphasis.grad, lambda v: loss_with("pre_emphasis", v),
                         params.pre_emphasis.value))
    elif np.any(params.pre_emphasis.grad):
        return np.inf
    if config.variant == "scattering":
        # the input gradient crosses no kinks only on the smooth pipeline
        idx = [(0, int(i)) for i in rng.choice(wave.samples.size, 8, replace=False)]
        errs.append(_rel(gx[None], lambda v: np.sum(
            r * fe.frontend_forward(Waveform(v[0]), params, config)[0].values),
            wave.samples[None], idx))
    return max(errs)


LAYER_CHECKS = {
    "preemphasis": check_preemphasis,
    "conv1d": check_conv1d,
    "squared_l2_pool": check_squared_l2_pool,
    "relu": check_relu,
    "lowpass_window_fixed": check_lowpass_window_fixed,
    "lowpass_window_learnt": check_lowpass_window_learnt,
    "lowpass_maxpool": check_lowpass_maxpool,
    "log_compress_1": check_log_compress_1,
    "log_compress_0.01": check_log_compress_001,
    "instance_norm": check_instance_norm,
}
for _name, _cfg in E2E_CONFIGS.items():
    LAYER_CHECKS[_name] = (lambda cfg: lambda rng: check_e2e(cfg, rng))(_cfg)


def run_checks(names=None, seed: int = 0) -> dict[str, float]:
    """Run the named checks (all by default); returns name -> max relative error."""
    names = list(LAYER_CHECKS) if names is None else list(names)
    out = {}
    for name in names:
        if name not in LAYER_CHECKS:
            raise KeyError(f"unknown check {name!r}; choose from {sorted(LAYER_CHECKS)}")
        out[name] = float(LAYER_CHECKS[name](np.random.default_rng([seed, len(out)])))
    return out
