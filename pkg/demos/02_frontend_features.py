"""
Running the two front-ends
==========================

Feature extraction on one toy utterance with each variant, plus one
gradient check of the whole pipeline against finite differences.
"""

import numpy as np

from tdfbank import gradcheck
from tdfbank.frontend import FrontendConfig, frontend_backward, frontend_forward, init_params
from tdfbank.signal_io import synth_toy_example

ex = synth_toy_example(cls=2, seed=0)
print("label", ex.label, "samples", len(ex.wave))

for cfg in (FrontendConfig("scattering", "scatt", "han_fixed"),
            FrontendConfig("gammatone", "gamm", "max_pool"),
            FrontendConfig("gammatone", "rand", "han_fixed", use_pre_emphasis=True)):
    params = init_params(cfg, seed=0)
    fmap, cache = frontend_forward(ex.wave, params, cfg)
    print(f"{cfg.variant:10s} {cfg.init:5s} {cfg.lowpass:9s} -> "
          f"{fmap.channels} x {fmap.frames}, channel means ~ {np.abs(fmap.values.mean(1)).max():.1e}")

###############################################################################
# Backward: the gradient of ``sum(features)`` lands in the conv weights.
# A frozen squared-Hanning low-pass receives nothing.

cfg = FrontendConfig("scattering", "scatt", "han_fixed")
params = init_params(cfg)
fmap, cache = frontend_forward(ex.wave, params, cfg)
frontend_backward(np.random.default_rng(0).standard_normal(fmap.values.shape), cache)
print("conv grad norm", np.linalg.norm(params.conv.grad))
print("low-pass grad is zero:", not params.lowpass_weights.grad.any())

###############################################################################
# Spot check against central differences (what ``tdfbank gradcheck`` runs).

for name in ("instance_norm", "e2e_scattering_han_fixed", "e2e_gammatone_max_pool"):
    err = gradcheck.run_checks([name])[name]
    print(f"{name:28s} max relative error {err:.2e}")
