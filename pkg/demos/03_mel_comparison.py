"""
How close is the Gabor front-end to log-mel?
============================================

Before any training, the scattering front-end with Gabor atoms should track a
log mel-filterbank computed on the power spectrum. The two pipelines frame
the signal differently, so features are put on a common time grid first.
"""

import numpy as np

from tdfbank.frontend import FrontendConfig, init_params
from tdfbank.mel_reference import FRONTEND_DELAY, aligned_pair, channel_correlation
from tdfbank.signal_io import synth_toy_example

print("front-end lags the mel frame by", FRONTEND_DELAY, "samples")

waves = [synth_toy_example(s % 4, 1000 + s).wave for s in range(10)]
for init in ("scatt", "rand"):
    cfg = FrontendConfig("scattering", init, "han_fixed")
    params = init_params(cfg, seed=0)
    r = np.mean([channel_correlation(*aligned_pair(w, params, cfg)) for w in waves], axis=0)
    print(f"{init:5s}: mean channel correlation {r.mean():.3f} (lowest {r.min():.3f})")
