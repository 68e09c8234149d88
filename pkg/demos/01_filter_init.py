"""
Initial filterbanks on the mel scale
====================================

Both trainable front-ends start from filters centred on a 40-band mel grid.
The gammatone bank has one real row per band. The scattering bank has one
complex Gabor atom per band, stored as a cosine row and a sine row.
"""

import numpy as np

from tdfbank.filter_init import (gabor_sigma, init_gabor, init_gammatone, init_random,
                                 mel_grid, write_filter_dump)

grid = mel_grid(40, 0.0, 8000.0, 16000)
print("first centres (Hz):", np.round(grid.center_freqs[:5], 1))
print("last centres (Hz): ", np.round(grid.center_freqs[-3:], 1))

###############################################################################
# Gammatone rows: unit norm, response peaking at the grid centre.

gamm = init_gammatone(grid).filters
spec = np.abs(np.fft.rfft(gamm, 4096, axis=1))
peaks = np.argmax(spec, axis=1) * 16000 / 4096
print("gammatone peak vs centre, band 20:", round(peaks[20], 1), round(grid.center_freqs[20], 1))

###############################################################################
# Gabor atoms. The Gaussian width is chosen so the power response's half
# maximum width equals half of the mel triangle's base.

gab = init_gabor(grid).filters
left, centre, right = grid.band_edges[30]
atom = gab[60] + 1j * gab[61]
power = np.abs(np.fft.fft(atom, 1 << 16)) ** 2
freqs = np.fft.fftfreq(1 << 16, 1 / 16000)
above = freqs[power >= power.max() / 2]
print(f"band 30: triangle half-base {(right - left) / 2:.1f} Hz, "
      f"atom half-power width {above.max() - above.min():.1f} Hz, "
      f"sigma {gabor_sigma((right - left) / 2):.1f} samples")

###############################################################################
# Random init and the binary dump used by ``tdfbank init-dump``.

rand = init_random(80, 400, seed=7).filters
write_filter_dump(rand, "rand_filters.tdfb", csv_path="rand_filters.csv")
print("wrote rand_filters.tdfb", rand.shape)
