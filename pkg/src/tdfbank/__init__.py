"""Learnable time-domain filterbanks (gammatone- and scattering-based)."""
