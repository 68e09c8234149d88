"""Dense containers, parameters with gradient buffers, and gradient checking.

Matrices are plain 2-D ``float64`` numpy arrays. A :class:`Param` pairs one
such array with a gradient buffer of the same shape; backward passes add into
that buffer and an optimizer zeroes it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class InputTooShortError(ContractError):
    """An input sequence is shorter than an operation's receptive field."""

    def __init__(self, got: int, minimum: int, what: str = "input"):
        self.got = got
        self.minimum = minimum
        super().__init__(f"{what} has length {got}, need at least {minimum}")


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce `a` to a 2-D float64 array with at least one row and column.

    1-D input becomes a single row.
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ContractError(f"{name} must be non-empty, got shape {m.shape}")
    return m


@dataclass
class Param:
    """A learnable (or frozen) tensor with an additive gradient buffer."""

    value: np.ndarray
    trainable: bool = True
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = as_matrix(self.value, self.name or "param").copy()
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def accumulate(self, g):
        """Add `g` into the gradient buffer; a no-op for frozen params."""
        if not self.trainable:
            return
        g = np.asarray(g, dtype=np.float64).reshape(self.value.shape)
        self.grad += g

    def copy(self) -> "Param":
        p = Param(self.value.copy(), self.trainable, self.name)
        p.grad[...] = self.grad
        return p


def finite_diff_grad(f, x, h: float = 1e-4, indices=None) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix.

    Parameters
    ----------
    f : callable
        Maps a matrix shaped like `x` to a real number. It must not keep a
        reference to its argument, which is perturbed in place.
    x : array_like
        Point of evaluation.
    h : float
        Step size, must be positive.
    indices : iterable of (row, col), optional
        Restrict the estimate to these entries; all others are left at 0.

    Returns
    -------
    ndarray
        ``(f(x + h e_i) - f(x - h e_i)) / (2h)`` for every selected entry.
    """
    if not h > 0:
        raise ContractError(f"step size must be positive, got {h}")
    x = as_matrix(x, "x").copy()
    grad = np.zeros_like(x)
    if indices is None:
        indices = np.ndindex(*x.shape)
    for idx in indices:
        idx = tuple(int(i) for i in idx)
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value when perturbing index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_grad_error(analytic, numeric, eps: float = 1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||, eps)`` with Frobenius norms."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {n.shape}")
    num = np.linalg.norm(a - n)
    den = max(np.linalg.norm(a), np.linalg.norm(n), eps)
    return float(num / den)
