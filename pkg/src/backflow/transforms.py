"""Momentum grids, full-line embedding and the unitary Fourier pair.

Conventions
-----------
Momentum samples sit at cell midpoints, ``k_j = (j + 1/2) dk`` for
``j = 0 .. n_half - 1``.  The full-line embedding uses ``2 n_half`` samples
``k = (a + 1/2) dk`` with ``a = -n_half .. n_half - 1``, so the array index
``n_half + j`` holds ``k_j`` and the lower half holds ``k < 0``.

The conjugate position grid is shifted the same way: for a full array of
even length ``M`` with momentum spacing ``dk`` the positions are
``x_b = (b + 1/2) dx`` with ``b = -M/2 .. M/2 - 1`` and ``dx = 2 pi / (M dk)``.
Both grids are symmetric about the origin and contain neither ``k = 0`` nor
``x = 0``, which keeps ``sgn(x)`` odd and free of inert modes.

The position representation is ``psi(x) = (2 pi)^{-1/2} sum_k exp(+i k x) phi(k) dk``
(inverse L2 Fourier transform); :func:`to_momentum` is its exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform midpoint grid on the momentum half-line ``[0, q_max]``."""

    n_half: int
    q_max: float

    def __post_init__(self):
        if int(self.n_half) != self.n_half or self.n_half < 2:
            raise ValueError(f"n_half must be an integer >= 2, got {self.n_half!r}")
        if not np.isfinite(self.q_max) or self.q_max <= 0:
            raise ValueError(f"q_max must be positive, got {self.q_max!r}")
        object.__setattr__(self, "n_half", int(self.n_half))
        object.__setattr__(self, "q_max", float(self.q_max))

    @property
    def dk(self) -> float:
        return self.q_max / self.n_half

    @property
    def n_full(self) -> int:
        return 2 * self.n_half

    @property
    def k_values(self) -> np.ndarray:
        return (np.arange(self.n_half) + 0.5) * self.dk

    @property
    def k_full(self) -> np.ndarray:
        return momentum_axis(self.n_full, self.dk)

    @property
    def dx(self) -> float:
        return 2.0 * np.pi / (self.n_full * self.dk)

    @property
    def x_full(self) -> np.ndarray:
        return position_axis(self.n_full, self.dk)


def make_grid(n_half: int, q_max: float) -> MomentumGrid:
    """Build the midpoint grid with ``n_half`` samples on ``[0, q_max]``.

    Any ``n_half >= 2`` is accepted; the FFT backend handles arbitrary
    lengths, large prime factors only cost speed.
    """
    return MomentumGrid(n_half, q_max)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Momentum amplitudes ``phi(k_j)`` of a positive-momentum state."""

    grid: MomentumGrid
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes)
        if amps.shape != (self.grid.n_half,):
            raise ValueError(
                f"expected {self.grid.n_half} amplitudes, got shape {amps.shape}"
            )
        if not np.iscomplexobj(amps):
            amps = amps.astype(float)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real * self.grid.dk))

    def normalized(self) -> "StateVector":
        n = self.norm
        if not n > 0:
            raise ValueError("cannot normalize a zero state")
        return StateVector(self.grid, self.amplitudes / n)

    def inner(self, other: "StateVector") -> complex:
        """``<self, other>`` with the grid measure, antilinear in ``self``."""
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dk)

    @classmethod
    def from_function(cls, grid: MomentumGrid, func) -> "StateVector":
        return cls(grid, np.asarray(func(grid.k_values)))


def momentum_axis(m: int, dk: float) -> np.ndarray:
    """Momentum samples of a full array of length ``m``."""
    return (np.arange(m) - m // 2 + 0.5) * dk


def position_axis(m: int, dk: float) -> np.ndarray:
    """Position samples conjugate to a full momentum array of length ``m``."""
    dx = 2.0 * np.pi / (m * dk)
    return (np.arange(m) - m // 2 + 0.5) * dx


@lru_cache(maxsize=32)
def _phases(m: int) -> tuple[np.ndarray, np.ndarray]:
    # exp(i k_a x_b) = exp(2 pi i (a + 1/2)(b + 1/2) / m), a = n - m//2 on both axes;
    # split into a plain DFT kernel exp(2 pi i n n' / m) times pre/post phase vectors.
    if m % 2:
        raise ValueError(f"full-line arrays must have even length, got {m}")
    n = np.arange(m)
    c = m // 2
    pre = np.exp(1j * np.pi * (n - c) / m) * np.exp(-2j * np.pi * c * n / m)
    post = np.exp(-2j * np.pi * c * (n - c) / m) * np.exp(1j * np.pi * (n - c + 0.5) / m)
    pre.setflags(write=False)
    post.setflags(write=False)
    return pre, post


def to_position(full: np.ndarray, dk: float) -> np.ndarray:
    """Momentum samples -> position samples, ``psi = F* phi``.

    Works along the last axis, so a stack of states may be passed at once.
    Parseval holds with the measures: ``sum |psi|^2 dx = sum |phi|^2 dk``.
    """
    full = np.asarray(full)
    m = full.shape[-1]
    pre, post = _phases(m)
    return post * sfft.ifft(pre * full, axis=-1) * (m * dk / SQRT_2PI)


def to_momentum(full: np.ndarray, dk: float) -> np.ndarray:
    """Exact inverse of :func:`to_position` (``dk`` is the momentum spacing)."""
    full = np.asarray(full)
    m = full.shape[-1]
    pre, post = _phases(m)
    dx = 2.0 * np.pi / (m * dk)
    return np.conj(pre) * sfft.fft(np.conj(post) * full, axis=-1) * (dx / SQRT_2PI)


def embed_full_line(state: StateVector) -> np.ndarray:
    """Place the half-line amplitudes on ``[-q, q)`` with zeros at ``k < 0``."""
    n = state.grid.n_half
    full = np.zeros(2 * n, dtype=complex)
    full[n:] = state.amplitudes
    return full


def restrict_half(full: np.ndarray, grid: MomentumGrid) -> StateVector:
    """Keep the ``k > 0`` samples: the momentum-space half-line projection."""
    full = np.asarray(full)
    if full.shape != (grid.n_full,):
        raise ValueError(f"expected a full-line array of length {grid.n_full}")
    return StateVector(grid, full[grid.n_half:].copy())
