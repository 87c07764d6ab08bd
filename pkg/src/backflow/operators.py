"""Matrix-free backflow operator and the dense kernel oracle.

Three realizations of ``Pi B_T Pi`` on the positive-momentum grid are offered.

``kernel`` (default)
    ``(1/2i)(U H U* - U* H U) + D`` with ``H`` the aperiodic discrete Hilbert
    transform (Toeplitz convolution with ``1/(pi m)``, applied by FFT) and
    ``D = -(2/pi) k T dk`` the self-interaction of each cell, which the
    principal-value sum drops.  Identical, up to round-off, to the
    midpoint discretization of the integral kernel.  It equals minus the
    time-integrated current through ``x = 0`` of the band-limited state
    ``psi(x) = (2 pi)^{-1/2} sum_k exp(ikx) phi(k) dk``.

``sandwich`` / ``hilbert``
    ``U P U* - U* P U`` resp. ``(1/2i)(U H U* - U* H U)`` with ``P`` and ``H``
    realized by ``sgn(x)`` on a periodic position box.  The box is padded
    beyond the coarse window; a periodic box has a second jump of ``sgn`` at
    its edge, and probability crossing it shows up as spurious backflow of
    size ~1 unless the padding exceeds the distance ``2 q T`` several times
    over.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.fft as sfft

from .transforms import (
    MomentumGrid,
    StateVector,
    momentum_axis,
    position_axis,
    to_momentum,
    to_position,
)

Route = Literal["kernel", "sandwich", "hilbert"]
ROUTES = ("kernel", "sandwich", "hilbert")

DEFAULT_DENSE_CAP = 20_000
# padding of the periodic box, in units of the travel distance 2 q T
DEFAULT_PADDING_FACTOR = 4.0


def apply_free_evolution(phi: np.ndarray, k: np.ndarray, t: float) -> np.ndarray:
    """``(U_t phi)(k) = exp(-i k^2 t) phi(k)`` in rescaled time."""
    return np.exp(-1j * np.square(k) * t) * phi


def apply_position_projection(full: np.ndarray, dk: float) -> np.ndarray:
    """``F Pi F*``: keep the ``x > 0`` half of the periodic position box."""
    m = np.shape(full)[-1]
    keep = position_axis(m, dk) > 0
    return to_momentum(to_position(full, dk) * keep, dk)


def apply_hilbert(full: np.ndarray, dk: float) -> np.ndarray:
    """Hilbert transform ``H = i F sgn(x) F*``, so that ``F Pi F* = (id - iH)/2``."""
    m = np.shape(full)[-1]
    sgn = np.sign(position_axis(m, dk))
    return 1j * to_momentum(to_position(full, dk) * sgn, dk)


def kernel_entry(k, q, T: float = 1.0):
    """``-(1/pi) sin((k^2 - q^2) T) / (k - q)``; ``-(2/pi) k T`` on the diagonal."""
    k, q = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(q, dtype=float))
    diff = k - q
    same = diff == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(same, 2.0 * k * T, np.sin((k * k - q * q) * T) / np.where(same, 1.0, diff))
    out = -val / np.pi
    return out if out.ndim else float(out)


class AperiodicHilbert:
    """Discrete principal-value Hilbert transform on ``n`` equispaced samples.

    ``(H f)_i = sum_{j != i} f_j / (pi (i - j))``; the ``dk`` of the quadrature
    cancels against the ``1/dk`` of the kernel.  Applied as a Toeplitz
    product through a circulant embedding.
    """

    def __init__(self, n: int):
        self.n = n
        self.size = sfft.next_fast_len(2 * n - 1)
        col = np.zeros(self.size)
        m = np.arange(1, n)
        col[1:n] = 1.0 / (np.pi * m)
        col[self.size - n + 1:] = -1.0 / (np.pi * m[::-1])
        self._symbol = sfft.fft(col)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        y = sfft.ifft(self._symbol * sfft.fft(f, self.size, axis=-1), axis=-1)
        return y[..., : self.n]


@dataclass(frozen=True)
class PaddedBox:
    """Periodic position box holding the coarse window plus ``padding`` samples per side.

    The position spacing is that of the grid, ``dx = pi / q``; the box
    momentum grid covers ``[-q, q)`` with the finer spacing ``2 pi / (n_box dx)``.
    """

    grid: MomentumGrid
    padding: int

    @property
    def n_box(self) -> int:
        return self.grid.n_full + 2 * self.padding

    @property
    def dk_box(self) -> float:
        return 2.0 * np.pi / (self.n_box * self.grid.dx)

    @property
    def k_box(self) -> np.ndarray:
        return momentum_axis(self.n_box, self.dk_box)

    @property
    def x_box(self) -> np.ndarray:
        return position_axis(self.n_box, self.dk_box)

    def lift(self, amplitudes: np.ndarray) -> np.ndarray:
        """Half-line amplitudes -> box momentum samples (an isometry)."""
        g = self.grid
        full = np.zeros(amplitudes.shape[:-1] + (g.n_full,), dtype=complex)
        full[..., g.n_half:] = amplitudes
        box = np.zeros(amplitudes.shape[:-1] + (self.n_box,), dtype=complex)
        box[..., self.padding:self.padding + g.n_full] = to_position(full, g.dk)
        return to_momentum(box, self.dk_box)

    def lower(self, box_momentum: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`lift`: truncate to the window, keep ``k > 0``."""
        g = self.grid
        psi = to_position(box_momentum, self.dk_box)[..., self.padding:self.padding + g.n_full]
        return to_momentum(psi, g.dk)[..., g.n_half:]


def default_padding(grid: MomentumGrid, T: float, factor: float = DEFAULT_PADDING_FACTOR) -> int:
    travel = 2.0 * grid.q_max * T / grid.dx
    return int(math.ceil(factor * travel))


@dataclass
class BackflowOperator:
    """``Pi B_T Pi`` acting on states of ``grid``; see the module docstring for routes."""

    grid: MomentumGrid
    T: float = 1.0
    route: Route = "kernel"
    padding: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T!r}")
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}; expected one of {ROUTES}")
        if self.route != "kernel" and self.padding is None:
            self.padding = default_padding(self.grid, self.T)

    # -- lazily built pieces -------------------------------------------------
    @property
    def _kernel_parts(self):
        if "kernel" not in self._cache:
            k = self.grid.k_values
            self._cache["kernel"] = (
                AperiodicHilbert(self.grid.n_half),
                np.exp(-1j * k * k * self.T),
                -2.0 * k * self.T * self.grid.dk / np.pi,
            )
        return self._cache["kernel"]

    @property
    def box(self) -> PaddedBox:
        if "box" not in self._cache:
            self._cache["box"] = PaddedBox(self.grid, int(self.padding or 0))
        return self._cache["box"]

    @property
    def _box_parts(self):
        if "box_parts" not in self._cache:
            box = self.box
            self._cache["box_parts"] = (
                np.exp(-1j * np.square(box.k_box) * self.T),
                np.sign(box.x_box),
            )
        return self._cache["box_parts"]

    # -- application ---------------------------------------------------------
    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Apply to raw amplitudes (last axis of length ``n_half``)."""
        v = np.asarray(v)
        if np.isrealobj(v):
            return self._apply_real(v)
        return self._apply_real(v.real) + 1j * self._apply_real(v.imag)

    def matvec_general(self, v: np.ndarray) -> np.ndarray:
        """Apply the route's formula literally to complex input (no reality shortcut)."""
        v = np.asarray(v, dtype=complex)
        if self.route == "kernel":
            hil, u, diag = self._kernel_parts
            z1 = u * hil(np.conj(u) * v)
            z2 = np.conj(u) * hil(u * v)
            return (z1 - z2) / 2j + diag * v
        box = self.box
        u, sgn = self._box_parts
        dkb = box.dk_box
        f = box.lift(v)
        if self.route == "sandwich":
            keep = sgn > 0
            proj = lambda g: to_momentum(to_position(g, dkb) * keep, dkb)
            out = u * proj(np.conj(u) * f) - np.conj(u) * proj(u * f)
        else:
            hil = lambda g: 1j * to_momentum(to_position(g, dkb) * sgn, dkb)
            out = (u * hil(np.conj(u) * f) - np.conj(u) * hil(u * f)) / 2j
        return box.lower(out)

    def _apply_real(self, v: np.ndarray) -> np.ndarray:
        # real kernel: the two conjugate branches of the formula collapse into one
        if self.route == "kernel":
            hil, u, diag = self._kernel_parts
            return (u * hil(np.conj(u) * v)).imag + diag * v
        box = self.box
        u, sgn = self._box_parts
        dkb = box.dk_box
        f = box.lift(v)
        z = u * to_momentum(to_position(np.conj(u) * f, dkb) * sgn, dkb)
        return box.lower(z.real.astype(complex)).real

    def apply(self, state: StateVector) -> StateVector:
        if state.grid != self.grid:
            raise ValueError("state lives on a different grid")
        return StateVector(self.grid, self.matvec(state.amplitudes))

    def __call__(self, state: StateVector) -> StateVector:
        return self.apply(state)

    def expectation(self, state: StateVector) -> float:
        """``<phi, Pi B_T Pi phi>`` with the grid measure."""
        return state.inner(self.apply(state)).real


def apply_backflow(state: StateVector, T: float = 1.0, route: Route = "kernel", padding: int | None = None) -> StateVector:
    return BackflowOperator(state.grid, T, route, padding).apply(state)


class ShiftedOperator:
    """``Pi B Pi + id``: nonnegative, the operator the power method runs on."""

    shift = 1.0

    def __init__(self, operator: BackflowOperator):
        self.operator = operator
        self.grid = operator.grid

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.operator.matvec(v) + v

    __call__ = matvec

    def apply(self, state: StateVector) -> StateVector:
        return StateVector(self.grid, self.matvec(state.amplitudes))


def apply_shifted(state: StateVector, T: float = 1.0, route: Route = "kernel") -> StateVector:
    return ShiftedOperator(BackflowOperator(state.grid, T, route)).apply(state)


@dataclass(frozen=True, eq=False)
class DenseKernel:
    """Midpoint-rule matrix of the integral kernel with ``dk`` folded in."""

    grid: MomentumGrid
    matrix: np.ndarray = field(repr=False)
    T: float = 1.0

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    __call__ = matvec


def build_dense(grid: MomentumGrid, T: float = 1.0, cap: int = DEFAULT_DENSE_CAP) -> DenseKernel:
    if grid.n_half > cap:
        raise MemoryError(
            f"dense kernel with n_half={grid.n_half} exceeds the cap of {cap} "
            f"({grid.n_half ** 2 * 8 / 1e9:.1f} GB)"
        )
    k = grid.k_values
    # row by row: no cross-row reductions, so the result is layout independent
    matrix = np.empty((grid.n_half, grid.n_half))
    for i, ki in enumerate(k):
        matrix[i] = kernel_entry(ki, k, T)
    matrix *= grid.dk
    return DenseKernel(grid, matrix, T)


def apply_dense(kernel: DenseKernel, state: StateVector) -> StateVector:
    return StateVector(kernel.grid, kernel.matrix @ state.amplitudes)


def apply_dilation(state: StateVector, mu: float, target: MomentumGrid | None = None) -> StateVector:
    """``(V_mu phi)(k) = sqrt(mu) phi(mu k)``.

    Without ``target`` the result lives on ``(n_half, q/mu)``, whose nodes are
    exactly ``k_j / mu``, so no interpolation is needed and the norm is kept to
    round-off.  With a ``target`` grid the samples are linearly interpolated
    and a warning is issued.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    g = state.grid
    if target is None:
        return StateVector(MomentumGrid(g.n_half, g.q_max / mu), math.sqrt(mu) * state.amplitudes)
    warnings.warn("apply_dilation: resampling by linear interpolation", stacklevel=2)
    kk = mu * target.k_values
    amps = state.amplitudes
    re = np.interp(kk, g.k_values, amps.real, left=0.0, right=0.0)
    im = np.interp(kk, g.k_values, amps.imag, left=0.0, right=0.0) if np.iscomplexobj(amps) else 0.0
    return StateVector(target, math.sqrt(mu) * (re + 1j * im if np.iscomplexobj(amps) else re))
