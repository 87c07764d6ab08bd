"""Power iteration, the h-refinement protocol and the extrapolation fits."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc

from .operators import BackflowOperator, Route, ShiftedOperator
from .transforms import MomentumGrid, StateVector, make_grid

log = logging.getLogger(__name__)

N0 = 10_000
Q0 = 50.0
N_ITER = 1000


class PowerIterationError(RuntimeError):
    """Raised when the iteration produces non-finite values."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class PowerResult:
    """Outcome of a power-method run.

    ``estimates`` are Rayleigh quotients with the shift removed, i.e. they
    estimate ``lambda`` directly.
    """

    estimates: np.ndarray
    residuals: np.ndarray
    final_vector: StateVector
    iterations: int
    shift: float = 1.0

    @property
    def lam(self) -> float:
        return float(self.estimates[-1])


def power_iterate(
    operator: Callable[[np.ndarray], np.ndarray],
    v0: StateVector | np.ndarray,
    n_iter: int = N_ITER,
    shift: float | None = None,
    tol: float | None = None,
    grid: MomentumGrid | None = None,
) -> PowerResult:
    """Run ``v_{n+1} = A v_n / ||v_n||`` and track ``a_n = <A v_n, v_n> / ||v_n||^2``.

    ``operator`` is either a :class:`ShiftedOperator` (its ``shift`` is taken
    over) or any callable on arrays, in which case ``shift`` defaults to 0.
    ``tol`` enables an early stop once the residual
    ``||A v_n - a_n v_n|| / ||v_n||`` drops below it.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if shift is None:
        shift = getattr(operator, "shift", 0.0)
    matvec = getattr(operator, "matvec", operator)
    if isinstance(v0, StateVector):
        grid = v0.grid
        v = v0.amplitudes
    else:
        v = np.asarray(v0)
        grid = grid or getattr(operator, "grid", None)
    v = v.astype(complex if np.iscomplexobj(v) else float)

    norm = np.linalg.norm(v)
    if not norm > 0 or not np.isfinite(norm):
        raise ValueError("starting vector is numerically zero or not finite")

    estimates = np.empty(n_iter)
    residuals = np.empty(n_iter)
    it = 0
    for it in range(n_iter):
        w = matvec(v)
        vv = norm * norm
        a = np.vdot(v, w).real / vv
        res = np.linalg.norm(w - a * v) / norm
        if not (np.isfinite(a) and np.isfinite(res)):
            raise PowerIterationError(f"non-finite iterate at iteration {it}", it)
        estimates[it] = a - shift
        residuals[it] = res
        v = w / norm
        norm = np.linalg.norm(v)
        if tol is not None and res < tol:
            break
    n = it + 1
    final = v / norm
    if grid is not None:
        final = StateVector(grid, final / math.sqrt(grid.dk))
    return PowerResult(estimates[:n].copy(), residuals[:n].copy(), final, n, shift)


def estimate_lambda(
    grid: MomentumGrid,
    n_iter: int = N_ITER,
    v0: StateVector | None = None,
    route: Route = "kernel",
    T: float = 1.0,
    tol: float | None = None,
) -> PowerResult:
    """Power method on ``Pi B_T Pi + id`` started (by default) from the constant vector."""
    if v0 is None:
        v0 = StateVector(grid, np.ones(grid.n_half))
    op = ShiftedOperator(BackflowOperator(grid, T=T, route=route))
    return power_iterate(op, v0, n_iter, tol=tol)


def random_start(grid: MomentumGrid, seed: int) -> StateVector:
    """Seeded positive random start vector (never orthogonal to a positive eigenvector)."""
    rng = np.random.default_rng(seed)
    return StateVector(grid, rng.uniform(0.1, 1.0, grid.n_half))


# -- h protocol --------------------------------------------------------------

def protocol_grid(h: int, n0: int = N0, q0: float = Q0) -> MomentumGrid:
    return make_grid(n0 * h, q0 * math.sqrt(h))


def _protocol_point(args) -> tuple[int, float, float]:
    h, n0, q0, n_iter, route = args
    res = estimate_lambda(protocol_grid(h, n0, q0), n_iter, route=route)
    return h, res.lam, float(res.residuals[-1])


def protocol_key(n0: int, q0: float, n_iter: int, route: str) -> str:
    blob = json.dumps({"n0": n0, "q0": q0, "n_iter": n_iter, "route": route}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_h_protocol(
    h_list: Sequence[int],
    n0: int = N0,
    q0: float = Q0,
    n_iter: int = N_ITER,
    route: Route = "kernel",
    workers: int = 1,
    checkpoint_dir: str | os.PathLike | None = None,
    done: dict[int, float] | None = None,
    on_point: Callable[[int, float], None] | None = None,
) -> list[tuple[int, float]]:
    """Compute ``lambda_h`` on the grids ``N = n0 h``, ``q = q0 sqrt(h)``.

    Points found in ``done`` or in ``checkpoint_dir`` are reused; each new
    point is written to ``checkpoint_dir`` as soon as it is available.
    """
    h_list = [int(h) for h in h_list]
    if not h_list:
        raise ValueError("empty h list")
    if any(h < 1 for h in h_list):
        raise ValueError("h values must be >= 1")
    if any(b <= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError("h values must be strictly ascending")

    results: dict[int, float] = dict(done or {})
    ckpt = None
    if checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir) / protocol_key(n0, q0, n_iter, route)
        ckpt.mkdir(parents=True, exist_ok=True)
        for h in h_list:
            f = ckpt / f"h{h:04d}.json"
            if h not in results and f.exists():
                results[h] = json.loads(f.read_text())["lambda_h"]

    def record(h, lam, res):
        log.info("h=%d lambda_h=%.10f residual=%.2e", h, lam, res)
        results[h] = lam
        if ckpt is not None:
            payload = {"h": h, "lambda_h": lam, "residual": res, "n0": n0, "q0": q0,
                       "n_iter": n_iter, "route": route}
            tmp = ckpt / f".h{h:04d}.tmp"
            tmp.write_text(json.dumps(payload))
            tmp.replace(ckpt / f"h{h:04d}.json")
        if on_point is not None:
            on_point(h, lam)

    todo = [(h, n0, q0, n_iter, route) for h in h_list if h not in results]
    # largest grids first keeps the pool busy till the end
    todo.sort(key=lambda a: -a[0])
    try:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for h, lam, res in pool.map(_protocol_point, todo):
                    record(h, lam, res)
        else:
            for args in todo:
                record(*_protocol_point(args))
    except PowerIterationError as exc:
        raise PowerIterationError(f"h-protocol failed: {exc}", exc.iteration) from exc
    return [(h, results[h]) for h in h_list]


# -- fits --------------------------------------------------------------------

@dataclass(frozen=True)
class SqrtFit:
    lambda_inf: float
    b: float
    rms: float

    def __call__(self, h):
        return self.lambda_inf + self.b / np.sqrt(h)


@dataclass(frozen=True)
class CubicFit:
    coefficients: tuple[float, float, float, float]
    rms: float

    @property
    def lambda_inf(self) -> float:
        return self.coefficients[0]

    def __call__(self, h):
        s = 1.0 / np.sqrt(h)
        return np.polynomial.polynomial.polyval(s, self.coefficients)


def _lstsq(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise ValueError("rank-deficient design: need more distinct h values")
    rms = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return coef, rms


def _split(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be a sequence of (h, lambda_h) pairs")
    return arr[:, 0], arr[:, 1]


def fit_sqrt(points) -> SqrtFit:
    """Least squares of ``lambda_inf + b / sqrt(h)``."""
    h, lam = _split(points)
    if len(h) < 3:
        raise ValueError("fit_sqrt needs at least 3 points")
    design = np.column_stack([np.ones_like(h), h ** -0.5])
    coef, rms = _lstsq(design, lam)
    return SqrtFit(float(coef[0]), float(coef[1]), rms)


def fit_cubic(points) -> CubicFit:
    """Least squares cubic in ``s = 1/sqrt(h)``; the intercept ``c0`` is ``lambda_inf``."""
    h, lam = _split(points)
    if len(h) < 5:
        raise ValueError("fit_cubic needs at least 5 points")
    s = h ** -0.5
    design = np.column_stack([s ** p for p in range(4)])
    coef, rms = _lstsq(design, lam)
    return CubicFit(tuple(float(c) for c in coef), rms)


@dataclass
class ExtrapolationResult:
    h_values: np.ndarray
    lambda_h: np.ndarray
    sqrt_fit: SqrtFit
    cubic_fit: CubicFit

    @property
    def lambda_inf_reported(self) -> float:
        return self.cubic_fit.lambda_inf

    @classmethod
    def from_points(cls, points) -> "ExtrapolationResult":
        h, lam = _split(points)
        return cls(h.astype(int), lam, fit_sqrt(points), fit_cubic(points))

    def summary(self) -> dict:
        return {
            "lambda_inf_cubic": self.cubic_fit.lambda_inf,
            "cubic_coefficients": list(self.cubic_fit.coefficients),
            "cubic_rms": self.cubic_fit.rms,
            "lambda_inf_sqrt": self.sqrt_fit.lambda_inf,
            "sqrt_b": self.sqrt_fit.b,
            "sqrt_rms": self.sqrt_fit.rms,
        }


# -- Dollard probe -----------------------------------------------------------

@dataclass
class DollardTable:
    widths: np.ndarray
    T_values: np.ndarray
    values: np.ndarray  # shape (len(widths), len(T_values))
    leaked_mass: np.ndarray  # mass of the untruncated probe beyond q, per width
    grid: MomentumGrid = field(repr=False)

    @property
    def leaking(self) -> np.ndarray:
        return self.leaked_mass > 1e-6


def gaussian_probe(grid: MomentumGrid, k0: float, width: float) -> StateVector:
    """Normalized ``exp(-(k - k0)^2 / (2 width^2))`` restricted to ``k > 0``."""
    amps = np.exp(-0.5 * ((grid.k_values - k0) / width) ** 2)
    return StateVector(grid, amps).normalized()


def probe_grid(k0: float, widths, T_max: float) -> MomentumGrid:
    """Grid wide enough for the probes and long enough (in position) for ``T_max``."""
    q = k0 + 12.0 * max(widths)
    # the circle of circumference 2 pi / dk must exceed the travel 4 q T_max
    dk = min(2.0 * np.pi / (8.0 * q * T_max), 0.01 * min(widths))
    return make_grid(int(math.ceil(q / dk)), q)


def dollard_probe(
    widths: Sequence[float],
    T_list: Sequence[float],
    k0: float = 5.0,
    grid: MomentumGrid | None = None,
    route: Route = "kernel",
) -> DollardTable:
    """``<phi, Pi B_T Pi phi>`` for positive-momentum Gaussians along ``T_list``."""
    widths = np.asarray(widths, dtype=float)
    T_values = np.asarray(T_list, dtype=float)
    if grid is None:
        grid = probe_grid(k0, widths, float(T_values.max()))
    values = np.empty((len(widths), len(T_values)))
    leaked = np.empty(len(widths))
    for i, w in enumerate(widths):
        # Gaussian mass beyond q relative to the mass on k > 0
        tail = 0.5 * erfc((grid.q_max - k0) / w)
        total = 0.5 * erfc(-k0 / w)
        leaked[i] = tail / total
        phi = gaussian_probe(grid, k0, w)
        for j, T in enumerate(T_values):
            values[i, j] = BackflowOperator(grid, T=T, route=route).expectation(phi)
    if np.any(leaked > 1e-6):
        log.warning("probe mass beyond q exceeds 1e-6 for widths %s", widths[leaked > 1e-6])
    return DollardTable(widths, T_values, values, leaked, grid)
