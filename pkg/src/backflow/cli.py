"""Command-line interface: ``backflow <verb> [options]``.

Every verb writes a self-describing archive (``--out``, default
``<verb>.bfz``) and, where the data is tabular, a CSV next to it with the
same stem.  Progress goes to stderr, a short summary to stdout.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from . import dynamics as dyn
from . import operators as ops
from . import spectral as sp
from .archive import ArchiveError, ResultArchive, load_archive, save_archive, write_csv
from .transforms import MomentumGrid, StateVector, make_grid

log = logging.getLogger("backflow")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
VERBS = ("lambda", "extrapolate", "eigenvector", "evolve", "current", "flowlines", "normconv", "verify")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    n0: int = sp.N0
    q0: float = sp.Q0
    h_max: int = 40
    iterations: int = sp.N_ITER
    T: float = 1.0
    route: str = "kernel"
    t_min: float = -3.0
    t_max: float = 3.0
    t_step: float = 0.01
    x_min: float = -20.0
    x_max: float = 20.0
    dt: float = 1e-3
    prob_spacing: float = dyn.PROB_SPACING
    oversample: int = 4
    seed: int | None = None
    workers: int = 1
    out: str | None = None
    resume: str | None = None
    checkpoint_dir: str = ".cache/protocol"

    def validate(self) -> None:
        if self.command not in VERBS:
            raise UsageError(f"unknown command {self.command!r}")
        for name in ("n0", "h_max", "iterations", "workers", "oversample"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be a positive integer, got {v}")
        if self.n0 < 2:
            raise UsageError("--n0 must be at least 2")
        for name in ("q0", "T", "t_step", "dt", "prob_spacing"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise UsageError(f"--{name.replace('_', '-')} must be positive, got {v}")
        if not self.t_min < self.t_max:
            raise UsageError("--t-min must be below --t-max")
        if not self.x_min < self.x_max:
            raise UsageError("--x-min must be below --x-max")
        if self.route not in ops.ROUTES:
            raise UsageError(f"--route must be one of {', '.join(ops.ROUTES)}")
        if self.resume is not None and not Path(self.resume).exists():
            raise UsageError(f"--resume archive {self.resume} does not exist")

    @property
    def out_path(self) -> Path:
        return Path(self.out or f"{self.command}.bfz")

    def record(self) -> dict:
        """Parameters that determine the payload (output locations excluded)."""
        d = asdict(self)
        for key in ("out", "resume", "workers", "checkpoint_dir"):
            d.pop(key)
        return d


# -- helpers -------------------------------------------------------------------

def _grid(cfg: RunConfig) -> MomentumGrid:
    return make_grid(cfg.n0, cfg.q0)


def _start(cfg: RunConfig, grid: MomentumGrid) -> StateVector:
    if cfg.seed is None:
        return StateVector(grid, np.ones(grid.n_half))
    return sp.random_start(grid, cfg.seed)


def _same_problem(cfg: RunConfig, other: dict) -> bool:
    keys = ("n0", "q0", "iterations", "T", "route", "seed")
    return all(other.get(k) == getattr(cfg, k) for k in keys)


def _maximizer(cfg: RunConfig) -> tuple[StateVector, float, str]:
    """The power-method vector for the configured grid, reused from ``--resume`` when it matches."""
    grid = _grid(cfg)
    if cfg.resume:
        arc = load_archive(cfg.resume)
        if "phi" in arc.arrays and _same_problem(cfg, arc.config):
            log.info("reusing maximizing vector from %s", cfg.resume)
            return StateVector(grid, arc.arrays["phi"]), float(arc.scalars["lambda"]), "resumed"
        log.warning("--resume archive does not match this problem; recomputing")
    log.info("power method on n_half=%d q=%g (%d iterations, route %s)", grid.n_half, grid.q_max, cfg.iterations, cfg.route)
    res = sp.power_iterate(
        ops.ShiftedOperator(ops.BackflowOperator(grid, T=cfg.T, route=cfg.route)),
        _start(cfg, grid),
        cfg.iterations,
    )
    return res.final_vector, res.lam, "computed"


def _csv_path(cfg: RunConfig, suffix: str = "") -> Path:
    p = cfg.out_path
    return p.with_name(p.stem + suffix + ".csv")


def _save(cfg: RunConfig, kind: str, arrays: dict, scalars: dict) -> ResultArchive:
    return save_archive(cfg.out_path, kind, cfg.record(), arrays, scalars)


def _t_grid(cfg: RunConfig) -> np.ndarray:
    n = int(round((cfg.t_max - cfg.t_min) / cfg.t_step))
    return np.round(cfg.t_min + cfg.t_step * np.arange(n + 1), 12)


# -- verbs ---------------------------------------------------------------------

def cmd_lambda(cfg: RunConfig) -> dict:
    grid = _grid(cfg)
    op = ops.ShiftedOperator(ops.BackflowOperator(grid, T=cfg.T, route=cfg.route))
    res = sp.power_iterate(op, _start(cfg, grid), cfg.iterations)
    _save(cfg, "lambda",
          {"estimates": res.estimates, "residuals": res.residuals, "k": grid.k_values, "phi": res.final_vector.amplitudes},
          {"lambda": res.lam, "iterations": res.iterations, "final_residual": float(res.residuals[-1])})
    write_csv(_csv_path(cfg), cfg.record(),
              {"iteration": np.arange(1, res.iterations + 1), "lambda_estimate": res.estimates, "residual": res.residuals})
    return {"lambda": res.lam, "final_residual": float(res.residuals[-1])}


def cmd_extrapolate(cfg: RunConfig) -> dict:
    h_list = list(range(1, cfg.h_max + 1))
    done = {}
    if cfg.resume:
        arc = load_archive(cfg.resume)
        if arc.kind == "extrapolate" and all(arc.config.get(k) == getattr(cfg, k) for k in ("n0", "q0", "iterations", "route")):
            done = {int(h): float(l) for h, l in zip(arc.arrays["h"], arc.arrays["lambda_h"])}
    pts = sp.run_h_protocol(h_list, cfg.n0, cfg.q0, cfg.iterations, cfg.route, cfg.workers, cfg.checkpoint_dir, done)
    try:
        ext = sp.ExtrapolationResult.from_points(pts)
    except ValueError as exc:
        raise FloatingPointError(f"fit failed: {exc}") from exc
    h = ext.h_values.astype(float)
    h_fine = np.logspace(0, math.log10(max(h.max(), 2.0) * 4), 200)
    summary = ext.summary()
    _save(cfg, "extrapolate",
          {"h": ext.h_values, "lambda_h": ext.lambda_h, "h_fine": h_fine,
           "sqrt_curve": ext.sqrt_fit(h_fine), "cubic_curve": ext.cubic_fit(h_fine)},
          summary)
    write_csv(_csv_path(cfg), cfg.record(),
              {"h": h, "lambda_h": ext.lambda_h, "sqrt_fit": ext.sqrt_fit(h), "cubic_fit": ext.cubic_fit(h)})
    write_csv(_csv_path(cfg, "_curves"), cfg.record(),
              {"h": h_fine, "sqrt_fit": ext.sqrt_fit(h_fine), "cubic_fit": ext.cubic_fit(h_fine)})
    return {"lambda_inf": ext.lambda_inf_reported, "lambda_inf_sqrt": ext.sqrt_fit.lambda_inf}


def cmd_eigenvector(cfg: RunConfig) -> dict:
    phi, lam, origin = _maximizer(cfg)
    x, psi = dyn.evolve_position(phi, 0.0, cfg.oversample)
    sel = (x >= cfg.x_min) & (x <= cfg.x_max)
    par = dyn.parity_residuals(phi)
    _save(cfg, "eigenvector",
          {"k": phi.grid.k_values, "phi": phi.amplitudes, "x": x[sel], "psi": psi[sel]},
          {"lambda": lam, **par})
    write_csv(_csv_path(cfg, "_momentum"), cfg.record(), {"k": phi.grid.k_values, "phi": phi.amplitudes.real})
    write_csv(_csv_path(cfg, "_position"), cfg.record(),
              {"x": x[sel], "re_psi": psi[sel].real, "im_psi": psi[sel].imag, "rho": np.abs(psi[sel]) ** 2})
    return {"lambda": lam, "vector": origin, **par}


def cmd_evolve(cfg: RunConfig) -> dict:
    phi, lam, _ = _maximizer(cfg)
    fld = dyn.current_field(phi, _t_grid(cfg), (cfg.x_min, cfg.x_max), cfg.oversample)
    window = fld.rho.sum(axis=1) * fld.dx
    _save(cfg, "evolve",
          {"t": fld.t_values, "x": fld.x_values, "rho": fld.rho, "j": fld.j, "mass": fld.mass, "window_mass": window},
          {"lambda": lam, "mass_drift": float(np.ptp(fld.mass)), "min_window_mass": float(window.min())})
    return {"slices": len(fld.t_values), "mass_drift": float(np.ptp(fld.mass)), "min_window_mass": float(window.min())}


def cmd_current(cfg: RunConfig) -> dict:
    phi, lam, _ = _maximizer(cfg)
    t = _t_grid(cfg)
    j0 = dyn.current(phi, t)
    p = dyn.half_space_probability(phi, t)
    lam_phi, (s_opt, t_opt) = dyn.backflow_functional(phi, t)
    # area under j(t, 0) over [-1, 1] with a step that resolves the fast terms
    tf = np.linspace(-1.0, 1.0, 20001)
    area = float(integrate.simpson(dyn.current(phi, tf), x=tf))
    scalars = {"lambda": lam, "lambda_phi": lam_phi, "s_opt": s_opt, "t_opt": t_opt, "current_area": area}
    _save(cfg, "current", {"t": t, "j0": j0, "P": p}, scalars)
    write_csv(_csv_path(cfg), cfg.record(), {"t": t, "j0": j0, "P": p})
    return scalars


def cmd_flowlines(cfg: RunConfig) -> dict:
    phi, lam, _ = _maximizer(cfg)
    lines = dyn.flow_lines(phi, cfg.t_min, cfg.t_max, cfg.prob_spacing, dt=cfg.dt, x_window=(cfg.x_min, cfg.x_max),
                           oversample=cfg.oversample)
    n_out = int(round((cfg.t_max - cfg.t_min) / cfg.dt))
    times = cfg.t_min + (cfg.t_max - cfg.t_min) / n_out * np.arange(n_out + 1)
    pos = np.full((n_out + 1, len(lines)), np.nan)
    for i, ln in enumerate(lines):
        pos[: len(ln.x), i] = ln.x
    codes = {None: 0, "low_density": 1, "left_window": 2}
    term = np.array([codes[ln.terminated] for ln in lines], dtype=np.int8)
    quant = np.array([ln.seed_quantile for ln in lines])
    _save(cfg, "flowlines", {"t": times, "x": pos, "seed_quantile": quant, "terminated": term},
          {"lambda": lam, "n_lines": len(lines), "termination_codes": {"0": "none", "1": "low_density", "2": "left_window"}})
    stride = max(1, int(round(0.01 / cfg.dt)))
    cols = {"t": times[::stride]}
    cols.update({f"line{i:04d}": pos[::stride, i] for i in range(len(lines))})
    write_csv(_csv_path(cfg), cfg.record(), cols)
    return {"n_lines": len(lines), "stopped_low_density": int((term == 1).sum()), "left_window": int((term == 2).sum())}


def cmd_normconv(cfg: RunConfig) -> dict:
    phi, lam, _ = _maximizer(cfg)
    cmp_ = dyn.NormComparison.build(phi)
    i_quad = dyn.reference_integral("quad")
    i_mp = dyn.reference_integral("mpmath")
    scalars = {
        "lambda": lam,
        "norm_constant_sq": 1.0 / i_quad,
        "integral_quad": i_quad,
        "integral_mpmath": i_mp,
        "reference_deficit": cmp_.reference_deficit,
        "state_final": float(cmp_.state_cumulative[-1]),
    }
    _save(cfg, "normconv",
          {"k": cmp_.k_values, "state_cumulative": cmp_.state_cumulative, "reference_cumulative": cmp_.reference_cumulative},
          scalars)
    write_csv(_csv_path(cfg), cfg.record(),
              {"k": cmp_.k_values, "state_cumulative": cmp_.state_cumulative, "reference_cumulative": cmp_.reference_cumulative})
    return scalars


# -- verify ----------------------------------------------------------------------

def _rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def verification_suite(
    seed: int = 0, n_half: int = 2000, q: float = 50.0, continuity_grid: tuple[int, float] = (sp.N0, sp.Q0)
) -> list[tuple[str, float, float]]:
    """``(name, measured, tolerance)`` for the oracle and invariant checks.

    The continuity rows run on ``continuity_grid``: on coarser grids the short
    period circle lets the tail re-enter through ``x = L/2``.
    """
    rng = np.random.default_rng(seed)
    grid = make_grid(n_half, q)
    out = []

    def rand(n):
        return rng.standard_normal(n) + 1j * rng.standard_normal(n)

    # box routes against each other
    small = make_grid(256, 20.0)
    sand = ops.BackflowOperator(small, route="sandwich")
    hil = ops.BackflowOperator(small, route="hilbert")
    worst = 0.0
    for _ in range(5):
        v = rand(small.n_half)
        worst = max(worst, _rel(sand.matvec_general(v), hil.matvec_general(v)))
    out.append(("sandwich vs hilbert route (relative)", worst, 1e-10))

    # dense kernel against matrix-free power iteration
    dense = ops.build_dense(grid)
    lam_dense = sp.power_iterate(lambda v: dense.matrix @ v + v, np.ones(n_half), sp.N_ITER, shift=1.0).lam
    lam_free = sp.estimate_lambda(grid).lam
    out.append(("dense vs matrix-free lambda", abs(lam_dense - lam_free), 2e-3))
    v = rand(n_half)
    kern = ops.BackflowOperator(grid)
    out.append(("dense vs kernel matvec (relative)", _rel(kern.matvec(v), dense.matrix @ v), 1e-10))

    # self-adjointness
    worst = 0.0
    for _ in range(20):
        a, b = rand(n_half), rand(n_half)
        lhs = np.vdot(a, kern.matvec(b))
        rhs = np.vdot(kern.matvec(a), b)
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(a) * np.linalg.norm(b)))
    out.append(("self-adjointness", worst, 1e-11))

    # H^2 = -id and idempotent projection on the full line
    f = rand(grid.n_full)
    out.append(("H^2 = -id", _rel(ops.apply_hilbert(ops.apply_hilbert(f, grid.dk), grid.dk), -f), 1e-12))
    pf = ops.apply_position_projection(f, grid.dk)
    out.append(("projection idempotent", _rel(ops.apply_position_projection(pf, grid.dk), pf), 1e-12))

    # dilation covariance: <V phi, B_T V phi> = <phi, B_{mu^2 T} phi>
    phi = sp.gaussian_probe(make_grid(1024, 30.0), 6.0, 2.0)
    mu = 2.0
    lhs = ops.BackflowOperator(phi.grid, T=4.0).expectation(phi)
    dil = ops.apply_dilation(phi, 1.0 / mu)
    rhs = ops.BackflowOperator(dil.grid, T=1.0).expectation(dil)
    out.append(("dilation covariance T=1 vs T=4", abs(lhs - rhs), 1e-8))

    # continuity dP/dt = j(t, 0) on the base-grid maximizer, uniform t set over [-3, 3]
    vmax = sp.estimate_lambda(make_grid(*continuity_grid)).final_vector
    jmax = np.abs(dyn.current(vmax, np.linspace(-3, 3, 601))).max()
    t_set = np.linspace(-3, 3, 25)
    for h, label in ((1e-3, "centred step 1e-3"), (1e-6, "centred step 1e-6")):
        p = dyn.half_space_probability(vmax, np.concatenate([t_set - h, t_set + h]))
        fd = (p[len(t_set):] - p[:len(t_set)]) / (2 * h)
        worst = float(np.max(np.abs(fd - dyn.current(vmax, t_set))) / jmax)
        out.append((f"continuity |dP/dt - j(t,0)| / max|j|, {label}", worst, 1e-3))

    # Dollard trend
    tab = sp.dollard_probe([1.0], [1.0, 4.0, 16.0, 64.0])
    vals = tab.values[0]
    monotone = float(np.max(np.diff(vals)))
    out.append(("Dollard trend: largest step up", max(monotone, 0.0), 0.0))
    out.append(("Dollard trend: value at T=64 above -0.9", max(vals[-1] + 0.9, 0.0), 0.0))
    return out


def cmd_verify(cfg: RunConfig) -> dict:
    rows = verification_suite(seed=cfg.seed or 0, continuity_grid=(cfg.n0, cfg.q0))
    failed = 0
    for name, measured, tol in rows:
        ok = measured <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {measured:.3e} (tolerance {tol:.0e})")
    save_archive(cfg.out_path, "verify", cfg.record(),
                 {"measured": np.array([r[1] for r in rows]), "tolerance": np.array([r[2] for r in rows])},
                 {"names": [r[0] for r in rows], "failed": failed})
    if failed:
        raise VerificationFailed(f"{failed} check(s) failed")
    return {"checks": len(rows), "failed": 0}


class VerificationFailed(Exception):
    pass


COMMANDS = {
    "lambda": cmd_lambda,
    "extrapolate": cmd_extrapolate,
    "eigenvector": cmd_eigenvector,
    "evolve": cmd_evolve,
    "current": cmd_current,
    "flowlines": cmd_flowlines,
    "normconv": cmd_normconv,
    "verify": cmd_verify,
}


# -- argument parsing ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="backflow", description="Quantum backflow constant: estimates, extrapolation and dynamics data.")
    p.add_argument("command", choices=VERBS)
    p.add_argument("--n0", type=int, default=sp.N0, help="momentum samples on [0, q0]")
    p.add_argument("--q0", type=float, default=sp.Q0, help="momentum cutoff")
    p.add_argument("--h-max", type=int, default=40, help="h-protocol runs h = 1..h_max")
    p.add_argument("--iterations", type=int, default=sp.N_ITER)
    p.add_argument("--T", type=float, default=1.0, help="backflow time window half-width")
    p.add_argument("--route", choices=ops.ROUTES, default="kernel")
    p.add_argument("--t-min", type=float, default=-3.0)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--t-step", type=float, default=0.01, help="time sampling of fields and curves")
    p.add_argument("--x-min", type=float, default=-20.0)
    p.add_argument("--x-max", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-3, help="flow-line sample step")
    p.add_argument("--prob-spacing", type=float, default=dyn.PROB_SPACING)
    p.add_argument("--oversample", type=int, default=4, help="position-grid refinement factor")
    p.add_argument("--seed", type=int, default=None, help="random start vector (default: constant start)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=None, help="archive path (default <command>.bfz)")
    p.add_argument("--resume", default=None, help="archive to reuse results from")
    p.add_argument("--checkpoint-dir", default=".cache/protocol")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    kw = {k: v for k, v in vars(args).items() if k != "verbose"}
    return RunConfig(**kw)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = config_from_args(args)
    try:
        cfg.validate()
    except UsageError as exc:
        print(f"backflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = COMMANDS[cfg.command](cfg)
    except VerificationFailed as exc:
        print(f"backflow: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except ArchiveError as exc:
        print(f"backflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (sp.PowerIterationError, FloatingPointError, MemoryError, ValueError) as exc:
        print(f"backflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
