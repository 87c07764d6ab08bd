"""Centred-difference continuity residual against the step size.

Prints ``|dP/dt - j(t, 0)| / max|j|`` for several steps on the base-grid
maximizer, plus the same residual with the flux through the antipode
``x = L/2`` of the period circle subtracted.
"""

import argparse

import numpy as np

from backflow import dynamics as dyn
from backflow.spectral import N0, Q0, estimate_lambda
from backflow.transforms import make_grid


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n0", type=int, default=N0)
    p.add_argument("--q0", type=float, default=Q0)
    p.add_argument("--times", type=float, nargs="+", default=[-1.5, -1.0, -0.5, 0.0, 0.3, 0.8])
    args = p.parse_args()
    phi = estimate_lambda(make_grid(args.n0, args.q0)).final_vector
    jmax = np.abs(dyn.current(phi, np.linspace(-3, 3, 601))).max()
    antipode = np.pi / phi.grid.dk
    print(f"{'t':>6} {'step':>7} {'residual':>10} {'with antipode':>14}")
    for t in args.times:
        for h in (1e-3, 1e-4, 1e-5, 1e-6):
            pm = dyn.half_space_probability(phi, np.array([t - h, t + h]))
            fd = (pm[1] - pm[0]) / (2 * h)
            r0 = abs(fd - dyn.current(phi, t)) / jmax
            r1 = abs(fd - dyn.current(phi, t) + dyn.current(phi, t, antipode)) / jmax
            print(f"{t:6.2f} {h:7.0e} {r0:10.2e} {r1:14.2e}")


if __name__ == "__main__":
    main()
