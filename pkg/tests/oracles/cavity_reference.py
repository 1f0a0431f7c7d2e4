"""Independent lid-driven cavity reference: streamfunction-vorticity
formulation on a uniform staggered-free node grid, implicit streamfunction
solve via sparse LU, explicit vorticity transport.

Run as a script to recompute the frozen steady-state values:

    python -m tests.oracles.cavity_reference [n] [Re]

The discretisation (node-based, second-order central, direct solves) shares
nothing with the package's collocated fractional-step code.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# frozen output of run_reference(n=128, re=100.0), see __main__ below
REFERENCE_VORTEX_RE100 = (0.6153894458402098, 0.7377932282323278)
REFERENCE_PSI_MIN_RE100 = -0.10332471


def _poisson_matrix(n: int, h: float) -> sp.csc_matrix:
    """5-point Laplacian on the interior nodes of an (n+1)^2 node grid with
    homogeneous Dirichlet boundary."""
    m = n - 1
    main = -4.0 * np.ones(m * m)
    side = np.ones(m * m - 1)
    side[np.arange(1, m * m) % m == 0] = 0.0
    updown = np.ones(m * m - m)
    a = sp.diags(
        [main, side, side, updown, updown],
        [0, -1, 1, -m, m], format="csc") / (h * h)
    return a


def run_reference(n: int = 128, re: float = 100.0, lid: float = 1.0,
                  t_end: float = 60.0, tol: float = 1e-10):
    """March vorticity to steady state; returns (x, y, psi, u, v)."""
    h = 1.0 / n
    nu = lid / re
    x = np.linspace(0.0, 1.0, n + 1)
    y = np.linspace(0.0, 1.0, n + 1)
    omega = np.zeros((n + 1, n + 1))  # indexed [i, j] = [x, y]
    psi = np.zeros((n + 1, n + 1))
    lu = spla.splu(_poisson_matrix(n, h))

    dt = min(0.25 * h * h / nu, 0.5 * h / lid)
    steps = int(t_end / dt)
    inv2h = 1.0 / (2.0 * h)
    invh2 = 1.0 / (h * h)

    for it in range(steps):
        # psi from omega (Dirichlet psi=0 on all walls)
        rhs = -omega[1:-1, 1:-1].T.ravel()
        psi[1:-1, 1:-1] = lu.solve(rhs).reshape(n - 1, n - 1).T

        u = np.zeros_like(psi)
        v = np.zeros_like(psi)
        u[1:-1, 1:-1] = (psi[1:-1, 2:] - psi[1:-1, :-2]) * inv2h
        v[1:-1, 1:-1] = -(psi[2:, 1:-1] - psi[:-2, 1:-1]) * inv2h
        u[:, -1] = lid

        # wall vorticity (first-order Thom)
        omega_new = omega.copy()
        omega_new[0, :] = -2.0 * psi[1, :] * invh2
        omega_new[-1, :] = -2.0 * psi[-2, :] * invh2
        omega_new[:, 0] = -2.0 * psi[:, 1] * invh2
        omega_new[:, -1] = -2.0 * psi[:, -2] * invh2 - 2.0 * lid / h

        adv = (u[1:-1, 1:-1] * (omega[2:, 1:-1] - omega[:-2, 1:-1]) * inv2h
               + v[1:-1, 1:-1] * (omega[1:-1, 2:] - omega[1:-1, :-2]) * inv2h)
        lap = ((omega[2:, 1:-1] + omega[:-2, 1:-1]
                + omega[1:-1, 2:] + omega[1:-1, :-2]
                - 4.0 * omega[1:-1, 1:-1]) * invh2)
        omega_new[1:-1, 1:-1] = omega[1:-1, 1:-1] + dt * (nu * lap - adv)

        change = float(np.max(np.abs(omega_new - omega))) * (1.0 / dt)
        omega = omega_new
        if it % 200 == 0 and change < tol:
            break
    return x, y, psi, u, v


def vortex_center_from_psi(x: np.ndarray, y: np.ndarray, psi: np.ndarray):
    """Location of the streamfunction extremum, refined by a quadratic fit
    around the extremal node."""
    i, j = np.unravel_index(np.argmax(np.abs(psi)), psi.shape)
    h_x = x[1] - x[0]
    h_y = y[1] - y[0]
    cx, cy = x[i], y[j]
    if 0 < i < len(x) - 1:
        denom = psi[i - 1, j] - 2.0 * psi[i, j] + psi[i + 1, j]
        if denom != 0.0:
            cx += 0.5 * h_x * (psi[i - 1, j] - psi[i + 1, j]) / denom
    if 0 < j < len(y) - 1:
        denom = psi[i, j - 1] - 2.0 * psi[i, j] + psi[i, j + 1]
        if denom != 0.0:
            cy += 0.5 * h_y * (psi[i, j - 1] - psi[i, j + 1]) / denom
    return float(cx), float(cy)


def vortex_center_from_velocity(xc: np.ndarray, yc: np.ndarray,
                                u: np.ndarray, v: np.ndarray):
    """Vortex centre of a cell-centred 2D velocity field: integrate the
    streamfunction column-wise (psi_y = u) and locate its extremum."""
    hy = yc[1] - yc[0]
    psi = np.cumsum(u, axis=1) * hy
    # anchor each column so psi is continuous along x (psi_x = -v)
    hx = xc[1] - xc[0]
    col_shift = np.concatenate(([0.0], np.cumsum(-0.5 * (v[:-1, 0] + v[1:, 0]) * hx)))
    psi = psi + col_shift[:, None]
    return vortex_center_from_psi(xc, yc, psi)


if __name__ == "__main__":
    import sys

    n = int(sys.argv[1]) if len(sys.argv) > 1 else 128
    re = float(sys.argv[2]) if len(sys.argv) > 2 else 100.0
    x, y, psi, u, v = run_reference(n, re)
    center = vortex_center_from_psi(x, y, psi)
    print(f"n={n} Re={re}")
    print(f"primary vortex centre: ({center[0]:.16f}, {center[1]:.16f})")
    print(f"min psi: {psi.min():.8f}")
