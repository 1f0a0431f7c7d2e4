"""Fractional-step incompressible Navier-Stokes integrator on the active
leaf grids.

Each step: boundary + halo exchange, an intermediate velocity that ignores
pressure (two-stage explicit scheme: half step predictor, full step
corrector; central diffusion, first-order upwind advection), a pressure
Poisson solve with damped Jacobi sweeps interleaved with halo exchanges, and
a projection of the intermediate velocity onto the divergence-free space.

Pressure is associated with cell faces through averaged intermediate
velocities (momentum interpolation on the collocated arrangement): the
Poisson right-hand side is the face-flux divergence of the averaged
intermediate field, and the compact face gradient corrects those fluxes, so
the face-based divergence of the projected field drops to the solve
tolerance instead of oscillating.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .exchange import TopologyIndex, run_exchange_cycle
from .geometry import AXES, Face, FACES, face_from_name
from .hiergrid import EXCHANGED, Forest, GridNode, PRESSURE, STARRED, VELOCITY

log = logging.getLogger(__name__)

NO_SLIP = "no_slip"
MOVING_WALL = "moving_wall"
INFLOW = "inflow"
OUTFLOW = "outflow"
SYMMETRY = "symmetry"
COUPLED = "coupled"  # ghost data prescribed externally (sub-simulation feed)

_KINDS = (NO_SLIP, MOVING_WALL, INFLOW, OUTFLOW, SYMMETRY, COUPLED)

_COMP_AXIS = {"u": 0, "v": 1, "w": 2, "us": 0, "vs": 1, "ws": 2}


class SolverError(RuntimeError):
    """Raised when the integration produced non-finite values."""


@dataclass
class FluidParams:
    rho: float = 1.0
    nu: float = 0.01
    dt: float = 1e-3
    cfl: float = 0.9
    poisson_tol: float = 1e-8
    poisson_max_iter: int = 20000
    adaptive_dt: bool = False
    poisson_omega: float = 0.8
    # "jacobi": damped sweeps; "cg": diagonally preconditioned conjugate
    # gradients (uniform-level forests only); "auto" picks cg when all
    # active leaves share one level
    poisson_solver: str = "auto"

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must be in (0, 1]")
        if self.poisson_solver not in ("auto", "jacobi", "cg"):
            raise ValueError(f"unknown pressure solver {self.poisson_solver!r}")

    @classmethod
    def from_config(cls, cfg: dict) -> "FluidParams":
        keys = ("rho", "nu", "dt", "cfl", "poisson_tol", "poisson_max_iter",
                "adaptive_dt", "poisson_omega", "poisson_solver")
        return cls(**{k: cfg[k] for k in keys if k in cfg})


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")


class BoundarySpec:
    """Boundary condition per domain face."""

    def __init__(self, faces: dict[Face, BoundaryCondition]):
        self.faces = dict(faces)
        for face, cond in self.faces.items():
            if cond.kind == MOVING_WALL and cond.velocity[face.axis] != 0.0:
                raise ValueError(
                    f"moving wall on {face.name} must have tangential velocity, "
                    f"got {cond.velocity}"
                )

    def condition(self, face: Face) -> BoundaryCondition:
        return self.faces.get(face, BoundaryCondition(NO_SLIP))

    def has_outflow(self) -> bool:
        return any(c.kind == OUTFLOW for c in self.faces.values())

    def replace(self, face: Face, cond: BoundaryCondition) -> None:
        if cond.kind == MOVING_WALL and cond.velocity[face.axis] != 0.0:
            raise ValueError("moving wall velocity must be tangential")
        self.faces[face] = cond

    @classmethod
    def cavity(cls, lid_velocity: float = 1.0) -> "BoundarySpec":
        """Unit-cavity walls: no-slip everywhere, top wall sliding in +x."""
        faces = {f: BoundaryCondition(NO_SLIP) for f in FACES}
        faces[face_from_name("y+")] = BoundaryCondition(
            MOVING_WALL, (lid_velocity, 0.0, 0.0))
        return cls(faces)

    @classmethod
    def from_config(cls, cfg: dict) -> "BoundarySpec":
        faces = {}
        for name, spec in cfg.items():
            vel = tuple(spec.get("velocity", (0.0, 0.0, 0.0)))
            faces[face_from_name(name)] = BoundaryCondition(spec["kind"], vel)
        return cls(faces)

    def as_json(self) -> dict:
        return {
            f.name: {"kind": c.kind, "velocity": list(c.velocity)}
            for f, c in self.faces.items()
        }


# -- ghost-layer rules -----------------------------------------------------

def _ghost(grid: GridNode, face: Face) -> tuple[slice, ...]:
    sel = [slice(1, -1)] * 3
    sel[face.axis] = slice(0, 1) if face.side == 0 else slice(-1, None)
    return tuple(sel)


def _inner(grid: GridNode, face: Face) -> tuple[slice, ...]:
    sel = [slice(1, -1)] * 3
    sel[face.axis] = slice(1, 2) if face.side == 0 else slice(-2, -1)
    return tuple(sel)


def _apply_condition_array(arr: np.ndarray, name: str, grid: GridNode,
                           face: Face, cond: BoundaryCondition) -> None:
    ghost = _ghost(grid, face)
    inner = _inner(grid, face)
    if name == "pd":
        # search directions see the homogeneous operator: prescribed-data
        # faces contribute zero, otherwise like pressure
        if cond.kind == COUPLED:
            arr[ghost] = 0.0
        else:
            arr[ghost] = -arr[inner] if cond.kind == OUTFLOW else arr[inner]
        return
    if cond.kind == COUPLED:
        return  # ghost layer already holds the fed-in values
    if name == "p":
        arr[ghost] = -arr[inner] if cond.kind == OUTFLOW else arr[inner]
        return
    axis = _COMP_AXIS[name]
    if cond.kind == OUTFLOW:
        arr[ghost] = arr[inner]
    elif cond.kind == INFLOW:
        arr[ghost] = 2.0 * cond.velocity[axis] - arr[inner]
    elif cond.kind == SYMMETRY:
        arr[ghost] = -arr[inner] if axis == face.axis else arr[inner]
    elif axis == face.axis:  # no normal flow through walls
        arr[ghost] = -arr[inner]
    elif cond.kind == MOVING_WALL:
        arr[ghost] = 2.0 * cond.velocity[axis] - arr[inner]
    else:  # no_slip tangential
        arr[ghost] = -arr[inner]


def effective_condition(grid: GridNode, face: Face, bc: BoundarySpec) -> BoundaryCondition:
    # an axis resolved by a single cell is a symmetry plane (pseudo-2D runs)
    if grid.cells[face.axis] == 1:
        return BoundaryCondition(SYMMETRY)
    return bc.condition(face)


def make_bc_apply(bc: BoundarySpec):
    """Boundary callback for the exchange cycle; records the resolved
    conditions on each grid so kernels can re-apply them to scratch states."""

    def apply(grid: GridNode, face: Face, quantities: tuple[str, ...]) -> None:
        cond = effective_condition(grid, face, bc)
        if grid.phys_bc is None:
            grid.phys_bc = {}
        grid.phys_bc[face] = cond
        for name in quantities:
            _apply_condition_array(grid.fields[name], name, grid, face, cond)

    return apply


# -- kernels ----------------------------------------------------------------

def _shift(arr: np.ndarray, axis: int, off: int) -> np.ndarray:
    sel = [slice(1, -1)] * 3
    sel[axis] = slice(1 + off, arr.shape[axis] - 1 + off)
    return arr[tuple(sel)]


def _advect_diffuse(vel: tuple[np.ndarray, np.ndarray, np.ndarray],
                    grid: GridNode, params: FluidParams) -> list[np.ndarray]:
    """nu*Laplacian - (u.grad) for each velocity component, interior shaped."""
    h = grid.spacings()
    centers = [f[1:-1, 1:-1, 1:-1] for f in vel]
    out = []
    for f in vel:
        fc = f[1:-1, 1:-1, 1:-1]
        diff = np.zeros_like(fc)
        adv = np.zeros_like(fc)
        for a in AXES:
            fp = _shift(f, a, +1)
            fm = _shift(f, a, -1)
            diff += ((fp + fm) - 2.0 * fc) / (h[a] * h[a])
            ac = centers[a]
            adv += ac * np.where(ac >= 0.0, fc - fm, fp - fc) / h[a]
        out.append(params.nu * diff - adv)
    return out


def compute_intermediate_velocity(grid: GridNode, params: FluidParams) -> None:
    """Advance velocity by advection and diffusion only, into the starred
    fields: a half-step predictor followed by a full-step corrector."""
    dt = params.dt
    F = grid.fields
    vel = tuple(F[name] for name in VELOCITY)
    k1 = _advect_diffuse(vel, grid, params)
    half = []
    for f, k in zip(vel, k1):
        fh = f.copy()
        fh[1:-1, 1:-1, 1:-1] += 0.5 * dt * k
        half.append(fh)
    if grid.phys_bc:
        for face, cond in grid.phys_bc.items():
            for name, arr in zip(VELOCITY, half):
                _apply_condition_array(arr, name, grid, face, cond)
    k2 = _advect_diffuse(tuple(half), grid, params)
    for name, f, k in zip(STARRED, vel, k2):
        F[name][...] = f
        F[name][1:-1, 1:-1, 1:-1] = f[1:-1, 1:-1, 1:-1] + dt * k
        if not np.isfinite(F[name][1:-1, 1:-1, 1:-1]).all():
            raise SolverError(
                f"non-finite intermediate velocity {name} on grid {grid.id}")


def starred_divergence(grid: GridNode) -> np.ndarray:
    """Face-flux divergence of the averaged intermediate velocity; equals the
    central-difference divergence on the collocated arrangement."""
    h = grid.spacings()
    div = np.zeros(tuple(c for c in grid.cells))
    for name, a in zip(STARRED, AXES):
        f = grid.fields[name]
        div += (_shift(f, a, +1) - _shift(f, a, -1)) / (2.0 * h[a])
    return div


def _sym_sum(arr: np.ndarray) -> float:
    # flip-averaged sum: reductions become invariant under axis mirroring,
    # which keeps mirrored runs in exact lockstep (flipping a singleton axis
    # is a no-op, so only extended axes need the extra passes)
    steps = [((1,) if n <= 1 else (1, -1)) for n in arr.shape]
    parts = [
        float(np.sum(arr[::sx, ::sy, ::sz]))
        for sx in steps[0] for sy in steps[1] for sz in steps[2]
    ]
    return math.fsum(parts) / len(parts)


@dataclass
class PoissonStats:
    iterations: int
    residual: float
    converged: bool


def _subtract_mean(leaves: list[GridNode]) -> None:
    sums = []
    vols = []
    for g in leaves:
        cell_vol = g.spacing(0) * g.spacing(1) * g.spacing(2)
        sums.append(_sym_sum(g.fields.interior("p")) * cell_vol)
        vols.append(g.cell_count() * cell_vol)
    mean = math.fsum(sums) / math.fsum(vols)
    for g in leaves:
        g.fields.interior("p")[...] -= mean


def _laplacian(grid: GridNode, name: str) -> np.ndarray:
    h = grid.spacings()
    f = grid.fields[name]
    lap = np.zeros(tuple(grid.cells))
    for a in AXES:
        lap += ((_shift(f, a, +1) + _shift(f, a, -1))
                - 2.0 * f[1:-1, 1:-1, 1:-1]) / (h[a] * h[a])
    return lap


def solve_poisson(forest: Forest, topo: TopologyIndex, params: FluidParams,
                  bc_apply, rhs: dict[int, np.ndarray],
                  fix_gauge: bool = True) -> PoissonStats:
    """Iterate lap(p) = rhs across the active leaves to max-norm residual
    below the tolerance, halo exchange between iterations, mean-free gauge
    unless boundary data anchors the pressure.

    The damped Jacobi sweep is the base iteration; on forests whose leaves
    all share one level (where the exchanged operator is symmetric) the
    Jacobi-preconditioned conjugate-gradient form of the same iteration is
    used, which reaches tight tolerances in far fewer exchanges.
    """
    leaves = forest.active_grids()
    mode = params.poisson_solver
    if mode == "auto":
        mode = "cg" if len({g.level for g in leaves}) == 1 else "jacobi"
    if mode == "cg":
        stats = _solve_cg(forest, topo, params, bc_apply, rhs, fix_gauge, leaves)
    else:
        stats = _solve_jacobi(forest, topo, params, bc_apply, rhs, fix_gauge, leaves)
    if not stats.converged:
        log.warning("pressure solve stopped at residual %.3e after %d "
                    "iterations (tolerance %.1e not reached)",
                    stats.residual, stats.iterations, params.poisson_tol)
    return stats


def _solve_jacobi(forest, topo, params, bc_apply, rhs, fix_gauge, leaves):
    omega = params.poisson_omega
    it = 0
    res = math.inf
    while True:
        run_exchange_cycle(forest, topo, PRESSURE, bc_apply)
        res = 0.0
        for g in leaves:
            res = max(res, float(np.max(np.abs(_laplacian(g, "p") - rhs[g.id]))))
        if res <= params.poisson_tol or it >= params.poisson_max_iter:
            break
        for g in leaves:
            h = g.spacings()
            p = g.fields["p"]
            num = -rhs[g.id].copy()
            den = 0.0
            for a in AXES:
                num += (_shift(p, a, +1) + _shift(p, a, -1)) / (h[a] * h[a])
                den += 2.0 / (h[a] * h[a])
            p[1:-1, 1:-1, 1:-1] = (
                (1.0 - omega) * p[1:-1, 1:-1, 1:-1] + omega * num / den
            )
        if fix_gauge:
            _subtract_mean(leaves)
        it += 1
    return PoissonStats(it, res, converged=res <= params.poisson_tol)


def _dot(parts_a: dict, parts_b: dict, leaves) -> float:
    # order-independent across flips and grid decompositions
    return math.fsum(_sym_sum(parts_a[g.id] * parts_b[g.id]) for g in leaves)


_CG_RESTART = 64


def _solve_cg(forest, topo, params, bc_apply, rhs, fix_gauge, leaves):
    """Conjugate gradients on -lap(p) = -rhs with constant diagonal
    preconditioning; the search direction is exchanged through the same halo
    machinery, so the communication pattern per iteration matches one Jacobi
    sweep. Uniform leaf level is required (equal cell volumes, symmetric
    exchanged operator).

    The recurrence restarts from the true residual every few dozen
    iterations; progress is judged on the true residual only, and the best
    iterate is kept, so tolerances below the attainable floating-point floor
    stall harmlessly instead of corrupting the pressure.
    """
    tol = params.poisson_tol
    if fix_gauge:
        mean = math.fsum(_sym_sum(rhs[g.id]) * g.cell_count() for g in leaves) \
            / sum(g.cell_count() for g in leaves)
        b = {g.id: rhs[g.id] - mean for g in leaves}  # compatible right side
    else:
        b = {g.id: rhs[g.id] for g in leaves}

    den = 0.0
    for a in AXES:
        den += 2.0 / leaves[0].spacing(a) ** 2

    def true_residual():
        run_exchange_cycle(forest, topo, PRESSURE, bc_apply)
        r = {g.id: b[g.id] - _laplacian(g, "p") for g in leaves}
        return r, max(float(np.max(np.abs(r[g.id]))) for g in leaves)

    it = 0
    best_res = math.inf
    best_p = None
    r, res = true_residual()
    while it < params.poisson_max_iter:
        if res <= tol:
            break
        if res < best_res:
            best_res = res
            best_p = {g.id: g.fields.interior("p").copy() for g in leaves}
        elif res >= best_res:  # floating-point floor reached: stop cleanly
            break
        z = {g.id: r[g.id] / den for g in leaves}
        d = {g.id: z[g.id].copy() for g in leaves}
        rz = _dot(r, z, leaves)
        for _ in range(min(_CG_RESTART, params.poisson_max_iter - it)):
            for g in leaves:
                g.fields["pd"][1:-1, 1:-1, 1:-1] = d[g.id]
            run_exchange_cycle(forest, topo, ("pd",), bc_apply)
            ad = {g.id: -_laplacian(g, "pd") for g in leaves}
            dad = _dot(d, ad, leaves)
            if dad <= 0.0:  # breakdown at noise level: restart outside
                break
            alpha = rz / dad
            # d follows the residual of lap p = b (negative-definite
            # operator), so the solution moves against the direction
            for g in leaves:
                g.fields.interior("p")[...] -= alpha * d[g.id]
                r[g.id] = r[g.id] - alpha * ad[g.id]
            it += 1
            rec = max(float(np.max(np.abs(r[g.id]))) for g in leaves)
            if rec <= tol:
                break
            z = {g.id: r[g.id] / den for g in leaves}
            rz_new = _dot(r, z, leaves)
            beta = rz_new / rz
            rz = rz_new
            for g in leaves:
                d[g.id] = z[g.id] + beta * d[g.id]
        r, res = true_residual()
    if best_p is not None and res > best_res:
        for g in leaves:
            g.fields.interior("p")[...] = best_p[g.id]
        res = best_res
    if fix_gauge:
        _subtract_mean(leaves)
    run_exchange_cycle(forest, topo, PRESSURE, bc_apply)
    return PoissonStats(it, res, converged=res <= tol)


def solve_pressure_poisson(forest: Forest, topo: TopologyIndex,
                           params: FluidParams, bc_apply,
                           fix_gauge: bool = True) -> PoissonStats:
    """Build the divergence right-hand side from the intermediate velocity
    and solve for the pressure."""
    run_exchange_cycle(forest, topo, STARRED, bc_apply)
    scale = params.rho / params.dt
    rhs = {g.id: scale * starred_divergence(g) for g in forest.active_grids()}
    return solve_poisson(forest, topo, params, bc_apply, rhs, fix_gauge)


def correct_velocity(grid: GridNode, params: FluidParams) -> None:
    """Project the intermediate velocity: u = u* - (dt/rho) grad p."""
    scale = params.dt / params.rho
    h = grid.spacings()
    p = grid.fields["p"]
    for name, star, a in zip(VELOCITY, STARRED, AXES):
        grad = (_shift(p, a, +1) - _shift(p, a, -1)) / (2.0 * h[a])
        interior = grid.fields[name][1:-1, 1:-1, 1:-1]
        interior[...] = grid.fields[star][1:-1, 1:-1, 1:-1] - scale * grad
        if not np.isfinite(interior).all():
            raise SolverError(f"non-finite velocity {name} on grid {grid.id}")


def face_flux_divergence(grid: GridNode, params: FluidParams) -> np.ndarray:
    """Divergence of the corrected face fluxes (averaged intermediate
    velocity minus the compact pressure gradient at each face)."""
    h = grid.spacings()
    scale = params.dt / params.rho
    p = grid.fields["p"]
    div = np.zeros(tuple(grid.cells))
    for star, a in zip(STARRED, AXES):
        f = grid.fields[star]
        fc = f[1:-1, 1:-1, 1:-1]
        pc = p[1:-1, 1:-1, 1:-1]
        flux_hi = 0.5 * (fc + _shift(f, a, +1)) - scale * (_shift(p, a, +1) - pc) / h[a]
        flux_lo = 0.5 * (fc + _shift(f, a, -1)) - scale * (pc - _shift(p, a, -1)) / h[a]
        div += (flux_hi - flux_lo) / h[a]
    return div


def max_divergence(forest: Forest, params: FluidParams) -> float:
    return max(
        (float(np.max(np.abs(face_flux_divergence(g, params))))
         for g in forest.active_grids()),
        default=0.0,
    )


def stable_dt(forest: Forest, params: FluidParams) -> float:
    """Combined explicit stability bound, minimised over the leaves:

        dt = cfl / (sum_a |u_a|_max / h_a  +  2 nu sum_a 1 / h_a^2)

    Advective and diffusive contributions add up in the amplification
    factor, so taking the smaller of the two separate limits is not safe
    when both are active. This bound reduces to cfl*h/|u| for inviscid flow
    and to cfl*h^2/(4 nu) for pure diffusion in 2D."""
    rate = 0.0
    for g in forest.active_grids():
        grid_rate = 0.0
        for name, a in zip(VELOCITY, AXES):
            if g.cells[a] <= 1:
                continue
            umax = float(np.max(np.abs(g.fields.interior(name))))
            grid_rate += umax / g.spacing(a) + 2.0 * params.nu / g.spacing(a) ** 2
        rate = max(rate, grid_rate)
    if rate == 0.0:
        return params.dt
    return params.cfl / rate


@dataclass
class StepStats:
    step: int
    t: float
    dt: float
    max_div: float
    poisson: PoissonStats


class Simulation:
    """Owns a forest and advances it in time."""

    def __init__(self, forest: Forest, params: FluidParams, bc: BoundarySpec,
                 metrics_path: str | None = None):
        self.forest = forest
        self.params = params
        self.bc = bc
        self.topo = TopologyIndex.from_forest(forest)
        self.t = 0.0
        self.step_index = 0
        # sub-simulations substitute their coupled ghost feed here
        self.bc_override = None
        self.fix_gauge = not bc.has_outflow()
        self._metrics = None
        if metrics_path:
            self._metrics = open(metrics_path, "w", newline="", encoding="utf-8")
            self._csv = csv.writer(self._metrics)
            self._csv.writerow(["step", "t", "dt", "max_div_u",
                                "poisson_iterations", "poisson_residual"])

    def refresh_topology(self) -> None:
        self.topo = TopologyIndex.from_forest(self.forest)

    def step(self) -> StepStats:
        params = self.params
        if params.adaptive_dt:
            params.dt = stable_dt(self.forest, params)
        bc_apply = self.bc_override or make_bc_apply(self.bc)
        run_exchange_cycle(self.forest, self.topo, EXCHANGED, bc_apply)
        for g in self.forest.active_grids():
            compute_intermediate_velocity(g, params)
            if g.solid is not None:
                for name in STARRED:
                    g.fields.interior(name)[g.solid] = 0.0
        pstats = solve_pressure_poisson(self.forest, self.topo, params,
                                        bc_apply, self.fix_gauge)
        for g in self.forest.active_grids():
            correct_velocity(g, params)
            if g.solid is not None:
                for name in VELOCITY:
                    g.fields.interior(name)[g.solid] = 0.0
        run_exchange_cycle(self.forest, self.topo, EXCHANGED, bc_apply)
        self.t += params.dt
        self.step_index += 1
        stats = StepStats(self.step_index, self.t, params.dt,
                          max_divergence(self.forest, params), pstats)
        if self._metrics:
            self._csv.writerow([stats.step, repr(stats.t), repr(stats.dt),
                                repr(stats.max_div), pstats.iterations,
                                repr(pstats.residual)])
            self._metrics.flush()
        return stats

    def run(self, steps: int) -> StepStats | None:
        stats = None
        for _ in range(steps):
            stats = self.step()
        return stats

    def run_to_steady(self, change_tol: float = 1e-8, max_steps: int = 100000,
                      check_every: int = 10) -> tuple[bool, float, int]:
        """March until the max velocity change between checks, per step,
        falls below `change_tol`. Returns (steady, last_change, steps)."""
        prev = {
            g.id: tuple(g.fields.interior(n).copy() for n in VELOCITY)
            for g in self.forest.active_grids()
        }
        change = math.inf
        for n in range(1, max_steps + 1):
            self.step()
            if n % check_every:
                continue
            change = 0.0
            for g in self.forest.active_grids():
                for arr, old in zip(
                        (g.fields.interior(n2) for n2 in VELOCITY), prev[g.id]):
                    change = max(change, float(np.max(np.abs(arr - old))))
                prev[g.id] = tuple(g.fields.interior(n2).copy() for n2 in VELOCITY)
            if change / check_every < change_tol:
                return True, change / check_every, n
        return False, change / check_every, max_steps

    def close(self) -> None:
        if self._metrics:
            self._metrics.close()
            self._metrics = None


def step(forest: Forest, params: FluidParams, bc: BoundarySpec,
         topo: TopologyIndex | None = None) -> StepStats:
    """Single-shot step for callers that do not keep a Simulation around."""
    sim = Simulation(forest, params, bc)
    if topo is not None:
        sim.topo = topo
    return sim.step()
