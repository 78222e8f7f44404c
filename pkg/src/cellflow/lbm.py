"""D3Q19 lattice Boltzmann plasma solver core.

Populations live on a regular grid in lattice units (dx = dt = 1) with BGK
relaxation and a second-order body-force term: the equilibrium velocity and
the reported macroscopic velocity both carry a half-step force shift, and the
source term carries the (1 - 1/(2 tau)) prefactor, so exactly F of momentum
enters the fluid per step per node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import FLUID, INACTIVE, MOVING_WALL, WALL
from .errors import ConfigurationError, NumericalError
from .lattice import CS2, DIRECTIONS, OPPOSITE, Q, WEIGHTS

__all__ = [
    "FLUID",
    "WALL",
    "MOVING_WALL",
    "INACTIVE",
    "LatticeGrid",
    "FlowDiagnostics",
    "equilibrium",
    "moments",
    "collide",
    "stream",
    "tau_for_viscosity",
    "viscosity_for_tau",
    "strain_rate_field",
]


def tau_for_viscosity(nu: float) -> float:
    """Relaxation time for a target kinematic viscosity: tau = 3 nu + 1/2."""
    if nu <= 0.0:
        raise ConfigurationError(f"kinematic viscosity must be positive, got {nu}")
    return nu / CS2 + 0.5


def viscosity_for_tau(tau: float) -> float:
    if tau <= 0.5:
        raise ConfigurationError(f"relaxation time must exceed 1/2, got {tau}")
    return CS2 * (tau - 0.5)


def equilibrium(rho, u):
    """Second-order Maxwellian: w_i rho (1 + 3 e.u + 9/2 (e.u)^2 - 3/2 u^2).

    ``rho`` has shape (...,), ``u`` shape (..., 3); returns (..., 19).
    """
    rho = np.asarray(rho, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    eu = np.tensordot(u, DIRECTIONS.astype(np.float64), axes=([-1], [1]))
    usq = np.sum(u * u, axis=-1)[..., None]
    return WEIGHTS * rho[..., None] * (1.0 + 3.0 * eu + 4.5 * eu * eu - 1.5 * usq)


def moments(f, force=None):
    """Density and velocity of a population array of shape (..., 19).

    With an active force field the velocity includes the half-step force
    correction u = (sum f_i e_i + F/2) / rho.
    """
    f = np.asarray(f, dtype=np.float64)
    rho = f.sum(axis=-1)
    mom = np.tensordot(f, DIRECTIONS.astype(np.float64), axes=([-1], [0]))
    if force is not None:
        mom = mom + 0.5 * np.asarray(force, dtype=np.float64)
    return rho, mom / rho[..., None]


@dataclass
class FlowDiagnostics:
    """Macroscopic fields derived from one grid snapshot."""

    density: np.ndarray
    velocity: np.ndarray
    pressure: np.ndarray
    strain_rate: np.ndarray       # (..., 3, 3) symmetric
    shear_rate: np.ndarray        # sqrt(2 S:S)
    elongation_rate: np.ndarray   # largest eigenvalue of S


class LatticeGrid:
    """Populations, node flags, and force field for one rectangular domain."""

    def __init__(self, shape, tau, periodic=(True, True, True)):
        if len(shape) != 3 or any(int(n) < 1 for n in shape):
            raise ConfigurationError(f"grid shape must be three positive ints, got {shape}")
        if tau <= 0.5:
            raise ConfigurationError(f"relaxation time must exceed 1/2, got {tau}")
        self.shape = tuple(int(n) for n in shape)
        self.tau = float(tau)
        self.periodic = tuple(bool(p) for p in periodic)
        self.f = np.zeros(self.shape + (Q,))
        self._scratch = np.zeros_like(self.f)
        self.flags = np.full(self.shape, FLUID, dtype=np.uint8)
        self.force = np.zeros(self.shape + (3,))
        self.wall_velocity = np.zeros(self.shape + (3,))
        self.reference_density = 1.0

    @property
    def nu(self) -> float:
        return viscosity_for_tau(self.tau)

    def fluid_mask(self) -> np.ndarray:
        return self.flags == FLUID

    def initialize_equilibrium(self, rho=1.0, u=None):
        nx, ny, nz = self.shape
        rho_f = np.broadcast_to(np.asarray(rho, dtype=np.float64), self.shape)
        if u is None:
            u = np.zeros(self.shape + (3,))
        u_f = np.broadcast_to(np.asarray(u, dtype=np.float64), self.shape + (3,))
        self.f[...] = equilibrium(rho_f, u_f)
        self.f[~self.fluid_mask()] = 0.0

    def macroscopic(self):
        """(rho, u) fields; solids report rho=1, u=0."""
        rho = np.empty(self.shape)
        u = np.empty(self.shape + (3,))
        _kernels.moments_block(self.f, self.force, self.flags, rho, u, 0, self.shape[0])
        return rho, u

    def total_mass(self) -> float:
        return float(self.f[self.fluid_mask()].sum())

    def total_momentum(self) -> np.ndarray:
        mom = np.tensordot(self.f, DIRECTIONS.astype(np.float64), axes=([-1], [0]))
        return mom[self.fluid_mask()].sum(axis=0)


def collide(grid: LatticeGrid) -> float:
    """BGK collision with forcing over the whole grid (in place).

    Returns the smallest post-collision population; the caller may treat
    strongly negative or NaN values as an instability.
    """
    minv = _kernels.collide_block(
        grid.f, grid._scratch, grid.force, grid.flags, grid.tau, 0, grid.shape[0]
    )
    grid.f, grid._scratch = grid._scratch, grid.f
    return minv


def stream(grid: LatticeGrid):
    """Pure advection with periodic wrap on all axes (in place).

    Wall handling is a separate fixup pass (see boundaries.apply_bounce_back);
    populations that cross into solid nodes are reflected there.
    """
    _kernels.advect_block(grid.f, grid._scratch, 0, grid.shape[0])
    grid.f, grid._scratch = grid._scratch, grid.f


def _axis_gradient(u, mask, axis, le=None):
    """d(u)/d(axis) with central differences, one-sided next to solids.

    ``le`` = (delta, speed) activates the sheared-image correction at the
    wrap of axis 1: neighbours across the seam are sampled at the shifted
    tangential position (axis 0) with the +/-speed velocity offset.
    """
    up = np.roll(u, -1, axis=axis)
    dn = np.roll(u, 1, axis=axis)
    up_ok = np.roll(mask, -1, axis=axis)
    dn_ok = np.roll(mask, 1, axis=axis)
    if le is not None and axis == 1:
        delta, speed = le
        ny = u.shape[1]
        up[:, ny - 1] = _shift_rows(u[:, 0], -delta)
        up[:, ny - 1, ..., 0] += speed
        dn[:, 0] = _shift_rows(u[:, ny - 1], delta)
        dn[:, 0, ..., 0] -= speed
    both = up_ok & dn_ok
    only_up = up_ok & ~dn_ok
    only_dn = dn_ok & ~up_ok
    grad = np.zeros_like(u)
    grad[both] = 0.5 * (up[both] - dn[both])
    grad[only_up] = up[only_up] - u[only_up]
    grad[only_dn] = u[only_dn] - dn[only_dn]
    return grad


def _shift_rows(plane, delta):
    """Sample a (nx, nz, C) plane at x + delta with linear interpolation."""
    nx = plane.shape[0]
    base = int(np.floor(delta))
    frac = delta - base
    lo = np.roll(plane, -base, axis=0)
    hi = np.roll(plane, -(base + 1), axis=0)
    return (1.0 - frac) * lo + frac * hi


def strain_rate_field(grid: LatticeGrid, le=None) -> FlowDiagnostics:
    """Macroscopic fields plus the symmetric velocity-gradient diagnostics.

    Gradients are central in the interior and one-sided next to walls.
    ``le`` = (delta, speed) corrects the sheared seam of axis 1.
    """
    rho, u = grid.macroscopic()
    mask = grid.fluid_mask()
    u = np.where(mask[..., None], u, 0.0)
    grads = [_axis_gradient(u, mask, axis, le=le) for axis in range(3)]
    jac = np.stack(grads, axis=-2)  # (..., d_axis, component)
    strain = 0.5 * (jac + np.swapaxes(jac, -1, -2))
    shear = np.sqrt(2.0 * np.sum(strain * strain, axis=(-1, -2)))
    elong = np.linalg.eigvalsh(strain)[..., -1]
    return FlowDiagnostics(
        density=rho,
        velocity=u,
        pressure=CS2 * rho,
        strain_rate=strain,
        shear_rate=shear,
        elongation_rate=elong,
    )


def check_stability(min_population: float, step: int):
    """Raise when collision produced NaN or meaningfully negative populations."""
    if not np.isfinite(min_population) or min_population < -1e-6:
        raise NumericalError(
            f"unstable populations at step {step}: min population {min_population!r}"
        )
