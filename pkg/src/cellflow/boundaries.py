"""Boundary handling: walls, moving walls, Lees-Edwards shear, pre-inlet.

Streaming is pure periodic advection (lbm.stream); everything here is either
a flag/velocity painter that runs at setup time or a post-advection fixup:

- apply_bounce_back reflects populations that crossed into solid nodes
  (half-way bounce-back, Ladd momentum term on moving walls),
- lees_edwards_fluid rebuilds the two seam rows from the sheared, boosted,
  tangentially shifted periodic images,
- copy_inlet_plane / zero_gradient_outlet implement the pre-inlet coupling
  plane and the open outlet.

Topology classes map off-grid vertex positions into the primary box for
interpolation/spreading, including the sheared-image velocity offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, lbm
from ._kernels import FLUID, INACTIVE, MOVING_WALL, WALL
from .errors import ConfigurationError, StorageError
from .lattice import DIRECTIONS, Q

MAX_WALL_SPEED = 0.3  # lattice Mach guard for driven walls

AXIS_TYPES = ("periodic", "wall", "lees_edwards", "inlet_outlet")


@dataclass(frozen=True)
class BoundarySpec:
    """Per-axis boundary declaration for a rectangular domain.

    Shear convention: Lees-Edwards always shears the axis-1 (y) pair of faces
    with tangential motion along axis 0 (x). ``le_speed`` is the total
    relative speed of the two images, so the bulk shear rate is le_speed/ny.
    """

    x: str = "periodic"
    y: str = "periodic"
    z: str = "periodic"
    le_speed: float = 0.0
    pre_inlet_length: int = 0

    def __post_init__(self):
        for name, value in (("x", self.x), ("y", self.y), ("z", self.z)):
            if value not in AXIS_TYPES:
                raise ConfigurationError(
                    f"axis {name}: unknown boundary type {value!r}, expected one of {AXIS_TYPES}"
                )
        if self.y == "lees_edwards" and (self.x != "periodic" or self.z != "periodic"):
            raise ConfigurationError("lees_edwards requires periodic conjugate axes")
        if self.x == "lees_edwards" or self.z == "lees_edwards":
            raise ConfigurationError("lees_edwards is supported on the y axis pair only")
        if self.x != "inlet_outlet" and self.pre_inlet_length:
            raise ConfigurationError("pre_inlet_length only applies to an inlet_outlet x axis")
        if abs(self.le_speed) > MAX_WALL_SPEED:
            raise ConfigurationError(
                f"lees_edwards speed {self.le_speed} exceeds the {MAX_WALL_SPEED} lattice limit"
            )

    @property
    def axis_types(self):
        return (self.x, self.y, self.z)

    def periodic_axes(self):
        return tuple(t == "periodic" for t in self.axis_types)


def apply_face_walls(grid: lbm.LatticeGrid, spec: BoundarySpec):
    """Paint solid layers on wall axes and record periodicity on the grid."""
    for axis, kind in enumerate(spec.axis_types):
        if kind == "wall":
            sl = [slice(None)] * 3
            sl[axis] = 0
            grid.flags[tuple(sl)] = WALL
            sl[axis] = grid.shape[axis] - 1
            grid.flags[tuple(sl)] = WALL
    grid.periodic = spec.periodic_axes()


def paint_moving_face(grid: lbm.LatticeGrid, axis: int, side: int, velocity):
    """Turn one wall face into a moving wall with a uniform velocity."""
    velocity = np.asarray(velocity, dtype=np.float64)
    if np.linalg.norm(velocity) > MAX_WALL_SPEED:
        raise ConfigurationError(
            f"wall speed {np.linalg.norm(velocity):.3f} exceeds the {MAX_WALL_SPEED} lattice limit"
        )
    sl = [slice(None)] * 3
    sl[axis] = 0 if side == 0 else grid.shape[axis] - 1
    grid.flags[tuple(sl)] = MOVING_WALL
    grid.wall_velocity[tuple(sl)] = velocity


def paint_pipe(grid: lbm.LatticeGrid, radius: float, axis: int = 0, center=None):
    """Solid nodes outside a circular cross-section around ``axis``."""
    shape = grid.shape
    trans = [a for a in range(3) if a != axis]
    if center is None:
        center = ((shape[trans[0]] - 1) / 2.0, (shape[trans[1]] - 1) / 2.0)
    coords = np.indices(shape, dtype=np.float64)
    r2 = (coords[trans[0]] - center[0]) ** 2 + (coords[trans[1]] - center[1]) ** 2
    grid.flags[r2 >= radius * radius] = WALL


def paint_cone_plate(grid: lbm.LatticeGrid, radius: float, omega: float,
                     cone_angle_deg: float, gap: float):
    """Cone-and-plate viscometer walls inside a cylindrical shell.

    Static plate at z=0, static cylinder wall at ``radius``, and a rotating
    lid whose lower surface is a cone of indent angle ``cone_angle_deg``
    (0 = flat disc, up to 45 degrees) with apex a distance ``gap`` above the
    plate. Lid voxels rotate rigidly at angular speed ``omega`` about the
    cylinder axis (z).
    """
    if not 0.0 <= cone_angle_deg <= 45.0:
        raise ConfigurationError(f"cone indent angle must be in [0, 45] deg, got {cone_angle_deg}")
    if abs(omega) * radius > MAX_WALL_SPEED:
        raise ConfigurationError(
            f"rim speed {abs(omega) * radius:.3f} exceeds the {MAX_WALL_SPEED} lattice limit"
        )
    nx, ny, nz = grid.shape
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    coords = np.indices(grid.shape, dtype=np.float64)
    dx = coords[0] - cx
    dy = coords[1] - cy
    r = np.sqrt(dx * dx + dy * dy)
    grid.flags[:, :, 0] = WALL
    grid.flags[r >= radius] = WALL
    cone_surface = gap + r * np.tan(np.radians(cone_angle_deg))
    lid = (coords[2] >= cone_surface) & (r < radius)
    grid.flags[lid] = MOVING_WALL
    grid.wall_velocity[lid, 0] = -omega * dy[lid]
    grid.wall_velocity[lid, 1] = omega * dx[lid]
    grid.periodic = (False, False, False)


def apply_bounce_back(grid: lbm.LatticeGrid):
    """Post-advection wall fixup (no-slip and Ladd moving walls together)."""
    _kernels.wall_fixup_block(
        grid.f, grid.flags, grid.wall_velocity, grid.reference_density, 0, grid.shape[0]
    )


# spec op aliases: a static wall is a moving wall at zero velocity
bounce_back = apply_bounce_back
moving_wall = apply_bounce_back


def lees_edwards_shift(speed: float, time_step: int, length: int) -> float:
    """Accumulated tangential image offset delta(t) = (speed * t) mod length."""
    return (speed * time_step) % length


def _boost_plane(plane: np.ndarray, du_x: float) -> np.ndarray:
    """Galilean velocity adjustment of a (nx, nz, 19) population plane.

    Replaces the equilibrium part evaluated at u with the one at u + du_x,
    keeping the non-equilibrium part untouched. Mass is conserved exactly.
    """
    rho = plane.sum(axis=-1)
    mom = np.tensordot(plane, DIRECTIONS.astype(np.float64), axes=([-1], [0]))
    u = mom / rho[..., None]
    u_shift = u.copy()
    u_shift[..., 0] += du_x
    return plane + lbm.equilibrium(rho, u_shift) - lbm.equilibrium(rho, u)


def _sample_shifted(plane: np.ndarray, delta: float) -> np.ndarray:
    """Linearly interpolate a (nx, nz, 19) plane at x + delta (periodic)."""
    nx = plane.shape[0]
    base = int(np.floor(delta))
    frac = delta - base
    lo = np.roll(plane, -base, axis=0)
    if frac == 0.0:
        return lo.copy()
    hi = np.roll(plane, -(base + 1), axis=0)
    return (1.0 - frac) * lo + frac * hi


def lees_edwards_fluid(grid: lbm.LatticeGrid, row_bottom_star: np.ndarray,
                       row_top_star: np.ndarray, speed: float, time_step: int):
    """Rebuild the seam rows after advection from the sheared images.

    ``row_bottom_star``/``row_top_star`` are the pre-advection post-collision
    population planes at y=0 and y=ny-1. Populations entering y=0 from below
    come from the lower image (top row shifted by -delta, boosted by -speed);
    populations entering y=ny-1 from above come from the upper image (bottom
    row shifted by +delta, boosted by +speed).
    """
    nx, ny, nz, _ = grid.f.shape
    delta = lees_edwards_shift(speed, time_step, nx)
    below = _sample_shifted(_boost_plane(row_top_star, -speed), delta)
    above = _sample_shifted(_boost_plane(row_bottom_star, +speed), -delta)
    e = DIRECTIONS
    for i in range(Q):
        ex, ey, ez = e[i]
        if ey == 1:
            grid.f[:, 0, :, i] = np.roll(below[:, :, i], (ex, ez), axis=(0, 1))
        elif ey == -1:
            grid.f[:, ny - 1, :, i] = np.roll(above[:, :, i], (ex, ez), axis=(0, 1))


def stream_with_boundaries(grid: lbm.LatticeGrid, le_speed: float = 0.0, time_step: int = 0):
    """One full streaming pass: advect, wall fixup, optional seam rebuild."""
    if le_speed != 0.0:
        row_bottom = grid.f[:, 0, :, :].copy()
        row_top = grid.f[:, -1, :, :].copy()
    lbm.stream(grid)
    apply_bounce_back(grid)
    if le_speed != 0.0:
        lees_edwards_fluid(grid, row_bottom, row_top, le_speed, time_step)


def copy_inlet_plane(main: lbm.LatticeGrid, pre: lbm.LatticeGrid):
    """Dirichlet-style coupling: pre-inlet seam populations onto the inlet face."""
    if main.f.shape[1:3] != pre.f.shape[1:3]:
        raise ConfigurationError("pre-inlet cross-section must match the main domain")
    fluid = main.flags[0] == FLUID
    main.f[0][fluid] = pre.f[0][fluid]


def zero_gradient_outlet(grid: lbm.LatticeGrid):
    """Copy the second-to-last x plane onto the outlet plane."""
    fluid = grid.flags[-1] == FLUID
    grid.f[-1][fluid] = grid.f[-2][fluid]


# --- voxel mask files -------------------------------------------------------


def save_solid_mask(path, mask: np.ndarray):
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise StorageError("solid mask must be a 3-d array")
    with open(path, "wb") as fh:
        fh.write(f"dims {mask.shape[0]} {mask.shape[1]} {mask.shape[2]}\n".encode())
        fh.write(np.ascontiguousarray(mask != 0, dtype=np.uint8).tobytes())


def load_solid_mask(path) -> np.ndarray:
    """Voxel mask: one 'dims nx ny nz' header line, then nx*ny*nz 0/1 bytes."""
    with open(path, "rb") as fh:
        header = fh.readline().decode(errors="replace").split()
        if len(header) != 4 or header[0] != "dims":
            raise StorageError(f"{path}: malformed mask header {header!r}")
        try:
            nx, ny, nz = (int(v) for v in header[1:])
        except ValueError:
            raise StorageError(f"{path}: non-integer mask dimensions {header[1:]!r}") from None
        if nx <= 0 or ny <= 0 or nz <= 0:
            raise StorageError(f"{path}: non-positive mask dimensions")
        body = fh.read()
    expected = nx * ny * nz
    if len(body) != expected:
        raise StorageError(f"{path}: expected {expected} mask bytes, found {len(body)}")
    raw = np.frombuffer(body, dtype=np.uint8)
    if raw.max(initial=0) > 1:
        raise StorageError(f"{path}: mask bytes must be 0 or 1")
    return raw.reshape(nx, ny, nz).astype(bool)


def apply_solid_mask(grid: lbm.LatticeGrid, mask: np.ndarray):
    if mask.shape != grid.shape:
        raise ConfigurationError(
            f"mask shape {mask.shape} does not match grid shape {grid.shape}"
        )
    grid.flags[mask] = WALL


# --- topologies for off-grid positions --------------------------------------


class PeriodicTopology:
    """Plain periodic wrapping; non-periodic axes are clamped for sampling."""

    def __init__(self, shape, periodic=(True, True, True)):
        self.shape = tuple(int(n) for n in shape)
        self.periodic = tuple(bool(p) for p in periodic)

    def wrap_positions(self, positions, time_step=0):
        """(wrapped positions, velocity offsets) for interpolation/spreading."""
        pos = np.array(positions, dtype=np.float64)
        for axis in range(3):
            n = self.shape[axis]
            if self.periodic[axis]:
                pos[:, axis] %= n
            else:
                np.clip(pos[:, axis], 0.0, n - 1.000001, out=pos[:, axis])
        return pos, None

    def wrap_cells(self, meshes, time_step=0):
        """Re-center whole cells that drifted out along periodic axes."""
        for mesh in meshes:
            c = mesh.center()
            for axis in range(3):
                n = self.shape[axis]
                if not self.periodic[axis]:
                    continue
                if c[axis] >= n:
                    mesh.positions[:, axis] -= n
                elif c[axis] < 0.0:
                    mesh.positions[:, axis] += n

    def minimum_image_box(self):
        return np.array([n if p else 2 * n for n, p in zip(self.shape, self.periodic)],
                        dtype=np.float64)

    def le_shift(self, time_step):
        return 0.0


class ShearBoxTopology(PeriodicTopology):
    """Lees-Edwards box: y-images are shifted along x and boosted by +/-speed."""

    def __init__(self, shape, speed):
        super().__init__(shape, (True, True, True))
        self.speed = float(speed)

    def wrap_positions(self, positions, time_step=0):
        pos = np.array(positions, dtype=np.float64)
        nx, ny, nz = self.shape
        delta = lees_edwards_shift(self.speed, time_step, nx)
        k = np.floor(pos[:, 1] / ny)
        offsets = None
        if np.any(k != 0.0):
            pos[:, 1] -= k * ny
            pos[:, 0] -= k * delta
            offsets = np.zeros_like(pos)
            offsets[:, 0] = k * self.speed
        pos[:, 0] %= nx
        pos[:, 2] %= nz
        return pos, offsets

    def wrap_cells(self, meshes, time_step=0):
        """Whole-cell image remapping on center-of-mass crossing."""
        nx, ny, nz = self.shape
        delta = lees_edwards_shift(self.speed, time_step, nx)
        for mesh in meshes:
            c = mesh.center()
            k = np.floor(c[1] / ny)
            if k != 0.0:
                mesh.positions[:, 1] -= k * ny
                mesh.positions[:, 0] -= k * delta
                mesh.velocities[:, 0] -= k * self.speed
                if mesh.prev_velocities is not None:
                    mesh.prev_velocities[:, 0] -= k * self.speed
            c = mesh.center()
            for axis in (0, 2):
                n = self.shape[axis]
                if c[axis] >= n:
                    mesh.positions[:, axis] -= n
                elif c[axis] < 0.0:
                    mesh.positions[:, axis] += n

    def le_shift(self, time_step):
        return lees_edwards_shift(self.speed, time_step, self.shape[0])
