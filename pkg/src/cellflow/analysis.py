"""Suspension diagnostics over completed states.

Profiles bin cell volume by where vertices sit; the cell-free layer and
margination metrics work on distance-from-wall coordinates so the same code
serves slab channels and pipes. The bulk viscosity estimator combines the
mean fluid velocity gradient with the membrane stresslet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import membrane
from .errors import ConfigurationError, NumericalError


@dataclass(frozen=True)
class SlabGeometry:
    """Rectangular domain with two parallel walls along one axis."""

    shape: tuple
    wall_axis: int = 1

    def extent(self) -> float:
        """Largest wall distance (mid-plane)."""
        return 0.5 * self.shape[self.wall_axis]

    def wall_distance(self, positions) -> np.ndarray:
        x = np.asarray(positions)[:, self.wall_axis]
        return np.minimum(x, self.shape[self.wall_axis] - x)

    def domain_volume(self) -> float:
        return float(np.prod(self.shape))

    def shell_volume(self, width: float) -> float:
        width = min(width, self.extent())
        cross = self.domain_volume() / self.shape[self.wall_axis]
        return 2.0 * width * cross

    def band_volume(self, inner: float, outer: float) -> float:
        return self.shell_volume(outer) - self.shell_volume(inner)


@dataclass(frozen=True)
class PipeGeometry:
    """Cylindrical lumen along ``axis`` with its wall at ``radius``."""

    shape: tuple
    radius: float
    axis: int = 0
    center: tuple = None

    def _center(self):
        if self.center is not None:
            return self.center
        other = [i for i in range(3) if i != self.axis]
        return tuple((self.shape[i] - 1) / 2.0 for i in other)

    def extent(self) -> float:
        return self.radius

    def wall_distance(self, positions) -> np.ndarray:
        pos = np.asarray(positions)
        other = [i for i in range(3) if i != self.axis]
        cy, cz = self._center()
        r = np.hypot(pos[:, other[0]] - cy, pos[:, other[1]] - cz)
        return self.radius - r

    def domain_volume(self) -> float:
        return float(np.pi * self.radius**2 * self.shape[self.axis])

    def shell_volume(self, width: float) -> float:
        width = min(width, self.radius)
        inner = self.radius - width
        return float(np.pi * (self.radius**2 - inner**2) * self.shape[self.axis])

    def band_volume(self, inner: float, outer: float) -> float:
        return self.shell_volume(outer) - self.shell_volume(inner)


@dataclass
class ProfileReport:
    """Wall-distance binned suspension profile plus scalar summaries."""

    edges: np.ndarray            # bin edges, distance from the wall
    haematocrit: np.ndarray      # RBC volume fraction per bin
    platelet_counts: np.ndarray  # platelet centers per bin
    bin_volumes: np.ndarray
    cfl_width: float = float("nan")
    margination: float = float("nan")
    relative_viscosity: float = float("nan")

    def column_names(self, length_unit="lu"):
        return (f"bin_inner_edge_{length_unit}",
                f"bin_outer_edge_{length_unit}", "haematocrit",
                "platelet_count", f"bin_volume_{length_unit}3")

    def columns(self):
        return (self.edges[:-1], self.edges[1:], self.haematocrit,
                self.platelet_counts, self.bin_volumes)


def hematocrit_profile(meshes, geometry, bins: int = 10,
                       kinds=("rbc",)) -> ProfileReport:
    """Cell volume fraction binned by wall distance.

    Each cell's (divergence-theorem) volume is distributed over bins in
    proportion to the fraction of its vertices falling in each; platelet
    centers are counted separately.
    """
    if bins < 4:
        raise ConfigurationError(f"profile needs at least 4 bins, got {bins}")
    top = geometry.extent()
    edges = np.linspace(0.0, top, bins + 1)
    width = top / bins
    volume = np.zeros(bins)
    platelets = np.zeros(bins, dtype=np.int64)
    for mesh in meshes:
        if mesh.kind in kinds:
            dist = geometry.wall_distance(mesh.positions)
            idx = np.clip((dist / width).astype(np.int64), 0, bins - 1)
            volume += mesh.volume() * np.bincount(idx, minlength=bins) / mesh.n_vertices
        else:
            d = geometry.wall_distance(mesh.center()[None, :])[0]
            platelets[min(bins - 1, max(0, int(d / width)))] += 1
    bin_volumes = np.array(
        [geometry.band_volume(edges[i], edges[i + 1]) for i in range(bins)]
    )
    return ProfileReport(edges, volume / bin_volumes, platelets, bin_volumes)


def cfl_width(report: ProfileReport, threshold: float = 0.05) -> float:
    """Distance from the wall to the first bin above threshold x mean."""
    ht = np.asarray(report.haematocrit, dtype=np.float64)
    if not np.any(ht > 0.0):
        raise NumericalError("cell-free layer is undefined for an all-zero profile")
    mean = np.average(ht, weights=report.bin_volumes)
    above = np.nonzero(ht > threshold * mean)[0]
    return float(report.edges[above[0]])


def margination_ratio(positions, geometry, shell: float) -> float:
    """Near-wall platelet density over the domain-mean density."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or len(positions) == 0:
        raise ConfigurationError("margination needs at least one platelet position")
    dist = geometry.wall_distance(positions)
    in_shell = int(np.count_nonzero(dist <= shell))
    shell_volume = geometry.shell_volume(shell)
    mean_density = len(positions) / geometry.domain_volume()
    return (in_shell / shell_volume) / mean_density


def membrane_stresslet_xy(meshes) -> float:
    """Summed xy stresslet of the membrane forces (not volume-normalized).

    Uses each cell's own center as the moment origin; membranes are
    net-force-free so the choice of origin drops out. The sign convention
    makes cells that resist the ambient strain raise the shear stress.
    """
    total = 0.0
    for mesh in meshes:
        forces = membrane.total_forces(mesh)
        arm = mesh.positions[:, 1] - mesh.center()[1]
        total -= float(forces[:, 0] @ arm)
    return total


def bulk_viscosity(grid, meshes, shear_speed: float) -> float:
    """Relative viscosity of a Lees-Edwards sheared box (one snapshot).

    The fluid part is the interior-mean velocity gradient; the cell part is
    the membrane stresslet per unit volume. Normalized by the imposed
    Newtonian stress rho nu U / ny.
    """
    if shear_speed == 0.0:
        raise ConfigurationError("bulk viscosity needs a nonzero shear speed")
    ny = grid.shape[1]
    gamma = shear_speed / ny
    _, u = grid.macroscopic()
    dudy = 0.5 * (u[:, 2:, :, 0] - u[:, :-2, :, 0])
    fluid_stress = grid.nu * float(dudy.mean())
    cell_stress = membrane_stresslet_xy(meshes) / grid.f[..., 0].size
    return (fluid_stress + cell_stress) / (grid.nu * gamma)
