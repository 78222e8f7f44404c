"""Force-bias packing of ellipsoid surrogates for whole-cell initialization.

Cells are seeded at random positions and orientations inside the domain,
each wrapped in an ellipsoid surrogate that encloses the resting shape.
Overlapping pairs push each other apart along the center line with a
strength proportional to their overlap volume until no overlap remains.
Overlap volumes come from low-discrepancy sampling of the smaller body,
which is robust for arbitrary relative orientations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.stats import qmc

from . import _kernels, membrane
from .errors import ConfigurationError, NumericalError, StorageError

RBC_SURROGATE_SEMI_AXES = (4.1, 4.1, 1.9)
PLATELET_SURROGATE_SEMI_AXES = (1.3, 1.3, 0.6)
SURROGATE_SEMI_AXES = {
    "RBC": RBC_SURROGATE_SEMI_AXES,
    "Platelet": PLATELET_SURROGATE_SEMI_AXES,
}

RBC_NOMINAL_VOLUME = 90.0  # um^3, used to convert haematocrit to counts
MAX_SOLID_FRACTION = 0.45
DEFAULT_SAMPLE_COUNT = 4096
DEFAULT_MAX_ITERATIONS = 20000
STEP_FRACTION = 0.25  # of the smallest semi-axis, per iteration

_BALL_CACHE: dict[int, np.ndarray] = {}


def nominal_cell_volume(kind: str) -> float:
    if kind == "RBC":
        return RBC_NOMINAL_VOLUME
    if kind == "Platelet":
        a, b, c = membrane.PLATELET_SEMI_AXES_UM
        return 4.0 * np.pi / 3.0 * a * b * c
    raise ConfigurationError([f"unknown cell kind '{kind}'"])


def unit_ball_points(count: int = DEFAULT_SAMPLE_COUNT) -> np.ndarray:
    """Deterministic low-discrepancy sample of the unit ball interior."""
    if count not in _BALL_CACHE:
        bits = int(np.log2(count))
        if 2 ** bits != count:
            raise ConfigurationError(["sample count must be a power of two"])
        u = qmc.Sobol(d=3, scramble=False).random_base2(bits)
        r = np.cbrt(u[:, 0])
        cos_t = 2.0 * u[:, 1] - 1.0
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
        phi = 2.0 * np.pi * u[:, 2]
        _BALL_CACHE[count] = np.ascontiguousarray(
            np.stack(
                [r * sin_t * np.cos(phi), r * sin_t * np.sin(phi), r * cos_t],
                axis=1,
            )
        )
    return _BALL_CACHE[count]


@dataclass
class EllipsoidPlacement:
    """One surrogate body: center, semi-axes, unit quaternion (w, x, y, z)."""

    center: np.ndarray
    semi_axes: tuple[float, float, float]
    quaternion: np.ndarray
    kind: str = "RBC"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.quaternion = np.asarray(self.quaternion, dtype=np.float64)
        if min(self.semi_axes) <= 0.0:
            raise ConfigurationError(["ellipsoid semi-axes must be positive"])
        norm = np.linalg.norm(self.quaternion)
        if abs(norm - 1.0) > 1e-12:
            raise ConfigurationError(
                [f"quaternion norm {norm:.15g} is not 1 within 1e-12"]
            )

    def rotation(self) -> np.ndarray:
        """Body-to-world rotation matrix."""
        w, x, y, z = self.quaternion
        return Rotation.from_quat([x, y, z, w]).as_matrix()

    @property
    def bounding_radius(self) -> float:
        return float(max(self.semi_axes))

    @property
    def volume(self) -> float:
        a, b, c = self.semi_axes
        return 4.0 * np.pi / 3.0 * a * b * c

    def wall_supports(self) -> np.ndarray:
        """Half-extents along the three axis directions for wall clearance."""
        body = np.diag(self.semi_axes) @ self.rotation().T
        return np.linalg.norm(body, axis=0)


@dataclass
class PackingState:
    placements: list[EllipsoidPlacement]
    bounds: np.ndarray
    periodic: tuple[bool, bool, bool]
    iterations: int = 0
    max_overlap: float = 0.0
    history: list[float] = field(default_factory=list)


def overlap_volume(e1: EllipsoidPlacement, e2: EllipsoidPlacement,
                   points: np.ndarray | None = None,
                   rel_center: np.ndarray | None = None) -> float:
    """Sampled intersection volume of two ellipsoids.

    Exactly zero when the bounding spheres do not touch. Otherwise the
    smaller body is filled with quasi-random points and the fraction landing
    inside the other body scales its volume.
    """
    if points is None:
        points = unit_ball_points()
    if rel_center is None:
        rel_center = e2.center - e1.center
    dist = float(np.linalg.norm(rel_center))
    if dist >= e1.bounding_radius + e2.bounding_radius:
        return 0.0
    if e2.volume < e1.volume:
        e1, e2 = e2, e1
        rel_center = -rel_center
    world = (points * np.asarray(e1.semi_axes)) @ e1.rotation().T
    frac = _kernels.ellipsoid_overlap_fraction(
        np.ascontiguousarray(world),
        np.ascontiguousarray(rel_center, dtype=np.float64),
        np.ascontiguousarray(e2.rotation().T),
        np.asarray(e2.semi_axes, dtype=np.float64),
    )
    return frac * e1.volume


def _surrogate_arrays(placements, points, inflate=1.0):
    """Flat arrays plus per-body world-frame sample clouds for the sweep.

    ``inflate`` scales every body uniformly; coarse relaxation stages use a
    small inflation so converging there leaves real clearance behind.
    """
    centers = np.ascontiguousarray([p.center for p in placements])
    rots = np.ascontiguousarray([p.rotation() for p in placements])
    axes = inflate * np.ascontiguousarray(
        [p.semi_axes for p in placements], dtype=np.float64
    )
    vols = inflate**3 * np.array([p.volume for p in placements])
    radii = inflate * np.array([p.bounding_radius for p in placements])
    clouds = np.ascontiguousarray(
        np.matmul(points[None, :, :] * axes[:, None, :],
                  np.transpose(rots, (0, 2, 1)))
    )
    return centers, rots, axes, vols, radii, clouds


def repulsion_forces(state: PackingState,
                     points: np.ndarray | None = None) -> np.ndarray:
    """Per-placement displacement vectors from pairwise overlap pushes.

    Equal and opposite along the (minimum-image) center line, magnitude
    equal to the overlap volume. Coincident centers get a deterministic
    pair-seeded jitter direction so the pair still separates.
    """
    if points is None:
        points = unit_ball_points()
    centers, rots, axes, vols, radii, clouds = _surrogate_arrays(
        state.placements, points
    )
    disp = np.zeros_like(centers)
    _kernels.packing_sweep(
        centers, rots, axes, vols, radii, clouds, len(points),
        np.asarray(state.bounds, dtype=np.float64),
        np.array(state.periodic, dtype=np.bool_), disp, True, 0.0,
    )
    return disp


def total_overlap(state: PackingState,
                  points: np.ndarray | None = None) -> tuple[float, float]:
    """(sum, max) of pairwise overlap volumes."""
    if points is None:
        points = unit_ball_points()
    centers, rots, axes, vols, radii, clouds = _surrogate_arrays(
        state.placements, points
    )
    disp = np.zeros_like(centers)
    return _kernels.packing_sweep(
        centers, rots, axes, vols, radii, clouds, len(points),
        np.asarray(state.bounds, dtype=np.float64),
        np.array(state.periodic, dtype=np.bool_), disp, False, 0.0,
    )


def counts_for_haematocrit(haematocrit: float, bounds) -> int:
    volume = float(np.prod(np.asarray(bounds, dtype=np.float64)))
    return int(np.floor(haematocrit * volume / RBC_NOMINAL_VOLUME))


def _support_along(placement: EllipsoidPlacement, direction: np.ndarray) -> float:
    """Half-extent of the surrogate along a world-frame unit direction."""
    body = placement.rotation().T @ np.asarray(direction, dtype=np.float64)
    return float(np.linalg.norm(body * np.asarray(placement.semi_axes)))


def pack(bounds, haematocrit: float | None = None,
         counts: dict[str, int] | None = None, seed: int = 0,
         periodic=(True, True, True), cylinder=None,
         max_iterations: int = DEFAULT_MAX_ITERATIONS,
         samples: int = DEFAULT_SAMPLE_COUNT) -> PackingState:
    """Place cells at the target density and relax until overlap-free.

    ``bounds`` is the box size in micrometers. Either a haematocrit target
    (converted to a red-cell count through the nominal 90 um^3 cell volume)
    or explicit per-kind counts must be given. The relaxation loop keeps the
    total overlap non-increasing via step halving and raises when the
    iteration cap is hit with overlap remaining.

    ``cylinder`` = (axis, inner_radius, outer_radius) confines centers to a
    tube around ``axis``, centered in the cross-section of the box, so that
    every surrogate stays radially inside (and, for an annulus, outside the
    inner radius). The two cross axes should be flagged non-periodic.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    if cylinder is not None:
        cyl_axis, cyl_inner, cyl_outer = cylinder
        cyl_axis = int(cyl_axis)
        t0, t1 = (ax for ax in range(3) if ax != cyl_axis)
        cyl_center = (0.5 * bounds[t0], 0.5 * bounds[t1])
        if not 0.0 <= cyl_inner < cyl_outer:
            raise ConfigurationError(
                [f"cylinder radii must satisfy 0 <= inner < outer, "
                 f"got ({cyl_inner}, {cyl_outer})"]
            )
    if counts is None:
        counts = {}
    else:
        counts = dict(counts)
    if haematocrit is not None:
        if "RBC" in counts:
            raise ConfigurationError(
                ["give either a haematocrit or an explicit RBC count, not both"]
            )
        counts["RBC"] = counts_for_haematocrit(haematocrit, bounds)
    if not counts or sum(counts.values()) <= 0:
        raise ConfigurationError(["nothing to pack: no cells requested"])

    if cylinder is not None:
        volume = np.pi * (cyl_outer**2 - cyl_inner**2) * float(bounds[cyl_axis])
    else:
        volume = float(np.prod(bounds))
    solid = sum(nominal_cell_volume(k) * n for k, n in counts.items()) / volume
    if solid > MAX_SOLID_FRACTION:
        raise ConfigurationError(
            [f"requested solid fraction {solid:.3f} exceeds "
             f"the {MAX_SOLID_FRACTION} ceiling"]
        )

    rng = np.random.default_rng(seed)
    points = unit_ball_points(samples)
    placements: list[EllipsoidPlacement] = []
    for kind in sorted(counts):
        axes = SURROGATE_SEMI_AXES.get(kind)
        if axes is None:
            raise ConfigurationError([f"unknown cell kind '{kind}'"])
        for ax in range(3):
            if cylinder is not None and ax != cyl_axis:
                continue
            if not periodic[ax] and bounds[ax] <= 2.0 * max(axes):
                raise ConfigurationError(
                    [f"axis {ax} span {bounds[ax]} cannot hold a "
                     f"'{kind}' surrogate between walls"]
                )
        if cylinder is not None:
            room = cyl_outer - cyl_inner if cyl_inner > 0.0 else cyl_outer
            need = 2.0 * max(axes) if cyl_inner > 0.0 else max(axes)
            if room <= need:
                raise ConfigurationError(
                    [f"cylindrical gap {room} cannot hold a '{kind}' surrogate"]
                )
        for _ in range(counts[kind]):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            placement = EllipsoidPlacement(np.zeros(3), axes, q, kind)
            supports = placement.wall_supports()
            for ax in range(3):
                if cylinder is not None and ax != cyl_axis:
                    continue
                if periodic[ax]:
                    placement.center[ax] = rng.uniform(0.0, bounds[ax])
                else:
                    pad = supports[ax] * 1.0000001
                    placement.center[ax] = rng.uniform(pad, bounds[ax] - pad)
            if cylinder is not None:
                theta = rng.uniform(0.0, 2.0 * np.pi)
                nvec = np.zeros(3)
                nvec[t0] = np.cos(theta)
                nvec[t1] = np.sin(theta)
                pad = _support_along(placement, nvec) * 1.0000001
                rhi = cyl_outer - pad
                rlo = cyl_inner + pad if cyl_inner > 0.0 else 0.0
                radial = np.sqrt(rng.uniform(rlo * rlo, rhi * rhi))
                placement.center[t0] = cyl_center[0] + radial * nvec[t0]
                placement.center[t1] = cyl_center[1] + radial * nvec[t1]
            placements.append(placement)

    state = PackingState(placements, bounds, tuple(periodic))
    caps = np.array([STEP_FRACTION * min(p.semi_axes) for p in placements])
    periodic_arr = np.array(periodic, dtype=np.bool_)
    centers = np.ascontiguousarray([p.center for p in placements])
    disp = np.zeros_like(centers)

    # coarse-to-fine ladder: cheap low-resolution sweeps on slightly
    # inflated bodies do the bulk of the untangling and leave real
    # clearance behind; the final stage polishes the exact bodies at full
    # resolution. Inflation is capped so the inflated solid fraction stays
    # below 0.55, clear of the jamming regime. The recorded history covers
    # the final stage.
    surrogate_fraction = sum(p.volume for p in placements) / volume
    inflate_cap = max(1.0, (0.55 / surrogate_fraction) ** (1.0 / 3.0))
    ladder = [(n, min(inflate_cap, 1.0 + 0.6 * (1.0 / n) ** (1.0 / 3.0)))
              for n in (64, 512) if n < samples]
    ladder.append((samples, 1.0))
    worst = 0.0
    for n_points, inflate in ladder:
        is_final = inflate == 1.0 and n_points == samples
        _, rots, axes, vols, radii, clouds = _surrogate_arrays(
            placements, points, inflate
        )
        supports = inflate * np.array([p.wall_supports() for p in placements])

        def constrain(arr):
            for ax in range(3):
                if cylinder is not None and ax != cyl_axis:
                    continue
                if periodic[ax]:
                    arr[:, ax] %= bounds[ax]
                else:
                    arr[:, ax] = np.clip(
                        arr[:, ax],
                        supports[:, ax] * 1.0000001,
                        bounds[ax] - supports[:, ax] * 1.0000001,
                    )
            if cylinder is not None:
                d0 = arr[:, t0] - cyl_center[0]
                d1 = arr[:, t1] - cyl_center[1]
                radial = np.hypot(d0, d1)
                r_safe = np.maximum(radial, 1e-12)
                n0 = np.where(radial > 1e-12, d0 / r_safe, 1.0)
                n1 = np.where(radial > 1e-12, d1 / r_safe, 0.0)
                nvec = np.zeros((arr.shape[0], 3))
                nvec[:, t0] = n0
                nvec[:, t1] = n1
                body = np.einsum("ik,ikj->ij", nvec, rots)
                pad = np.linalg.norm(body * axes, axis=1) * 1.0000001
                lo = cyl_inner + pad if cyl_inner > 0.0 else np.zeros_like(pad)
                clipped = np.clip(radial, lo, cyl_outer - pad)
                arr[:, t0] = cyl_center[0] + n0 * clipped
                arr[:, t1] = cyl_center[1] + n1 * clipped

        def sweep(pos, want_disp, floor_scale=0.0):
            return _kernels.packing_sweep(
                pos, rots, axes, vols, radii, clouds, n_points,
                bounds, periodic_arr, disp, want_disp, floor_scale,
            )

        entered = False
        while True:
            total, worst = sweep(centers, True, floor_scale=0.5)
            if is_final and not entered:
                state.history.append(total)
                entered = True
            state.max_overlap = worst
            if worst <= 0.0:
                break
            if state.iterations >= max_iterations:
                raise NumericalError(
                    f"packing failed to converge after {max_iterations} "
                    f"iterations; residual max overlap {worst:.6g} um^3"
                )
            norms = np.linalg.norm(disp, axis=1)
            over = norms > caps
            disp[over] *= (caps[over] / norms[over])[:, None]
            # step halving keeps the total non-increasing; if no halving
            # helps (sampling staircase), take the least-bad trial so the
            # configuration still changes deterministically
            scale = 1.0
            best_total = np.inf
            best = None
            for _ in range(8):
                trial = centers + scale * disp
                constrain(trial)
                trial_total, _ = sweep(trial, False)
                if trial_total < best_total:
                    best_total = trial_total
                    best = trial
                if trial_total <= total:
                    break
                scale *= 0.5
            centers[:] = best
            state.iterations += 1
            if is_final:
                state.history.append(best_total)
    for k, placement in enumerate(placements):
        placement.center = centers[k].copy()
    state.max_overlap = worst
    return state


def default_templates() -> dict[str, membrane.CellMesh]:
    return {
        "RBC": membrane.build_rbc(membrane.RBC_RADIUS_UM),
        "Platelet": membrane.build_ellipsoid(membrane.PLATELET_SEMI_AXES_UM),
    }


def place_meshes(state: PackingState,
                 templates: dict[str, membrane.CellMesh] | None = None) -> list:
    """Instantiate one mesh per placement, rotated and translated into it.

    Every vertex must land strictly inside its surrogate; a template larger
    than the surrogate is a configuration mistake we refuse to hide.
    """
    if templates is None:
        templates = default_templates()
    meshes = []
    for idx, placement in enumerate(state.placements):
        template = templates.get(placement.kind)
        if template is None:
            raise ConfigurationError(
                [f"no mesh template for cell kind '{placement.kind}'"]
            )
        rot = placement.rotation()
        mesh = template.transformed(rotation=rot, offset=placement.center)
        body = (mesh.positions - placement.center) @ rot
        scaled = body / np.asarray(placement.semi_axes)
        worst = float(np.einsum("ij,ij->i", scaled, scaled).max())
        if worst >= 1.0:
            raise ConfigurationError(
                [f"template '{placement.kind}' extends outside surrogate "
                 f"{idx} (normalized radius {np.sqrt(worst):.4f})"]
            )
        meshes.append(mesh)
    return meshes


def save_placements(path, state: PackingState) -> None:
    """Write placements as CSV rows: kind, center xyz, quaternion wxyz."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["kind", "x", "y", "z", "qw", "qx", "qy", "qz"])
        for p in state.placements:
            writer.writerow(
                [p.kind]
                + [f"{v:.17g}" for v in p.center]
                + [f"{v:.17g}" for v in p.quaternion]
            )


def load_placements(path) -> list[EllipsoidPlacement]:
    placements = []
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != ["kind", "x", "y", "z", "qw", "qx", "qy", "qz"]:
                raise StorageError(f"unrecognized placement header in {path}")
            for row in reader:
                if len(row) != 8:
                    raise StorageError(f"malformed placement row in {path}: {row}")
                kind = row[0]
                axes = SURROGATE_SEMI_AXES.get(kind)
                if axes is None:
                    raise StorageError(f"unknown cell kind '{kind}' in {path}")
                values = [float(v) for v in row[1:]]
                placements.append(
                    EllipsoidPlacement(values[:3], axes, values[3:], kind)
                )
    except OSError as exc:
        raise StorageError(f"cannot read placements: {exc}") from exc
    except ValueError as exc:
        raise StorageError(f"malformed placement file {path}: {exc}") from exc
    return placements
