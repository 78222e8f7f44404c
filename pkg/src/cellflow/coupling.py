"""Immersed boundary coupling between the lattice fluid and cell vertices.

Velocity coupling with a trilinear (2-point) kernel: vertex velocities are
set to the interpolated fluid velocity, membrane forces are spread back onto
the fluid with the same weights. The weights form a partition of unity, so a
constant field interpolates exactly and a spread force deposits exactly its
own total impulse.
"""

from __future__ import annotations

import numpy as np

from . import _kernels, membrane
from .boundaries import PeriodicTopology


def trilinear_weights(position, shape):
    """Reference (nodes, weights) stencil of one point; wraps periodically.

    Returns an (8, 3) int array of node indices and the 8 matching weights.
    """
    p = np.asarray(position, dtype=np.float64)
    base = np.floor(p).astype(np.int64)
    frac = p - base
    nodes = np.empty((8, 3), dtype=np.int64)
    weights = np.empty(8)
    k = 0
    for cx in range(2):
        for cy in range(2):
            for cz in range(2):
                corner = base + np.array([cx, cy, cz])
                nodes[k] = corner % np.asarray(shape)
                w = np.prod(np.where([cx, cy, cz], frac, 1.0 - frac))
                weights[k] = w
                k += 1
    return nodes, weights


def interpolate_velocity(u_field, positions, topology=None, time_step=0):
    """Fluid velocity at off-grid points (adds sheared-image offsets).

    In a shear box, stencils straddling the sheared seam sample the image
    row at its shifted x with the image velocity boost, so a linear shear
    profile interpolates exactly through the seam.
    """
    if topology is None:
        topology = PeriodicTopology(u_field.shape[:3])
    wrapped, offsets = topology.wrap_positions(positions, time_step)
    out = np.empty_like(wrapped)
    speed = getattr(topology, "speed", 0.0)
    if speed != 0.0:
        _kernels.trilinear_gather_le(
            u_field, wrapped, topology.le_shift(time_step), speed, out
        )
    else:
        _kernels.trilinear_gather(u_field, wrapped, out)
    if offsets is not None:
        out += offsets
    return out


def spread_force(force_field, positions, vertex_forces, topology=None,
                 time_step=0, active=None):
    """Scatter vertex forces into the node force field (in place)."""
    if topology is None:
        topology = PeriodicTopology(force_field.shape[:3])
    wrapped, _ = topology.wrap_positions(positions, time_step)
    if active is None:
        active = np.ones(len(wrapped), dtype=np.bool_)
    speed = getattr(topology, "speed", 0.0)
    forces = np.ascontiguousarray(vertex_forces, dtype=np.float64)
    mask = np.ascontiguousarray(active, dtype=np.bool_)
    if speed != 0.0:
        _kernels.trilinear_scatter_le(
            force_field, wrapped, forces, mask, topology.le_shift(time_step)
        )
    else:
        _kernels.trilinear_scatter(force_field, wrapped, forces, mask)


def couple_step(grid, meshes, dt_cell, scheme="euler", topology=None,
                time_step=0, extra_forces=None, base_force=None,
                active_masks=None):
    """One full fluid-membrane exchange.

    Reads the current macroscopic velocity, sets vertex velocities from it,
    evaluates membrane forces (plus optional per-mesh extra forces such as
    inter-cell repulsion or scenario loads), spreads them into ``grid.force``
    on top of ``base_force``, then advances vertex positions by ``dt_cell``.
    The spread force stays constant until the next exchange. Vertices
    flagged inactive in ``active_masks`` (one bool array per mesh, used for
    cells straddling an open outlet) still move with the clamped local
    velocity but do not deposit force.
    """
    if topology is None:
        topology = PeriodicTopology(grid.shape, grid.periodic)
    _, u = grid.macroscopic()
    grid.force[...] = 0.0 if base_force is None else base_force
    for k, mesh in enumerate(meshes):
        mesh.velocities = interpolate_velocity(u, mesh.positions, topology, time_step)
        forces = membrane.total_forces(mesh)
        if extra_forces is not None and extra_forces[k] is not None:
            forces = forces + extra_forces[k]
        active = None if active_masks is None else active_masks[k]
        spread_force(grid.force, mesh.positions, forces, topology, time_step,
                     active=active)
    for mesh in meshes:
        membrane.integrate(mesh, dt_cell, scheme)
    topology.wrap_cells(meshes, time_step)
