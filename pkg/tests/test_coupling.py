"""Trilinear interpolation/spreading oracles and the exchange step."""

import numpy as np
import pytest

from cellflow import lbm
from cellflow.boundaries import PeriodicTopology, ShearBoxTopology
from cellflow.coupling import (
    couple_step,
    interpolate_velocity,
    spread_force,
    trilinear_weights,
)
from cellflow.membrane import MaterialParams, build_ellipsoid, build_rbc


def test_weights_partition_of_unity():
    rng = np.random.default_rng(7)
    pts = rng.random((200, 3)) * 20.0
    for p in pts:
        nodes, w = trilinear_weights(p, (8, 8, 8))
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        assert (w >= 0.0).all()
        assert nodes.min() >= 0 and nodes.max() < 8


def test_interpolation_reproduces_multilinear_fields():
    # the 2-point kernel is exact on fields of the form
    # a + b x + c y + d z + (mixed bilinear terms)
    shape = (9, 10, 11)
    x, y, z = np.meshgrid(*[np.arange(n, dtype=float) for n in shape], indexing="ij")
    u = np.empty(shape + (3,))
    u[..., 0] = 0.3 + 0.01 * x - 0.02 * y + 0.005 * z
    u[..., 1] = 0.002 * x * y
    u[..., 2] = -0.1 + 0.003 * y * z
    rng = np.random.default_rng(11)
    pts = rng.random((300, 3)) * (np.array(shape) - 2.0)
    got = interpolate_velocity(u, pts)
    expected = np.stack(
        [
            0.3 + 0.01 * pts[:, 0] - 0.02 * pts[:, 1] + 0.005 * pts[:, 2],
            0.002 * pts[:, 0] * pts[:, 1],
            -0.1 + 0.003 * pts[:, 1] * pts[:, 2],
        ],
        axis=1,
    )
    assert np.abs(got - expected).max() < 1e-13


def test_interpolation_wraps_periodically():
    shape = (6, 6, 6)
    u = np.zeros(shape + (3,))
    u[..., 0] = 1.0
    u[0, :, :, 0] = 3.0
    got = interpolate_velocity(u, np.array([[5.5, 2.0, 2.0]]))
    assert got[0, 0] == pytest.approx(2.0)


def test_spread_deposits_exact_impulse():
    rng = np.random.default_rng(3)
    field = np.zeros((7, 7, 7, 3))
    pts = rng.random((50, 3)) * 6.0
    forces = rng.normal(size=(50, 3))
    spread_force(field, pts, forces)
    assert np.allclose(field.sum(axis=(0, 1, 2)), forces.sum(axis=0), atol=1e-13)


def test_spread_skips_inactive_vertices():
    field = np.zeros((5, 5, 5, 3))
    pts = np.array([[1.5, 1.5, 1.5], [3.5, 3.5, 3.5]])
    forces = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    spread_force(field, pts, forces, active=np.array([True, False]))
    assert field.sum(axis=(0, 1, 2))[0] == pytest.approx(1.0)
    assert field.sum(axis=(0, 1, 2))[1] == pytest.approx(0.0)


def test_vertex_velocities_follow_linear_shear():
    ny = 12
    grid = lbm.LatticeGrid((12, ny, 12), tau=0.9)
    gdot = 1e-3
    y = np.arange(ny)
    u = np.zeros((12, ny, 12, 3))
    u[..., 0] = gdot * (y[None, :, None] - (ny - 1) / 2.0)
    grid.initialize_equilibrium(1.0, u)
    mesh = build_ellipsoid((2.0, 2.0, 1.0), MaterialParams())
    mesh.translate([6.0, (ny - 1) / 2.0, 6.0])
    couple_step(grid, [mesh], dt_cell=0.0)
    expected = gdot * (mesh.positions[:, 1] - (ny - 1) / 2.0)
    assert np.abs(mesh.velocities[:, 0] - expected).max() < 1e-12
    assert np.abs(mesh.velocities[:, 1:]).max() < 1e-12


def test_sheared_image_velocity_offset():
    # A quiescent box still has moving images: the row above the seam sits
    # at +speed, so points near or past the seam blend toward it.
    topo = ShearBoxTopology((10, 10, 10), speed=0.05)
    u = np.zeros((10, 10, 10, 3))
    got = interpolate_velocity(u, np.array([[5.0, 10.5, 5.0]]), topo, time_step=0)
    assert got[0, 0] == pytest.approx(0.05)
    got = interpolate_velocity(u, np.array([[5.0, -0.5, 5.0]]), topo, time_step=0)
    assert got[0, 0] == pytest.approx(-0.025)
    got = interpolate_velocity(u, np.array([[5.0, 9.5, 5.0]]), topo, time_step=0)
    assert got[0, 0] == pytest.approx(0.025)


def test_linear_shear_interpolates_exactly_through_the_seam():
    n = 10
    gdot = 3e-3
    topo = ShearBoxTopology((n, n, n), speed=gdot * n)
    c = (n - 1) / 2.0
    u = np.zeros((n, n, n, 3))
    u[..., 0] = gdot * (np.arange(n)[None, :, None] - c)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-n, 2.0 * n, size=(400, 3))
    for t in (0, 9, 250):
        got = interpolate_velocity(u, pts, topo, time_step=t)
        assert np.abs(got[:, 0] - gdot * (pts[:, 1] - c)).max() < 1e-14
        assert np.abs(got[:, 1:]).max() < 1e-14


def test_seam_spread_force_is_conserved_and_lands_shifted():
    n = 8
    topo = ShearBoxTopology((n, n, n), speed=0.04)
    field = np.zeros((n, n, n, 3))
    pts = np.array([[4.0, n - 0.25, 4.0]])
    spread_force(field, pts, np.array([[0.0, 0.0, 1.0]]), topo, time_step=100)
    assert field.sum(axis=(0, 1, 2)) == pytest.approx([0.0, 0.0, 1.0], abs=1e-15)
    # three quarters of the weight crosses into the bottom row, centred at
    # x - delta = 4 - (0.04 * 100) % 8 = 0
    bottom = field[:, 0, :, 2]
    assert bottom.sum() == pytest.approx(0.75, abs=1e-15)
    assert bottom[0].sum() == pytest.approx(0.75, abs=1e-15)


def test_relaxed_cell_in_quiescent_fluid_stays_put():
    grid = lbm.LatticeGrid((16, 16, 16), tau=1.0)
    grid.initialize_equilibrium(1.0)
    mesh = build_rbc(3.0)
    mesh.translate([8.0, 8.0, 8.0])
    start = mesh.positions.copy()
    for step in range(3):
        couple_step(grid, [mesh], dt_cell=1.0, time_step=step)
        lbm.collide(grid)
        lbm.stream(grid)
    assert np.abs(mesh.positions - start).max() < 1e-12
    _, u = grid.macroscopic()
    assert np.abs(u).max() < 1e-12


def test_coupling_transfers_exact_momentum():
    # a net external pull on the cell enters the fluid as a body force;
    # with the forcing scheme each collision adds exactly the spread total
    grid = lbm.LatticeGrid((12, 12, 12), tau=0.9)
    grid.initialize_equilibrium(1.0)
    mesh = build_ellipsoid((2.0, 2.0, 1.0), MaterialParams())
    mesh.translate([6.0, 6.0, 6.0])
    pull = np.zeros((mesh.n_vertices, 3))
    pull[:, 0] = 1e-5
    couple_step(grid, [mesh], dt_cell=0.0, extra_forces=[pull])
    total = pull.sum(axis=0)
    membrane_part = grid.force.sum(axis=(0, 1, 2)) - total
    assert np.abs(membrane_part).max() < 1e-12
    p0 = grid.total_momentum()
    n_steps = 4
    for _ in range(n_steps):
        lbm.collide(grid)
        lbm.stream(grid)
    gained = grid.total_momentum() - p0
    assert np.allclose(gained, n_steps * total, rtol=1e-10, atol=1e-15)


def test_couple_step_respects_base_force():
    grid = lbm.LatticeGrid((8, 8, 8), tau=1.0)
    grid.initialize_equilibrium(1.0)
    base = np.zeros((8, 8, 8, 3))
    base[..., 0] = 2e-6
    mesh = build_ellipsoid((1.5, 1.5, 1.0), MaterialParams())
    mesh.translate([4.0, 4.0, 4.0])
    couple_step(grid, [mesh], dt_cell=0.0, base_force=base)
    assert grid.force.sum(axis=(0, 1, 2))[0] == pytest.approx(
        base[..., 0].sum(), rel=1e-10
    )
