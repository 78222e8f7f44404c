"""Walls, moving walls, Lees-Edwards seams, pre-inlet plane plumbing."""

import numpy as np
import pytest

from cellflow import boundaries, lbm
from cellflow.boundaries import (
    BoundarySpec,
    PeriodicTopology,
    ShearBoxTopology,
    apply_bounce_back,
    apply_face_walls,
    lees_edwards_shift,
    load_solid_mask,
    paint_cone_plate,
    paint_moving_face,
    paint_pipe,
    save_solid_mask,
    stream_with_boundaries,
)
from cellflow.errors import ConfigurationError, StorageError
from cellflow.membrane import MaterialParams, build_ellipsoid


def test_boundary_spec_validation():
    BoundarySpec(x="periodic", y="wall", z="wall")
    with pytest.raises(ConfigurationError):
        BoundarySpec(x="slippery")
    with pytest.raises(ConfigurationError):
        BoundarySpec(x="lees_edwards")
    with pytest.raises(ConfigurationError):
        BoundarySpec(y="lees_edwards", x="wall")
    with pytest.raises(ConfigurationError):
        BoundarySpec(y="lees_edwards", le_speed=0.5)
    with pytest.raises(ConfigurationError):
        BoundarySpec(x="periodic", pre_inlet_length=8)


def test_walled_channel_rest_state_stays_at_rest():
    grid = lbm.LatticeGrid((4, 8, 4), tau=1.0)
    apply_face_walls(grid, BoundarySpec(y="wall"))
    grid.initialize_equilibrium(1.0)
    m0 = grid.total_mass()
    for step in range(10):
        lbm.collide(grid)
        stream_with_boundaries(grid, time_step=step)
    rho, u = grid.macroscopic()
    assert np.abs(u[grid.fluid_mask()]).max() < 1e-14
    assert grid.total_mass() == pytest.approx(m0, rel=1e-13)


def test_bounce_back_conserves_mass_with_random_state():
    grid = lbm.LatticeGrid((5, 6, 4), tau=1.0)
    apply_face_walls(grid, BoundarySpec(y="wall", z="wall"))
    rng = np.random.default_rng(2)
    grid.f[grid.fluid_mask()] = rng.random((int(grid.fluid_mask().sum()), 19))
    m0 = grid.total_mass()
    lbm.stream(grid)
    apply_bounce_back(grid)
    assert grid.total_mass() == pytest.approx(m0, rel=1e-14)


def test_couette_linear_profile_with_ladd_wall():
    # top face moves at U along x; steady profile is linear with the
    # zero-velocity plane half-way into the solid layer
    ny = 10
    h = ny - 2
    speed = 0.08
    grid = lbm.LatticeGrid((4, ny, 4), tau=0.8)
    apply_face_walls(grid, BoundarySpec(y="wall"))
    paint_moving_face(grid, axis=1, side=1, velocity=(speed, 0.0, 0.0))
    grid.initialize_equilibrium(1.0)
    for step in range(4000):
        lbm.collide(grid)
        stream_with_boundaries(grid, time_step=step)
    _, u = grid.macroscopic()
    y = np.arange(1, ny - 1)
    expected = speed * (y - 0.5) / h
    profile = u[2, 1:-1, 2, 0]
    assert np.abs(profile - expected).max() < 1e-8
    assert np.abs(u[2, 1:-1, 2, 1:]).max() < 1e-10


def test_moving_face_speed_guard():
    grid = lbm.LatticeGrid((4, 6, 4), tau=1.0)
    apply_face_walls(grid, BoundarySpec(y="wall"))
    with pytest.raises(ConfigurationError):
        paint_moving_face(grid, axis=1, side=1, velocity=(0.4, 0.0, 0.0))


def test_pipe_painter():
    grid = lbm.LatticeGrid((4, 21, 21), tau=1.0)
    paint_pipe(grid, radius=8.0, axis=0)
    assert grid.flags[0, 10, 10] == lbm.FLUID
    assert grid.flags[0, 0, 0] == lbm.WALL
    assert grid.flags[0, 10, 18] == lbm.WALL  # r=8 lands on the wall side


def test_cone_plate_painter_and_guards():
    grid = lbm.LatticeGrid((25, 25, 12), tau=1.0)
    paint_cone_plate(grid, radius=11.0, omega=0.02, cone_angle_deg=20.0, gap=6.0)
    assert grid.flags[12, 12, 1] == lbm.FLUID
    assert grid.flags[12, 12, 0] == lbm.WALL
    lid = grid.flags == lbm.MOVING_WALL
    assert lid.any()
    # lid velocity is tangential: u . r = 0
    coords = np.argwhere(lid).astype(float)
    r = coords[:, :2] - 12.0
    v = grid.wall_velocity[lid][:, :2]
    assert np.abs(np.einsum("ij,ij->i", r, v)).max() < 1e-12
    with pytest.raises(ConfigurationError):
        paint_cone_plate(grid, radius=11.0, omega=0.02, cone_angle_deg=50.0, gap=6.0)
    with pytest.raises(ConfigurationError):
        paint_cone_plate(grid, radius=11.0, omega=0.05, cone_angle_deg=20.0, gap=6.0)


def test_solid_mask_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    mask = rng.random((4, 5, 6)) > 0.6
    path = tmp_path / "device.mask"
    save_solid_mask(path, mask)
    back = load_solid_mask(path)
    assert np.array_equal(back, mask)


def test_solid_mask_rejects_corruption(tmp_path):
    path = tmp_path / "bad.mask"
    path.write_bytes(b"dims 2 2\n\x00\x01")
    with pytest.raises(StorageError):
        load_solid_mask(path)
    path.write_bytes(b"dims 2 2 2\n\x00\x01\x00")  # short body
    with pytest.raises(StorageError):
        load_solid_mask(path)
    path.write_bytes(b"dims 2 2 2\n" + bytes([0, 1, 0, 1, 0, 1, 0, 7]))
    with pytest.raises(StorageError):
        load_solid_mask(path)


def test_apply_solid_mask_shape_guard():
    grid = lbm.LatticeGrid((3, 3, 3), tau=1.0)
    with pytest.raises(ConfigurationError):
        boundaries.apply_solid_mask(grid, np.zeros((2, 3, 3), dtype=bool))


def test_lees_edwards_shift_wraps():
    assert lees_edwards_shift(0.1, 25, 16) == pytest.approx(2.5)
    assert lees_edwards_shift(0.1, 170, 16) == pytest.approx(1.0)


def test_lees_edwards_uniform_shear_is_stationary():
    nx, ny, nz = 16, 12, 4
    speed = 0.024
    gdot = speed / ny
    grid = lbm.LatticeGrid((nx, ny, nz), tau=0.9)
    y = np.arange(ny)
    u = np.zeros((nx, ny, nz, 3))
    u[..., 0] = gdot * (y[None, :, None] - (ny - 1) / 2.0)
    grid.initialize_equilibrium(1.0, u)
    m0 = grid.total_mass()
    for step in range(400):
        lbm.collide(grid)
        stream_with_boundaries(grid, le_speed=speed, time_step=step)
        assert grid.total_mass() == pytest.approx(m0, rel=1e-12)
    _, u_end = grid.macroscopic()
    assert np.abs(u_end[..., 0] - u[..., 0]).max() < 1e-6
    assert np.abs(u_end[..., 1:]).max() < 1e-6


def test_shear_topology_wraps_cells_rigidly():
    topo = ShearBoxTopology((16, 12, 8), speed=0.05)
    mesh = build_ellipsoid((1.0, 1.0, 0.5), MaterialParams())
    mesh.translate([8.0, 12.5, 4.0])  # center above the top face
    mesh.velocities[:, 0] = 0.02
    lengths_before = np.linalg.norm(
        mesh.positions[mesh.edges[:, 1]] - mesh.positions[mesh.edges[:, 0]], axis=1
    )
    t = 37
    delta = lees_edwards_shift(0.05, t, 16)
    c_before = mesh.center()
    topo.wrap_cells([mesh], time_step=t)
    c_after = mesh.center()
    assert c_after[1] == pytest.approx(c_before[1] - 12.0, abs=1e-12)
    assert c_after[0] == pytest.approx((c_before[0] - delta) % 16.0, abs=1e-12)
    assert np.allclose(mesh.velocities[:, 0], 0.02 - 0.05)
    lengths_after = np.linalg.norm(
        mesh.positions[mesh.edges[:, 1]] - mesh.positions[mesh.edges[:, 0]], axis=1
    )
    assert np.abs(lengths_after - lengths_before).max() < 1e-12


def test_periodic_topology_wraps_positions_and_cells():
    topo = PeriodicTopology((8, 8, 8), (True, False, True))
    pos = np.array([[9.5, 7.2, -1.0]])
    wrapped, off = topo.wrap_positions(pos)
    assert off is None
    assert wrapped[0, 0] == pytest.approx(1.5)
    assert wrapped[0, 2] == pytest.approx(7.0)
    mesh = build_ellipsoid((1.0, 1.0, 0.5), MaterialParams())
    mesh.translate([8.5, 4.0, 4.0])
    topo.wrap_cells([mesh])
    assert mesh.center()[0] == pytest.approx(0.5, abs=1e-12)


def test_inlet_plane_copy_and_outlet():
    pre = lbm.LatticeGrid((6, 5, 5), tau=1.0)
    main = lbm.LatticeGrid((9, 5, 5), tau=1.0)
    for g in (pre, main):
        apply_face_walls(g, BoundarySpec(y="wall", z="wall"))
        g.initialize_equilibrium(1.0)
    pre.f[0] += 0.01
    boundaries.copy_inlet_plane(main, pre)
    fluid = main.flags[0] == lbm.FLUID
    assert np.array_equal(main.f[0][fluid], pre.f[0][fluid])
    main.f[-2] += 0.02
    boundaries.zero_gradient_outlet(main)
    fluid = main.flags[-1] == lbm.FLUID
    assert np.array_equal(main.f[-1][fluid], main.f[-2][fluid])
    small = lbm.LatticeGrid((6, 4, 5), tau=1.0)
    with pytest.raises(ConfigurationError):
        boundaries.copy_inlet_plane(main, small)
