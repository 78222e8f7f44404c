"""Profile, cell-free-layer, margination, and viscosity estimators."""

import numpy as np
import pytest

from cellflow import lbm
from cellflow.analysis import (
    PipeGeometry,
    ProfileReport,
    SlabGeometry,
    bulk_viscosity,
    cfl_width,
    hematocrit_profile,
    margination_ratio,
    membrane_stresslet_xy,
)
from cellflow.errors import ConfigurationError, NumericalError
from cellflow.membrane import build_ellipsoid, build_rbc


def sphere(center, radius=1.2, kind="rbc"):
    mesh = build_ellipsoid((radius, radius, radius), subdivisions=1, kind=kind)
    mesh.translate(center)
    return mesh


def test_empty_suspension_gives_zero_profile():
    geometry = SlabGeometry((16, 20, 16))
    report = hematocrit_profile([], geometry, bins=5)
    assert np.all(report.haematocrit == 0.0)
    assert np.all(report.platelet_counts == 0)
    assert report.edges[0] == 0.0
    assert report.edges[-1] == pytest.approx(10.0)


def test_centered_cell_fills_only_central_bins():
    geometry = SlabGeometry((20, 20, 20))
    cell = build_rbc(3.91)
    cell.translate((10.0, 10.0, 10.0))
    report = hematocrit_profile([cell], geometry, bins=5)
    # vertices sit at wall distances 10 - 1.3 .. 10, i.e. the outermost bin
    assert report.haematocrit[-1] > 0.0
    assert np.all(report.haematocrit[:3] == 0.0)
    binned = (report.haematocrit * report.bin_volumes).sum()
    assert binned == pytest.approx(cell.volume(), rel=1e-12)


def test_uniform_seeding_is_roughly_flat():
    geometry = SlabGeometry((24, 24, 24))
    rng = np.random.default_rng(3)
    cells = [
        sphere(rng.uniform(0.0, 24.0, size=3))
        for _ in range(60)
    ]
    report = hematocrit_profile(cells, geometry, bins=4)
    expected = sum(c.volume() for c in cells) / geometry.domain_volume()
    assert np.all(report.haematocrit > 0.6 * expected)
    assert np.all(report.haematocrit < 1.4 * expected)


def test_profile_counts_platelets_by_center():
    geometry = SlabGeometry((16, 20, 16))
    cells = [
        sphere((8.0, 1.5, 8.0), radius=0.8, kind="platelet"),
        sphere((8.0, 10.0, 8.0), radius=0.8, kind="platelet"),
        sphere((8.0, 10.0, 4.0)),
    ]
    report = hematocrit_profile(cells, geometry, bins=5)
    assert report.platelet_counts[0] == 1
    assert report.platelet_counts[-1] == 1
    assert report.platelet_counts.sum() == 2


def test_profile_requires_enough_bins():
    with pytest.raises(ConfigurationError):
        hematocrit_profile([], SlabGeometry((8, 8, 8)), bins=3)


def test_cfl_width_cases():
    volumes = np.ones(5)
    flat = ProfileReport(np.arange(6.0), np.full(5, 0.2), np.zeros(5), volumes)
    assert cfl_width(flat) == 0.0

    layered = ProfileReport(
        np.arange(6.0), np.array([0.0, 0.0, 0.3, 0.3, 0.3]), np.zeros(5), volumes
    )
    assert cfl_width(layered) == pytest.approx(2.0)

    empty = ProfileReport(np.arange(6.0), np.zeros(5), np.zeros(5), volumes)
    with pytest.raises(NumericalError):
        cfl_width(empty)


def test_margination_uniform_grid_is_near_one():
    geometry = SlabGeometry((16, 20, 16))
    ys = np.linspace(0.25, 19.75, 40)
    points = np.array([(8.0, y, 8.0) for y in ys])
    ratio = margination_ratio(points, geometry, shell=4.0)
    assert ratio == pytest.approx(1.0, abs=0.05)


def test_margination_all_in_shell_matches_volume_ratio():
    geometry = SlabGeometry((16, 20, 16))
    points = np.array([(8.0, 1.0, 8.0), (8.0, 19.5, 8.0), (2.0, 3.9, 2.0)])
    ratio = margination_ratio(points, geometry, shell=4.0)
    expected = geometry.domain_volume() / geometry.shell_volume(4.0)
    assert ratio == pytest.approx(expected, rel=1e-12)


def test_margination_needs_platelets():
    with pytest.raises(ConfigurationError):
        margination_ratio(np.empty((0, 3)), SlabGeometry((8, 8, 8)), shell=4.0)


def test_pipe_geometry_distances_and_volumes():
    pipe = PipeGeometry((10, 21, 21), radius=8.0)
    d = pipe.wall_distance(np.array([[5.0, 10.0, 10.0], [5.0, 18.0, 10.0]]))
    assert d[0] == pytest.approx(8.0)
    assert d[1] == pytest.approx(0.0)
    assert pipe.domain_volume() == pytest.approx(np.pi * 64.0 * 10)
    assert pipe.shell_volume(8.0) == pytest.approx(pipe.domain_volume())
    assert pipe.shell_volume(1.0) == pytest.approx(np.pi * (64.0 - 49.0) * 10)


def test_pipe_profile_puts_centered_cell_in_core():
    pipe = PipeGeometry((12, 21, 21), radius=8.0)
    cell = sphere((6.0, 10.0, 10.0))
    report = hematocrit_profile([cell], pipe, bins=4)
    assert report.haematocrit[-1] > 0.0
    assert np.all(report.haematocrit[:2] == 0.0)


def test_stresslet_resists_imposed_shear_strain():
    mesh = build_ellipsoid((2.0, 2.0, 2.0), subdivisions=2)
    mesh.translate((5.0, 5.0, 5.0))
    sheared = mesh.copy()
    sheared.positions[:, 0] += 0.05 * (sheared.positions[:, 1] - 5.0)
    assert membrane_stresslet_xy([mesh]) == pytest.approx(0.0, abs=1e-12)
    assert membrane_stresslet_xy([sheared]) > 1e-4


def test_bulk_viscosity_newtonian_control():
    shape = (8, 12, 8)
    grid = lbm.LatticeGrid(shape, 0.8)
    speed = 0.024
    gamma = speed / shape[1]
    u = np.zeros(shape + (3,))
    y = np.arange(shape[1], dtype=np.float64)
    u[..., 0] = gamma * (y - (shape[1] - 1) / 2.0)[None, :, None]
    grid.initialize_equilibrium(1.0, u)
    assert bulk_viscosity(grid, [], speed) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ConfigurationError):
        bulk_viscosity(grid, [], 0.0)
