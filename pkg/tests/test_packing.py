"""Overlap oracles and force-bias relaxation behavior."""

import numpy as np
import pytest

from cellflow import packing
from cellflow.errors import ConfigurationError, NumericalError, StorageError
from cellflow.membrane import MaterialParams, build_ellipsoid
from cellflow.packing import (
    EllipsoidPlacement,
    PackingState,
    counts_for_haematocrit,
    load_placements,
    overlap_volume,
    pack,
    place_meshes,
    repulsion_forces,
    save_placements,
)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def sphere(center, radius=1.0, kind="RBC"):
    return EllipsoidPlacement(center, (radius, radius, radius), IDENTITY, kind)


def test_placement_validation():
    with pytest.raises(ConfigurationError):
        EllipsoidPlacement([0, 0, 0], (1.0, -1.0, 1.0), IDENTITY)
    with pytest.raises(ConfigurationError):
        EllipsoidPlacement([0, 0, 0], (1.0, 1.0, 1.0), [1.0, 0.1, 0.0, 0.0])


def test_overlap_identical_spheres_is_sphere_volume():
    a = sphere([0.0, 0.0, 0.0])
    b = sphere([0.0, 0.0, 0.0])
    exact = 4.0 * np.pi / 3.0
    assert overlap_volume(a, b) == pytest.approx(exact, rel=0.02)


def test_overlap_unit_spheres_at_distance_one_matches_lens_formula():
    # two unit spheres, centers one radius apart: lens volume
    # pi (4 r + d) (2 r - d)^2 / 12 with r = d = 1
    a = sphere([0.0, 0.0, 0.0])
    b = sphere([1.0, 0.0, 0.0])
    exact = np.pi * 5.0 / 12.0
    assert overlap_volume(a, b) == pytest.approx(exact, rel=0.03)


def test_overlap_disjoint_bounding_spheres_is_exactly_zero():
    a = sphere([0.0, 0.0, 0.0])
    b = sphere([2.5, 0.0, 0.0])
    assert overlap_volume(a, b) == 0.0


def test_overlap_of_enclosed_body_is_its_full_volume():
    big = sphere([0.0, 0.0, 0.0], radius=2.0)
    rng = np.random.default_rng(5)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    small = EllipsoidPlacement([0.1, -0.05, 0.2], (1.0, 0.8, 0.6), q)
    assert overlap_volume(big, small) == pytest.approx(small.volume, rel=1e-12)


def test_repulsion_action_reaction_and_symmetry():
    bounds = np.array([50.0, 50.0, 50.0])
    pair = PackingState(
        [sphere([10.0, 10.0, 10.0]), sphere([11.0, 10.0, 10.0])],
        bounds, (True, True, True),
    )
    disp = repulsion_forces(pair)
    assert np.allclose(disp[0], -disp[1], atol=1e-15)
    assert disp[0][0] < 0.0 < disp[1][0]

    apart = PackingState(
        [sphere([10.0, 10.0, 10.0]), sphere([20.0, 10.0, 10.0])],
        bounds, (True, True, True),
    )
    assert np.all(repulsion_forces(apart) == 0.0)

    colinear = PackingState(
        [sphere([10.0, 10.0, 10.0]),
         sphere([11.2, 10.0, 10.0]),
         sphere([12.4, 10.0, 10.0])],
        bounds, (True, True, True),
    )
    disp = repulsion_forces(colinear)
    assert np.allclose(disp[1], 0.0, atol=1e-15)


def test_repulsion_uses_minimum_image():
    bounds = np.array([20.0, 20.0, 20.0])
    state = PackingState(
        [sphere([0.3, 10.0, 10.0]), sphere([19.5, 10.0, 10.0])],
        bounds, (True, True, True),
    )
    disp = repulsion_forces(state)
    # the images touch across the seam: first pushed +x, second pushed -x
    assert disp[0][0] > 0.0 > disp[1][0]


def test_haematocrit_count_arithmetic():
    assert counts_for_haematocrit(0.10, (50.0, 50.0, 50.0)) == 138


def test_pack_rejects_excess_density_and_empty_requests():
    with pytest.raises(ConfigurationError):
        pack((20.0, 20.0, 20.0), haematocrit=0.5)
    with pytest.raises(ConfigurationError):
        pack((20.0, 20.0, 20.0))
    with pytest.raises(ConfigurationError):
        pack((20.0, 20.0, 20.0), haematocrit=0.2, counts={"RBC": 3})


def test_single_cell_needs_no_relaxation():
    state = pack((40.0, 40.0, 40.0), counts={"RBC": 1}, seed=3)
    assert state.iterations == 0
    assert state.max_overlap == 0.0


def test_pack_terminates_overlap_free_and_monotone():
    state = pack((24.0, 24.0, 24.0), haematocrit=0.15, seed=11)
    assert len(state.placements) == 23
    assert state.max_overlap == 0.0
    assert np.all(np.diff(state.history) <= 1e-12)
    _, worst = packing.total_overlap(state)
    assert worst == 0.0


def test_pack_is_bitwise_deterministic():
    a = pack((22.0, 22.0, 22.0), haematocrit=0.12, seed=7)
    b = pack((22.0, 22.0, 22.0), haematocrit=0.12, seed=7)
    for pa, pb in zip(a.placements, b.placements):
        assert np.array_equal(pa.center, pb.center)
        assert np.array_equal(pa.quaternion, pb.quaternion)
    c = pack((22.0, 22.0, 22.0), haematocrit=0.12, seed=8)
    assert any(
        not np.array_equal(pa.center, pc.center)
        for pa, pc in zip(a.placements, c.placements)
    )


def test_pack_respects_walls():
    state = pack((30.0, 18.0, 30.0), counts={"RBC": 10}, seed=2,
                 periodic=(True, False, True))
    for p in state.placements:
        h = p.wall_supports()[1]
        assert h < p.center[1] < 18.0 - h


def test_pack_respects_a_cylinder():
    state = pack((30.0, 26.0, 26.0), counts={"RBC": 14}, seed=4,
                 periodic=(True, False, False),
                 cylinder=(0, 0.0, 11.0))
    assert state.max_overlap == 0.0
    for p in state.placements:
        nvec = np.array([0.0, p.center[1] - 13.0, p.center[2] - 13.0])
        radial = np.linalg.norm(nvec)
        support = packing._support_along(p, nvec / radial)
        assert radial + support <= 11.0 + 1e-9

    again = pack((30.0, 26.0, 26.0), counts={"RBC": 14}, seed=4,
                 periodic=(True, False, False),
                 cylinder=(0, 0.0, 11.0))
    for p, q in zip(state.placements, again.placements):
        assert np.array_equal(p.center, q.center)
        assert np.array_equal(p.quaternion, q.quaternion)


def test_pack_respects_an_annulus():
    state = pack((40.0, 40.0, 12.0), counts={"RBC": 10}, seed=6,
                 periodic=(False, False, False),
                 cylinder=(2, 8.0, 19.0))
    assert state.max_overlap == 0.0
    for p in state.placements:
        nvec = np.array([p.center[0] - 20.0, p.center[1] - 20.0, 0.0])
        radial = np.linalg.norm(nvec)
        support = packing._support_along(p, nvec / radial)
        assert radial + support <= 19.0 + 1e-9
        assert radial - support >= 8.0 - 1e-9
        h = p.wall_supports()[2]
        assert h < p.center[2] < 12.0 - h


def test_pack_rejects_too_tight_cylinders():
    with pytest.raises(ConfigurationError):
        pack((30.0, 10.0, 10.0), counts={"RBC": 2}, seed=0,
             periodic=(True, False, False), cylinder=(0, 0.0, 3.5))
    with pytest.raises(ConfigurationError):
        pack((40.0, 40.0, 12.0), counts={"RBC": 2}, seed=0,
             periodic=(False, False, False), cylinder=(2, 9.0, 16.0))


def test_mixing_with_many_cells():
    state = pack((20.0, 20.0, 20.0), counts={"Platelet": 150}, seed=21)
    centers = np.array([p.center for p in state.placements])
    com = centers.mean(axis=0)
    assert np.abs(com / 20.0 - 0.5).max() < 0.05
    quats = np.array([p.quaternion for p in state.placements])
    # fold antipodes together, then no orientation octant should hold more
    # than twice its expected share
    quats[quats[:, 0] < 0] *= -1.0
    octants = (quats[:, 1] > 0) * 1 + (quats[:, 2] > 0) * 2 + (quats[:, 3] > 0) * 4
    counts = np.bincount(octants, minlength=8)
    assert counts.max() <= 2 * len(quats) / 8


def test_iteration_cap_raises_with_residual():
    with pytest.raises(NumericalError, match="residual"):
        pack((16.0, 16.0, 16.0), counts={"RBC": 12}, seed=1, max_iterations=1)


def test_place_meshes_identity_and_rotation():
    template = build_ellipsoid((1.0, 1.0, 0.4), MaterialParams())
    state = PackingState(
        [EllipsoidPlacement([0.0, 0.0, 0.0], (1.3, 1.3, 0.6), IDENTITY, "P")],
        np.array([10.0, 10.0, 10.0]), (True, True, True),
    )
    meshes = place_meshes(state, {"P": template})
    assert np.allclose(meshes[0].positions, template.positions, atol=1e-15)

    half = np.sqrt(0.5)
    quarter_turn_x = np.array([half, half, 0.0, 0.0])  # maps y->z, z->-y
    state.placements[0] = EllipsoidPlacement(
        [0.0, 0.0, 0.0], (1.3, 1.3, 1.3), quarter_turn_x, "P"
    )
    rotated = place_meshes(state, {"P": template})[0]
    expected = template.positions[:, [0, 2, 1]] * np.array([1.0, -1.0, 1.0])
    assert np.abs(rotated.positions - expected).max() < 1e-12


def test_place_meshes_rejects_oversized_template():
    template = build_ellipsoid((1.5, 1.5, 0.7), MaterialParams())
    state = PackingState(
        [EllipsoidPlacement([5.0, 5.0, 5.0], (1.3, 1.3, 0.6), IDENTITY, "P")],
        np.array([10.0, 10.0, 10.0]), (True, True, True),
    )
    with pytest.raises(ConfigurationError):
        place_meshes(state, {"P": template})


def test_placed_cells_do_not_touch():
    state = pack((24.0, 24.0, 24.0), haematocrit=0.12, seed=4)
    meshes = place_meshes(state)
    n = len(meshes)
    min_gap = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            d = meshes[i].positions[:, None, :] - meshes[j].positions[None, :, :]
            d -= 24.0 * np.round(d / 24.0)
            min_gap = min(min_gap, np.sqrt((d**2).sum(axis=2)).min())
    assert min_gap > 0.0


def test_placement_csv_roundtrip(tmp_path):
    state = pack((22.0, 22.0, 22.0), counts={"RBC": 5, "Platelet": 4}, seed=9)
    path = tmp_path / "cells.csv"
    save_placements(path, state)
    loaded = load_placements(path)
    assert len(loaded) == 9
    for orig, back in zip(state.placements, loaded):
        assert back.kind == orig.kind
        assert np.array_equal(back.center, orig.center)
        assert np.array_equal(back.quaternion, orig.quaternion)


def test_placement_csv_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("kind,x,y\nRBC,1,2\n")
    with pytest.raises(StorageError):
        load_placements(path)
    path.write_text("kind,x,y,z,qw,qx,qy,qz\nRBC,1,2,3,1,0,0\n")
    with pytest.raises(StorageError):
        load_placements(path)
    path.write_text("kind,x,y,z,qw,qx,qy,qz\nGhost,1,2,3,1,0,0,0\n")
    with pytest.raises(StorageError):
        load_placements(path)
    path.write_text("kind,x,y,z,qw,qx,qy,qz\nRBC,1,2,three,1,0,0,0\n")
    with pytest.raises(StorageError):
        load_placements(path)
