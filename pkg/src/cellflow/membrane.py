"""Deformable cell membranes: triangulated meshes and their restoring forces.

A cell is a closed, consistently wound triangle mesh with a frozen reference
state (edge lengths, dihedral angles, triangle areas, enclosed volume). Four
force components act on the vertices:

- link: nonlinear spring per edge,
- bend: dihedral restoring couple per interior edge stencil,
- area: per-triangle dilation penalty toward/away from the centroid,
- volume: global inflation penalty along triangle normals.

All four share the response shape kappa*(x + x/(tau^2 - x^2)), which is
linear for small deviation and diverges at the positive-feedback limit tau;
crossing the limit raises a NumericalError naming the offending element.
Every stencil is momentum- and torque-free by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import ConfigurationError, NumericalError

TAU_LINK = 3.0
TAU_BEND = math.pi / 2.0
TAU_AREA = 0.3

# Biconcave discocyte profile coefficients (thickness polynomial of the
# classical red-cell shape fit), used by build_rbc.
RBC_C0 = 0.207161
RBC_C1 = 2.002558
RBC_C2 = -1.122762

RBC_RADIUS_UM = 3.91
PLATELET_SEMI_AXES_UM = (1.2, 1.2, 0.5)


@dataclass(frozen=True)
class MaterialParams:
    """Membrane moduli in lattice units plus the shared response limits.

    The defaults are tuned for the production red-cell mesh under explicit
    fluid coupling at relaxation times near 1: stiffer sets excite the
    vertex-scale coupling instability. They track the spectrin force scale
    (tens of pN against a lattice force unit of a few nN).
    """

    kappa_link: float = 0.004
    kappa_bend: float = 0.004
    kappa_area: float = 0.01
    kappa_volume: float = 0.025
    tau_link: float = TAU_LINK
    tau_bend: float = TAU_BEND
    tau_area: float = TAU_AREA

    def scaled(self, factor: float) -> "MaterialParams":
        """All four moduli multiplied by ``factor`` (stiffened populations)."""
        if factor <= 0.0:
            raise ConfigurationError(f"stiffness scale must be positive, got {factor}")
        return replace(
            self,
            kappa_link=self.kappa_link * factor,
            kappa_bend=self.kappa_bend * factor,
            kappa_area=self.kappa_area * factor,
            kappa_volume=self.kappa_volume * factor,
        )


def apply_stiffness_scale(material: MaterialParams, factor: float) -> MaterialParams:
    return material.scaled(factor)


class CellMesh:
    """One closed triangulated cell with its reference state."""

    def __init__(self, positions, triangles, material: MaterialParams, kind="cell"):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ConfigurationError("mesh positions must have shape (V, 3)")
        self.positions = positions
        self.triangles = triangles
        self.material = material
        self.kind = kind
        self.velocities = np.zeros_like(positions)
        self.prev_velocities = None  # two-step integrator history
        self.edges, self.bend_stencils = _edges_and_stencils(triangles, len(positions))
        self.rest_length = _edge_lengths(positions, self.edges)
        self.rest_angle = _dihedral_angles(positions, self.bend_stencils)
        self.rest_area = _triangle_areas(positions, triangles)
        v0, a0 = _kernels.mesh_geometry_kernel(positions, triangles)
        if v0 <= 0.0:
            raise ConfigurationError("mesh winding is inward; signed volume must be positive")
        self.rest_volume = float(v0)
        self.rest_total_area = float(a0)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def volume(self) -> float:
        v, _ = _kernels.mesh_geometry_kernel(self.positions, self.triangles)
        return float(v)

    def area(self) -> float:
        _, a = _kernels.mesh_geometry_kernel(self.positions, self.triangles)
        return float(a)

    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def translate(self, offset):
        self.positions += np.asarray(offset, dtype=np.float64)

    def transformed(self, rotation=None, offset=None) -> "CellMesh":
        """Copy placed at a new pose; reference state carries over rigidly."""
        pos = self.positions.copy()
        if rotation is not None:
            pos = pos @ np.asarray(rotation, dtype=np.float64).T
        if offset is not None:
            pos = pos + np.asarray(offset, dtype=np.float64)
        out = self.copy()
        out.positions[...] = pos
        return out

    def copy(self) -> "CellMesh":
        out = CellMesh.__new__(CellMesh)
        out.positions = self.positions.copy()
        out.triangles = self.triangles
        out.material = self.material
        out.kind = self.kind
        out.velocities = self.velocities.copy()
        out.prev_velocities = None if self.prev_velocities is None else self.prev_velocities.copy()
        out.edges = self.edges
        out.bend_stencils = self.bend_stencils
        out.rest_length = self.rest_length
        out.rest_angle = self.rest_angle
        out.rest_area = self.rest_area
        out.rest_volume = self.rest_volume
        out.rest_total_area = self.rest_total_area
        return out


def _edges_and_stencils(triangles, n_vertices):
    """Unique edges plus (a, b, c, d) bend stencils from a closed mesh.

    Each undirected edge must be traversed once in each direction by exactly
    two triangles; c is the flap of the triangle walking a->b, d the flap of
    the one walking b->a.
    """
    half = {}
    for t, (a, b, c) in enumerate(triangles):
        for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
            key = (int(u), int(v))
            if key in half:
                raise ConfigurationError(f"duplicate half-edge {key}; mesh is not consistently wound")
            half[key] = int(w)
    edges = []
    stencils = []
    seen = set()
    for (a, b), c in half.items():
        if (b, a) not in half:
            raise ConfigurationError(f"open edge ({a}, {b}); mesh is not closed")
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        d = half[(b, a)]
        edges.append((a, b))
        stencils.append((a, b, c, d))
    edges = np.array(edges, dtype=np.int64)
    stencils = np.array(stencils, dtype=np.int64)
    # deterministic ordering independent of dict iteration details
    idx = np.lexsort((edges[:, 1], edges[:, 0]))
    return np.ascontiguousarray(edges[idx]), np.ascontiguousarray(stencils[idx])


def _edge_lengths(pos, edges):
    d = pos[edges[:, 1]] - pos[edges[:, 0]]
    return np.linalg.norm(d, axis=1)


def _triangle_areas(pos, tris):
    ab = pos[tris[:, 1]] - pos[tris[:, 0]]
    ac = pos[tris[:, 2]] - pos[tris[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)


def _dihedral_angles(pos, stencils):
    a, b, c, d = (pos[stencils[:, k]] for k in range(4))
    e = b - a
    n1 = np.cross(e, c - a)
    n2 = np.cross(-e, d - b)
    n1 /= np.linalg.norm(n1, axis=1)[:, None]
    n2 /= np.linalg.norm(n2, axis=1)[:, None]
    sin = np.einsum("ij,ij->i", np.cross(n1, n2), e / np.linalg.norm(e, axis=1)[:, None])
    cos = np.einsum("ij,ij->i", n1, n2)
    return np.arctan2(sin, cos)


# --- force evaluation -------------------------------------------------------


def link_forces(mesh: CellMesh) -> np.ndarray:
    out = np.zeros_like(mesh.positions)
    m = mesh.material
    bad = _kernels.link_forces_kernel(
        mesh.positions, mesh.edges, mesh.rest_length, m.kappa_link, m.tau_link, out
    )
    if bad >= 0:
        raise NumericalError(
            f"{mesh.kind} edge {bad} strained beyond the link limit {m.tau_link}"
        )
    return out


def bend_forces(mesh: CellMesh) -> np.ndarray:
    out = np.zeros_like(mesh.positions)
    m = mesh.material
    bad = _kernels.bend_forces_kernel(
        mesh.positions, mesh.bend_stencils, mesh.rest_angle, m.kappa_bend, m.tau_bend, out
    )
    if bad >= 0:
        raise NumericalError(
            f"{mesh.kind} edge stencil {bad} bent beyond the limit {m.tau_bend}"
        )
    return out


def area_forces(mesh: CellMesh) -> np.ndarray:
    out = np.zeros_like(mesh.positions)
    m = mesh.material
    _, _, bad = _kernels.area_volume_kernel(
        mesh.positions, mesh.triangles, mesh.rest_area, m.kappa_area, m.tau_area,
        mesh.rest_volume, 0.0, out,
    )
    if bad >= 0:
        raise NumericalError(
            f"{mesh.kind} triangle {bad} dilated beyond the area limit {m.tau_area}"
        )
    return out


def volume_force(mesh: CellMesh) -> np.ndarray:
    out = np.zeros_like(mesh.positions)
    m = mesh.material
    _kernels.area_volume_kernel(
        mesh.positions, mesh.triangles, mesh.rest_area, 0.0, np.inf,
        mesh.rest_volume, m.kappa_volume, out,
    )
    return out


def total_forces(mesh: CellMesh) -> np.ndarray:
    """Sum of link, bend, area, and volume responses (single fused pass)."""
    out = np.zeros_like(mesh.positions)
    m = mesh.material
    bad = _kernels.link_forces_kernel(
        mesh.positions, mesh.edges, mesh.rest_length, m.kappa_link, m.tau_link, out
    )
    if bad >= 0:
        raise NumericalError(
            f"{mesh.kind} edge {bad} strained beyond the link limit {m.tau_link}"
        )
    bad = _kernels.bend_forces_kernel(
        mesh.positions, mesh.bend_stencils, mesh.rest_angle, m.kappa_bend, m.tau_bend, out
    )
    if bad >= 0:
        raise NumericalError(
            f"{mesh.kind} edge stencil {bad} bent beyond the limit {m.tau_bend}"
        )
    _, _, bad = _kernels.area_volume_kernel(
        mesh.positions, mesh.triangles, mesh.rest_area, m.kappa_area, m.tau_area,
        mesh.rest_volume, m.kappa_volume, out,
    )
    if bad >= 0:
        raise NumericalError(
            f"{mesh.kind} triangle {bad} dilated beyond the area limit {m.tau_area}"
        )
    return out


def net_force(forces: np.ndarray) -> np.ndarray:
    return forces.sum(axis=0)


def net_torque(mesh: CellMesh, forces: np.ndarray) -> np.ndarray:
    r = mesh.positions - mesh.center()
    return np.cross(r, forces).sum(axis=0)


def integrate(mesh: CellMesh, dt: float, scheme: str = "euler"):
    """Advance vertex positions from the stored vertex velocities.

    euler: x += dt v. ab2: x += dt (3/2 v - 1/2 v_prev), first step Euler.
    """
    if scheme == "euler":
        mesh.positions += dt * mesh.velocities
    elif scheme == "ab2":
        if mesh.prev_velocities is None:
            mesh.positions += dt * mesh.velocities
        else:
            mesh.positions += dt * (1.5 * mesh.velocities - 0.5 * mesh.prev_velocities)
        mesh.prev_velocities = mesh.velocities.copy()
    else:
        raise ConfigurationError(f"unknown integrator {scheme!r} (euler or ab2)")


# --- mesh builders ----------------------------------------------------------

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdivisions: int):
    """Unit icosphere (verts, tris): 12 -> 2 + 10*4^n vertices, outward wound."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    verts = list(verts)
    faces = list(_ICO_FACES)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces, dtype=np.int64)


def biconcave_profile(r, radius):
    """Half-thickness z(r) of the discocyte of maximal radius ``radius``."""
    rho2 = np.clip((np.asarray(r, dtype=np.float64) / radius) ** 2, 0.0, 1.0)
    return 0.5 * radius * np.sqrt(1.0 - rho2) * (RBC_C0 + RBC_C1 * rho2 + RBC_C2 * rho2 * rho2)


def build_rbc(radius: float, material: MaterialParams | None = None, subdivisions: int = 3) -> CellMesh:
    """Biconcave red cell of maximal radius ``radius`` (lattice units).

    Default subdivision gives 642 vertices, 1920 edges, 1280 triangles.
    """
    verts, tris = icosphere(subdivisions)
    rho2 = verts[:, 0] ** 2 + verts[:, 1] ** 2
    half = 0.5 * np.sqrt(np.clip(1.0 - rho2, 0.0, None)) * (
        RBC_C0 + RBC_C1 * rho2 + RBC_C2 * rho2 * rho2
    )
    pos = np.empty_like(verts)
    pos[:, 0] = radius * verts[:, 0]
    pos[:, 1] = radius * verts[:, 1]
    pos[:, 2] = radius * np.sign(verts[:, 2]) * half
    return CellMesh(pos, tris, material or MaterialParams(), kind="rbc")


def build_ellipsoid(
    semi_axes,
    material: MaterialParams | None = None,
    subdivisions: int = 2,
    kind: str = "platelet",
) -> CellMesh:
    """Ellipsoidal cell (oblate platelet by default; 162 vertices)."""
    verts, tris = icosphere(subdivisions)
    pos = verts * np.asarray(semi_axes, dtype=np.float64)
    return CellMesh(pos, tris, material or MaterialParams(), kind=kind)
