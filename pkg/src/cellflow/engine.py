"""Simulation orchestration.

One coordinator drives the phases of every fluid step: membrane exchange on
the separated cell time scale, collision, streaming with boundary fixups,
and optional pre-inlet feeding. The domain is tiled into x-slab blocks; a
thread pool runs the jitted collision/advection kernels on disjoint slabs,
and all cross-block reductions happen in fixed block order, so results are
reproducible bit for bit across worker counts and block layouts.
"""

from __future__ import annotations

import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels, boundaries, coupling, lbm, membrane
from .boundaries import PeriodicTopology, ShearBoxTopology
from .errors import ConfigurationError, NumericalError, StorageError

CHECKPOINT_MAGIC = b"HEMO"
CHECKPOINT_VERSION = 1

DISPLACEMENT_HALVE = 0.1   # per-fluid-step vertex travel that halves m
DISPLACEMENT_DOUBLE = 0.01  # calm threshold that doubles m
CALM_STEPS_TO_DOUBLE = 1000


@dataclass
class EngineConfig:
    """Knobs for time-scale separation, workers, and load balancing."""

    separation_ratio: int = 1
    adaptive_separation: bool = False
    max_separation: int = 10
    imbalance_threshold: float = 0.15
    rebalance_every: int = 0
    checkpoint_every: int = 0
    workers: int = 1
    n_blocks: int = 0  # 0 means 2 * workers
    cost_fluid: float = 1.0
    cost_vertex: float = 20.0
    repulsion_strength: float = 0.0
    repulsion_cutoff: float = 0.75
    integrator: str = "euler"

    def __post_init__(self):
        problems = []
        if int(self.separation_ratio) < 1:
            problems.append("separation_ratio must be >= 1")
        if int(self.max_separation) < 1:
            problems.append("max_separation must be >= 1")
        if self.imbalance_threshold <= 0.0:
            problems.append("imbalance_threshold must be positive")
        if int(self.workers) < 1:
            problems.append("workers must be >= 1")
        if int(self.n_blocks) < 0:
            problems.append("n_blocks must be >= 0")
        if self.repulsion_cutoff <= 0.0:
            problems.append("repulsion_cutoff must be positive")
        if self.integrator not in ("euler", "ab2"):
            problems.append(f"unknown integrator '{self.integrator}'")
        if problems:
            raise ConfigurationError(problems)


# --- block decomposition and load balancing ---------------------------------


@dataclass
class BlockAssignment:
    """X-slab ranges tiling the domain plus the owning worker of each."""

    ranges: list
    owners: list
    halo: int = 1


def make_block_ranges(nx: int, n_blocks: int) -> list:
    """Near-equal x-slabs covering [0, nx) exactly."""
    n_blocks = max(1, min(int(n_blocks), int(nx)))
    edges = np.linspace(0, nx, n_blocks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def block_costs(grid, meshes, assignment: BlockAssignment,
                cost_fluid: float = 1.0, cost_vertex: float = 20.0):
    """Per-block cost: fluid nodes plus resident cell vertices (by center)."""
    nx = grid.shape[0]
    costs = []
    centers = [mesh.center()[0] % nx for mesh in meshes]
    for x0, x1 in assignment.ranges:
        fluid = int(np.count_nonzero(grid.flags[x0:x1] == _kernels.FLUID))
        verts = sum(
            mesh.n_vertices
            for mesh, cx in zip(meshes, centers)
            if x0 <= cx < x1
        )
        costs.append(cost_fluid * fluid + cost_vertex * verts)
    return costs


def worker_loads(assignment: BlockAssignment, costs, n_workers: int):
    loads = [0.0] * n_workers
    for owner, cost in zip(assignment.owners, costs):
        loads[owner] += cost
    return loads


def imbalance(loads) -> float:
    """Fractional load imbalance: max over mean, minus one."""
    loads = list(loads)
    if not loads:
        raise ConfigurationError(["imbalance needs at least one worker load"])
    mean = sum(loads) / len(loads)
    if mean == 0.0:
        return 0.0
    return max(loads) / mean - 1.0


def lpt_owners(costs, n_workers: int):
    """Longest-processing-time greedy assignment of blocks to workers."""
    loads = [0.0] * n_workers
    owners = [0] * len(costs)
    order = sorted(range(len(costs)), key=lambda b: (-costs[b], b))
    for b in order:
        w = min(range(n_workers), key=lambda k: (loads[k], k))
        owners[b] = w
        loads[w] += costs[b]
    return owners


def rebalance(assignment: BlockAssignment, costs,
              n_workers: int) -> BlockAssignment:
    """Reassign whole blocks by LPT; block ranges never change mid-run."""
    return BlockAssignment(list(assignment.ranges), lpt_owners(costs, n_workers),
                           assignment.halo)


# --- pre-inlet feeder --------------------------------------------------------


class PreInlet:
    """Periodic feeder channel attached to the main domain's low-x face.

    The feeder advances under its own body force; its seam populations are
    copied onto the main inlet each step, and any cell whose center wraps
    across the seam leaves a duplicate behind that continues in the main
    domain while the original recirculates.
    """

    def __init__(self, grid, meshes=(), body_force=None):
        if not grid.periodic[0]:
            raise ConfigurationError(
                ["pre-inlet domain must be periodic along the flow axis"]
            )
        self.grid = grid
        self.meshes = list(meshes)
        self.topology = PeriodicTopology(grid.shape, grid.periodic)
        self._pending = []
        if body_force is None:
            self.body_force = None
        else:
            self.body_force = np.broadcast_to(
                np.asarray(body_force, dtype=np.float64), grid.shape + (3,)
            ).copy()
            if not self.meshes:
                grid.force[...] = self.body_force

    def advance(self, sim: "Simulation"):
        """One fluid step of the feeder; returns meshes delivered across.

        A cell whose center wraps across the feeder seam becomes pending;
        it is delivered to the main domain as a whole copy once its tail
        clears the seam. Handing cells over wholesale keeps every vertex
        two-way coupled to exactly one fluid at all times: a membrane
        spanning the inlet plane would have its upstream vertices riding a
        prescribed velocity with no force feedback, which pumps energy
        whenever the two domains disagree.
        """
        born = []
        if sim._since_exchange == 0 and self.meshes:
            before = [mesh.center()[0] for mesh in self.meshes]
            coupling.couple_step(
                self.grid, self.meshes, dt_cell=sim.m,
                scheme=sim.config.integrator, topology=self.topology,
                time_step=sim.time_step, base_force=self.body_force,
            )
            half = 0.5 * self.grid.shape[0]
            for mesh, cx in zip(self.meshes, before):
                if mesh.center()[0] < cx - half and mesh not in self._pending:
                    self._pending.append(mesh)
            still_pending = []
            for mesh in self._pending:
                if mesh.positions[:, 0].min() >= 0.0:
                    born.append(mesh.copy())
                else:
                    still_pending.append(mesh)
            self._pending = still_pending
        minv = lbm.collide(self.grid)
        if not (minv >= 0.0):
            raise NumericalError(
                f"pre-inlet population went negative ({minv:.3e}) "
                f"at step {sim.time_step}"
            )
        boundaries.stream_with_boundaries(self.grid, 0.0, sim.time_step)
        return born


# --- the simulation driver ---------------------------------------------------


class Simulation:
    """Couples one lattice grid with a population of cells.

    ``body_force`` may be a 3-vector or a full per-node field; it is applied
    as the base force under any spread membrane forces. ``le_speed`` turns
    the y-faces into sheared periodic images.
    """

    def __init__(self, grid, meshes=(), config: EngineConfig | None = None,
                 le_speed: float = 0.0, body_force=None, pre_inlet=None,
                 topology=None):
        self.grid = grid
        self.meshes = list(meshes)
        self.config = config if config is not None else EngineConfig()
        self.le_speed = float(le_speed)
        if topology is not None:
            self.topology = topology
        elif self.le_speed != 0.0:
            self.topology = ShearBoxTopology(grid.shape, self.le_speed)
        else:
            self.topology = PeriodicTopology(grid.shape, grid.periodic)
        if body_force is None:
            self.body_force = None
        else:
            self.body_force = np.broadcast_to(
                np.asarray(body_force, dtype=np.float64), grid.shape + (3,)
            ).copy()
            if not self.meshes:
                grid.force[...] = self.body_force
        self.pre = pre_inlet
        self.time_step = 0
        self.m = int(self.config.separation_ratio)
        self._since_exchange = 0
        self._calm = 0
        self._force_dirty = False
        self.max_vertex_speed = 0.0
        n_blocks = self.config.n_blocks or 2 * self.config.workers
        ranges = make_block_ranges(grid.shape[0], n_blocks)
        owners = lpt_owners(
            block_costs(grid, self.meshes,
                        BlockAssignment(ranges, [0] * len(ranges)),
                        self.config.cost_fluid, self.config.cost_vertex),
            self.config.workers,
        )
        self.assignment = BlockAssignment(ranges, owners)
        self._executor = (
            ThreadPoolExecutor(max_workers=self.config.workers)
            if self.config.workers > 1 else None
        )

    # -- parallel phases --

    def _map_blocks(self, fn):
        if self._executor is None:
            return [fn(x0, x1) for x0, x1 in self.assignment.ranges]
        futures = [
            self._executor.submit(fn, x0, x1)
            for x0, x1 in self.assignment.ranges
        ]
        return [f.result() for f in futures]

    def _collide(self) -> float:
        grid = self.grid
        results = self._map_blocks(
            lambda x0, x1: _kernels.collide_block(
                grid.f, grid._scratch, grid.force, grid.flags, grid.tau, x0, x1
            )
        )
        grid.f, grid._scratch = grid._scratch, grid.f
        return min(results)

    def _stream(self):
        grid = self.grid
        if self.le_speed != 0.0:
            row_bottom = grid.f[:, 0, :, :].copy()
            row_top = grid.f[:, -1, :, :].copy()
        self._map_blocks(
            lambda x0, x1: _kernels.advect_block(grid.f, grid._scratch, x0, x1)
        )
        grid.f, grid._scratch = grid._scratch, grid.f
        boundaries.apply_bounce_back(grid)
        if self.le_speed != 0.0:
            boundaries.lees_edwards_fluid(
                grid, row_bottom, row_top, self.le_speed, self.time_step
            )

    # -- membrane exchange --

    def _repulsion(self):
        """Per-mesh short-range repulsion between vertices of distinct cells."""
        positions = np.concatenate([m.positions for m in self.meshes])
        ids = np.concatenate([
            np.full(m.n_vertices, k, dtype=np.int64)
            for k, m in enumerate(self.meshes)
        ])
        cutoff = self.config.repulsion_cutoff
        shape = self.grid.shape
        nb = [max(1, int(shape[ax] // cutoff)) for ax in range(3)]
        widths = [shape[ax] / nb[ax] for ax in range(3)]
        wrapped, _ = self.topology.wrap_positions(positions, self.time_step)
        bin_of = np.empty((len(positions), 3), dtype=np.int64)
        for ax in range(3):
            bin_of[:, ax] = np.minimum(
                (wrapped[:, ax] / widths[ax]).astype(np.int64), nb[ax] - 1
            )
        linear = (bin_of[:, 0] * nb[1] + bin_of[:, 1]) * nb[2] + bin_of[:, 2]
        order = np.argsort(linear, kind="stable").astype(np.int64)
        counts = np.bincount(linear, minlength=nb[0] * nb[1] * nb[2])
        starts = np.zeros_like(counts)
        np.cumsum(counts[:-1], out=starts[1:])
        out = np.zeros_like(positions)
        _kernels.repulsion_kernel(
            np.ascontiguousarray(positions), ids, order,
            starts.astype(np.int64), counts.astype(np.int64), bin_of,
            nb[0], nb[1], nb[2],
            self.topology.minimum_image_box(),
            self.topology.le_shift(self.time_step),
            cutoff, self.config.repulsion_strength, out,
        )
        forces = []
        at = 0
        for mesh in self.meshes:
            forces.append(out[at:at + mesh.n_vertices])
            at += mesh.n_vertices
        return forces

    def _active_masks(self):
        if self.pre is None:
            return None
        hi = self.grid.shape[0] - 1
        return [
            (m.positions[:, 0] >= 0.0) & (m.positions[:, 0] <= hi)
            for m in self.meshes
        ]

    def _exchange(self):
        self._force_dirty = True
        extra = None
        if self.config.repulsion_strength > 0.0 and len(self.meshes) > 1:
            extra = self._repulsion()
        coupling.couple_step(
            self.grid, self.meshes, dt_cell=self.m,
            scheme=self.config.integrator, topology=self.topology,
            time_step=self.time_step, extra_forces=extra,
            base_force=self.body_force, active_masks=self._active_masks(),
        )
        if self.meshes:
            self.max_vertex_speed = max(
                float(np.abs(m.velocities).max()) for m in self.meshes
            )
        if self.pre is not None:
            hi = self.grid.shape[0] - 1
            self.meshes = [
                m for m in self.meshes if m.positions[:, 0].min() <= hi
            ]
        if self.config.adaptive_separation:
            self._update_separation(self.max_vertex_speed)

    def _update_separation(self, vertex_speed: float):
        """Displacement-based control of the cell/fluid step ratio."""
        if vertex_speed > DISPLACEMENT_HALVE:
            self.m = max(1, self.m // 2)
            self._calm = 0
        elif vertex_speed < DISPLACEMENT_DOUBLE:
            self._calm += self.m
            if self._calm >= CALM_STEPS_TO_DOUBLE:
                self.m = min(int(self.config.max_separation), self.m * 2)
                self._calm = 0
        else:
            self._calm = 0

    # -- the step pipeline --

    def step(self):
        if self.pre is not None:
            self.meshes.extend(self.pre.advance(self))
        if self._since_exchange == 0:
            if self.meshes:
                self._exchange()
            elif self._force_dirty:
                # all cells left the domain; drop their stale spread forces
                self.grid.force[...] = (
                    self.body_force if self.body_force is not None else 0.0
                )
                self._force_dirty = False
        minv = self._collide()
        if not (minv >= 0.0):
            raise NumericalError(
                f"population went negative or non-finite ({minv:.3e}) "
                f"at step {self.time_step}; reduce forcing or increase tau"
            )
        self._stream()
        if self.pre is not None:
            boundaries.copy_inlet_plane(self.grid, self.pre.grid)
            boundaries.zero_gradient_outlet(self.grid)
        self.time_step += 1
        self._since_exchange += 1
        if self._since_exchange >= self.m:
            self._since_exchange = 0
        if (
            self.config.rebalance_every > 0
            and self.time_step % self.config.rebalance_every == 0
        ):
            costs = block_costs(self.grid, self.meshes, self.assignment,
                                self.config.cost_fluid, self.config.cost_vertex)
            loads = worker_loads(self.assignment, costs, self.config.workers)
            if imbalance(loads) > self.config.imbalance_threshold:
                self.assignment = rebalance(self.assignment, costs,
                                            self.config.workers)

    def run(self, n_steps: int, checkpoint_path=None):
        for _ in range(int(n_steps)):
            self.step()
            if (
                checkpoint_path is not None
                and self.config.checkpoint_every > 0
                and self.time_step % self.config.checkpoint_every == 0
            ):
                save_checkpoint(self, checkpoint_path)

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None


# --- checkpointing -----------------------------------------------------------


def _grid_meta(grid):
    return {
        "shape": list(grid.shape),
        "tau": grid.tau,
        "periodic": list(grid.periodic),
        "reference_density": grid.reference_density,
    }


def _collect_grid(tag, grid, arrays):
    arrays.append((f"{tag}.f", grid.f))
    arrays.append((f"{tag}.flags", grid.flags))
    arrays.append((f"{tag}.force", grid.force))
    arrays.append((f"{tag}.wall_velocity", grid.wall_velocity))


def _mesh_meta(mesh):
    return {
        "kind": mesh.kind,
        "material": asdict(mesh.material),
        "has_history": mesh.prev_velocities is not None,
        "rest_volume": mesh.rest_volume,
        "rest_total_area": mesh.rest_total_area,
    }


def _collect_mesh(tag, mesh, arrays):
    arrays.append((f"{tag}.positions", mesh.positions))
    arrays.append((f"{tag}.velocities", mesh.velocities))
    if mesh.prev_velocities is not None:
        arrays.append((f"{tag}.prev_velocities", mesh.prev_velocities))
    arrays.append((f"{tag}.triangles", mesh.triangles))
    arrays.append((f"{tag}.rest_length", mesh.rest_length))
    arrays.append((f"{tag}.rest_angle", mesh.rest_angle))
    arrays.append((f"{tag}.rest_area", mesh.rest_area))


def save_checkpoint(sim: Simulation, path):
    """Versioned binary snapshot sufficient for bitwise continuation."""
    arrays = []
    _collect_grid("grid", sim.grid, arrays)
    if sim.body_force is not None:
        arrays.append(("body_force", sim.body_force))
    for k, mesh in enumerate(sim.meshes):
        _collect_mesh(f"mesh{k}", mesh, arrays)
    if sim.pre is not None:
        _collect_grid("pre", sim.pre.grid, arrays)
        if sim.pre.body_force is not None:
            arrays.append(("pre_body_force", sim.pre.body_force))
        for k, mesh in enumerate(sim.pre.meshes):
            _collect_mesh(f"pre_mesh{k}", mesh, arrays)

    payload = []
    manifest = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = le.tobytes()
        manifest.append(
            {"name": name, "dtype": arr.dtype.str.replace(">", "<"),
             "shape": list(arr.shape)}
        )
        payload.append(data)

    header = {
        "step": sim.time_step,
        "m": sim.m,
        "since_exchange": sim._since_exchange,
        "calm": sim._calm,
        "force_dirty": sim._force_dirty,
        "le_speed": sim.le_speed,
        "config": asdict(sim.config),
        "grid": _grid_meta(sim.grid),
        "has_body_force": sim.body_force is not None,
        "meshes": [_mesh_meta(m) for m in sim.meshes],
        "pre": None if sim.pre is None else {
            "grid": _grid_meta(sim.pre.grid),
            "has_body_force": sim.pre.body_force is not None,
            "meshes": [_mesh_meta(m) for m in sim.pre.meshes],
            "pending": [
                k for k, m in enumerate(sim.pre.meshes)
                if m in sim.pre._pending
            ],
        },
        "owners": list(sim.assignment.owners),
        "ranges": [list(r) for r in sim.assignment.ranges],
        "arrays": manifest,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(np.uint32(zlib.crc32(blob)).tobytes())
        fh.write(blob)
        for data in payload:
            fh.write(data)


def _restore_mesh(meta, arrays, tag):
    mesh = membrane.CellMesh.__new__(membrane.CellMesh)
    mesh.positions = arrays[f"{tag}.positions"]
    mesh.velocities = arrays[f"{tag}.velocities"]
    mesh.prev_velocities = (
        arrays[f"{tag}.prev_velocities"] if meta["has_history"] else None
    )
    mesh.triangles = arrays[f"{tag}.triangles"]
    mesh.material = membrane.MaterialParams(**meta["material"])
    mesh.kind = meta["kind"]
    mesh.edges, mesh.bend_stencils = membrane._edges_and_stencils(
        mesh.triangles, len(mesh.positions)
    )
    mesh.rest_length = arrays[f"{tag}.rest_length"]
    mesh.rest_angle = arrays[f"{tag}.rest_angle"]
    mesh.rest_area = arrays[f"{tag}.rest_area"]
    mesh.rest_volume = meta["rest_volume"]
    mesh.rest_total_area = meta["rest_total_area"]
    return mesh


def _restore_grid(meta, arrays, tag):
    grid = lbm.LatticeGrid(tuple(meta["shape"]), meta["tau"],
                           periodic=tuple(meta["periodic"]))
    grid.reference_density = meta["reference_density"]
    grid.f[...] = arrays[f"{tag}.f"]
    grid.flags[...] = arrays[f"{tag}.flags"]
    grid.force[...] = arrays[f"{tag}.force"]
    grid.wall_velocity[...] = arrays[f"{tag}.wall_velocity"]
    return grid


def load_checkpoint(path) -> Simulation:
    """Rebuild a Simulation whose continuation is bitwise identical."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise StorageError(f"{path} is not a checkpoint (bad magic)")
            version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            if version != CHECKPOINT_VERSION:
                raise StorageError(
                    f"checkpoint version {version} not supported "
                    f"(expected {CHECKPOINT_VERSION})"
                )
            blob_len = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            crc = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            blob = fh.read(blob_len)
            if len(blob) != blob_len or zlib.crc32(blob) != crc:
                raise StorageError(f"checkpoint header of {path} is corrupted")
            header = json.loads(blob)
            arrays = {}
            for entry in header["arrays"]:
                dtype = np.dtype(entry["dtype"])
                count = int(np.prod(entry["shape"], dtype=np.int64))
                data = fh.read(count * dtype.itemsize)
                if len(data) != count * dtype.itemsize:
                    raise StorageError(f"checkpoint {path} is truncated")
                arrays[entry["name"]] = np.frombuffer(
                    data, dtype=dtype
                ).reshape(entry["shape"]).copy()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint: {exc}") from exc
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise StorageError(f"malformed checkpoint {path}: {exc}") from exc

    grid = _restore_grid(header["grid"], arrays, "grid")
    meshes = [
        _restore_mesh(meta, arrays, f"mesh{k}")
        for k, meta in enumerate(header["meshes"])
    ]
    pre = None
    if header["pre"] is not None:
        pre_grid = _restore_grid(header["pre"]["grid"], arrays, "pre")
        pre_meshes = [
            _restore_mesh(meta, arrays, f"pre_mesh{k}")
            for k, meta in enumerate(header["pre"]["meshes"])
        ]
        pre = PreInlet(
            pre_grid, pre_meshes,
            arrays.get("pre_body_force") if header["pre"]["has_body_force"]
            else None,
        )
        pre._pending = [
            pre_meshes[k] for k in header["pre"].get("pending", ())
        ]
    sim = Simulation(
        grid, meshes, config=EngineConfig(**header["config"]),
        le_speed=header["le_speed"],
        body_force=arrays.get("body_force") if header["has_body_force"] else None,
        pre_inlet=pre,
    )
    # constructors reset meshless force fields; reassert the snapshot
    sim.grid.force[...] = arrays["grid.force"]
    if pre is not None:
        sim.pre.grid.force[...] = arrays["pre.force"]
    sim.time_step = int(header["step"])
    sim.m = int(header["m"])
    sim._since_exchange = int(header["since_exchange"])
    sim._calm = int(header["calm"])
    sim._force_dirty = bool(header["force_dirty"])
    sim.assignment = BlockAssignment(
        [tuple(r) for r in header["ranges"]], list(header["owners"])
    )
    return sim
