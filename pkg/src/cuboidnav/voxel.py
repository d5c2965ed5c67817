"""Occupancy-grid distance backend: rasterization, exact EDT, lookups.

Serves two roles: the distance source behind the deterministic baseline
planner, and the comparator for the query-speed study of batched
analytical cuboid distances.  The distance transform is the separable
lower-envelope-of-parabolas method, exact in squared voxel units, so a
brute-force nearest-occupied search reproduces it bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import sdf_batch

MAX_VOXELS = 64_000_000
DEFAULT_RESOLUTION = 0.25
DEFAULT_QUERY_COUNTS = (50_000, 100_000, 150_000)

# Rasterization evaluates distances on per-cuboid sub-boxes in chunks of
# this many centers to bound temporary allocations.
_CHUNK = 1_000_000


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned occupancy grid.

    Attributes:
        origin: (3,) world position of the grid's lower corner, meters.
        resolution: voxel edge length, meters, > 0.
        occupancy: (nx, ny, nz) boolean array; voxel (i, j, k) has its
            center at origin + (i + 0.5, j + 0.5, k + 0.5) * resolution.
    """

    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "resolution", float(self.resolution))
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise ValueError("occupancy must be a non-empty 3-D array")
        object.__setattr__(self, "occupancy", occ)
        if not self.resolution > 0.0:
            raise ValueError("resolution must be positive")

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    def axis_centers(self) -> tuple:
        """Per-axis voxel center coordinates as three 1-D arrays."""
        return tuple(
            self.origin[a] + (np.arange(self.occupancy.shape[a]) + 0.5) * self.resolution
            for a in range(3)
        )


@dataclass(frozen=True)
class DistanceField:
    """Euclidean distances from every voxel center to the nearest occupied
    voxel center, in meters.  Zero exactly at occupied voxels."""

    origin: np.ndarray
    resolution: float
    distances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "resolution", float(self.resolution))
        dist = np.ascontiguousarray(self.distances, dtype=float)
        if dist.ndim != 3 or min(dist.shape) < 1:
            raise ValueError("distances must be a non-empty 3-D array")
        object.__setattr__(self, "distances", dist)
        if not self.resolution > 0.0:
            raise ValueError("resolution must be positive")

    @property
    def dims(self) -> tuple:
        return self.distances.shape


def rasterize(cuboids, resolution=DEFAULT_RESOLUTION, padding=2.0, max_voxels=MAX_VOXELS) -> VoxelGrid:
    """Voxelize a cuboid set: occupied iff the voxel center is within
    resolution/2 of some cuboid.

    The grid covers the union of cuboid bounding boxes expanded by
    ``padding`` on every side; an empty cuboid list yields the all-free
    box [-padding, padding]^3.  Raises if the grid would exceed
    ``max_voxels`` voxels.
    """
    resolution = float(resolution)
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    if padding < 0.0:
        raise ValueError("padding must be nonnegative")
    cuboids = list(cuboids)
    if cuboids:
        verts = np.concatenate([c.vertices() for c in cuboids], axis=0)
        lo = verts.min(axis=0) - padding
        hi = verts.max(axis=0) + padding
    else:
        lo = np.full(3, -padding)
        hi = np.full(3, padding)
    dims = np.maximum(np.ceil((hi - lo) / resolution - 1e-9).astype(np.int64), 1)
    total = int(np.prod(dims))
    if total > max_voxels:
        raise ValueError(f"grid of {total} voxels exceeds the {max_voxels} voxel cap")
    grid = VoxelGrid(origin=lo, resolution=resolution, occupancy=np.zeros(tuple(dims), dtype=bool))
    xs, ys, zs = grid.axis_centers()
    half = 0.5 * resolution
    for cub in cuboids:
        # Centers within half a voxel of the cuboid lie inside its
        # vertex bounding box grown by half, so only that sub-box needs
        # distance evaluations.
        v = cub.vertices()
        i0 = np.floor((v.min(axis=0) - half - lo) / resolution - 0.5).astype(np.int64)
        i1 = np.ceil((v.max(axis=0) + half - lo) / resolution - 0.5).astype(np.int64) + 1
        i0 = np.maximum(i0, 0)
        i1 = np.minimum(i1, dims)
        if np.any(i1 <= i0):
            continue
        sub = (slice(i0[0], i1[0]), slice(i0[1], i1[1]), slice(i0[2], i1[2]))
        cx, cy, cz = np.meshgrid(xs[sub[0]], ys[sub[1]], zs[sub[2]], indexing="ij")
        pts = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)
        hit = np.empty(pts.shape[0], dtype=bool)
        for a in range(0, pts.shape[0], _CHUNK):
            b = min(a + _CHUNK, pts.shape[0])
            hit[a:b] = sdf_batch([cub], pts[a:b])[0] <= half
        grid.occupancy[sub] |= hit.reshape(cx.shape)
    return grid


@njit(cache=True)
def _dt_line(f, n, d, v, z):
    """Exact 1-D squared distance transform of the sampled cost f[:n].

    Lower envelope of the parabolas (i - q)^2 + f[q] over the finite f;
    all-infinite input stays infinite.  Scratch: d (out), v (parabola
    sites), z (envelope breakpoints, length >= n + 1).
    """
    k = -1
    for q in range(n):
        if f[q] == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -1e30
            z[1] = 1e30
            continue
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = 1e30
    if k < 0:
        for i in range(n):
            d[i] = np.inf
        return
    j = 0
    for i in range(n):
        while z[j + 1] < i:
            j += 1
        q = v[j]
        d[i] = (i - q) * (i - q) + f[q]


@njit(cache=True)
def _edt_squared(occ):
    """Exact squared EDT of a boolean grid, in voxel units.

    Three separable passes; every stored value is an integer held in
    float64, so results are exact up to grids of ~2^26 voxels per side.
    """
    nx, ny, nz = occ.shape
    g = np.empty((nx, ny, nz))
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                g[i, j, k] = 0.0 if occ[i, j, k] else np.inf
    m = max(nx, max(ny, nz))
    f = np.empty(m)
    d = np.empty(m)
    v = np.empty(m, np.int64)
    z = np.empty(m + 1)
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = g[i, j, k]
            _dt_line(f, nx, d, v, z)
            for i in range(nx):
                g[i, j, k] = d[i]
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = g[i, j, k]
            _dt_line(f, ny, d, v, z)
            for j in range(ny):
                g[i, j, k] = d[j]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = g[i, j, k]
            _dt_line(f, nz, d, v, z)
            for k in range(nz):
                g[i, j, k] = d[k]
    return g


def edt(grid: VoxelGrid) -> DistanceField:
    """Exact Euclidean distance transform of an occupancy grid.

    Requires at least one occupied voxel.
    """
    if not grid.occupancy.any():
        raise ValueError("distance transform needs at least one occupied voxel")
    squared = _edt_squared(grid.occupancy)
    return DistanceField(
        origin=grid.origin.copy(),
        resolution=grid.resolution,
        distances=grid.resolution * np.sqrt(squared),
    )


def trilinear_lookup(field: DistanceField, points) -> np.ndarray:
    """Trilinearly interpolated field values at world points, shape (n,).

    Coordinates are clamped to the voxel-center span, so queries outside
    the grid return the nearest boundary value.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    dims = np.asarray(field.distances.shape, dtype=np.int64)
    c = (pts - field.origin) / field.resolution - 0.5
    c = np.clip(c, 0.0, (dims - 1).astype(float))
    i0 = np.minimum(c.astype(np.int64), np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    t = c - i0
    dist = field.distances
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    ux, uy, uz = 1.0 - tx, 1.0 - ty, 1.0 - tz
    return (
        dist[x0, y0, z0] * ux * uy * uz
        + dist[x1, y0, z0] * tx * uy * uz
        + dist[x0, y1, z0] * ux * ty * uz
        + dist[x0, y0, z1] * ux * uy * tz
        + dist[x1, y1, z0] * tx * ty * uz
        + dist[x1, y0, z1] * tx * uy * tz
        + dist[x0, y1, z1] * ux * ty * tz
        + dist[x1, y1, z1] * tx * ty * tz
    )


@dataclass(frozen=True)
class BenchRow:
    method: str
    count: int
    mean_s: float
    std_s: float


@dataclass(frozen=True)
class QueryBenchResult:
    """Timing table for the query-speed study.

    Rows cover methods ``sdf`` (batched analytical distance to the
    cuboid set), ``edt`` (trilinear lookups in the prebuilt distance
    field), and ``edt_build`` (rasterize + transform cost, identical for
    every count, listed per count so each batch can amortize it).
    """

    rows: tuple
    resolution: float
    voxel_count: int
    build_mean_s: float
    build_std_s: float

    def to_csv(self) -> str:
        lines = ["method,count,mean_s,std_s"]
        for r in self.rows:
            lines.append(f"{r.method},{r.count},{r.mean_s:.6e},{r.std_s:.6e}")
        return "\n".join(lines) + "\n"


def _time_repeats(fn, repeats):
    out = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        fn()
        out[i] = time.perf_counter() - t0
    return out


def query_bench(
    cuboids,
    query_counts=DEFAULT_QUERY_COUNTS,
    resolution=DEFAULT_RESOLUTION,
    padding=2.0,
    repeats=5,
    rng_seed=0,
) -> QueryBenchResult:
    """Time batched analytical distance queries against EDT lookups.

    Query points are drawn uniformly over the voxelized bounds of the
    world.  Build time (rasterize + EDT) is measured separately from the
    lookups; see QueryBenchResult for the table layout.
    """
    cuboids = list(cuboids)
    if not cuboids:
        raise ValueError("query_bench needs a non-empty world")
    counts = [int(c) for c in query_counts]
    if not counts or min(counts) <= 0:
        raise ValueError("query counts must be positive")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    # Warm builds once (JIT + page cache), then measure.
    grid = rasterize(cuboids, resolution, padding)
    field = edt(grid)
    build_times = _time_repeats(lambda: edt(rasterize(cuboids, resolution, padding)), repeats)

    rng = np.random.default_rng(rng_seed)
    dims = np.asarray(grid.dims, dtype=float)
    low = grid.origin + 0.5 * resolution
    high = grid.origin + (dims - 0.5) * resolution

    warm = rng.uniform(low, high, size=(1024, 3))
    sdf_batch(cuboids, warm).min(axis=0)
    trilinear_lookup(field, warm)

    rows = []
    for count in counts:
        pts = rng.uniform(low, high, size=(count, 3))
        sdf_times = _time_repeats(lambda: sdf_batch(cuboids, pts).min(axis=0), repeats)
        edt_times = _time_repeats(lambda: trilinear_lookup(field, pts), repeats)
        rows.append(BenchRow("sdf", count, float(sdf_times.mean()), float(sdf_times.std())))
        rows.append(BenchRow("edt", count, float(edt_times.mean()), float(edt_times.std())))
        rows.append(BenchRow("edt_build", count, float(build_times.mean()), float(build_times.std())))
    return QueryBenchResult(
        rows=tuple(rows),
        resolution=resolution,
        voxel_count=int(np.prod(grid.dims)),
        build_mean_s=float(build_times.mean()),
        build_std_s=float(build_times.std()),
    )
