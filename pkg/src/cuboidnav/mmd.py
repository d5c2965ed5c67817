"""Kernel-embedding collision surrogate over perturbed-cuboid grids.

For a query point q and one uncertain obstacle, the violation tensor stacks
f_ijk = max(d - r_max, 0) + max(r_min - d, 0) over the obstacle's sample
grid, where d is the exterior distance from q to realization (i, j, k) and
[r_min, r_max] is the desired standoff band.  The cost of q is the squared
RKHS distance (maximum mean discrepancy, RBF kernel) between the empirical
distribution of f and the Dirac delta at zero; it vanishes exactly when
every realization is violation-free and grows smoothly with the violation
mass otherwise.  Trajectory cost sums over query points and obstacles.

Two evaluation paths compute the same number: a numpy reference working on
ViolationTensor objects, and a fused numba kernel over flattened grid
parameters for planner inner loops (see flatten_grid / mmd_per_query).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .uncertainty import SampleGrid

DEFAULT_BANDWIDTH_FLOOR = 0.5


@dataclass(frozen=True)
class SafetyBand:
    """Standoff corridor: stay at least r_min and at most r_max from facades."""

    r_min: float
    r_max: float

    def __post_init__(self):
        if not (0.0 <= self.r_min < self.r_max):
            raise ValueError(f"need 0 <= r_min < r_max, got ({self.r_min}, {self.r_max})")


@dataclass
class ViolationTensor:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("violation tensor must be 3-D (yaw, size, origin axes)")
        if self.values.size and self.values.min() < 0:
            raise ValueError("violation values must be non-negative")


@dataclass
class KernelConfig:
    """RBF bandwidth plus per-axis sample weights (each summing to 1)."""

    bandwidth: float
    weights_psi: np.ndarray
    weights_s: np.ndarray
    weights_o: np.ndarray

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        for name in ("weights_psi", "weights_s", "weights_o"):
            w = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            setattr(self, name, w)
            if w.size == 0 or np.any(w < 0):
                raise ValueError(f"{name} must be non-empty and non-negative")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1, got {w.sum()!r}")

    @classmethod
    def uniform(cls, counts: Sequence[int], bandwidth: float) -> "KernelConfig":
        n_psi, n_s, n_o = counts
        return cls(
            bandwidth=bandwidth,
            weights_psi=np.full(n_psi, 1.0 / n_psi),
            weights_s=np.full(n_s, 1.0 / n_s),
            weights_o=np.full(n_o, 1.0 / n_o),
        )

    def flat_weights(self) -> np.ndarray:
        """Product weights over the flattened (i, j, k) grid, row-major."""
        return np.einsum("i,j,k->ijk", self.weights_psi, self.weights_s, self.weights_o).ravel()


def violation(d, band: SafetyBand):
    """Distance-to-band: zero inside [r_min, r_max], linear outside."""
    d = np.asarray(d, dtype=float)
    out = np.maximum(d - band.r_max, 0.0) + np.maximum(band.r_min - d, 0.0)
    return float(out) if out.ndim == 0 else out


def violation_tensor(grid: SampleGrid, q, band: SafetyBand) -> ViolationTensor:
    """Per-realization violations of q against every cuboid in the grid."""
    from .geometry import sdf_batch

    q = np.asarray(q, dtype=float).reshape(1, 3)
    distances = sdf_batch(grid.flat_cuboids(), q)[:, 0]
    values = violation(distances, band).reshape(grid.counts)
    return ViolationTensor(values=values)


def violation_matrix(grid: SampleGrid, queries, band: SafetyBand) -> np.ndarray:
    """(n_realizations, n_queries) violations in flat grid order."""
    from .geometry import sdf_batch

    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    return violation(sdf_batch(grid.flat_cuboids(), queries), band)


def rbf_kernel(a, b, sigma: float):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    out = np.exp(-(diff**2) / (2.0 * sigma**2))
    return float(out) if out.ndim == 0 else out


def mmd_point(tensor: ViolationTensor, cfg: KernelConfig) -> float:
    """Squared MMD between the violation sample distribution and delta-at-zero.

    Expanded form over the flattened grid with product weights w:
        w^T K w - 2 w^T k(f, 0) + 1
    where K is the RBF Gram matrix of the violations and the trailing 1 is
    the collapsed Dirac block (its weights also sum to 1).  An all-zero
    tensor short-circuits to exactly 0; negative round-off is clamped.
    """
    values = tensor.values
    expected = (len(cfg.weights_psi), len(cfg.weights_s), len(cfg.weights_o))
    if values.shape != expected:
        raise ValueError(f"tensor shape {values.shape} does not match weights {expected}")
    f = values.ravel()
    if not np.any(f):
        return 0.0
    w = cfg.flat_weights()
    inv = 1.0 / (2.0 * cfg.bandwidth**2)
    gram = np.exp(-((f[:, None] - f[None, :]) ** 2) * inv)
    cross = np.exp(-(f**2) * inv)
    value = float(w @ gram @ w - 2.0 * (w @ cross) + 1.0)
    return max(value, 0.0)


def mmd_trajectory(
    world: Sequence[SampleGrid],
    queries,
    band: SafetyBand,
    cfg: KernelConfig,
) -> float:
    """Sum of mmd_point over every (query, obstacle grid) pair."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[0] == 0:
        raise ValueError("need at least one query point")
    total = 0.0
    for q in queries:
        for grid in world:
            total += mmd_point(violation_tensor(grid, q, band), cfg)
    return total


def bandwidth_from_violations(values, floor: float = DEFAULT_BANDWIDTH_FLOOR) -> float:
    """Median heuristic over positive violations, floored to stay informative."""
    values = np.asarray(values, dtype=float).ravel()
    positive = values[values > 0]
    if positive.size == 0:
        return floor
    return max(float(np.median(positive)), floor)


class FlatGrid(NamedTuple):
    """SampleGrid unpacked to per-realization arrays in flat (i, j, k) order.

    Planner inner loops pass these straight to the numba kernel instead of
    materializing Cuboid objects.
    """

    cos_yaw: np.ndarray
    sin_yaw: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    half_thickness: np.ndarray
    half_length: np.ndarray
    half_height: np.ndarray
    weights: np.ndarray


def flatten_grid(grid: SampleGrid, cfg: KernelConfig) -> FlatGrid:
    n_psi, n_s, n_o = grid.counts
    shape = (n_psi, n_s, n_o)
    yaw = np.broadcast_to(grid.yaws[:, None, None], shape).ravel()
    length = np.broadcast_to(grid.sizes[None, :, 0, None], shape).ravel()
    height = np.broadcast_to(grid.sizes[None, :, 1, None], shape).ravel()
    ox = np.broadcast_to(grid.origins[None, None, :, 0], shape).ravel()
    oy = np.broadcast_to(grid.origins[None, None, :, 1], shape).ravel()
    return FlatGrid(
        cos_yaw=np.cos(yaw),
        sin_yaw=np.sin(yaw),
        cx=np.ascontiguousarray(ox),
        cy=np.ascontiguousarray(oy),
        half_thickness=np.full(yaw.shape, grid.thickness / 2.0),
        half_length=np.ascontiguousarray(length / 2.0),
        half_height=np.ascontiguousarray(height / 2.0),
        weights=cfg.flat_weights(),
    )


@njit(cache=True)
def _mmd_rows(qx, qy, qz, cos_a, sin_a, cx, cy, hx, hy, hz, w, inv_two_sigma_sq, r_min, r_max, out):
    n_q = qx.shape[0]
    n = cos_a.shape[0]
    f = np.empty(n)
    for t in range(n_q):
        any_violation = False
        for m in range(n):
            dx = qx[t] - cx[m]
            dy = qy[t] - cy[m]
            dz = qz[t] - hz[m]
            bx = cos_a[m] * dx + sin_a[m] * dy
            by = -sin_a[m] * dx + cos_a[m] * dy
            ex = abs(bx) - hx[m]
            if ex < 0.0:
                ex = 0.0
            ey = abs(by) - hy[m]
            if ey < 0.0:
                ey = 0.0
            ez = abs(dz) - hz[m]
            if ez < 0.0:
                ez = 0.0
            d = math.sqrt(ex * ex + ey * ey + ez * ez)
            if d > r_max:
                v = d - r_max
            elif d < r_min:
                v = r_min - d
            else:
                v = 0.0
            f[m] = v
            if v != 0.0:
                any_violation = True
        if not any_violation:
            out[t] = 0.0
            continue
        quad = 0.0
        mid = 0.0
        for m in range(n):
            wm = w[m]
            fm = f[m]
            quad += wm * wm
            mid += wm * math.exp(-fm * fm * inv_two_sigma_sq)
            for m2 in range(m + 1, n):
                diff = fm - f[m2]
                quad += 2.0 * wm * w[m2] * math.exp(-diff * diff * inv_two_sigma_sq)
        value = quad - 2.0 * mid + 1.0
        out[t] = value if value > 0.0 else 0.0
    return out


def mmd_per_query(flat: FlatGrid, queries: np.ndarray, band: SafetyBand, bandwidth: float) -> np.ndarray:
    """mmd_point of each query against one flattened grid; (n_queries,) array."""
    queries = np.ascontiguousarray(queries, dtype=float)
    out = np.empty(queries.shape[0])
    _mmd_rows(
        np.ascontiguousarray(queries[:, 0]),
        np.ascontiguousarray(queries[:, 1]),
        np.ascontiguousarray(queries[:, 2]),
        flat.cos_yaw,
        flat.sin_yaw,
        flat.cx,
        flat.cy,
        flat.half_thickness,
        flat.half_length,
        flat.half_height,
        flat.weights,
        1.0 / (2.0 * bandwidth**2),
        band.r_min,
        band.r_max,
        out,
    )
    return out
