"""Trajectory parameterizations and motion costs.

Two representations coexist: degree-d polynomials per axis on normalized
time u = t/T (sampling planner), and fixed-dt waypoint lists (convex
planner).  Smoothness is integrated squared jerk for polynomials, in
m^2/s^5, and summed squared acceleration times dt for waypoints, in
m^2/s^3; callers comparing the two must not mix units.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

TABLE_HEADER = "t,x,y,z,vx,vy,vz,ax,ay,az"


@dataclass
class PolyTrajectory:
    """Per-axis monomial coefficients over normalized time t/duration."""

    coeffs_x: np.ndarray
    coeffs_y: np.ndarray
    coeffs_z: np.ndarray
    duration: float
    degree: int

    def __post_init__(self):
        self.coeffs_x = np.asarray(self.coeffs_x, dtype=float).reshape(-1)
        self.coeffs_y = np.asarray(self.coeffs_y, dtype=float).reshape(-1)
        self.coeffs_z = np.asarray(self.coeffs_z, dtype=float).reshape(-1)
        n = self.degree + 1
        if not (len(self.coeffs_x) == len(self.coeffs_y) == len(self.coeffs_z) == n):
            raise ValueError(f"need exactly degree+1={n} coefficients per axis")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def coeffs(self) -> np.ndarray:
        """(degree+1, 3) stacked column-per-axis view."""
        return np.stack([self.coeffs_x, self.coeffs_y, self.coeffs_z], axis=1)


@dataclass
class WaypointTrajectory:
    points: np.ndarray
    dt: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be an n x 3 array")
        if self.points.shape[0] < 4:
            raise ValueError("need at least 4 waypoints for second-difference operators")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt


@dataclass(frozen=True)
class Limits:
    """Flight envelope: symmetric speed/acceleration bounds per axis plus an
    altitude floor (obstacles stand on the ground plane, so anything below
    z_min is out of the flyable volume)."""

    v_max: float
    a_max: float
    z_min: float = 0.0

    def __post_init__(self):
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("limits must be positive")
        if not np.isfinite(self.z_min):
            raise ValueError("z_min must be finite")


@dataclass
class BoundaryState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        for name in ("position", "velocity", "acceleration"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            setattr(self, name, v)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def at_rest(cls, position) -> "BoundaryState":
        return cls(position=np.asarray(position, dtype=float), velocity=np.zeros(3), acceleration=np.zeros(3))


def basis_matrix(times, degree: int, duration: float, order: int = 0) -> np.ndarray:
    """Monomial basis (or its order-th time derivative) sampled at times.

    Row r, column c holds d^m/dt^m (t_r/T)^c, i.e.
    c!/(c-m)! * (t_r/T)^(c-m) / T^m for c >= m and 0 below.
    """
    if degree < 3:
        raise ValueError("degree must be at least 3")
    if duration <= 0:
        raise ValueError("duration must be positive")
    times = np.asarray(times, dtype=float).reshape(-1)
    u = times / duration
    n_coef = degree + 1
    out = np.zeros((len(times), n_coef))
    for c in range(order, n_coef):
        factor = 1.0
        for m in range(order):
            factor *= c - m
        out[:, c] = factor * u ** (c - order) / duration**order
    return out


def basis_matrices(times, degree: int, duration: float):
    """(position, velocity, acceleration) basis matrices at the given times."""
    return tuple(basis_matrix(times, degree, duration, order) for order in range(3))


class TrajectorySamples(NamedTuple):
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    jerks: np.ndarray


def evaluate(traj: PolyTrajectory, times) -> TrajectorySamples:
    times = np.asarray(times, dtype=float).reshape(-1)
    coeffs = traj.coeffs
    arrays = [
        basis_matrix(times, traj.degree, traj.duration, order) @ coeffs for order in range(4)
    ]
    return TrajectorySamples(times, *arrays)


def _jerk_gram(degree: int, duration: float) -> np.ndarray:
    # G[a][b] = int_0^T jerk-basis_a * jerk-basis_b dt, exact for monomials
    n = degree + 1
    gram = np.zeros((n, n))
    for a in range(3, n):
        ka = a * (a - 1) * (a - 2)
        for b in range(3, n):
            kb = b * (b - 1) * (b - 2)
            gram[a, b] = ka * kb / (duration**5 * (a + b - 5))
    return gram


def smoothness_cost(traj: PolyTrajectory | WaypointTrajectory) -> float:
    """Integrated squared jerk (polynomial) or summed squared accel * dt (waypoints)."""
    if isinstance(traj, PolyTrajectory):
        gram = _jerk_gram(traj.degree, traj.duration)
        coeffs = traj.coeffs
        return float(np.einsum("at,ab,bt->", coeffs, gram, coeffs))
    if isinstance(traj, WaypointTrajectory):
        acc = np.diff(traj.points, 2, axis=0) / traj.dt**2
        return float(np.sum(acc**2) * traj.dt)
    raise TypeError(f"unsupported trajectory type {type(traj).__name__}")


# The altitude floor is a hard physical boundary rather than a soft envelope
# target, so its hinge gets a much stiffer weight than the v/a terms.
GROUND_PENALTY_WEIGHT = 100.0


def limit_penalty(traj: PolyTrajectory, limits: Limits, times) -> float:
    """Squared hinge on per-axis velocity/acceleration bound violations plus
    a stiff squared hinge on dipping below the altitude floor."""
    samples = evaluate(traj, times)
    over_v = np.maximum(np.abs(samples.velocities) - limits.v_max, 0.0)
    over_a = np.maximum(np.abs(samples.accelerations) - limits.a_max, 0.0)
    under_z = np.maximum(limits.z_min - samples.positions[:, 2], 0.0)
    return float(np.sum(over_v**2) + np.sum(over_a**2) + GROUND_PENALTY_WEIGHT * np.sum(under_z**2))


def second_difference_matrix(n: int, dt: float) -> np.ndarray:
    """(n-2) x n central second-difference operator scaled by 1/dt^2."""
    if n < 4:
        raise ValueError("need n >= 4")
    rows = n - 2
    out = np.zeros((rows, n))
    for r in range(rows):
        out[r, r] = 1.0
        out[r, r + 1] = -2.0
        out[r, r + 2] = 1.0
    return out / dt**2


@lru_cache(maxsize=32)
def _interior_noise_factor(n: int, dt: float) -> np.ndarray:
    """M with M @ M.T = R_int^{-1}, R_int the interior block of A^T A.

    Endpoint columns are dropped before inversion because endpoint noise is
    clamped to zero; the full R = A^T A is singular.
    """
    a_full = second_difference_matrix(n, dt)
    a_int = a_full[:, 1:-1]
    r_int = a_int.T @ a_int
    chol = np.linalg.cholesky(r_int)
    return np.linalg.inv(chol).T


def stomp_samples(base: WaypointTrajectory, k: int, scale: float, rng_seed: int) -> list[WaypointTrajectory]:
    """k smooth noisy copies of base with fixed endpoints.

    Interior noise per axis is N(0, scale^2 * R_int^{-1}), the STOMP
    preference for perturbations with small second differences.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = base.n
    factor = _interior_noise_factor(n, base.dt)
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((k, n - 2, 3))
    noise = scale * np.einsum("ab,kbt->kat", factor, z)
    out = []
    for i in range(k):
        points = base.points.copy()
        points[1:-1] += noise[i]
        out.append(WaypointTrajectory(points=points, dt=base.dt))
    return out


def waypoint_velocities(points: np.ndarray, dt: float) -> np.ndarray:
    """Central differences, one-sided at the ends."""
    v = np.empty_like(points)
    v[1:-1] = (points[2:] - points[:-2]) / (2.0 * dt)
    v[0] = (points[1] - points[0]) / dt
    v[-1] = (points[-1] - points[-2]) / dt
    return v


def waypoint_accelerations(points: np.ndarray, dt: float) -> np.ndarray:
    """Second central differences, one-sided copies at the ends."""
    a = np.empty_like(points)
    a[1:-1] = (points[2:] - 2.0 * points[1:-1] + points[:-2]) / dt**2
    a[0] = (points[0] - 2.0 * points[1] + points[2]) / dt**2
    a[-1] = (points[-1] - 2.0 * points[-2] + points[-3]) / dt**2
    return a


def sample_table(traj: PolyTrajectory | WaypointTrajectory, dt: float | None = None) -> np.ndarray:
    """(m, 10) table of t, position, velocity, acceleration rows."""
    if isinstance(traj, PolyTrajectory):
        if dt is None:
            raise ValueError("dt required to sample a polynomial trajectory")
        times = np.arange(0.0, traj.duration + 0.5 * dt, dt)
        times = times[times <= traj.duration + 1e-12]
        s = evaluate(traj, times)
        return np.hstack([times[:, None], s.positions, s.velocities, s.accelerations])
    if isinstance(traj, WaypointTrajectory):
        times = np.arange(traj.n) * traj.dt
        vel = waypoint_velocities(traj.points, traj.dt)
        acc = waypoint_accelerations(traj.points, traj.dt)
        return np.hstack([times[:, None], traj.points, vel, acc])
    raise TypeError(f"unsupported trajectory type {type(traj).__name__}")


def save_table(traj, path: str | Path, dt: float | None = None) -> None:
    table = sample_table(traj, dt)
    lines = [TABLE_HEADER]
    for row in table:
        lines.append(",".join(format(v, ".9g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
