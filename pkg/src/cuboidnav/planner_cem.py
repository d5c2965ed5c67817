"""Cross-entropy trajectory optimizer over polynomial coefficients.

The underlying representation is per-axis monomial coefficients with the
three lowest pinned to the start state (position, velocity, acceleration
at t=0 hold exactly for every sample).  The CEM Gaussian does not act on
raw coefficients: raw monomials concentrate all sampling deviation at the
trajectory end, where the goal penalty suppresses it, and leave mid-path
detours unreachable.  Instead each axis samples a mode vector xi mapped
linearly into coefficients, where the modes are L2-orthonormal polynomials
that vanish (with two derivatives) at t=0 and vanish at t=T, plus one
min-jerk goal-shift mode scaled to move the endpoint 1 m per unit.  Unit
xi perturbations therefore produce meter-scale shape changes with the
endpoint nearly fixed, and the goal stays a quadratic penalty rather than
a hard constraint.

Obstacle cost is the kernel-embedding surrogate evaluated on per-obstacle
sample grids drawn once per planning call, so all population members see
identical obstacle realizations and cost comparisons are noise-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import sdf_batch
from .mmd import (
    KernelConfig,
    SafetyBand,
    bandwidth_from_violations,
    flatten_grid,
    mmd_per_query,
    violation_matrix,
)
from .trajectory import (
    GROUND_PENALTY_WEIGHT,
    BoundaryState,
    Limits,
    PolyTrajectory,
    _jerk_gram,
    basis_matrix,
)
from .uncertainty import UncertainCuboid, draw_grid


# Endpoint-shift exploration std as a fraction of init_std; the goal
# penalty prices this mode, so meter-scale noise here would dominate
# every sample's cost.
GOAL_MODE_STD_FRACTION = 0.05


@dataclass
class CemConfig:
    population: int = 64
    elites: int = 8
    iterations: int = 12
    init_std: float = 2.0
    mmd_weight: float = 100.0
    band: SafetyBand = SafetyBand(1.0, 8.0)
    cov_floor: float = 1e-4
    decay: float = 0.8
    rng_seed: int = 0
    degree: int = 7
    n_samples: int = 48
    goal_weight: float = 1e3
    grid_counts: tuple[int, int, int] = (5, 5, 5)
    bandwidth: float | None = None
    sdf_tolerance: float = 0.1

    def __post_init__(self):
        if not (1 <= self.elites <= self.population):
            raise ValueError("need 1 <= elites <= population")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mmd_weight < 0:
            raise ValueError("mmd_weight must be >= 0")
        if self.cov_floor <= 0:
            raise ValueError("cov_floor must be positive")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")


@dataclass
class CemTrace:
    """Per-iteration convergence record plus the final feasibility audit."""

    elite_mean_costs: np.ndarray
    best_costs: np.ndarray
    mean_traj_costs: np.ndarray
    cov_traces: np.ndarray
    feasible: bool = True
    min_nominal_sdf: float = float("inf")
    # fraction of in-sample violation entries (queries x grid realizations)
    # that are exactly zero along the returned trajectory; 1.0 when the
    # violation distribution has collapsed onto the Dirac at zero
    violation_zero_fraction: float = 1.0

    def to_text(self) -> str:
        lines = ["iteration,elite_mean_cost,best_cost,mean_cost,cov_trace"]
        for it in range(len(self.elite_mean_costs)):
            row = (
                it,
                self.elite_mean_costs[it],
                self.best_costs[it],
                self.mean_traj_costs[it],
                self.cov_traces[it],
            )
            lines.append(",".join(format(v, ".9g") for v in row))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def cem_minimize(
    cost_fn: Callable[[np.ndarray], np.ndarray],
    mean0: np.ndarray,
    std0: float | np.ndarray,
    *,
    population: int,
    elites: int,
    iterations: int,
    cov_floor: float,
    rng: np.random.Generator,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    decay: float = 0.8,
):
    """Generic diagonal-covariance CEM loop; returns (best_x, best_cost, final mean, trace arrays).

    std0 may be a scalar or a per-dimension array; anisotropic values let
    the caller equalize the cost of unit exploration across coordinates.
    Elites are chosen from the union of the current population and the
    previous elite set, which makes the traced elite-mean cost provably
    non-increasing.  The refit variance is floored per-dimension by a
    geometrically decaying exploration schedule (std0 * decay^iter) so no
    coordinate collapses before selection has acted on it.  The
    (projected) distribution mean is also evaluated each iteration and
    competes for best-ever.
    """
    mean = np.asarray(mean0, dtype=float).copy()
    n_dim = mean.size
    std0 = np.broadcast_to(np.asarray(std0, dtype=float), (n_dim,)).copy()
    if np.any(std0 <= 0):
        raise ValueError("std0 must be positive")
    var = std0**2
    identity = (lambda x: x) if project is None else project

    elite_x = np.empty((0, n_dim))
    elite_cost = np.empty(0)
    best_x = None
    best_cost = np.inf
    elite_mean_costs = np.empty(iterations)
    best_costs = np.empty(iterations)
    mean_traj_costs = np.empty(iterations)
    cov_traces = np.empty(iterations)

    for it in range(iterations):
        mean_proj = identity(mean[None, :].copy())[0]
        mean_cost = float(cost_fn(mean_proj[None, :])[0])
        if mean_cost < best_cost:
            best_cost, best_x = mean_cost, mean_proj.copy()

        samples = mean + np.sqrt(var) * rng.standard_normal((population, n_dim))
        samples = identity(samples)
        costs = np.asarray(cost_fn(samples), dtype=float)

        pool_x = np.vstack([samples, elite_x])
        pool_cost = np.concatenate([costs, elite_cost])
        order = np.argsort(pool_cost, kind="stable")[:elites]
        elite_x = pool_x[order].copy()
        elite_cost = pool_cost[order].copy()

        if elite_cost[0] < best_cost:
            best_cost, best_x = float(elite_cost[0]), elite_x[0].copy()

        mean = elite_x.mean(axis=0)
        scheduled = (std0 * decay ** (it + 1)) ** 2
        var = np.maximum(elite_x.var(axis=0), np.maximum(cov_floor, scheduled))

        elite_mean_costs[it] = elite_cost.mean()
        best_costs[it] = best_cost
        mean_traj_costs[it] = mean_cost
        cov_traces[it] = var.sum()

    mean_proj = identity(mean[None, :].copy())[0]
    final_cost = float(cost_fn(mean_proj[None, :])[0])
    if final_cost < best_cost:
        best_cost, best_x = final_cost, mean_proj.copy()

    return best_x, best_cost, mean_proj, (elite_mean_costs, best_costs, mean_traj_costs, cov_traces)


def min_jerk_coefficients(start: BoundaryState, goal, duration: float, degree: int) -> np.ndarray:
    """(degree+1, 3) interpolant: full state at t=0, position at t=T, least jerk.

    The three lowest coefficients are pinned by the start state; the rest
    solve min c^T G c subject to summing to the remaining goal gap (all
    monomials equal 1 at normalized time 1).
    """
    goal = np.asarray(goal, dtype=float).reshape(3)
    n_coef = degree + 1
    coeffs = np.zeros((n_coef, 3))
    coeffs[0] = start.position
    coeffs[1] = start.velocity * duration
    coeffs[2] = start.acceleration * duration**2 / 2.0
    gram_free = _jerk_gram(degree, duration)[3:, 3:]
    ones = np.ones(n_coef - 3)
    w = np.linalg.solve(gram_free, ones)
    base = w / (ones @ w)
    residual = goal - coeffs[:3].sum(axis=0)
    coeffs[3:] = np.outer(base, residual)
    return coeffs


@lru_cache(maxsize=16)
def shape_modes(degree: int) -> np.ndarray:
    """Per-axis sampling modes over the free coefficients (exponents 3..degree).

    Columns 0..n-2: L2-orthonormal polynomials with zero value at both
    normalized endpoints (and zero first/second derivative at 0, inherited
    from the missing low-order monomials).  Last column: the min-jerk
    goal-shift direction, normalized to move the endpoint by exactly 1.
    Duration-independent because both Grams scale out.
    """
    exponents = np.arange(3, degree + 1)
    n_free = len(exponents)
    if n_free < 2:
        raise ValueError("degree must be at least 4 for one shape mode plus the goal mode")
    # basis of the endpoint-preserving subspace {sum of coefficients = 0}
    ones = np.ones(n_free)
    _, _, vh = np.linalg.svd(ones[None, :])
    null_basis = vh[1:].T
    l2_gram = 1.0 / (exponents[:, None] + exponents[None, :] + 1.0)
    jerk_free = _jerk_gram(degree, 1.0)[3:, 3:]
    # smoothest shapes first: generalized eigenproblem jerk v = lambda * L2 v
    # on the subspace, L2-normalized so unit xi is meter-scale amplitude.
    # The raw monomial L2 Gram is Hilbert-like; plain L2 orthonormalization
    # yields wildly oscillating, jerk-expensive modes.
    sub_l2 = null_basis.T @ l2_gram @ null_basis
    sub_jerk = null_basis.T @ jerk_free @ null_basis
    chol = np.linalg.cholesky(sub_l2)
    chol_inv = np.linalg.inv(chol)
    reduced = chol_inv @ sub_jerk @ chol_inv.T
    reduced = (reduced + reduced.T) / 2.0
    _, eigvecs = np.linalg.eigh(reduced)
    shape_cols = null_basis @ (chol_inv.T @ eigvecs)
    w = np.linalg.solve(jerk_free, ones)
    goal_col = (w / (ones @ w))[:, None]
    modes = np.hstack([shape_cols, goal_col])
    modes.setflags(write=False)
    return modes


def suggested_duration(start_position, goal, v_max: float, fraction: float = 0.6, minimum: float = 2.0) -> float:
    dist = float(np.linalg.norm(np.asarray(goal, dtype=float) - np.asarray(start_position, dtype=float)))
    return max(dist / (fraction * v_max), minimum)


def plan_cem(
    world: Sequence[UncertainCuboid],
    start: BoundaryState,
    goal,
    limits: Limits,
    duration: float,
    cfg: CemConfig,
) -> tuple[PolyTrajectory, CemTrace]:
    """Plan a polynomial trajectory minimizing smoothness + limits + goal + MMD.

    Deterministic given cfg.rng_seed: sample grids get per-obstacle derived
    seeds and the CEM stream is seeded separately.  The trace carries a
    post-hoc feasibility audit of the best trajectory against the nominal
    obstacles (worst SDF >= r_min * (1 - sdf_tolerance)).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    goal = np.asarray(goal, dtype=float).reshape(3)
    times = np.linspace(0.0, duration, cfg.n_samples)
    basis_p = basis_matrix(times, cfg.degree, duration, 0)
    basis_v = basis_matrix(times, cfg.degree, duration, 1)
    basis_a = basis_matrix(times, cfg.degree, duration, 2)
    gram = _jerk_gram(cfg.degree, duration)
    modes = shape_modes(cfg.degree)
    n_modes = modes.shape[1]
    # Equalize the smoothness cost of unit exploration noise across shape
    # modes (the jerk ratio is duration-free); the endpoint mode is priced
    # by the goal penalty instead, so it gets a small fixed fraction.
    unit_jerk = _jerk_gram(cfg.degree, 1.0)[3:, 3:]
    mode_jerk = np.einsum("fm,fg,gm->m", modes, unit_jerk, modes)
    std_modes = np.empty(n_modes)
    std_modes[:-1] = cfg.init_std * np.sqrt(mode_jerk[0] / mode_jerk[:-1])
    std_modes[-1] = cfg.init_std * GOAL_MODE_STD_FRACTION
    std_vec = np.tile(std_modes[:, None], (1, 3)).ravel()

    grid_seeds = np.random.SeedSequence(cfg.rng_seed).generate_state(max(len(world), 1))
    grids = [draw_grid(u, cfg.grid_counts, int(grid_seeds[i])) for i, u in enumerate(world)]
    weight_cfg = KernelConfig.uniform(cfg.grid_counts, bandwidth=1.0)
    flats = [flatten_grid(g, weight_cfg) for g in grids]

    mean_coeffs = min_jerk_coefficients(start, goal, duration, cfg.degree)

    bandwidth = cfg.bandwidth
    if bandwidth is None:
        init_positions = basis_p @ mean_coeffs
        if grids:
            batch = np.concatenate(
                [violation_matrix(g, init_positions, cfg.band).ravel() for g in grids]
            )
        else:
            batch = np.zeros(1)
        bandwidth = bandwidth_from_violations(batch)

    def to_coeffs(xi_batch: np.ndarray) -> np.ndarray:
        xi = xi_batch.reshape(-1, n_modes, 3)
        coeffs = np.repeat(mean_coeffs[None, :, :], xi.shape[0], axis=0)
        coeffs[:, 3:, :] += np.einsum("fm,bma->bfa", modes, xi)
        return coeffs

    def cost_fn(xi_batch: np.ndarray) -> np.ndarray:
        coeffs = to_coeffs(xi_batch)
        n_pop = coeffs.shape[0]
        cost = np.einsum("bia,ij,bja->b", coeffs, gram, coeffs)
        pos = np.einsum("ti,bia->bta", basis_p, coeffs)
        vel = np.einsum("ti,bia->bta", basis_v, coeffs)
        acc = np.einsum("ti,bia->bta", basis_a, coeffs)
        over_v = np.maximum(np.abs(vel) - limits.v_max, 0.0)
        over_a = np.maximum(np.abs(acc) - limits.a_max, 0.0)
        under_z = np.maximum(limits.z_min - pos[:, :, 2], 0.0)
        cost += np.sum(over_v**2, axis=(1, 2)) + np.sum(over_a**2, axis=(1, 2))
        cost += GROUND_PENALTY_WEIGHT * np.sum(under_z**2, axis=1)
        cost += cfg.goal_weight * np.sum((pos[:, -1, :] - goal) ** 2, axis=1)
        if flats and cfg.mmd_weight > 0:
            queries = np.ascontiguousarray(pos.reshape(-1, 3))
            mmd_total = np.zeros(n_pop)
            for flat in flats:
                per_query = mmd_per_query(flat, queries, cfg.band, bandwidth)
                mmd_total += per_query.reshape(n_pop, -1).sum(axis=1)
            cost += cfg.mmd_weight * mmd_total
        return cost

    rng = np.random.default_rng(cfg.rng_seed)
    best_xi, _, _, arrays = cem_minimize(
        cost_fn,
        np.zeros(n_modes * 3),
        std_vec,
        population=cfg.population,
        elites=cfg.elites,
        iterations=cfg.iterations,
        cov_floor=cfg.cov_floor,
        rng=rng,
        decay=cfg.decay,
    )
    best_coeffs = to_coeffs(best_xi[None, :])[0]
    traj = PolyTrajectory(
        best_coeffs[:, 0], best_coeffs[:, 1], best_coeffs[:, 2], duration=duration, degree=cfg.degree
    )

    min_sdf = float("inf")
    zero_frac = 1.0
    if world:
        # audit on a denser clock than the cost samples so thin obstacles
        # cannot slip between query points
        audit_times = np.linspace(0.0, duration, 8 * cfg.n_samples)
        positions = basis_matrix(audit_times, cfg.degree, duration, 0) @ best_coeffs
        distances = sdf_batch([u.nominal for u in world], positions)
        min_sdf = float(distances.min())
        final_pos = basis_p @ best_coeffs
        entries = 0
        zeros = 0
        for g in grids:
            v = violation_matrix(g, final_pos, cfg.band)
            entries += v.size
            zeros += int(np.count_nonzero(v == 0.0))
        zero_frac = zeros / entries
    feasible = (not world) or min_sdf >= cfg.band.r_min * (1.0 - cfg.sdf_tolerance)

    trace = CemTrace(
        *arrays,
        feasible=feasible,
        min_nominal_sdf=min_sdf,
        violation_zero_fraction=zero_frac,
    )
    return traj, trace
