"""Sequential convex waypoint planner with quantile-inflated obstacles.

Three stages:

1. ``inflate`` absorbs each obstacle's pose/size error bank into a single
   deterministic cuboid: the componentwise hull of the best ``quantile``
   fraction of bank realizations (judged by how far each sticks out past
   the nominal), padded a fixed fraction of the way toward the full hull.
2. ``mmd_rank_init`` seeds the optimizer by scoring a straight line plus a
   batch of smoothness-preserving random perturbations with the sample-based
   collision surrogate and keeping the least-colliding, smoothest candidate.
3. ``scp_refine`` runs trust-region SCP: each outer iteration solves a convex
   QP (accel smoothness objective, hard boundary conditions, velocity/accel
   boxes, altitude floor, linearized signed-distance half-spaces against the
   inflated cuboids) and accepts or shrinks via a merit ratio test.

The inflated obstacles make chance constraints deterministic, so unlike the
stochastic-surrogate planner this one returns hard clearance guarantees
against the inflated set (reported in the trace, never silently violated).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import cvxpy as cp
import numpy as np

from .geometry import Cuboid, CuboidSize, GroundPose2D, LocalTransform, local_transform
from .mmd import KernelConfig, SafetyBand, bandwidth_from_violations, flatten_grid, mmd_per_query, violation_matrix
from .trajectory import (
    BoundaryState,
    Limits,
    WaypointTrajectory,
    second_difference_matrix,
    smoothness_cost,
    stomp_samples,
)
from .uncertainty import UncertainCuboid, draw_grid

# Merit weight on waypoint clearance shortfall; large enough that trading a
# meter of penetration for smoothness is never profitable.
PENALTY_WEIGHT = 1e3

# Candidate steps whose merit ratio falls below this are rejected outright.
RATIO_ACCEPT = 0.1
RATIO_SHRINK = 0.25
RATIO_GROW = 0.75

_FD_STEP = 1e-4


@dataclass
class ScpConfig:
    """Knobs for the inflate / rank / refine pipeline.

    candidates:       random initialization candidates scored alongside the
                      straight line
    scp_iterations:   outer trust-region iterations
    trust_radius:     initial per-waypoint infinity-norm trust box (meters)
    inflate_quantile: fraction of bank realizations the inflated cuboid must
                      cover before tail padding
    stomp_scale:      perturbation magnitude for initialization candidates
    grid_counts:      per-factor sample counts for the ranking grids
    inflate_counts:   per-factor sample counts for the inflation grids (more
                      samples here sharpen the tail estimate and are cheap)
    tail_margin:      fraction of the (full hull - quantile hull) gap added
                      back as a safety pad
    move_tolerance:   accepted step size (meters, infinity norm) below which
                      refinement stops early
    restarts:         how many ranked candidates to try refining before
                      settling for the least-penetrating result
    """

    candidates: int = 32
    scp_iterations: int = 25
    trust_radius: float = 2.0
    inflate_quantile: float = 0.95
    band: SafetyBand = SafetyBand(1.0, 8.0)
    limits: Limits = Limits(4.0, 3.0)
    rng_seed: int = 0
    stomp_scale: float = 2.5
    grid_counts: tuple[int, int, int] = (5, 5, 5)
    inflate_counts: tuple[int, int, int] = (8, 8, 8)
    bandwidth: float | None = None
    tail_margin: float = 0.5
    move_tolerance: float = 1e-4
    restarts: int = 3

    def __post_init__(self):
        if self.candidates < 0:
            raise ValueError("candidates must be nonnegative")
        if self.scp_iterations < 1:
            raise ValueError("scp_iterations must be positive")
        if self.trust_radius <= 0:
            raise ValueError("trust_radius must be positive")
        if not 0.0 < self.inflate_quantile <= 1.0:
            raise ValueError("inflate_quantile must be in (0, 1]")
        if self.stomp_scale < 0:
            raise ValueError("stomp_scale must be nonnegative")
        if not 0.0 <= self.tail_margin <= 1.0:
            raise ValueError("tail_margin must be in [0, 1]")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be positive")


@dataclass
class ScpTrace:
    """Refinement diagnostics.

    merits holds the incumbent merit value after each outer iteration, so it
    is nonincreasing by construction.  success means every waypoint of the
    returned trajectory clears the inflated obstacles by r_min (up to a 1e-3
    relative slack); feasible goes false only when the QP subproblem stayed
    infeasible through repeated trust shrinks.
    """

    candidate_index: int = 0
    candidate_mmd: float = 0.0
    merits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trust_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    moves: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    min_inflated_sdf: float = np.inf
    feasible: bool = True
    success: bool = True


def signed_sdf(cuboid: Cuboid, point, lt: LocalTransform | None = None) -> float:
    """Signed distance to the cuboid treated as resting on the ground:
    positive outside, negative inside (magnitude = depth to the nearest
    escape face).

    Obstacles stand on the ground plane, so the solid is extended downward
    and only side and top faces count as exits; otherwise a path hugging
    the floor under a footprint would linearize to "dig underground",
    which the altitude floor forbids.  Above the top face this matches the
    unsigned exterior field used everywhere else; the interior branch is
    what gives the SCP linearization a nonzero gradient for waypoints
    trapped inside an obstacle.
    """
    if lt is None:
        lt = local_transform(cuboid)
    b = lt.apply(np.asarray(point, dtype=float).reshape(3))
    h = cuboid.size.half_extents
    d = np.array([abs(b[0]) - h[0], abs(b[1]) - h[1], b[2] - h[2]])
    if np.any(d > 0):
        return float(np.linalg.norm(np.maximum(d, 0.0)))
    return float(d.max())


def _sdf_gradient(cuboid: Cuboid, point: np.ndarray, lt: LocalTransform) -> np.ndarray:
    """Central-difference gradient of signed_sdf, clamped to unit norm.

    True distance fields have unit gradients almost everywhere; the clamp
    only guards the face/edge seams where finite differences overshoot.
    """
    g = np.zeros(3)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = _FD_STEP
        g[axis] = signed_sdf(cuboid, point + e, lt) - signed_sdf(cuboid, point - e, lt)
    g /= 2.0 * _FD_STEP
    norm = np.linalg.norm(g)
    if norm < 1e-9:
        # Exactly at the center/axis seam: push radially from the center,
        # falling back to straight up if even that is degenerate.
        g = np.asarray(point, dtype=float) - cuboid.center
        norm = np.linalg.norm(g)
        if norm < 1e-9:
            return np.array([0.0, 0.0, 1.0])
    if norm > 1.0:
        g = g / norm
    return g


def contains_cuboid(container: Cuboid, sample: Cuboid, tol: float = 1e-9) -> bool:
    """True when every vertex of sample lies inside container (convexity
    makes vertex containment equivalent to full containment)."""
    lt = local_transform(container)
    b = (lt.rotation @ sample.vertices().T).T + lt.translation
    return bool(np.all(np.abs(b) <= container.size.half_extents + tol))


def inflate(
    u: UncertainCuboid,
    quantile: float,
    counts: Sequence[int],
    rng_seed: int,
    tail_margin: float = 0.5,
) -> Cuboid:
    """Deterministic cuboid covering the best ``quantile`` fraction of bank
    realizations, padded toward the full-bank hull.

    Realizations keep the nominal pose; only the extents grow.  Each sampled
    cuboid's required extents are measured in the nominal body frame from its
    vertices (obstacles share the ground plane, so height is anchored at
    z = 0 and only the top matters).  Samples are ranked by the largest
    overhang past the nominal extents; the ceil(quantile * M) smallest-
    overhang samples form the quantile hull, then ``tail_margin`` of the gap
    to the all-sample hull is added back so fresh draws just past the
    quantile still tend to be covered.
    """
    if not 0.0 < quantile <= 1.0:
        raise ValueError("quantile must be in (0, 1]")
    if not 0.0 <= tail_margin <= 1.0:
        raise ValueError("tail_margin must be in [0, 1]")
    nominal = u.nominal
    lt = local_transform(nominal)
    h = nominal.size.half_extents
    # Required (half_thickness, half_length, full_height) per realization.
    samples = draw_grid(u, counts, rng_seed).flat_cuboids()
    need = np.empty((len(samples), 3))
    for m, c in enumerate(samples):
        body = (lt.rotation @ c.vertices().T).T + lt.translation
        need[m, 0] = np.abs(body[:, 0]).max()
        need[m, 1] = np.abs(body[:, 1]).max()
        need[m, 2] = c.size.height
    floor = np.array([h[0], h[1], nominal.size.height])
    overhang = (need - floor).max(axis=1)
    keep = int(np.ceil(quantile * len(samples)))
    kept = np.argsort(overhang, kind="stable")[:keep]
    hull_q = np.maximum(need[kept].max(axis=0), floor)
    hull_all = np.maximum(need.max(axis=0), floor)
    extents = hull_q + tail_margin * (hull_all - hull_q)
    return Cuboid(
        pose=GroundPose2D(origin=nominal.pose.origin.copy(), yaw=nominal.pose.yaw),
        size=CuboidSize(length=2.0 * extents[1], height=extents[2], thickness=2.0 * extents[0]),
    )


def _straight_line(start, goal, n_waypoints: int, dt: float) -> WaypointTrajectory:
    points = np.linspace(np.asarray(start, dtype=float), np.asarray(goal, dtype=float), n_waypoints)
    return WaypointTrajectory(points, dt)


def _as_state(x) -> BoundaryState:
    if isinstance(x, BoundaryState):
        return x
    return BoundaryState.at_rest(x)


def _ranked_candidates(
    world: Sequence[UncertainCuboid],
    start: BoundaryState,
    goal_state: BoundaryState,
    n_waypoints: int,
    cfg: ScpConfig,
    dt: float,
    grid_seeds: np.ndarray,
    stomp_seed: int,
) -> list[tuple[WaypointTrajectory, int, float]]:
    """Candidates projected onto the flight envelope and sorted best-first
    by (collision surrogate, smoothness, candidate order).

    Projection before scoring matters twice over: the surrogate then ranks
    paths the refiner can actually start from, and it frees stomp_scale to
    be large enough that some samples wrap all the way around big obstacles
    (the projection tames their raw velocity/acceleration spikes).
    """
    base = _straight_line(start.position, goal_state.position, n_waypoints, dt)
    raw = [base]
    if cfg.candidates > 0 and cfg.stomp_scale > 0:
        raw += stomp_samples(base, cfg.candidates, cfg.stomp_scale, stomp_seed)
    a_mat = second_difference_matrix(n_waypoints, dt)
    cands = []
    for cand in raw:
        projected = _project_qp(
            _boundary_consistent(cand.points, start, goal_state, dt),
            a_mat, dt, start, goal_state, cfg.limits,
        )
        if projected is not None:
            cands.append(WaypointTrajectory(projected, dt))
    if not cands:
        cands = [base]
    if not world:
        return [(cands[0], 0, 0.0)]

    grids = [draw_grid(u, cfg.grid_counts, int(grid_seeds[i])) for i, u in enumerate(world)]
    weight_cfg = KernelConfig.uniform(cfg.grid_counts, bandwidth=1.0)
    flats = [flatten_grid(g, weight_cfg) for g in grids]
    bandwidth = cfg.bandwidth
    if bandwidth is None:
        batch = np.concatenate([violation_matrix(g, base.points, cfg.band).ravel() for g in grids])
        bandwidth = bandwidth_from_violations(batch)

    scored = []
    for idx, cand in enumerate(cands):
        score = 0.0
        for flat in flats:
            score += float(mmd_per_query(flat, cand.points, cfg.band, bandwidth).sum())
        scored.append(((score, smoothness_cost(cand), idx), cand))
    scored.sort(key=lambda item: item[0])
    return [(cand, idx, score) for (score, _, idx), cand in scored]


def mmd_rank_init(
    world: Sequence[UncertainCuboid],
    start,
    goal,
    n_waypoints: int,
    cfg: ScpConfig,
    dt: float = 0.5,
) -> WaypointTrajectory:
    """Best initialization candidate: straight line plus cfg.candidates
    random perturbations, projected onto the flight envelope and ranked by
    summed collision surrogate over the waypoints (ties broken by
    smoothness, then by candidate order).

    start and goal may be BoundaryState or bare positions (taken at rest).
    """
    seeds = _derive_seeds(cfg.rng_seed, len(world))
    ranked = _ranked_candidates(
        world, _as_state(start), _as_state(goal), n_waypoints, cfg, dt,
        seeds[: len(world)], int(seeds[-1]),
    )
    return ranked[0][0]


def _derive_seeds(rng_seed: int, n_world: int) -> np.ndarray:
    """Independent streams: one ranking grid per obstacle, one inflation
    grid per obstacle, one for the perturbation candidates (last)."""
    return np.random.SeedSequence(rng_seed).generate_state(2 * max(n_world, 1) + 1)


def _accel_cost(points: np.ndarray, a_mat: np.ndarray, dt: float) -> float:
    return float(np.sum((a_mat @ points) ** 2) * dt)


def _boundary_consistent(points: np.ndarray, start: BoundaryState, goal_state: BoundaryState, dt: float) -> np.ndarray:
    """Overwrite the three points at each end so the finite-difference
    boundary conditions hold exactly.

    Without this an initial guess can place its near-endpoint points farther
    from the (fully determined) boundary triplet than the trust box allows,
    making the first subproblem infeasible before slack can help.
    """
    if points.shape[0] < 6:
        raise ValueError("need at least 6 waypoints for boundary-consistent ends")
    pts = points.copy()
    pts[0] = start.position
    pts[1] = start.position + dt * start.velocity
    pts[2] = 2.0 * pts[1] - pts[0] + dt**2 * start.acceleration
    pts[-1] = goal_state.position
    pts[-2] = goal_state.position - dt * goal_state.velocity
    pts[-3] = 2.0 * pts[-2] - pts[-1] + dt**2 * goal_state.acceleration
    return pts


def _clearances(points: np.ndarray, inflated: Sequence[Cuboid], lts: Sequence[LocalTransform]) -> np.ndarray:
    """(n_cuboids, n_points) signed distances."""
    out = np.empty((len(inflated), points.shape[0]))
    for c, (cub, lt) in enumerate(zip(inflated, lts)):
        for t in range(points.shape[0]):
            out[c, t] = signed_sdf(cub, points[t], lt)
    return out


def _merit(
    points: np.ndarray,
    a_mat: np.ndarray,
    dt: float,
    inflated: Sequence[Cuboid],
    lts: Sequence[LocalTransform],
    r_min: float,
) -> float:
    cost = _accel_cost(points, a_mat, dt)
    if inflated:
        shortfall = np.maximum(r_min - _clearances(points, inflated, lts), 0.0)
        cost += PENALTY_WEIGHT * float(shortfall.sum())
    return cost


def _project_qp(
    target: np.ndarray,
    a_mat: np.ndarray,
    dt: float,
    start: BoundaryState,
    goal_state: BoundaryState,
    limits: Limits,
) -> np.ndarray | None:
    """Nearest path to ``target`` satisfying boundary conditions, velocity
    and acceleration boxes, and the altitude floor (no obstacle terms).

    Running this once before the SCP loop keeps the main subproblems
    feasible: the incumbent then always satisfies every hard constraint, so
    only the slack-priced clearance terms can be active at it.
    """
    n = target.shape[0]
    q = cp.Variable((n, 3))
    d1 = (np.eye(n)[1:] - np.eye(n)[:-1]) / dt
    constraints = [
        q[0] == start.position,
        q[n - 1] == goal_state.position,
        (q[1] - q[0]) / dt == start.velocity,
        (q[n - 1] - q[n - 2]) / dt == goal_state.velocity,
        (q[0] - 2 * q[1] + q[2]) / dt**2 == start.acceleration,
        (q[n - 1] - 2 * q[n - 2] + q[n - 3]) / dt**2 == goal_state.acceleration,
        cp.abs(d1 @ q) <= limits.v_max,
        cp.abs(a_mat @ q) <= limits.a_max,
        q[:, 2] >= limits.z_min,
    ]
    problem = cp.Problem(cp.Minimize(cp.sum_squares(q - target)), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    return np.asarray(q.value)


def _solve_qp(
    current: np.ndarray,
    a_mat: np.ndarray,
    dt: float,
    start: BoundaryState,
    goal_state: BoundaryState,
    limits: Limits,
    halfspaces: list[tuple[int, np.ndarray, float]],
    trust: float,
) -> tuple[np.ndarray, float] | None:
    """One convex subproblem.

    Clearance half-spaces carry L1 slack priced at the merit's penalty
    weight (an exact penalty: the subproblem stays feasible even when a
    waypoint sits too deep inside an obstacle to escape within the trust
    box, and its optimum value is the model merit of the candidate).
    Returns (waypoints, model merit) or None when the solver reports
    anything but (near-)optimal.
    """
    n = current.shape[0]
    q = cp.Variable((n, 3))
    d1 = (np.eye(n)[1:] - np.eye(n)[:-1]) / dt
    constraints = [
        q[0] == start.position,
        q[n - 1] == goal_state.position,
        (q[1] - q[0]) / dt == start.velocity,
        (q[n - 1] - q[n - 2]) / dt == goal_state.velocity,
        (q[0] - 2 * q[1] + q[2]) / dt**2 == start.acceleration,
        (q[n - 1] - 2 * q[n - 2] + q[n - 3]) / dt**2 == goal_state.acceleration,
        cp.abs(d1 @ q) <= limits.v_max,
        cp.abs(a_mat @ q) <= limits.a_max,
        q[:, 2] >= limits.z_min,
        q >= current - trust,
        q <= current + trust,
    ]
    objective = cp.sum_squares(a_mat @ q) * dt
    if halfspaces:
        slack = cp.Variable(len(halfspaces), nonneg=True)
        for i, (t, g, rhs) in enumerate(halfspaces):
            constraints.append(g @ q[t] + slack[i] >= rhs)
        objective = objective + PENALTY_WEIGHT * cp.sum(slack)
    problem = cp.Problem(cp.Minimize(objective), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    return np.asarray(q.value), float(problem.value)


def scp_refine(
    initial: WaypointTrajectory,
    inflated: Sequence[Cuboid],
    start: BoundaryState,
    goal_state: BoundaryState,
    cfg: ScpConfig,
) -> tuple[WaypointTrajectory, ScpTrace]:
    """Trust-region SCP around ``initial`` against fixed inflated cuboids.

    Each iteration linearizes the signed distance of every non-pruned
    (obstacle, interior waypoint) pair at the incumbent, solves the QP, and
    runs a merit ratio test: reject and halve the trust radius when the
    actual merit reduction falls below RATIO_ACCEPT of the model's
    prediction, grow it when the step delivers more than RATIO_GROW.
    Infeasible subproblems shrink the trust region; three in a row abort.
    """
    n, dt = initial.n, initial.dt
    points = _boundary_consistent(initial.points, start, goal_state, dt)
    points[3:-3, 2] = np.maximum(points[3:-3, 2], cfg.limits.z_min)
    a_mat = second_difference_matrix(n, dt)
    lts = [local_transform(c) for c in inflated]
    r_min = cfg.band.r_min
    trust = cfg.trust_radius

    projected = _project_qp(points, a_mat, dt, start, goal_state, cfg.limits)
    if projected is not None:
        points = projected
    merit_cur = _merit(points, a_mat, dt, inflated, lts, r_min)

    merits, radii, moves, flags = [], [], [], []
    feasible = True
    stale_infeasible = 0
    for _ in range(cfg.scp_iterations):
        # Prune pairs that no step inside the trust box can bring near the
        # clearance threshold.
        halfspaces = []
        cutoff = r_min + np.sqrt(3.0) * trust + 0.5
        for c, (cub, lt) in enumerate(zip(inflated, lts)):
            for t in range(1, n - 1):
                d = signed_sdf(cub, points[t], lt)
                if d > cutoff:
                    continue
                g = _sdf_gradient(cub, points[t], lt)
                halfspaces.append((t, g, r_min - d + g @ points[t]))
        solved = _solve_qp(points, a_mat, dt, start, goal_state, cfg.limits, halfspaces, trust)
        if solved is None:
            stale_infeasible += 1
            trust *= 0.5
            merits.append(merit_cur)
            radii.append(trust)
            moves.append(0.0)
            flags.append(False)
            if stale_infeasible >= 3:
                feasible = False
                break
            continue
        stale_infeasible = 0
        candidate, model_value = solved
        move = float(np.abs(candidate - points).max())
        merit_cand = _merit(candidate, a_mat, dt, inflated, lts, r_min)
        # The subproblem optimum is the candidate's merit under linearized
        # clearances, so it is the model's prediction directly.
        predicted = merit_cur - model_value
        actual = merit_cur - merit_cand
        accepted = False
        if predicted > 1e-12 and actual >= 0 and actual >= RATIO_ACCEPT * predicted:
            accepted = True
            points = candidate
            merit_cur = merit_cand
            ratio = actual / predicted
            if ratio < RATIO_SHRINK:
                trust *= 0.5
            elif ratio > RATIO_GROW:
                trust *= 2.0
        else:
            trust *= 0.5
        merits.append(merit_cur)
        radii.append(trust)
        moves.append(move)
        flags.append(accepted)
        # Converged when the subproblem keeps the iterate put: either the
        # step was accepted and tiny, or the model predicts no improvement.
        if move < cfg.move_tolerance and (accepted or predicted <= 1e-12):
            break

    if inflated:
        min_sdf = float(_clearances(points, inflated, lts).min())
    else:
        min_sdf = np.inf
    trace = ScpTrace(
        merits=np.asarray(merits),
        trust_radii=np.asarray(radii),
        moves=np.asarray(moves),
        accepted=np.asarray(flags, dtype=bool),
        min_inflated_sdf=min_sdf,
        feasible=feasible,
        success=feasible and min_sdf >= r_min * (1.0 - 1e-3),
    )
    return WaypointTrajectory(points, dt), trace


def plan_scp(
    world: Sequence[UncertainCuboid],
    start: BoundaryState,
    goal_state: BoundaryState,
    cfg: ScpConfig,
    n_waypoints: int = 24,
    dt: float = 0.5,
) -> tuple[WaypointTrajectory, ScpTrace]:
    """Full pipeline: inflate each obstacle, pick the best-ranked
    initialization, refine with trust-region SCP.

    With an empty world and zero bank draws this reduces to a convex QP, so
    the result matches the closed-form minimum-acceleration interpolant.
    """
    seeds = _derive_seeds(cfg.rng_seed, len(world))
    ranked = _ranked_candidates(
        world, start, goal_state, n_waypoints, cfg, dt, seeds[: len(world)], int(seeds[-1])
    )
    inflated = [
        inflate(u, cfg.inflate_quantile, cfg.inflate_counts, int(seeds[len(world) + i]), cfg.tail_margin)
        for i, u in enumerate(world)
    ]
    lts = [local_transform(c) for c in inflated]

    # Restart order: the ranked best first (collision-surrogate choice), then
    # the candidate with the largest worst-case clearance from the inflated
    # set.  A flat obstacle face linearizes with no tangential component, so
    # refinement cannot discover a go-around on its own; the most-clear
    # candidate starts nearest the regime where side-face gradients engage.
    order = list(range(len(ranked)))
    if inflated and len(ranked) > 1:
        clear = [_clearances(cand.points, inflated, lts).min() for cand, _, _ in ranked]
        pos = int(np.argmax(clear))
        if pos != 0:
            order.insert(1, order.pop(pos))
    best = None
    for pos in order[: max(cfg.restarts, 1)]:
        cand, cand_idx, cand_mmd = ranked[pos]
        refined, trace = scp_refine(cand, inflated, start, goal_state, cfg)
        trace.candidate_index = cand_idx
        trace.candidate_mmd = cand_mmd
        if trace.success:
            return refined, trace
        if best is None or trace.min_inflated_sdf > best[1].min_inflated_sdf:
            best = (refined, trace)
    return best
