"""Goal-conditioned planning on top of the frozen encoder and dynamics model.

Each control step minimizes the L1 distance between the model's imagined
final feature map and the goal's feature map, using the cross-entropy
method over per-coordinate Gaussians; only the first action is executed
before re-planning (receding horizon). Also home to the energy-landscape
sweep and the action-axis calibration solved by least squares + nearest
rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gridsim
from .acmodel import ACPredictor
from .autodiff import Tensor
from .encoder import VideoEncoder
from .errors import ConfigError, ContractError, NumericError, SingularMatrixError


@dataclass(frozen=True)
class CEMConfig:
    samples: int = 800
    iterations: int = 10
    elites: int = 10
    horizon: int = 1
    action_radius: float = 0.075
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.elites > self.samples:
            raise ConfigError(f"elites {self.elites} exceeds samples {self.samples}")
        if self.action_radius <= 0:
            raise ConfigError("action radius must be positive")


@dataclass(frozen=True)
class GoalEntry:
    feature_map: np.ndarray  # (S, D) goal encoding
    budget: int  # control steps before switching to the next goal
    effector_target: np.ndarray | None = None  # arena position, for logging only


@dataclass
class GoalSchedule:
    entries: tuple[GoalEntry, ...]

    def __post_init__(self):
        if not self.entries or any(e.budget <= 0 for e in self.entries):
            raise ConfigError("goal schedule needs positive step budgets")

    @property
    def total_steps(self) -> int:
        return sum(e.budget for e in self.entries)

    def active(self, step: int) -> tuple[int, GoalEntry]:
        acc = 0
        for i, entry in enumerate(self.entries):
            acc += entry.budget
            if step < acc:
                return i, entry
        raise ContractError(f"step {step} beyond schedule of {self.total_steps} steps")


@dataclass
class PlanResult:
    actions: np.ndarray  # (horizon, action_dim) chosen sequence
    best_energy_trace: list[float]  # best-so-far per iteration; nonincreasing
    mean: np.ndarray
    var: np.ndarray

    @property
    def first_action(self) -> np.ndarray:
        return self.actions[0]


def project_l1(action: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the L1 ball (soft-threshold construction)."""
    if radius <= 0:
        raise ConfigError("projection radius must be positive")
    v = np.asarray(action, dtype=np.float64)
    if np.abs(v).sum() <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - radius) / idx > 0)[0][-1]
    tau = (css[rho] - radius) / (rho + 1)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def project_l1_batch(actions: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise L1-ball projection of (..., d) action arrays."""
    flat = np.asarray(actions, dtype=np.float64).reshape(-1, actions.shape[-1])
    norms = np.abs(flat).sum(axis=1)
    out = flat.copy()
    over = norms > radius
    if over.any():
        v = flat[over]
        u = -np.sort(-np.abs(v), axis=1)
        css = np.cumsum(u, axis=1)
        idx = np.arange(1, v.shape[1] + 1)
        cond = u - (css - radius) / idx > 0
        rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
        tau = (css[np.arange(len(v)), rho] - radius) / (rho + 1)
        out[over] = np.sign(v) * np.maximum(np.abs(v) - tau[:, None], 0.0)
    return out.reshape(actions.shape)


def energies(model: ACPredictor, actions: np.ndarray, z_k: np.ndarray,
             s_k: np.ndarray, z_g: np.ndarray) -> np.ndarray:
    """Batched goal-mismatch energies for (M, T, d) candidate action sequences.

    Energy is the mean absolute difference between the T-step rollout's final
    feature map and the goal map; candidates are evaluated in index order.
    """
    m = actions.shape[0]
    z0 = np.broadcast_to(z_k, (m,) + z_k.shape).astype(np.float32)
    s0 = np.broadcast_to(s_k, (m,) + s_k.shape).astype(np.float32)
    with ad.no_grad():
        final = model.rollout(Tensor(np.ascontiguousarray(z0)),
                              np.ascontiguousarray(s0),
                              actions.astype(np.float32))
    diff = np.abs(final.data - z_g[None].astype(np.float32))
    return diff.mean(axis=(1, 2)).astype(np.float64)


def energy(model: ACPredictor, actions: np.ndarray, z_k: np.ndarray,
           s_k: np.ndarray, z_g: np.ndarray, radius: float | None = None) -> float:
    """Single-sequence energy; nonnegative, zero iff the rollout hits the goal."""
    actions = np.asarray(actions, dtype=np.float32)
    if actions.ndim == 1:
        actions = actions[None]
    if radius is not None:
        norms = np.abs(actions).sum(axis=-1)
        if (norms > radius + 1e-9).any():
            raise ContractError(f"action outside the L1 ball of radius {radius}")
    return float(energies(model, actions[None], z_k, s_k, z_g)[0])


def cem_plan(model: ACPredictor, z_k: np.ndarray, s_k: np.ndarray, z_g: np.ndarray,
             cfg: CEMConfig, rng: np.random.Generator,
             energy_fn=None) -> PlanResult:
    """Cross-entropy refinement of a per-coordinate Gaussian over action sequences.

    The distribution starts at zero mean and unit variance; every iteration
    draws ``samples`` candidates, projects each action onto the L1 ball,
    scores them, and refits mean/variance to the top-k. The final mean
    (projected) is the chosen sequence. ``energy_fn`` overrides the model
    energy (used by the analytic-optimum tests).
    """
    d = model.cfg.action_dim if model is not None else 3
    mean = np.zeros((cfg.horizon, d))
    var = np.ones((cfg.horizon, d))
    best = math.inf
    best_actions = mean.copy()
    trace: list[float] = []
    for _ in range(cfg.iterations):
        noise = rng.standard_normal((cfg.samples, cfg.horizon, d))
        cands = project_l1_batch(mean[None] + noise * np.sqrt(var)[None], cfg.action_radius)
        if energy_fn is not None:
            e = np.asarray([energy_fn(c) for c in cands], dtype=np.float64)
        else:
            e = energies(model, cands, z_k, s_k, z_g)
        if np.isnan(e).all():
            raise NumericError("every CEM candidate produced a NaN energy")
        order = np.argsort(e, kind="stable")  # ties broken by candidate index
        elite = cands[order[:cfg.elites]]
        if e[order[0]] < best:
            best = float(e[order[0]])
            best_actions = cands[order[0]].copy()
        trace.append(best)
        mean = elite.mean(axis=0)
        var = np.maximum(elite.var(axis=0), cfg.variance_floor)
    chosen = project_l1_batch(mean, cfg.action_radius)
    return PlanResult(actions=chosen, best_energy_trace=trace, mean=mean, var=var)


def mpc_episode(sim_state: gridsim.SimState, encoder: VideoEncoder, model: ACPredictor,
                schedule: GoalSchedule, cem_cfg: CEMConfig, sim_cfg: gridsim.SimConfig,
                rng: np.random.Generator) -> list[dict]:
    """Receding-horizon control: re-encode, plan, execute only the first action.

    Returns one log row per control step: step index, executed action, best
    planned energy, effector-goal distance, and the post-step state vector.
    """
    log: list[dict] = []
    state = sim_state
    for step in range(schedule.total_steps):
        goal_idx, goal = schedule.active(step)
        frame = gridsim.render(state, sim_cfg)
        with ad.no_grad():
            z_k = encoder.encode_frame(frame[None]).data[0]
        z_k = z_k.reshape(-1, z_k.shape[-1])
        plan = cem_plan(model, z_k, state.vector(), goal.feature_map, cem_cfg, rng)
        action = plan.first_action
        state = gridsim.step(state, action, sim_cfg)
        dist = math.nan
        if goal.effector_target is not None:
            dist = float(np.linalg.norm(state.effector - goal.effector_target))
        log.append({
            "step": step,
            "goal_index": goal_idx,
            "action": action.copy(),
            "energy": plan.best_energy_trace[-1],
            "distance": dist,
            "state": state.vector(),
        })
    return log


def sweep_energy(model: ACPredictor, z_k: np.ndarray, s_k: np.ndarray, z_g: np.ndarray,
                 radius: float = 0.075, points_per_axis: int = 11,
                 gripper_delta: float = 0.0) -> np.ndarray:
    """Horizon-1 energy over a (dx, dy) grid inside the L1 ball, gripper held.

    Returns rows (dx, dy, energy) in row-major grid order.
    """
    axis = np.linspace(-radius, radius, points_per_axis)
    rows = []
    actions = []
    for dy in axis:
        for dx in axis:
            if abs(dx) + abs(dy) + abs(gripper_delta) <= radius + 1e-12:
                actions.append([dx, dy, gripper_delta])
                rows.append((dx, dy))
    acts = np.asarray(actions, dtype=np.float32)[:, None, :]
    e = energies(model, acts, z_k, s_k, z_g)
    return np.asarray([(dx, dy, ev) for (dx, dy), ev in zip(rows, e)], dtype=np.float64)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class CalibrationReport:
    linear_map: np.ndarray  # (2, 2) least-squares solution
    rotation: np.ndarray  # nearest rotation, det +1
    angle_radians: float
    condition_number: float
    mean_abs_residual: float

    @property
    def angle_degrees(self) -> float:
        return math.degrees(self.angle_radians)


def calibrate(inferred: np.ndarray, real: np.ndarray) -> CalibrationReport:
    """Least-squares action-axis map and its nearest rotation.

    Solves min_W ||A W - B|| for A = inferred (n, 2), B = real (n, 2); the
    nearest rotation is U V^T from the SVD of W, with the determinant
    corrected to +1 by flipping the last singular direction.
    """
    a = np.asarray(inferred, dtype=np.float64)
    b = np.asarray(real, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2 or a.shape != b.shape or a.shape[0] < 2:
        raise ContractError(f"calibrate expects matching (n>=2, 2) arrays, got {a.shape}, {b.shape}")
    if np.linalg.matrix_rank(a) < 2:
        raise SingularMatrixError("inferred actions are collinear; least squares is singular")
    w, *_ = np.linalg.lstsq(a, b, rcond=None)
    u, s, vt = np.linalg.svd(w)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u = u.copy()
        u[:, -1] *= -1
        rot = u @ vt
    angle = math.atan2(rot[1, 0], rot[0, 0])
    cond = float(s[0] / s[1]) if s[1] > 0 else math.inf
    residual = float(np.abs(a @ w - b).mean())
    return CalibrationReport(linear_map=w, rotation=rot, angle_radians=angle,
                             condition_number=cond, mean_abs_residual=residual)
