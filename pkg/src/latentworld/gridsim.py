"""Deterministic 2D planar-gripper environment.

State is (x, y, gripper) in [0,1]^2 x [0,1]; actions are state deltas. A
gripper closing (crossing 0.5 upward) within grasp radius of an object picks
it up; the held object snaps to and tracks the effector until release.
Rendering is a deterministic grayscale raster: objects are filled squares,
the effector is a cross whose intensity encodes the gripper state.

The scripted recording policy mixes random walks, approaches, grasps, and
transports, and deliberately keeps its failures (missed grasps, wall bumps)
in the data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ContractError

# scripted-policy phases; recorded per step for the anticipation task
PHASE_WANDER = 0
PHASE_APPROACH = 1
PHASE_GRASP = 2
PHASE_TRANSPORT = 3
PHASE_RELEASE = 4
N_PHASES = 5


@dataclass(frozen=True)
class SimConfig:
    height: int = 32
    width: int = 32
    object_radius: float = 0.05
    grasp_radius: float = 0.08
    frame_rate: float = 4.0
    background: float = 0.15
    object_intensity: float = 0.6
    cross_arm: int = 2

    def __post_init__(self):
        if self.grasp_radius <= 0 or self.frame_rate <= 0:
            raise ContractError("grasp_radius and frame_rate must be positive")


@dataclass
class SimState:
    effector: np.ndarray  # (2,) in [0,1]^2
    gripper: float  # 0 open .. 1 closed
    objects: np.ndarray  # (K, 2)
    held: int | None = None

    def vector(self) -> np.ndarray:
        return np.array([self.effector[0], self.effector[1], self.gripper], dtype=np.float32)


@dataclass
class Trajectory:
    frames: np.ndarray  # (T, H, W) uint8
    states: np.ndarray  # (T, 3) float32
    actions: np.ndarray  # (T-1, 3) float32, realized deltas s_{k+1} - s_k
    phases: np.ndarray  # (T,) int64 scripted-policy phase per step
    target_object: int  # index of the object the policy pursued
    n_objects: int


def initial_state(rng: np.random.Generator, n_objects: int = 2) -> SimState:
    return SimState(
        effector=rng.uniform(0.15, 0.85, size=2),
        gripper=0.0,
        objects=rng.uniform(0.15, 0.85, size=(n_objects, 2)),
        held=None,
    )


def step(state: SimState, action: np.ndarray, cfg: SimConfig) -> SimState:
    """Advance one tick; coordinates clip to [0,1], grasp/release on 0.5 crossings."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (3,):
        raise ContractError(f"action must have shape (3,), got {action.shape}")
    eff = np.clip(state.effector + action[:2], 0.0, 1.0)
    grip = float(np.clip(state.gripper + action[2], 0.0, 1.0))
    objects = state.objects.copy()
    held = state.held

    if held is not None:
        objects[held] = np.clip(objects[held] + (eff - state.effector), 0.0, 1.0)

    if state.gripper <= 0.5 < grip and held is None and len(objects):
        dists = np.linalg.norm(objects - eff[None, :], axis=1)
        nearest = int(np.argmin(dists))
        if dists[nearest] <= cfg.grasp_radius:
            held = nearest
            objects[held] = eff.copy()  # snap to the gripper center
    elif state.gripper > 0.5 >= grip:
        held = None

    return SimState(effector=eff, gripper=grip, objects=objects, held=held)


def _px(v: float, size: int) -> int:
    return int(round(float(v) * (size - 1)))


def render(state: SimState, cfg: SimConfig) -> np.ndarray:
    """Deterministic u8 raster; identical states produce identical frames."""
    frame = np.full((cfg.height, cfg.width), int(round(cfg.background * 255)), dtype=np.uint8)
    half = max(1, int(round(cfg.object_radius * min(cfg.height, cfg.width))))
    obj_val = int(round(cfg.object_intensity * 255))
    for ox, oy in state.objects:
        px, py = _px(ox, cfg.width), _px(oy, cfg.height)
        frame[max(0, py - half):py + half + 1, max(0, px - half):px + half + 1] = obj_val
    ex, ey = state.effector
    px, py = _px(ex, cfg.width), _px(ey, cfg.height)
    cross_val = int(round(255 * (0.75 + 0.25 * state.gripper)))
    arm = cfg.cross_arm
    frame[py, max(0, px - arm):px + arm + 1] = cross_val
    frame[max(0, py - arm):py + arm + 1, px] = cross_val
    return frame


def cross_pixel_indices(state: SimState, cfg: SimConfig):
    """Analytic pixel index set of the effector cross (test oracle helper)."""
    px, py = _px(state.effector[0], cfg.width), _px(state.effector[1], cfg.height)
    arm = cfg.cross_arm
    pts = {(py, x) for x in range(max(0, px - arm), min(cfg.width, px + arm + 1))}
    pts |= {(y, px) for y in range(max(0, py - arm), min(cfg.height, py + arm + 1))}
    return pts


class ScriptedPolicy:
    """Stochastic phase machine: wander, approach, grasp, transport, release."""

    def __init__(self, rng: np.random.Generator, max_step: float = 0.06):
        self.rng = rng
        self.max_step = max_step
        self.phase = PHASE_WANDER
        self.ticks = int(rng.integers(2, 6))
        self.target = 0
        self.waypoint = rng.uniform(0.15, 0.85, size=2)
        self.premature = False

    def _toward(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        delta = dst - src
        norm = float(np.abs(delta).sum())
        if norm > self.max_step:
            delta = delta * (self.max_step / norm)
        return delta

    def __call__(self, state: SimState) -> np.ndarray:
        rng = self.rng
        a = np.zeros(3)
        if self.phase == PHASE_WANDER:
            a[:2] = rng.uniform(-self.max_step / 2, self.max_step / 2, size=2)
            a[2] = float(np.clip(-state.gripper, -0.3, 0.0))
            self.ticks -= 1
            if self.ticks <= 0 and len(state.objects):
                self.phase = PHASE_APPROACH
                self.target = int(rng.integers(len(state.objects)))
                self.premature = rng.random() < 0.25
        elif self.phase == PHASE_APPROACH:
            goal = state.objects[self.target]
            a[:2] = self._toward(state.effector, goal)
            dist = float(np.linalg.norm(goal - state.effector))
            trigger = 0.10 if self.premature else 0.04
            if dist < trigger:
                self.phase = PHASE_GRASP
        elif self.phase == PHASE_GRASP:
            a[2] = 0.6  # close; misses count as failures and stay in the data
            if state.gripper + a[2] > 0.5:
                self.phase = PHASE_TRANSPORT
                self.ticks = int(rng.integers(4, 9))
                self.waypoint = rng.uniform(0.15, 0.85, size=2)
        elif self.phase == PHASE_TRANSPORT:
            a[:2] = self._toward(state.effector, self.waypoint)
            self.ticks -= 1
            if self.ticks <= 0:
                self.phase = PHASE_RELEASE
        elif self.phase == PHASE_RELEASE:
            a[2] = -0.6
            if state.gripper + a[2] <= 0.5:
                self.phase = PHASE_WANDER
                self.ticks = int(rng.integers(2, 6))
        return a


def jittered_config(rng: np.random.Generator, cfg: SimConfig) -> SimConfig:
    """Per-trajectory appearance draw: lighting-like intensity variation.

    Rendering stays deterministic given (state, config); diversity lives in
    the dataset, which keeps clip-level appearance information for the
    representation to retain.
    """
    return replace(cfg,
                   background=float(rng.uniform(0.08, 0.25)),
                   object_intensity=float(rng.uniform(0.45, 0.72)))


def record_trajectory(rng: np.random.Generator, length: int,
                      cfg: SimConfig | None = None, policy=None,
                      n_objects: int = 2) -> Trajectory:
    """Roll the scripted policy for ``length`` frames; deterministic per rng."""
    if length < 2:
        raise ContractError(f"trajectory length must be >= 2, got {length}")
    cfg = cfg or SimConfig()
    state = initial_state(rng, n_objects)
    if policy is None:
        policy = ScriptedPolicy(rng)
    frames = np.empty((length, cfg.height, cfg.width), dtype=np.uint8)
    states = np.empty((length, 3), dtype=np.float32)
    phases = np.empty(length, dtype=np.int64)
    frames[0] = render(state, cfg)
    states[0] = state.vector()
    phases[0] = policy.phase
    for k in range(1, length):
        action = policy(state)
        state = step(state, action, cfg)
        frames[k] = render(state, cfg)
        states[k] = state.vector()
        phases[k] = policy.phase
    actions = states[1:] - states[:-1]
    return Trajectory(frames=frames, states=states, actions=actions, phases=phases,
                      target_object=policy.target, n_objects=n_objects)


@dataclass
class ClipWindow:
    frames: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    boundary_contact: bool  # a coordinate sat on the arena wall inside the window


def make_clip(traj: Trajectory, start: int, n_frames: int) -> ClipWindow:
    """Contiguous window with actions recomputed as adjacent state differences."""
    if start < 0 or start + n_frames > len(traj.frames):
        raise ContractError(
            f"window [{start}, {start + n_frames}) overflows trajectory of length {len(traj.frames)}"
        )
    states = traj.states[start:start + n_frames]
    touched = bool(np.any(states[:, :2] <= 0.0) or np.any(states[:, :2] >= 1.0))
    return ClipWindow(
        frames=traj.frames[start:start + n_frames],
        states=states,
        actions=states[1:] - states[:-1],
        boundary_contact=touched,
    )


def sample_crop_rect(rng: np.random.Generator, h: int, w: int,
                     scale_range: tuple[float, float] = (0.3, 1.0),
                     aspect_range: tuple[float, float] = (0.75, 1.35)):
    """Draw (y0, x0, crop_h, crop_w): aspect = width/height in ``aspect_range``,
    area fraction in ``scale_range``; rects that would not fit are redrawn."""
    for _ in range(64):
        area = rng.uniform(*scale_range) * h * w
        aspect = rng.uniform(*aspect_range)
        crop_h = float(np.sqrt(area / aspect))
        crop_w = float(np.sqrt(area * aspect))
        if crop_h <= h and crop_w <= w:
            break
    else:
        crop_h, crop_w = float(h), float(w)
    y0 = rng.uniform(0.0, h - crop_h)
    x0 = rng.uniform(0.0, w - crop_w)
    return y0, x0, crop_h, crop_w


def augment(clip: np.ndarray, rng: np.random.Generator, out_size: tuple[int, int],
            scale_range: tuple[float, float] = (0.3, 1.0),
            aspect_range: tuple[float, float] = (0.75, 1.35)) -> np.ndarray:
    """Random-resize-crop: one rect applied to every frame, bilinear to ``out_size``."""
    frames = np.asarray(clip)
    if frames.dtype == np.uint8:
        frames = frames.astype(np.float32) / 255.0
    t, h, w = frames.shape[:3]
    y0, x0, crop_h, crop_w = sample_crop_rect(rng, h, w, scale_range, aspect_range)
    out = np.empty((t, out_size[0], out_size[1]), dtype=np.float32)
    for k in range(t):
        out[k] = kernels.bilinear_resize(frames[k], out_size[0], out_size[1],
                                         y0, x0, y0 + crop_h, x0 + crop_w)
    return out
