"""Trajectory storage and task-dataset assembly on top of the simulator.

One checkpoint-format file per trajectory (frames u8, states/actions f32,
phases i64); a manifest CSV lists the files. Also builds the derived task
datasets: clip batches for pretraining, window batches for dynamics
training, the 4-class motion-direction probe task, and anticipation samples
labeled by the scripted policy's phase at the event frame.
"""

from __future__ import annotations

import os

import numpy as np

from . import autodiff as ad
from . import gridsim
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import VideoEncoder
from .errors import ContractError
from .gridsim import SimConfig, Trajectory

MOTION_CLASSES = ("right", "left", "down", "up")
_DIRECTIONS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def save_trajectory(traj: Trajectory, path: str) -> None:
    save_checkpoint({
        "frames": traj.frames,
        "states": traj.states,
        "actions": traj.actions,
        "phases": traj.phases,
        "meta": np.array([traj.target_object, traj.n_objects], dtype=np.int64),
    }, path)


def load_trajectory(path: str) -> Trajectory:
    rec = load_checkpoint(path)
    return Trajectory(frames=rec["frames"], states=rec["states"], actions=rec["actions"],
                      phases=rec["phases"], target_object=int(rec["meta"][0]),
                      n_objects=int(rec["meta"][1]))


def record_corpus(rng: np.random.Generator, episodes: int, length: int,
                  sim_cfg: SimConfig | None = None,
                  appearance_jitter: bool = True) -> list[Trajectory]:
    """Trajectory corpus with per-trajectory render-intensity variation."""
    sim_cfg = sim_cfg or SimConfig()
    out = []
    for _ in range(episodes):
        cfg = gridsim.jittered_config(rng, sim_cfg) if appearance_jitter else sim_cfg
        out.append(gridsim.record_trajectory(rng, length, cfg))
    return out


def write_dataset(out_dir: str, episodes: int, length: int, seed: int,
                  sim_cfg: SimConfig | None = None,
                  appearance_jitter: bool = True) -> str:
    """Record ``episodes`` trajectories plus a manifest; deterministic per seed."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    trajs = record_corpus(rng, episodes, length, sim_cfg, appearance_jitter)
    for i, traj in enumerate(trajs):
        name = f"traj_{i:05d}.vjw"
        save_trajectory(traj, os.path.join(out_dir, name))
        rows.append(f"{name},{length}")
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", encoding="utf-8") as f:
        f.write("file,length\n")
        for row in rows:
            f.write(row + "\n")
    return manifest


def load_dataset(data_dir: str) -> list[Trajectory]:
    manifest = os.path.join(data_dir, "manifest.csv")
    if not os.path.exists(manifest):
        raise ContractError(f"no manifest.csv under {data_dir}")
    trajs = []
    with open(manifest, "r", encoding="utf-8") as f:
        next(f)
        for line in f:
            name = line.strip().split(",")[0]
            if name:
                trajs.append(load_trajectory(os.path.join(data_dir, name)))
    return trajs


def sample_clip_batch(trajs: list[Trajectory], rng: np.random.Generator, batch: int,
                      frames: int, out_size: tuple[int, int],
                      scale_range=(0.3, 1.0), aspect_range=(0.75, 1.35)) -> np.ndarray:
    """Augmented clip batch (B, T, h, w) in [0,1] for pretraining."""
    clips = np.empty((batch, frames, out_size[0], out_size[1]), dtype=np.float32)
    for b in range(batch):
        traj = trajs[rng.integers(len(trajs))]
        start = int(rng.integers(0, len(traj.frames) - frames + 1))
        window = gridsim.make_clip(traj, start, frames)
        clips[b] = gridsim.augment(window.frames, rng, out_size, scale_range, aspect_range)
    return clips


def sample_window_batch(trajs: list[Trajectory], rng: np.random.Generator, batch: int,
                        frames: int, feature_cache: list[np.ndarray] | None = None):
    """(frames-or-features, states, actions) windows for dynamics training."""
    first = None
    states = np.empty((batch, frames, 3), dtype=np.float32)
    items = []
    for b in range(batch):
        ti = int(rng.integers(len(trajs)))
        traj = trajs[ti]
        start = int(rng.integers(0, len(traj.frames) - frames + 1))
        window = gridsim.make_clip(traj, start, frames)
        states[b] = window.states
        if feature_cache is None:
            items.append(window.frames.astype(np.float32) / 255.0)
        else:
            items.append(feature_cache[ti][start:start + frames])
    stacked = np.stack(items)
    actions = states[:, 1:] - states[:, :-1]
    return stacked, states, actions


def make_motion_dataset(rng: np.random.Generator, n_clips: int, frames: int = 8,
                        sim_cfg: SimConfig | None = None, speed_range=(0.025, 0.05)):
    """Scripted straight-line clips labeled by dominant motion direction."""
    sim_cfg = sim_cfg or SimConfig()
    clips = np.empty((n_clips, frames, sim_cfg.height, sim_cfg.width), dtype=np.uint8)
    labels = np.empty(n_clips, dtype=np.int64)
    groups = np.arange(n_clips, dtype=np.int64)
    for i in range(n_clips):
        label = int(rng.integers(4))
        speed = rng.uniform(*speed_range)
        state = gridsim.initial_state(rng, n_objects=int(rng.integers(1, 3)))
        state.effector = rng.uniform(0.35, 0.65, size=2)
        direction = _DIRECTIONS[label]
        for k in range(frames):
            clips[i, k] = gridsim.render(state, sim_cfg)
            jitter = rng.normal(0.0, 0.003, size=2)
            action = np.concatenate([direction * speed + jitter, [0.0]])
            state = gridsim.step(state, action, sim_cfg)
        labels[i] = label
    return clips, labels, groups


def make_anticipation_samples(trajs: list[Trajectory], context_frames: int,
                              gap_frames: int):
    """(clips, (phase, object, joint) labels, groups) for the anticipation task.

    The event frame sits ``gap_frames`` after the context window; its scripted
    policy phase and the pursued object id are the labels.
    """
    clips, phases, objects, groups = [], [], [], []
    for ti, traj in enumerate(trajs):
        max_start = len(traj.frames) - context_frames - gap_frames
        for start in range(0, max_start + 1, context_frames):
            event = start + context_frames + gap_frames - 1
            clips.append(traj.frames[start:start + context_frames])
            phases.append(traj.phases[event])
            objects.append(traj.target_object)
            groups.append(ti)
    phases = np.asarray(phases, dtype=np.int64)
    objects = np.asarray(objects, dtype=np.int64)
    n_obj = max(int(objects.max()) + 1, 1)
    joint = phases * n_obj + objects
    return (np.stack(clips), (phases, objects, joint), np.asarray(groups, dtype=np.int64))


def position_channels(positions: np.ndarray, per_axis: int = 4) -> np.ndarray:
    """Fixed sinusoidal encoding of integer (t, r, c) token coordinates.

    The encoder's attention is relative-position only, so its output tokens
    carry no absolute coordinates; probe inputs bake them in explicitly
    (the probes themselves stay permutation-invariant).
    """
    pos = np.asarray(positions, dtype=np.float64)
    chans = []
    freqs = 0.5 ** np.arange(per_axis // 2)
    for axis in range(3):
        ang = pos[:, axis:axis + 1] * freqs[None, :]
        chans.extend([np.sin(ang), np.cos(ang)])
    return np.concatenate(chans, axis=1).astype(np.float32)


def encode_clips(encoder: VideoEncoder, clips: np.ndarray, batch: int = 32,
                 with_positions: bool = False) -> np.ndarray:
    """Frozen per-clip token features (N, n_tokens, D), computed in chunks.

    ``with_positions`` appends the sinusoidal coordinate channels each token's
    grid position defines, for the position-aware probe tasks.
    """
    arr = np.asarray(clips)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    cfg = encoder.cfg.with_input(arr.shape[1], arr.shape[2], arr.shape[3])
    out = []
    pos_feat = None
    with ad.no_grad():
        for s in range(0, len(arr), batch):
            feats, positions = encoder.encode(arr[s:s + batch], cfg=cfg)
            data = feats.data
            if with_positions:
                if pos_feat is None:
                    pos_feat = position_channels(positions)
                tiled = np.broadcast_to(pos_feat, (len(data),) + pos_feat.shape)
                data = np.concatenate([data, tiled], axis=2)
            out.append(data)
    return np.concatenate(out, axis=0)
