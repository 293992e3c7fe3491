"""Command-line entry points tying the modules into reproducible runs.

Every command is a pure function of (config file, input files, seed): outputs
are deterministic, the fully resolved configuration is written next to the
artifacts, and failures map to distinct exit codes (2 config, 3 I/O,
4 numeric, 5 contract).
"""

from __future__ import annotations

import argparse
import math
import os
import sys


def _apply_thread_limit() -> None:
    n = os.environ.get("LATENTWORLD_THREADS")
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(int(n))
    except Exception:
        pass


def _load_config(path: str | None):
    from .io import Config

    return Config.load(path) if path else Config()


def _write_resolved(cfg, out_dir: str) -> None:
    with open(os.path.join(out_dir, "config_resolved.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.dump_resolved())


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def _sim_config(cfg):
    from .gridsim import SimConfig

    return SimConfig(height=cfg.get_int("sim.height", 32),
                     width=cfg.get_int("sim.width", 32),
                     object_radius=cfg.get_float("sim.object_radius", 0.05),
                     grasp_radius=cfg.get_float("sim.grasp_radius", 0.08),
                     frame_rate=cfg.get_float("sim.frame_rate", 4.0))

_SIM_KEYS = {"sim.height", "sim.width", "sim.object_radius", "sim.grasp_radius",
             "sim.frame_rate"}


def cmd_gen_data(args) -> int:
    from .dataset import write_dataset

    cfg = _load_config(args.config)
    cfg.require_known(_SIM_KEYS)
    sim_cfg = _sim_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(args.out, args.episodes, args.length, args.seed, sim_cfg)
    _write_resolved(cfg, args.out)
    print(f"wrote {args.episodes} trajectories to {args.out}")
    return 0


_PRETRAIN_KEYS = _SIM_KEYS | {
    "encoder.embed_dim", "encoder.depth", "encoder.heads", "encoder.tubelet_t",
    "encoder.patch", "encoder.mlp_ratio",
    "pretrain.warmup_steps", "pretrain.constant_steps", "pretrain.decay_steps",
    "pretrain.start_lr", "pretrain.peak_lr", "pretrain.final_lr",
    "pretrain.weight_decay", "pretrain.ema", "pretrain.batch_size",
    "pretrain.frames", "pretrain.resolution", "pretrain.boost_frames",
    "pretrain.boost_resolution", "pretrain.mask_blocks", "pretrain.collapse_every",
    "pretrain.probe_clips", "pretrain.predictor_dim", "pretrain.predictor_depth",
    "pretrain.predictor_heads",
}


def build_pretrainer(cfg, rng):
    from .encoder import EncoderConfig
    from .optim import LrSchedule
    from .pretrain import JepaPredictorConfig, PretrainConfig, Pretrainer, Stage

    frames = cfg.get_int("pretrain.frames", 8)
    res = cfg.get_int("pretrain.resolution", 32)
    enc_cfg = EncoderConfig(
        frames=frames, height=res, width=res,
        tubelet_t=cfg.get_int("encoder.tubelet_t", 2),
        patch=cfg.get_int("encoder.patch", 4),
        embed_dim=cfg.get_int("encoder.embed_dim", 48),
        depth=cfg.get_int("encoder.depth", 4),
        heads=cfg.get_int("encoder.heads", 4),
        mlp_ratio=cfg.get_float("encoder.mlp_ratio", 4.0),
    )
    schedule = LrSchedule(
        start_lr=cfg.get_float("pretrain.start_lr", 1e-4),
        peak_lr=cfg.get_float("pretrain.peak_lr", 5.25e-4),
        final_lr=cfg.get_float("pretrain.final_lr", 1e-6),
        warmup=cfg.get_int("pretrain.warmup_steps", 200),
        constant=cfg.get_int("pretrain.constant_steps", 1300),
        decay=cfg.get_int("pretrain.decay_steps", 500),
    )
    stages = [Stage(0, frames, res)]
    boost_f = cfg.get_int("pretrain.boost_frames", 0)
    boost_r = cfg.get_int("pretrain.boost_resolution", 0)
    if boost_f and boost_r:
        stages.append(Stage(schedule.warmup + schedule.constant, boost_f, boost_r))
    pre_cfg = PretrainConfig(
        ema_m=cfg.get_float("pretrain.ema", 0.998),
        weight_decay=cfg.get_float("pretrain.weight_decay", 0.04),
        schedule=schedule,
        batch_size=cfg.get_int("pretrain.batch_size", 8),
        n_mask_blocks=cfg.get_int("pretrain.mask_blocks", 2),
        stages=tuple(stages),
    )
    pred_cfg = JepaPredictorConfig(dim=cfg.get_int("pretrain.predictor_dim", 32),
                                   depth=cfg.get_int("pretrain.predictor_depth", 2),
                                   heads=cfg.get_int("pretrain.predictor_heads", 4))
    return Pretrainer(enc_cfg, pre_cfg, rng, pred_cfg)


def run_pretraining(trainer, trajs, rng, metrics=None, collapse_every: int = 50,
                    probe_clips: int = 32):
    """Drive the pretrainer over a trajectory dataset; returns the loss history."""
    from .dataset import sample_clip_batch
    from .pretrain import collapse_metrics

    total = trainer.cfg.schedule.total
    history = []
    mean_std, mean_cos = math.nan, math.nan
    probe_batch = None
    for step in range(total):
        frames, res = trainer.stage_at(step)
        clips = sample_clip_batch(trajs, rng, trainer.cfg.batch_size, frames, (res, res))
        m = trainer.pretrain_step(clips)
        if step % collapse_every == 0 or step == total - 1:
            if probe_batch is None or probe_batch.shape[1:] != (frames, res, res):
                probe_batch = sample_clip_batch(trajs, rng, probe_clips, frames, (res, res))
            pooled = trainer.teacher_pooled(probe_batch, trainer.stage_cfg(step))
            mean_std, mean_cos = collapse_metrics(pooled)
        m["mean_std"], m["mean_cosine"] = mean_std, mean_cos
        history.append(m)
        if metrics is not None:
            metrics.append(m)
    return history


def cmd_pretrain(args) -> int:
    import numpy as np

    from .dataset import load_dataset
    from .io import MetricsLog
    from .persist import save_encoder

    cfg = _load_config(args.config)
    cfg.require_known(_PRETRAIN_KEYS)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    trainer = build_pretrainer(cfg, rng)
    trajs = load_dataset(args.data)
    metrics = MetricsLog(os.path.join(args.out, "pretrain_metrics.csv"),
                         ["step", "loss", "lr", "grad_norm", "mean_std", "mean_cosine"])
    run_pretraining(trainer, trajs, rng, metrics,
                    collapse_every=cfg.get_int("pretrain.collapse_every", 50),
                    probe_clips=cfg.get_int("pretrain.probe_clips", 32))
    extra = {f"teacher.{k}": v for k, v in trainer.teacher.encoder.state_dict().items()}
    save_encoder(trainer.encoder, os.path.join(args.out, "encoder.vjw"), extra=extra)
    _write_resolved(cfg, args.out)
    print(f"saved encoder checkpoint to {os.path.join(args.out, 'encoder.vjw')}")
    return 0


_AC_KEYS = {
    "ac.width", "ac.depth", "ac.heads", "ac.context_frames", "ac.mlp_ratio",
    "ac.warmup_steps", "ac.constant_steps", "ac.decay_steps",
    "ac.start_lr", "ac.peak_lr", "ac.final_lr", "ac.weight_decay", "ac.batch_size",
}


def build_ac_trainer(cfg, encoder, rng):
    from .acmodel import ACConfig, ACTrainConfig, ACTrainer
    from .optim import LrSchedule

    ac_cfg = ACConfig(width=cfg.get_int("ac.width", 64),
                      depth=cfg.get_int("ac.depth", 4),
                      heads=cfg.get_int("ac.heads", 4),
                      context_frames=cfg.get_int("ac.context_frames", 8),
                      mlp_ratio=cfg.get_float("ac.mlp_ratio", 4.0))
    schedule = LrSchedule(
        start_lr=cfg.get_float("ac.start_lr", 7.5e-5),
        peak_lr=cfg.get_float("ac.peak_lr", 4.25e-4),
        final_lr=cfg.get_float("ac.final_lr", 0.0),
        warmup=cfg.get_int("ac.warmup_steps", 300),
        constant=cfg.get_int("ac.constant_steps", 2400),
        decay=cfg.get_int("ac.decay_steps", 300),
    )
    train_cfg = ACTrainConfig(schedule=schedule,
                              weight_decay=cfg.get_float("ac.weight_decay", 0.04),
                              batch_size=cfg.get_int("ac.batch_size", 2))
    return ACTrainer(encoder, ac_cfg, train_cfg, rng)


def run_ac_training(trainer, trajs, rng, metrics=None):
    from .dataset import sample_window_batch

    cache = trainer.precompute_features(trajs)
    history = []
    for _ in range(trainer.train_cfg.schedule.total):
        feats, states, actions = sample_window_batch(
            trajs, rng, trainer.train_cfg.batch_size,
            trainer.cfg.context_frames, feature_cache=cache)
        m = trainer.train_ac_step_cached(feats, states, actions)
        history.append(m)
        if metrics is not None:
            metrics.append(m)
    return history


def cmd_train_ac(args) -> int:
    import numpy as np

    from .dataset import load_dataset
    from .io import MetricsLog
    from .persist import load_encoder, save_ac

    cfg = _load_config(args.config)
    cfg.require_known(_AC_KEYS)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    encoder = load_encoder(args.encoder)
    trainer = build_ac_trainer(cfg, encoder, rng)
    trajs = load_dataset(args.data)
    metrics = MetricsLog(os.path.join(args.out, "ac_metrics.csv"),
                         ["step", "loss", "tf", "rollout", "lr", "grad_norm"])
    run_ac_training(trainer, trajs, rng, metrics)
    save_ac(trainer.model, os.path.join(args.out, "ac.vjw"))
    _write_resolved(cfg, args.out)
    print(f"saved dynamics model to {os.path.join(args.out, 'ac.vjw')}")
    return 0


_PROBE_KEYS = _SIM_KEYS | {"probe.clips", "probe.frames", "probe.epochs",
                           "probe.batch_size", "probe.lrs", "probe.wds", "probe.heads"}


def cmd_probe(args) -> int:
    import numpy as np

    from .dataset import encode_clips, make_motion_dataset
    from .io import MetricsLog
    from .persist import load_encoder
    from .probes import train_probe

    cfg = _load_config(args.config)
    cfg.require_known(_PROBE_KEYS)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    encoder = load_encoder(args.encoder)
    sim_cfg = _sim_config(cfg)
    clips, labels, groups = make_motion_dataset(rng, cfg.get_int("probe.clips", 600),
                                                cfg.get_int("probe.frames", 8), sim_cfg)
    feats = encode_clips(encoder, clips)
    result = train_probe(feats, labels, groups, rng,
                         lrs=_floats(cfg.get_str("probe.lrs", "5e-3,3e-3,1e-3,3e-4,1e-4")),
                         wds=_floats(cfg.get_str("probe.wds", "0.01")),
                         epochs=cfg.get_int("probe.epochs", 3),
                         batch_size=cfg.get_int("probe.batch_size", 32))
    table = MetricsLog(os.path.join(args.out, "probe_accuracy.csv"),
                       ["lr", "wd", "val_accuracy"])
    for row in result.table:
        table.append(row)
    _write_resolved(cfg, args.out)
    print(f"best motion-direction accuracy: {result.accuracy:.4f}")
    return 0


_PLAN_KEYS = _SIM_KEYS | {"plan.episodes", "plan.steps", "plan.samples", "plan.iterations",
                          "plan.elites", "plan.horizon", "plan.radius",
                          "plan.min_goal_dist", "plan.max_goal_dist", "plan.dump_frames"}


def make_reach_task(rng, sim_cfg, min_dist: float, max_dist: float):
    """Start state plus a goal state sharing the scene, a reach apart."""
    import numpy as np

    from . import gridsim

    state = gridsim.initial_state(rng, n_objects=2)
    for _ in range(1000):
        goal_pos = rng.uniform(0.15, 0.85, size=2)
        d = float(np.linalg.norm(goal_pos - state.effector))
        if min_dist <= d <= max_dist:
            break
    goal_state = gridsim.SimState(effector=goal_pos, gripper=state.gripper,
                                  objects=state.objects.copy(), held=None)
    return state, goal_state


def cmd_plan(args) -> int:
    import numpy as np

    from . import autodiff as ad
    from . import gridsim
    from .io import MetricsLog, write_pgm
    from .persist import load_ac, load_encoder
    from .planner import CEMConfig, GoalEntry, GoalSchedule, mpc_episode

    cfg = _load_config(args.config)
    cfg.require_known(_PLAN_KEYS)
    os.makedirs(args.out, exist_ok=True)
    encoder = load_encoder(args.encoder)
    model = load_ac(args.ac)
    sim_cfg = _sim_config(cfg)
    cem = CEMConfig(samples=cfg.get_int("plan.samples", 800),
                    iterations=cfg.get_int("plan.iterations", 10),
                    elites=cfg.get_int("plan.elites", 10),
                    horizon=cfg.get_int("plan.horizon", 1),
                    action_radius=cfg.get_float("plan.radius", 0.075))
    episodes = cfg.get_int("plan.episodes", 10)
    steps = cfg.get_int("plan.steps", 20)
    dump = cfg.get_bool("plan.dump_frames", False)
    log = MetricsLog(os.path.join(args.out, "episodes.csv"),
                     ["episode", "step", "goal_index", "ax", "ay", "ag", "energy", "distance"])
    finals = []
    for ep in range(episodes):
        rng = np.random.default_rng(args.seed + ep)
        state, goal_state = make_reach_task(rng, sim_cfg,
                                            cfg.get_float("plan.min_goal_dist", 0.25),
                                            cfg.get_float("plan.max_goal_dist", 0.5))
        goal_frame = gridsim.render(goal_state, sim_cfg)
        with ad.no_grad():
            z_g = encoder.encode_frame(goal_frame[None]).data[0]
        z_g = z_g.reshape(-1, z_g.shape[-1])
        schedule = GoalSchedule(entries=(GoalEntry(z_g, steps, goal_state.effector),))
        rows = mpc_episode(state, encoder, model, schedule, cem, sim_cfg, rng)
        for row in rows:
            log.append({"episode": ep, "step": row["step"], "goal_index": row["goal_index"],
                        "ax": row["action"][0], "ay": row["action"][1], "ag": row["action"][2],
                        "energy": row["energy"], "distance": row["distance"]})
            if dump:
                cur = gridsim.SimState(effector=row["state"][:2], gripper=row["state"][2],
                                       objects=goal_state.objects, held=None)
                write_pgm(os.path.join(args.out, f"ep{ep:02d}_step{row['step']:03d}.pgm"),
                          gridsim.render(cur, sim_cfg))
        finals.append(rows[-1]["distance"])
        print(f"episode {ep}: final distance {finals[-1]:.4f}")
    print(f"success (<= 0.05): {sum(1 for d in finals if d <= 0.05)}/{episodes}")
    _write_resolved(cfg, args.out)
    return 0


_SWEEP_KEYS = _SIM_KEYS | {"sweep.radius", "sweep.points", "sweep.cases"}


def cmd_sweep_energy(args) -> int:
    import numpy as np

    from . import autodiff as ad
    from . import gridsim
    from .io import MetricsLog
    from .persist import load_ac, load_encoder
    from .planner import project_l1, sweep_energy

    cfg = _load_config(args.config)
    cfg.require_known(_SWEEP_KEYS)
    os.makedirs(args.out, exist_ok=True)
    encoder = load_encoder(args.encoder)
    model = load_ac(args.ac)
    sim_cfg = _sim_config(cfg)
    radius = cfg.get_float("sweep.radius", 0.075)
    points = cfg.get_int("sweep.points", 11)
    log = MetricsLog(os.path.join(args.out, "energy_landscape.csv"),
                     ["case", "dx", "dy", "energy"])
    for case in range(cfg.get_int("sweep.cases", 1)):
        rng = np.random.default_rng(args.seed + case)
        state = gridsim.initial_state(rng, n_objects=2)
        planted = project_l1(rng.uniform(-radius, radius, size=3) * np.array([1, 1, 0]),
                             radius * 0.9)
        nxt = gridsim.step(state, planted, sim_cfg)
        with ad.no_grad():
            z_k = encoder.encode_frame(gridsim.render(state, sim_cfg)[None]).data[0]
            z_g = encoder.encode_frame(gridsim.render(nxt, sim_cfg)[None]).data[0]
        d = z_k.shape[-1]
        grid = sweep_energy(model, z_k.reshape(-1, d), state.vector(),
                            z_g.reshape(-1, d), radius=radius, points_per_axis=points)
        for dx, dy, e in grid:
            log.append({"case": case, "dx": dx, "dy": dy, "energy": e})
        best = grid[np.argmin(grid[:, 2])]
        print(f"case {case}: planted ({planted[0]:+.4f}, {planted[1]:+.4f}), "
              f"argmin ({best[0]:+.4f}, {best[1]:+.4f})")
    _write_resolved(cfg, args.out)
    return 0


_CAL_KEYS = {"calibrate.mode", "calibrate.n", "calibrate.noise", "calibrate.samples",
             "calibrate.iterations", "calibrate.transitions"}


def cmd_calibrate(args) -> int:
    import numpy as np

    from .io import MetricsLog
    from .planner import calibrate, rotation_matrix

    cfg = _load_config(args.config)
    cfg.require_known(_CAL_KEYS)
    os.makedirs(args.out, exist_ok=True)
    mode = cfg.get_str("calibrate.mode", "planted")
    n = cfg.get_int("calibrate.n", 64)
    rng = np.random.default_rng(args.seed)
    log = MetricsLog(os.path.join(args.out, "calibration.csv"),
                     ["angle_deg", "scale", "recovered_deg", "condition_number",
                      "mean_abs_residual"])
    if mode == "planted":
        noise = cfg.get_float("calibrate.noise", 0.0)
        for deg in (-45, -17, -5, 5, 17, 45):
            for scale in (1.0, 1.5):
                a = rng.standard_normal((n, 2))
                b = a @ rotation_matrix(math.radians(deg)) * scale
                b = b + noise * rng.standard_normal((n, 2))
                rep = calibrate(a, b)
                log.append({"angle_deg": deg, "scale": scale,
                            "recovered_deg": rep.angle_degrees,
                            "condition_number": rep.condition_number,
                            "mean_abs_residual": rep.mean_abs_residual})
                print(f"planted {deg:+d} deg x{scale}: recovered {rep.angle_degrees:+.6f} deg "
                      f"(cond {rep.condition_number:.3f})")
    elif mode == "inferred":
        rep = _calibrate_inferred(args, cfg, rng, log)
        print(f"inferred-axis rotation error: {rep.angle_degrees:+.3f} deg "
              f"(cond {rep.condition_number:.3f}, residual {rep.mean_abs_residual:.4f})")
    else:
        from .errors import ConfigError

        raise ConfigError(f"calibrate.mode must be planted or inferred, got {mode}")
    _write_resolved(cfg, args.out)
    return 0


def _calibrate_inferred(args, cfg, rng, log):
    """App-style axis check: CEM-infer actions for random transitions, then
    regress inferred onto executed actions."""
    import numpy as np

    from . import autodiff as ad
    from . import gridsim
    from .errors import ConfigError
    from .persist import load_ac, load_encoder
    from .planner import CEMConfig, calibrate, cem_plan, project_l1

    if not (args.encoder and args.ac):
        raise ConfigError("inferred calibration needs --encoder and --ac checkpoints")
    encoder = load_encoder(args.encoder)
    model = load_ac(args.ac)
    sim_cfg = _sim_config(_load_config(None))
    n = cfg.get_int("calibrate.transitions", 40)
    cem = CEMConfig(samples=cfg.get_int("calibrate.samples", 200),
                    iterations=cfg.get_int("calibrate.iterations", 6))
    state = gridsim.initial_state(rng, n_objects=2)
    inferred, real = [], []
    for _ in range(n):
        action = project_l1(np.array([*rng.uniform(-0.075, 0.075, 2), 0.0]), 0.075)
        nxt = gridsim.step(state, action, sim_cfg)
        with ad.no_grad():
            z_k = encoder.encode_frame(gridsim.render(state, sim_cfg)[None]).data[0]
            z_g = encoder.encode_frame(gridsim.render(nxt, sim_cfg)[None]).data[0]
        d = z_k.shape[-1]
        plan = cem_plan(model, z_k.reshape(-1, d), state.vector(), z_g.reshape(-1, d),
                        cem, rng)
        real.append(nxt.vector()[:2] - state.vector()[:2])
        inferred.append(plan.first_action[:2])
        state = nxt
    rep = calibrate(np.asarray(inferred), np.asarray(real))
    log.append({"angle_deg": math.nan, "scale": math.nan,
                "recovered_deg": rep.angle_degrees,
                "condition_number": rep.condition_number,
                "mean_abs_residual": rep.mean_abs_residual})
    return rep


_EMBED_KEYS = {"embed.frames", "embed.stride"}


def cmd_embed(args) -> int:
    import numpy as np

    from .checkpoint import save_checkpoint
    from .dataset import encode_clips, load_dataset
    from .persist import load_encoder

    cfg = _load_config(args.config)
    cfg.require_known(_EMBED_KEYS)
    encoder = load_encoder(args.encoder)
    trajs = load_dataset(args.data)
    frames = cfg.get_int("embed.frames", 8)
    stride = cfg.get_int("embed.stride", 8)
    clips = []
    for traj in trajs:
        for start in range(0, len(traj.frames) - frames + 1, stride):
            clips.append(traj.frames[start:start + frames])
    feats = encode_clips(encoder, np.stack(clips))
    pooled = feats.mean(axis=1).astype(np.float32)
    save_checkpoint({"embeddings": pooled}, args.out)
    print(f"wrote {len(pooled)} clip embeddings to {args.out}")
    return 0


_CURATE_KEYS = {"curate.k", "curate.draws", "curate.max_iter"}


def cmd_curate(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .curation import cluster_weights, kmeans, retain_clusters, sample_scene
    from .errors import ConfigError
    from .io import MetricsLog

    cfg = _load_config(args.config)
    cfg.require_known(_CURATE_KEYS)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    pool = load_checkpoint(args.pool)["embeddings"].astype(np.float64)
    targets, weights = {}, {}
    for spec_str in args.target:
        try:
            name, path, weight = spec_str.split(":")
        except ValueError as e:
            raise ConfigError(f"--target wants name:path:weight, got {spec_str!r}") from e
        targets[name] = load_checkpoint(path)["embeddings"].astype(np.float64)
        weights[name] = float(weight)
    clustering = kmeans(pool, cfg.get_int("curate.k", 10), rng,
                        max_iter=cfg.get_int("curate.max_iter", 100))
    retained, counts = retain_clusters(clustering, targets)
    w_c = cluster_weights(counts, weights, retained)
    table = MetricsLog(os.path.join(args.out, "cluster_weights.csv"),
                       ["cluster", "retained", "weight", *sorted(counts)])
    for c in range(len(w_c)):
        row = {"cluster": c, "retained": int(c in set(retained.tolist())), "weight": w_c[c]}
        row.update({name: int(counts[name][c]) for name in counts})
        table.append(row)
    members = [np.flatnonzero(clustering.assignments == c) for c in range(len(w_c))]
    usable = w_c.copy()
    for c in range(len(usable)):
        if len(members[c]) == 0:
            usable[c] = 0.0
    draws = sample_scene(usable, members, rng, cfg.get_int("curate.draws", 100_000))
    manifest = MetricsLog(os.path.join(args.out, "retained_manifest.csv"),
                          ["cluster", "members", "weight"])
    for c in retained:
        manifest.append({"cluster": int(c), "members": len(members[c]), "weight": w_c[c]})
    print(f"retained {len(retained)}/{len(w_c)} clusters; drew {len(draws)} scenes; "
          f"weight mass {w_c.sum():.6f}")
    _write_resolved(cfg, args.out)
    return 0


_DECODE_KEYS = {"decode.steps", "decode.lr", "decode.batch_size", "decode.hidden",
                "decode.samples", "decode.max_frames"}


def cmd_decode(args) -> int:
    import numpy as np

    from . import autodiff as ad
    from .dataset import load_dataset
    from .io import MetricsLog, write_pgm
    from .persist import load_encoder, save_decoder
    from .probes import train_decoder

    cfg = _load_config(args.config)
    cfg.require_known(_DECODE_KEYS)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    encoder = load_encoder(args.encoder)
    trajs = load_dataset(args.data)
    max_frames = cfg.get_int("decode.max_frames", 512)
    frames = np.concatenate([t.frames for t in trajs])[:max_frames]
    with ad.no_grad():
        maps = encoder.encode_frame(frames.astype(np.float32) / 255.0).data
    decoder, history = train_decoder(maps, frames.astype(np.float32) / 255.0, rng,
                                     steps=cfg.get_int("decode.steps", 1000),
                                     lr=cfg.get_float("decode.lr", 1e-3),
                                     batch_size=cfg.get_int("decode.batch_size", 32),
                                     hidden=cfg.get_int("decode.hidden", 64))
    save_decoder(decoder, os.path.join(args.out, "decoder.vjw"))
    log = MetricsLog(os.path.join(args.out, "decoder_loss.csv"), ["step", "loss"])
    for i, loss in enumerate(history):
        log.append({"step": i, "loss": loss})
    for i in range(min(cfg.get_int("decode.samples", 4), len(frames))):
        write_pgm(os.path.join(args.out, f"orig_{i}.pgm"), frames[i])
        write_pgm(os.path.join(args.out, f"decoded_{i}.pgm"), decoder.decode(maps[i:i + 1])[0])
    rmse = math.sqrt(float(np.mean((decoder.decode(maps) - frames / 255.0) ** 2)))
    print(f"decoder RMSE over {len(frames)} frames: {rmse:.4f}")
    _write_resolved(cfg, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentworld",
                                description="latent world model pipeline on a 2D gripper sim")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, encoder=False, ac=False, data=False):
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None)
        if data:
            sp.add_argument("--data", required=True)
        if encoder:
            sp.add_argument("--encoder", required=True)
        if ac:
            sp.add_argument("--ac", required=True)

    sp = sub.add_parser("gen-data", help="record simulator trajectories")
    sp.add_argument("--episodes", type=int, required=True)
    sp.add_argument("--length", type=int, required=True)
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("pretrain", help="stage-1 masked feature pretraining")
    common(sp, data=True)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("train-ac", help="action-conditioned dynamics post-training")
    common(sp, encoder=True, data=True)
    sp.set_defaults(fn=cmd_train_ac)

    sp = sub.add_parser("probe", help="motion-direction attentive probe")
    common(sp, encoder=True)
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("plan", help="goal-reaching MPC episodes")
    common(sp, encoder=True, ac=True)
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("sweep-energy", help="energy landscape over (dx, dy)")
    common(sp, encoder=True, ac=True)
    sp.set_defaults(fn=cmd_sweep_energy)

    sp = sub.add_parser("calibrate", help="action-axis rotation recovery")
    common(sp)
    sp.add_argument("--encoder", default=None)
    sp.add_argument("--ac", default=None)
    sp.set_defaults(fn=cmd_calibrate)

    sp = sub.add_parser("embed", help="pooled clip embeddings for curation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_embed)

    sp = sub.add_parser("curate", help="cluster, retain, weight, and sample")
    sp.add_argument("--pool", required=True)
    sp.add_argument("--target", action="append", default=[],
                    help="name:path:weight (repeatable)")
    common(sp)
    sp.set_defaults(fn=cmd_curate)

    sp = sub.add_parser("decode", help="train the frame decoder; export PGMs")
    common(sp, encoder=True, data=True)
    sp.set_defaults(fn=cmd_decode)
    return p


def main(argv=None) -> int:
    _apply_thread_limit()
    from .errors import LatentWorldError

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except LatentWorldError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
