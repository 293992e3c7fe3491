"""Action-conditioned latent dynamics model.

Interleaves (action, state, feature-map) tokens per time step, runs a
block-causal transformer, and reads next-step feature-map predictions off
the feature-token outputs. The video encoder stays frozen throughout
post-training; frames are encoded outside the gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoder import VideoEncoder
from .errors import ConfigError, ContractError, NumericError
from .optim import AdamW, LrSchedule, lr_at


@dataclass(frozen=True)
class ACConfig:
    width: int = 64
    depth: int = 4
    heads: int = 4
    state_dim: int = 3
    action_dim: int = 3
    context_frames: int = 8
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.action_dim != self.state_dim:
            raise ConfigError(f"action_dim {self.action_dim} must equal state_dim {self.state_dim}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")


def block_causal_mask(n_steps: int, tokens_per_step: int) -> np.ndarray:
    """Additive mask: token i sees token j iff frame_of(j) <= frame_of(i)."""
    if n_steps < 1:
        raise ContractError(f"need at least one step, got {n_steps}")
    frame_of = np.repeat(np.arange(n_steps), tokens_per_step)
    allowed = frame_of[None, :] <= frame_of[:, None]
    mask = np.where(allowed, 0.0, ad.NEG_INF).astype(np.float32)
    return mask


class ACPredictor(nn.Module):
    """Block-causal transformer over interleaved (a_k, s_k, z_k) token steps."""

    def __init__(self, enc_dim: int, grid_hw: tuple[int, int], cfg: ACConfig,
                 rng: np.random.Generator, dtype=np.float32):
        if cfg.width < enc_dim:
            raise ConfigError(f"predictor width {cfg.width} below encoder dim {enc_dim}")
        self.cfg = cfg
        self.enc_dim = enc_dim
        self.grid_hw = grid_hw
        self.act_in = nn.Linear(cfg.action_dim, cfg.width, rng, dtype)
        self.state_in = nn.Linear(cfg.state_dim, cfg.width, rng, dtype)
        self.feat_in = nn.Linear(enc_dim, cfg.width, rng, dtype)
        self.stack = nn.BlockStack(cfg.width, cfg.depth, cfg.heads, cfg.mlp_ratio, rng, dtype)
        self.feat_out = nn.Linear(cfg.width, enc_dim, rng, dtype)
        self.dtype = dtype
        self._rope_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._mask_cache: dict[int, np.ndarray] = {}

    @property
    def tokens_per_step(self) -> int:
        return 2 + self.grid_hw[0] * self.grid_hw[1]

    def _positions(self, n_steps: int) -> np.ndarray:
        """Feature tokens at (k, r, c); action/state tokens at (k, 0, 0) so only
        the temporal rotary segment turns for them."""
        gh, gw = self.grid_hw
        rows = []
        for k in range(n_steps):
            rows.append([k, 0, 0])  # action token
            rows.append([k, 0, 0])  # state token
            rr, cc = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
            feat = np.stack([np.full(gh * gw, k), rr.ravel(), cc.ravel()], axis=1)
            rows.append(feat)
        return np.concatenate([np.atleast_2d(r) for r in rows], axis=0).astype(np.int64)

    def _tables(self, n_steps: int):
        if n_steps not in self._rope_cache:
            head_dim = self.cfg.width // self.cfg.heads
            self._rope_cache[n_steps] = nn.rope_tables(self._positions(n_steps), head_dim,
                                                       dtype=self.dtype)
            self._mask_cache[n_steps] = block_causal_mask(n_steps, self.tokens_per_step)
        return self._rope_cache[n_steps], self._mask_cache[n_steps]

    def predict_next(self, feats: Tensor, states: np.ndarray, actions: np.ndarray) -> Tensor:
        """All-step predictions: output at step k is the estimate of z_{k+1}.

        feats: (B, T, S, D) encoder feature tokens, S = H'*W';
        states, actions: (B, T, 3). Returns (B, T, S, D).
        """
        b, t, s, d = feats.data.shape
        if states.shape[:2] != (b, t) or actions.shape[:2] != (b, t):
            raise ContractError(
                f"stream misaligned: feats {feats.data.shape}, states {states.shape}, "
                f"actions {actions.shape}"
            )
        a_tok = self.act_in(Tensor(np.ascontiguousarray(actions, dtype=self.dtype)))
        s_tok = self.state_in(Tensor(np.ascontiguousarray(states, dtype=self.dtype)))
        f_tok = self.feat_in(feats)
        a_tok = ad.reshape(a_tok, (b, t, 1, self.cfg.width))
        s_tok = ad.reshape(s_tok, (b, t, 1, self.cfg.width))
        seq = ad.concat([a_tok, s_tok, f_tok], axis=2)
        seq = ad.reshape(seq, (b, t * self.tokens_per_step, self.cfg.width))
        rope, mask = self._tables(t)
        out = self.stack(seq, rope=rope, mask=mask)
        per = self.tokens_per_step
        feat_rows = (np.arange(t)[:, None] * per + 2 + np.arange(s)[None, :]).ravel()
        preds = ad.index_select(out, feat_rows, axis=1)
        preds = ad.reshape(preds, (b, t, s, self.cfg.width))
        return self.feat_out(preds)

    def rollout(self, z_start: Tensor, s_start: np.ndarray, actions: np.ndarray) -> Tensor:
        """Autoregressive T-step rollout; returns the final prediction z_{T+1}.

        Fed-back predictions join the stream as feature tokens; states integrate
        as s_{k+1} = s_k + a_k. Gradients pass through only the most recent
        feedback; earlier feedbacks are detached.
        """
        b, s, d = z_start.data.shape
        horizon = actions.shape[1]
        if horizon < 1:
            raise ContractError("rollout needs at least one action")
        states = [np.asarray(s_start, dtype=np.float32)]
        for k in range(horizon - 1):
            states.append(states[-1] + actions[:, k])
        feed: list[Tensor] = [z_start]
        pred = None
        for k in range(1, horizon + 1):
            if len(feed) == 1:
                stream = [feed[0]]
            else:
                stream = [feed[0]] + [ad.stop_gradient(z) for z in feed[1:-1]] + [feed[-1]]
            feats = ad.concat([ad.reshape(z, (b, 1, s, d)) for z in stream], axis=1)
            st = np.stack(states[:k], axis=1)
            act = actions[:, :k]
            preds = self.predict_next(feats, st, act)
            pred = ad.reshape(ad.index_select(preds, np.array([k - 1]), axis=1), (b, s, d))
            if k < horizon:
                feed.append(pred)
        return pred


def tf_loss(predictions: Tensor, targets: Tensor) -> Tensor:
    """Mean over steps of mean absolute feature error (teacher forcing)."""
    if predictions.data.shape != targets.data.shape:
        raise ContractError(
            f"prediction/target misalignment: {predictions.data.shape} vs {targets.data.shape}"
        )
    # equal-sized steps: the mean over steps of per-step means is the global mean
    return ad.l1_loss(predictions, ad.stop_gradient(targets))


def ac_total_loss(model: ACPredictor, feats: np.ndarray, states: np.ndarray,
                  actions: np.ndarray, rollout_horizon: int = 2) -> tuple[Tensor, dict]:
    """Teacher-forcing loss over the window plus the two-step rollout loss.

    feats: (B, T, S, D) frozen-encoder features for T consecutive frames;
    states: (B, T, 3); actions: (B, T-1, 3). Needs T >= rollout_horizon + 1.
    """
    b, t, s, d = feats.shape
    if t < rollout_horizon + 1:
        raise ContractError(f"need at least {rollout_horizon + 1} encoded frames, got {t}")
    feats_t = Tensor(np.ascontiguousarray(feats, dtype=np.float32))
    preds = model.predict_next(Tensor(feats_t.data[:, :-1]), states[:, :-1], actions)
    targets = Tensor(feats_t.data[:, 1:])
    loss_tf = tf_loss(preds, targets)
    z1 = Tensor(feats_t.data[:, 0])
    final = model.rollout(z1, states[:, 0], actions[:, :rollout_horizon])
    target_roll = Tensor(feats_t.data[:, rollout_horizon])
    loss_roll = ad.l1_loss(final, target_roll)
    total = ad.add(loss_tf, loss_roll)
    return total, {"tf": loss_tf.item(), "rollout": loss_roll.item()}


@dataclass(frozen=True)
class ACTrainConfig:
    schedule: LrSchedule = LrSchedule(7.5e-5, 4.25e-4, 0.0, 300, 2400, 300)
    weight_decay: float = 0.04
    batch_size: int = 2  # sized for a 2-core CPU budget; raise on real hardware
    rollout_horizon: int = 2


class ACTrainer:
    """Optimizes the predictor on frozen-encoder features."""

    def __init__(self, encoder: VideoEncoder, cfg: ACConfig, train_cfg: ACTrainConfig,
                 rng: np.random.Generator):
        self.encoder = encoder
        self.cfg = cfg
        self.train_cfg = train_cfg
        grid = (encoder.cfg.grid_h, encoder.cfg.grid_w)
        self.model = ACPredictor(encoder.cfg.embed_dim, grid, cfg, rng)
        self.optimizer = AdamW(self.model.named_parameters(), lr=train_cfg.schedule.start_lr,
                               weight_decay=train_cfg.weight_decay)
        self.step_count = 0

    def encode_context(self, frames: np.ndarray) -> np.ndarray:
        """Frozen per-frame encoding: (B, T, H, W) -> (B, T, S, D), no gradients."""
        b, t = frames.shape[:2]
        flat = frames.reshape(b * t, *frames.shape[2:])
        with ad.no_grad():
            maps = self.encoder.encode_frame(flat)
        gh, gw = self.encoder.cfg.grid_h, self.encoder.cfg.grid_w
        return maps.data.reshape(b, t, gh * gw, self.encoder.cfg.embed_dim)

    def precompute_features(self, trajectories) -> list[np.ndarray]:
        """Frozen features for every frame of every trajectory, computed once.

        The encoder is deterministic and frozen, so caching (T, S, D) feature
        arrays per trajectory removes the per-step encode cost entirely.
        """
        out = []
        for traj in trajectories:
            frames = traj.frames.astype(np.float32) / 255.0
            out.append(self.encode_context(frames[None])[0])
        return out

    def train_ac_step(self, frames: np.ndarray, states: np.ndarray,
                      actions: np.ndarray) -> dict:
        """One optimizer step on predictor weights only; the encoder sees no tape."""
        feats = self.encode_context(frames)
        return self.train_ac_step_cached(feats, states, actions)

    def train_ac_step_cached(self, feats: np.ndarray, states: np.ndarray,
                             actions: np.ndarray) -> dict:
        """Training step on precomputed frozen-encoder features."""
        loss, parts = ac_total_loss(self.model, feats, states, actions,
                                    self.train_cfg.rollout_horizon)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericError(f"AC training loss became non-finite at step {self.step_count}")
        lr = lr_at(self.step_count, self.train_cfg.schedule)
        self.optimizer.lr = lr
        self.optimizer.zero_grad()
        ad.backward(loss)
        grad_norm = self.optimizer.grad_norm()
        self.optimizer.step()
        self.step_count += 1
        return {"step": self.step_count - 1, "loss": loss_val, "lr": lr,
                "grad_norm": grad_norm, **parts}
