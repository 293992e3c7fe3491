"""Stage-1 self-supervised pretraining.

The student encoder sees the masked clip; a narrow predictor, given the
surviving features plus a learned mask token at each dropped slot, regresses
the dropped-slot features of an EMA teacher under stop-gradient, with a mean
absolute error on the dropped slots only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoder import EncoderConfig, VideoEncoder, token_positions
from .errors import ConfigError, ContractError, NumericError
from .masking import MaskSpec, sample_multiblock_mask
from .optim import AdamW, LrSchedule, lr_at


@dataclass(frozen=True)
class Stage:
    start_step: int
    frames: int
    resolution: int


@dataclass(frozen=True)
class PretrainConfig:
    ema_m: float = 0.998
    weight_decay: float = 0.04
    schedule: LrSchedule = LrSchedule(1e-4, 5.25e-4, 1e-6, 200, 1300, 500)
    batch_size: int = 16
    n_mask_blocks: int = 2
    spatial_scale: tuple[float, float] = (0.15, 0.7)
    temporal_scale: tuple[float, float] = (1.0, 1.0)
    mask_aspect: tuple[float, float] = (0.75, 1.5)
    stages: tuple[Stage, ...] = (Stage(0, 8, 32),)

    def __post_init__(self):
        if not 0.0 < self.ema_m <= 1.0:
            raise ConfigError(f"ema coefficient {self.ema_m} outside (0, 1]")
        for lo, hi in (self.spatial_scale, self.temporal_scale):
            if not (0.0 < lo <= hi <= 1.0):
                raise ConfigError(f"scale range ({lo}, {hi}) not within (0, 1]")
        if self.temporal_scale != (1.0, 1.0):
            raise ConfigError("temporal mask scale is fixed at full clip extent")
        if not self.stages or self.stages[0].start_step != 0:
            raise ConfigError("stage table must cover step 0")


def progressive_stage(step: int, stages: tuple[Stage, ...]) -> tuple[int, int]:
    """Active (frames, resolution) for a step; transitions happen between entries."""
    if not stages or stages[0].start_step != 0:
        raise ContractError("stage table does not cover all steps")
    active = stages[0]
    for stage in stages:
        if stage.start_step <= step:
            active = stage
    return active.frames, active.resolution


@dataclass(frozen=True)
class JepaPredictorConfig:
    dim: int = 32
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0


class JepaPredictor(nn.Module):
    """Narrow transformer filling dropped slots from surviving features."""

    def __init__(self, enc_dim: int, cfg: JepaPredictorConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.in_affine = nn.Linear(enc_dim, cfg.dim, rng, dtype)
        self.mask_token = ad.param(rng.normal(0.0, 0.02, size=(enc_dim,)), dtype=dtype)
        self.stack = nn.BlockStack(cfg.dim, cfg.depth, cfg.heads, cfg.mlp_ratio, rng, dtype)
        self.out_affine = nn.Linear(cfg.dim, enc_dim, rng, dtype)
        self.dtype = dtype

    def predict(self, kept_feats: Tensor, kept_pos: np.ndarray, dropped_pos: np.ndarray) -> Tensor:
        """Predict dropped-slot features, ordered like ``dropped_pos``."""
        b, n_kept, _ = kept_feats.data.shape
        n_drop = len(dropped_pos)
        mask_tokens = ad.expand_leading(self.mask_token, (b, n_drop))
        seq = self.in_affine(ad.concat([kept_feats, mask_tokens], axis=1))
        positions = np.concatenate([kept_pos, dropped_pos], axis=0)
        rope = nn.rope_tables(positions, self.cfg.dim // self.cfg.heads, dtype=self.dtype)
        out = self.stack(seq, rope=rope)
        dropped_rows = ad.index_select(out, np.arange(n_kept, n_kept + n_drop), axis=1)
        return self.out_affine(dropped_rows)


def jepa_loss(predicted: Tensor, teacher_target: Tensor, mask: MaskSpec) -> Tensor:
    """Mean |prediction - sg(teacher)| over dropped slots only."""
    dropped = np.asarray(sorted(mask.dropped), dtype=np.int64)
    if predicted.data.shape[1] != len(dropped):
        raise ContractError(
            f"predictions cover {predicted.data.shape[1]} slots but mask drops {len(dropped)}"
        )
    target = ad.stop_gradient(teacher_target)
    target_dropped = Tensor(np.ascontiguousarray(target.data[:, dropped]))
    return ad.l1_loss(predicted, target_dropped)


def ema_update(student, teacher, m: float):
    """theta_bar' = m * theta_bar + (1 - m) * theta, elementwise.

    Accepts parallel dicts of arrays (updated in place) or a pair of arrays
    (returned). ``m = 1`` leaves the teacher fixed; ``m = 0`` copies the student.
    """
    if isinstance(student, dict):
        for k in teacher:
            ema_update(student[k], teacher[k], m)
        return teacher
    arr_s = student.data if isinstance(student, Tensor) else np.asarray(student)
    if isinstance(teacher, Tensor):
        teacher.data *= m
        teacher.data += (1.0 - m) * arr_s
        return teacher
    if isinstance(teacher, np.ndarray):
        teacher *= m
        teacher += (1.0 - m) * arr_s
        return teacher
    return m * float(teacher) + (1.0 - m) * arr_s


class TeacherState:
    """Shadow copy of the encoder; never registered with the optimizer."""

    def __init__(self, student: VideoEncoder):
        rng = np.random.default_rng(0)  # weights are overwritten immediately
        self.encoder = VideoEncoder(student.cfg, rng, dtype=student.dtype)
        self.encoder.load_state_dict(student.state_dict())

    def update(self, student: VideoEncoder, m: float) -> None:
        ema_update(student.named_parameters(), self.encoder.named_parameters(), m)


def collapse_metrics(teacher_features: np.ndarray) -> tuple[float, float]:
    """(mean per-dimension std, mean pairwise cosine) over pooled embeddings.

    ``teacher_features``: (batch, tokens, dim) or already-pooled (batch, dim);
    diagnoses representation collapse on a probe batch of at least 16 clips.
    """
    feats = np.asarray(teacher_features, dtype=np.float64)
    if feats.ndim == 3:
        feats = feats.mean(axis=1)
    if feats.shape[0] < 16:
        raise ContractError(f"collapse metrics need a probe batch >= 16, got {feats.shape[0]}")
    mean_std = float(feats.std(axis=0).mean())
    norms = np.linalg.norm(feats, axis=1)
    norms = np.where(norms == 0, 1.0, norms)
    unit = feats / norms[:, None]
    cos = unit @ unit.T
    b = feats.shape[0]
    iu = np.triu_indices(b, k=1)
    return mean_std, float(cos[iu].mean())


class Pretrainer:
    """Owns the student, predictor, teacher, and optimizer for stage-1 training."""

    def __init__(self, enc_cfg: EncoderConfig, cfg: PretrainConfig,
                 rng: np.random.Generator,
                 pred_cfg: JepaPredictorConfig = JepaPredictorConfig()):
        self.enc_cfg = enc_cfg
        self.cfg = cfg
        self.rng = rng
        self.encoder = VideoEncoder(enc_cfg, rng)
        self.predictor = JepaPredictor(enc_cfg.embed_dim, pred_cfg, rng)
        self.teacher = TeacherState(self.encoder)
        params = {}
        params.update({f"encoder.{k}": v for k, v in self.encoder.named_parameters().items()})
        params.update({f"predictor.{k}": v for k, v in self.predictor.named_parameters().items()})
        self.optimizer = AdamW(params, lr=cfg.schedule.start_lr, weight_decay=cfg.weight_decay)
        self.step_count = 0

    def stage_at(self, step: int) -> tuple[int, int]:
        return progressive_stage(step, self.cfg.stages)

    def stage_cfg(self, step: int) -> EncoderConfig:
        frames, res = self.stage_at(step)
        return self.enc_cfg.with_input(frames, res, res)

    def pretrain_step(self, clips: np.ndarray) -> dict:
        """One optimization step on a batch of clips at the current stage size."""
        cfg = self.stage_cfg(self.step_count)
        grid = (cfg.grid_t, cfg.grid_h, cfg.grid_w)
        mask = sample_multiblock_mask(self.rng, grid, self.cfg.n_mask_blocks,
                                      self.cfg.spatial_scale, self.cfg.mask_aspect)
        positions = token_positions(cfg)
        kept_feats, kept_pos = self.encoder.encode(clips, mask=mask, cfg=cfg)
        preds = self.predictor.predict(kept_feats, kept_pos, positions[mask.dropped])
        with ad.no_grad():
            teacher_feats, _ = self.teacher.encoder.encode(clips, cfg=cfg)
        loss = jepa_loss(preds, teacher_feats, mask)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericError(f"pretraining loss became non-finite at step {self.step_count}")
        lr = lr_at(self.step_count, self.cfg.schedule)
        self.optimizer.lr = lr
        self.optimizer.zero_grad()
        ad.backward(loss)
        grad_norm = self.optimizer.grad_norm()
        self.optimizer.step()
        self.teacher.update(self.encoder, self.cfg.ema_m)
        self.step_count += 1
        return {"step": self.step_count - 1, "loss": loss_val, "lr": lr, "grad_norm": grad_norm}

    def teacher_pooled(self, clips: np.ndarray, cfg: EncoderConfig | None = None) -> np.ndarray:
        with ad.no_grad():
            feats, _ = self.teacher.encoder.encode(clips, cfg=cfg or self.enc_cfg)
        return feats.data.mean(axis=1)
