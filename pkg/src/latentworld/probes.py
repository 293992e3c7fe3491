"""Frozen-representation evaluation heads.

The attentive probe runs three self-attention blocks over the frozen
features, pools them through a cross-attention block with learnable query
tokens (cross output added back onto the query, then LayerNorm and a single
GELU MLP), and classifies each query with its own linear head. The
anticipation variant uses three queries and sums a focal loss per head. The
frame decoder is a deterministic per-cell regression back to pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoder import VideoEncoder
from .errors import ConfigError, ContractError
from .optim import AdamW
from .pretrain import JepaPredictor


@dataclass(frozen=True)
class ProbeConfig:
    dim: int
    classes: tuple[int, ...] = (4,)
    heads: int = 4
    self_blocks: int = 3
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if len(self.classes) < 1:
            raise ConfigError("probe needs at least one query/classifier")


class AttentiveProbe(nn.Module):
    """Self-attention trunk + cross-attention pooling with learnable queries."""

    def __init__(self, cfg: ProbeConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        d = cfg.dim
        self.blocks = [nn.TransformerBlock(d, cfg.heads, cfg.mlp_ratio, rng, dtype)
                       for _ in range(cfg.self_blocks)]
        self.query = ad.param(rng.normal(0.0, 0.02, size=(len(cfg.classes), d)), dtype=dtype)
        self.cross = nn.MultiHeadAttention(d, cfg.heads, rng, dtype)
        self.ln_q = nn.LayerNorm(d, dtype)
        self.mlp_q = nn.MLP(d, int(d * cfg.mlp_ratio), rng, dtype)
        self.heads_out = [nn.Linear(d, c, rng, dtype) for c in cfg.classes]

    def __call__(self, features: Tensor) -> list[Tensor]:
        """features: (B, N, dim) -> one (B, classes_i) logit tensor per query."""
        b = features.data.shape[0]
        x = features
        for block in self.blocks:
            x = block(x)
        q = ad.expand_leading(self.query, (b,))
        q = ad.add(q, self.cross(q, x_kv=x))
        q = ad.add(q, self.mlp_q(self.ln_q(q)))
        logits = []
        for i, head in enumerate(self.heads_out):
            qi = ad.reshape(ad.index_select(q, np.array([i]), axis=1), (b, self.cfg.dim))
            logits.append(head(qi))
        return logits


@dataclass(frozen=True)
class FocalLossConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside (0, 1]")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma {self.gamma} must be nonnegative")


def focal_loss(probs: Tensor, targets: np.ndarray, cfg: FocalLossConfig) -> Tensor:
    """-alpha (1 - p_t)^gamma log(p_t), averaged over the batch.

    ``probs`` are softmax outputs (rows, classes); target probabilities are
    clamped at 1e-12 before the log.
    """
    targets = np.asarray(targets, dtype=np.int64)
    p_t = ad.clamp_min(ad.gather_rows(probs, targets), 1e-12)
    weight = ad.powf(ad.affine_const(p_t, -1.0, 1.0), cfg.gamma)
    return ad.scale(ad.mean_all(ad.mul(weight, ad.log(p_t))), -cfg.alpha)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the target class."""
    probs = ad.softmax_lastdim(logits)
    p_t = ad.clamp_min(ad.gather_rows(probs, np.asarray(targets, dtype=np.int64)), 1e-12)
    return ad.neg(ad.mean_all(ad.log(p_t)))


def probe_forward(features: np.ndarray, probe: AttentiveProbe) -> list[np.ndarray]:
    """Inference-only logits for (B, N, D) frozen features."""
    with ad.no_grad():
        logits = probe(Tensor(np.ascontiguousarray(features, dtype=probe.dtype)))
    return [l.data for l in logits]


@dataclass
class ProbeTrainResult:
    probe: AttentiveProbe
    accuracy: float
    table: list[dict]  # one row per (lr, wd) grid cell


def split_by_group(groups: np.ndarray, rng: np.random.Generator, val_fraction: float = 0.2):
    """Deterministic 80/20 split on group (trajectory) ids, not on clips."""
    uniq = np.unique(groups)
    perm = rng.permutation(len(uniq))
    n_val = max(1, int(round(val_fraction * len(uniq))))
    val_groups = set(uniq[perm[:n_val]].tolist())
    val_mask = np.array([g in val_groups for g in groups])
    return ~val_mask, val_mask


def train_probe(features: np.ndarray, labels: np.ndarray, groups: np.ndarray,
                rng: np.random.Generator, lrs=(5e-3, 3e-3, 1e-3, 3e-4, 1e-4),
                wds=(0.01,), epochs: int = 4, batch_size: int = 32,
                probe_cfg: ProbeConfig | None = None) -> ProbeTrainResult:
    """Train one probe per (lr, wd) grid cell; report the best validation accuracy.

    ``groups`` carries the source-trajectory id of each clip so the 80/20
    validation split cannot leak overlapping windows.
    """
    features = np.ascontiguousarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    cfg = probe_cfg or ProbeConfig(dim=features.shape[-1], classes=(n_classes,))
    train_mask, val_mask = split_by_group(groups, rng)
    x_tr, y_tr = features[train_mask], labels[train_mask]
    x_va, y_va = features[val_mask], labels[val_mask]
    best: ProbeTrainResult | None = None
    table = []
    seeds = rng.integers(0, 2**31 - 1, size=len(lrs) * len(wds))
    cell = 0
    for lr in lrs:
        for wd in wds:
            cell_rng = np.random.default_rng(seeds[cell])
            cell += 1
            probe = AttentiveProbe(cfg, cell_rng)
            opt = AdamW(probe.named_parameters(), lr=lr, weight_decay=wd)
            order = np.arange(len(x_tr))
            for _ in range(epochs):
                cell_rng.shuffle(order)
                for start in range(0, len(order), batch_size):
                    idx = order[start:start + batch_size]
                    logits = probe(Tensor(x_tr[idx]))[0]
                    loss = cross_entropy(logits, y_tr[idx])
                    opt.zero_grad()
                    ad.backward(loss)
                    opt.step()
            preds = np.concatenate([
                probe_forward(x_va[s:s + 64], probe)[0].argmax(axis=1)
                for s in range(0, len(x_va), 64)
            ])
            acc = float((preds == y_va).mean())
            table.append({"lr": lr, "wd": wd, "val_accuracy": acc})
            if best is None or acc > best.accuracy:
                best = ProbeTrainResult(probe=probe, accuracy=acc, table=table)
    best.table = table
    return best


def anticipate(context_clip: np.ndarray, gap_seconds: float, encoder: VideoEncoder,
               predictor: JepaPredictor, probe: AttentiveProbe, fps: float = 4.0,
               gap_range: tuple[float, float] = (0.25, 1.75),
               use_predictor: bool = True) -> list[np.ndarray]:
    """Logit sets for the event ``gap_seconds`` after the context ends.

    The predictor, given mask tokens positioned at the future frame's grid
    slots, fills in that frame's features; encoder and predictor tokens are
    concatenated along the token axis before the probe. ``use_predictor=False``
    is the encoder-only ablation path.
    """
    if not gap_range[0] <= gap_seconds <= gap_range[1]:
        raise ContractError(f"anticipation gap {gap_seconds}s outside {gap_range}")
    clip = np.asarray(context_clip)
    if clip.ndim == 3:
        clip = clip[None]
    t = clip.shape[1]
    cfg = encoder.cfg.with_input(t, clip.shape[2], clip.shape[3])
    with ad.no_grad():
        feats, positions = encoder.encode(clip, cfg=cfg)
        tokens = feats.data
        if use_predictor:
            gap_frames = max(1, int(round(gap_seconds * fps)))
            future_time = (t + gap_frames - 1) // encoder.cfg.tubelet_t
            gh, gw = cfg.grid_h, cfg.grid_w
            rr, cc = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
            future_pos = np.stack([np.full(gh * gw, future_time), rr.ravel(), cc.ravel()],
                                  axis=1).astype(np.int64)
            predicted = predictor.predict(feats, positions, future_pos)
            tokens = np.concatenate([tokens, predicted.data], axis=1)
    return probe_forward(tokens, probe)


def anticipation_probe(dim: int, n_phases: int, n_objects: int,
                       rng: np.random.Generator, heads: int = 4) -> AttentiveProbe:
    """Three-query probe: phase, target object, and their joint class."""
    classes = (n_phases, n_objects, n_phases * n_objects)
    return AttentiveProbe(ProbeConfig(dim=dim, classes=classes, heads=heads), rng)


def train_anticipation_probe(token_feats: np.ndarray, label_sets, groups: np.ndarray,
                             rng: np.random.Generator, focal_cfg: FocalLossConfig | None = None,
                             lr: float = 1e-3, wd: float = 0.01, epochs: int = 4,
                             batch_size: int = 32, probe: AttentiveProbe | None = None):
    """Train the three heads jointly: focal loss per head, summed over heads.

    ``label_sets`` is a (phase, object, joint) triple of label arrays; returns
    (probe, per-head validation accuracies).
    """
    cfg = focal_cfg or FocalLossConfig()
    labels = [np.asarray(l, dtype=np.int64) for l in label_sets]
    if probe is None:
        classes = tuple(int(l.max()) + 1 for l in labels)
        probe = AttentiveProbe(ProbeConfig(dim=token_feats.shape[-1], classes=classes), rng)
    train_mask, val_mask = split_by_group(groups, rng)
    x_tr = token_feats[train_mask]
    y_tr = [l[train_mask] for l in labels]
    x_va = token_feats[val_mask]
    y_va = [l[val_mask] for l in labels]
    opt = AdamW(probe.named_parameters(), lr=lr, weight_decay=wd)
    order = np.arange(len(x_tr))
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            logits = probe(Tensor(np.ascontiguousarray(x_tr[idx], dtype=np.float32)))
            total = None
            for head_logits, y in zip(logits, y_tr):
                head_loss = focal_loss(ad.softmax_lastdim(head_logits), y[idx], cfg)
                total = head_loss if total is None else ad.add(total, head_loss)
            opt.zero_grad()
            ad.backward(total)
            opt.step()
    accs = []
    preds = [np.concatenate([probe_forward(x_va[s:s + 64], probe)[h].argmax(axis=1)
                             for s in range(0, len(x_va), 64)])
             for h in range(len(labels))]
    for pred, y in zip(preds, y_va):
        accs.append(float((pred == y).mean()))
    return probe, accs


class FrameDecoder(nn.Module):
    """Deterministic per-cell regression from one feature map back to pixels."""

    def __init__(self, feat_dim: int, patch: int, grid_hw: tuple[int, int],
                 rng: np.random.Generator, hidden: int = 64, dtype=np.float32):
        self.patch = patch
        self.grid_hw = grid_hw
        self.fc1 = nn.Linear(feat_dim, hidden, rng, dtype)
        self.fc2 = nn.Linear(hidden, patch * patch, rng, dtype)

    def __call__(self, maps: Tensor) -> Tensor:
        """maps: (B, H', W', D) -> frames (B, H'*p, W'*p)."""
        b = maps.data.shape[0]
        gh, gw = self.grid_hw
        p = self.patch
        pix = self.fc2(ad.gelu(self.fc1(maps)))  # (B, gh, gw, p*p)
        pix = ad.reshape(pix, (b, gh, gw, p, p))
        pix = ad.transpose(pix, (0, 1, 3, 2, 4))
        return ad.reshape(pix, (b, gh * p, gw * p))

    def decode(self, maps: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            out = self(Tensor(np.ascontiguousarray(maps, dtype=np.float32)))
        return out.data


def train_decoder(feature_maps: np.ndarray, frames: np.ndarray, rng: np.random.Generator,
                  steps: int = 1000, lr: float = 1e-3, batch_size: int = 32,
                  hidden: int = 64) -> tuple[FrameDecoder, list[float]]:
    """Mean-squared-error pixel regression on paired (feature map, frame) data."""
    maps = np.ascontiguousarray(feature_maps, dtype=np.float32)
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    if frames.dtype == np.float32 and frames.max() > 1.5:
        frames = frames / 255.0
    n, gh, gw, d = maps.shape
    patch = frames.shape[1] // gh
    decoder = FrameDecoder(d, patch, (gh, gw), rng, hidden=hidden)
    opt = AdamW(decoder.named_parameters(), lr=lr, weight_decay=0.0)
    history = []
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        pred = decoder(Tensor(maps[idx]))
        loss = ad.mse_loss(pred, Tensor(frames[idx]))
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        history.append(loss.item())
    return decoder, history
