"""Vision transformer over video clips: tubelet tokens + 3-axis rotary attention.

A clip of shape (T, H, W[, C]) becomes N = (T/t)(H/p)(W/p) tokens in
row-major (time, row, col) order; masking removes dropped tokens before the
transformer stack, and outputs stay associated with their grid positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class EncoderConfig:
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 1
    tubelet_t: int = 2
    patch: int = 4
    embed_dim: int = 48
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.frames % self.tubelet_t or self.height % self.patch or self.width % self.patch:
            raise ConfigError(
                f"clip {self.frames}x{self.height}x{self.width} not divisible by "
                f"tubelet {self.tubelet_t}x{self.patch}x{self.patch}"
            )
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        head_dim = self.embed_dim // self.heads
        if head_dim % 2 or head_dim < 6:
            raise ConfigError(f"per-head dim {head_dim} must be even and >= 6 for 3-axis rotation")

    @property
    def grid_t(self) -> int:
        return self.frames // self.tubelet_t

    @property
    def grid_h(self) -> int:
        return self.height // self.patch

    @property
    def grid_w(self) -> int:
        return self.width // self.patch

    @property
    def n_tokens(self) -> int:
        return self.grid_t * self.grid_h * self.grid_w

    @property
    def tokens_per_frame_time(self) -> int:
        return self.grid_h * self.grid_w

    def with_input(self, frames: int, height: int, width: int) -> "EncoderConfig":
        return EncoderConfig(frames, height, width, self.channels, self.tubelet_t,
                             self.patch, self.embed_dim, self.depth, self.heads, self.mlp_ratio)


def token_positions(cfg: EncoderConfig) -> np.ndarray:
    """(N, 3) integer (time, row, col) coordinates in row-major order."""
    t = np.arange(cfg.grid_t)
    r = np.arange(cfg.grid_h)
    c = np.arange(cfg.grid_w)
    tt, rr, cc = np.meshgrid(t, r, c, indexing="ij")
    return np.stack([tt.ravel(), rr.ravel(), cc.ravel()], axis=1).astype(np.int64)


def _as_batched_clip(clips: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Normalize input to float32 (B, T, H, W, C)."""
    arr = np.asarray(clips)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32, copy=False)
    if arr.ndim == 3:  # (T, H, W) single grayscale clip
        arr = arr[None, ..., None]
    elif arr.ndim == 4:
        if arr.shape[-1] == cfg.channels and arr.shape[0] != arr.shape[1]:
            arr = arr[None, ...]  # (T, H, W, C)
        else:
            arr = arr[..., None]  # (B, T, H, W)
    if arr.ndim != 5:
        raise ContractError(f"cannot interpret clip array of shape {np.asarray(clips).shape}")
    b, t, h, w, c = arr.shape
    if (t, h, w, c) != (cfg.frames, cfg.height, cfg.width, cfg.channels):
        raise ConfigError(
            f"clip shape {(t, h, w, c)} does not match configured "
            f"{(cfg.frames, cfg.height, cfg.width, cfg.channels)}"
        )
    return arr


def patchify_pixels(clips: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Rearrange (B, T, H, W, C) into flattened tubelets (B, N, t*p*p*C)."""
    arr = _as_batched_clip(clips, cfg)
    b = arr.shape[0]
    gt, gh, gw = cfg.grid_t, cfg.grid_h, cfg.grid_w
    t, p = cfg.tubelet_t, cfg.patch
    arr = arr.reshape(b, gt, t, gh, p, gw, p, cfg.channels)
    arr = arr.transpose(0, 1, 3, 5, 2, 4, 6, 7)  # b, gt, gh, gw, t, p, p, c
    return np.ascontiguousarray(arr.reshape(b, gt * gh * gw, t * p * p * cfg.channels))


class VideoEncoder(nn.Module):
    """Maps (possibly masked) clips to per-time feature maps."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        patch_dim = cfg.tubelet_t * cfg.patch * cfg.patch * cfg.channels
        self.proj = nn.Linear(patch_dim, cfg.embed_dim, rng, dtype)
        self.stack = nn.BlockStack(cfg.embed_dim, cfg.depth, cfg.heads, cfg.mlp_ratio, rng, dtype)

    def patchify(self, clips: np.ndarray, cfg: EncoderConfig | None = None):
        """Project pixel tubelets to tokens; returns (tokens, positions)."""
        cfg = cfg or self.cfg
        pixels = patchify_pixels(clips, cfg)
        tokens = self.proj(Tensor(pixels.astype(self.dtype)))
        return tokens, token_positions(cfg)

    def forward_tokens(self, tokens: Tensor, positions: np.ndarray) -> Tensor:
        head_dim = self.cfg.embed_dim // self.cfg.heads
        rope = nn.rope_tables(positions, head_dim, dtype=self.dtype)
        return self.stack(tokens, rope=rope)

    def encode(self, clips: np.ndarray, mask=None, cfg: EncoderConfig | None = None):
        """Encode clips, dropping masked tokens before the transformer stack.

        Returns (features, positions): features (B, K, D) aligned with the K
        surviving grid positions.
        """
        cfg = cfg or self.cfg
        tokens, positions = self.patchify(clips, cfg)
        if mask is not None:
            kept = np.asarray(sorted(mask.kept), dtype=np.int64)
            if kept.size == 0:
                raise ContractError("mask drops every token; nothing to encode")
            if kept.max() >= tokens.data.shape[1] or kept.min() < 0:
                raise ContractError(f"mask indices out of range for {tokens.data.shape[1]} tokens")
            tokens = ad.index_select(tokens, kept, axis=1)
            positions = positions[kept]
        return self.forward_tokens(tokens, positions), positions

    def encode_grid(self, clips: np.ndarray, cfg: EncoderConfig | None = None) -> Tensor:
        """Unmasked encode reshaped to (B, T', H', W', D) per-time feature maps."""
        cfg = cfg or self.cfg
        feats, _ = self.encode(clips, cfg=cfg)
        b = feats.data.shape[0]
        return ad.reshape(feats, (b, cfg.grid_t, cfg.grid_h, cfg.grid_w, cfg.embed_dim))

    def encode_frame(self, frames: np.ndarray) -> Tensor:
        """Encode single frames (B, H, W[, C]) by filling one tubelet depth.

        The frame is duplicated tubelet_t times along time and encoded with no
        mask; returns the single time-index feature map (B, H', W', D).
        """
        arr = np.asarray(frames)
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim == 3 and self.cfg.channels == 1:
            arr = arr[..., None]
        clip = np.repeat(arr[:, None, ...], self.cfg.tubelet_t, axis=1)
        cfg = self.cfg.with_input(self.cfg.tubelet_t, self.cfg.height, self.cfg.width)
        grid = self.encode_grid(clip, cfg=cfg)
        b = grid.data.shape[0]
        return ad.reshape(grid, (b, cfg.grid_h, cfg.grid_w, cfg.embed_dim))
