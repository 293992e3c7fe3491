"""Self-describing model checkpoints built on the record container."""

from __future__ import annotations

import numpy as np

from .acmodel import ACConfig, ACPredictor
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, VideoEncoder
from .errors import ConfigError
from .probes import FrameDecoder


def _params_to_records(module, prefix: str = "param.") -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in module.state_dict().items()}


def _records_to_params(records: dict[str, np.ndarray], prefix: str = "param.") -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in records.items() if k.startswith(prefix)}


def save_encoder(encoder: VideoEncoder, path: str, extra: dict[str, np.ndarray] | None = None) -> None:
    c = encoder.cfg
    rec = _params_to_records(encoder)
    rec["cfg.encoder"] = np.array([c.frames, c.height, c.width, c.channels, c.tubelet_t,
                                   c.patch, c.embed_dim, c.depth, c.heads], dtype=np.int64)
    rec["cfg.encoder_mlp_ratio"] = np.array([c.mlp_ratio], dtype=np.float32)
    if extra:
        rec.update(extra)
    save_checkpoint(rec, path)


def load_encoder(path: str) -> VideoEncoder:
    rec = load_checkpoint(path)
    if "cfg.encoder" not in rec:
        raise ConfigError(f"{path}: not an encoder checkpoint")
    ints = rec["cfg.encoder"]
    cfg = EncoderConfig(frames=int(ints[0]), height=int(ints[1]), width=int(ints[2]),
                        channels=int(ints[3]), tubelet_t=int(ints[4]), patch=int(ints[5]),
                        embed_dim=int(ints[6]), depth=int(ints[7]), heads=int(ints[8]),
                        mlp_ratio=float(rec["cfg.encoder_mlp_ratio"][0]))
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    encoder.load_state_dict(_records_to_params(rec))
    return encoder


def save_ac(model: ACPredictor, path: str) -> None:
    c = model.cfg
    rec = _params_to_records(model)
    rec["cfg.ac"] = np.array([c.width, c.depth, c.heads, c.state_dim, c.action_dim,
                              c.context_frames, model.enc_dim,
                              model.grid_hw[0], model.grid_hw[1]], dtype=np.int64)
    rec["cfg.ac_mlp_ratio"] = np.array([c.mlp_ratio], dtype=np.float32)
    save_checkpoint(rec, path)


def load_ac(path: str) -> ACPredictor:
    rec = load_checkpoint(path)
    if "cfg.ac" not in rec:
        raise ConfigError(f"{path}: not a dynamics-model checkpoint")
    ints = rec["cfg.ac"]
    cfg = ACConfig(width=int(ints[0]), depth=int(ints[1]), heads=int(ints[2]),
                   state_dim=int(ints[3]), action_dim=int(ints[4]),
                   context_frames=int(ints[5]), mlp_ratio=float(rec["cfg.ac_mlp_ratio"][0]))
    model = ACPredictor(int(ints[6]), (int(ints[7]), int(ints[8])), cfg,
                        np.random.default_rng(0))
    model.load_state_dict(_records_to_params(rec))
    return model


def save_decoder(decoder: FrameDecoder, path: str) -> None:
    rec = _params_to_records(decoder)
    rec["cfg.decoder"] = np.array([decoder.fc1.weight.data.shape[0], decoder.patch,
                                   decoder.grid_hw[0], decoder.grid_hw[1],
                                   decoder.fc1.weight.data.shape[1]], dtype=np.int64)
    save_checkpoint(rec, path)


def load_decoder(path: str) -> FrameDecoder:
    rec = load_checkpoint(path)
    if "cfg.decoder" not in rec:
        raise ConfigError(f"{path}: not a decoder checkpoint")
    ints = rec["cfg.decoder"]
    decoder = FrameDecoder(int(ints[0]), int(ints[1]), (int(ints[2]), int(ints[3])),
                           np.random.default_rng(0), hidden=int(ints[4]))
    decoder.load_state_dict(_records_to_params(rec))
    return decoder
