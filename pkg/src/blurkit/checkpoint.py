"""Checkpoint archive: format version, model config, epoch counter, named
parameter arrays, and optimizer momentum buffers, in one torch-serialized
file. Loading validates every shape against the embedded config."""

import os

import torch

from .errors import ConfigError
from .model import ModelConfig, MultiScaleDilatedUNet

FORMAT_VERSION = 1


def save_checkpoint(path, model, epoch: int, momentum_state: dict):
    payload = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "parameters": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "momentum": {k: v.detach().clone() for k, v in momentum_state.items()},
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, dtype: torch.dtype = torch.float32):
    """Rebuild (model, completed-epoch count, momentum buffers) from an archive.

    Any unreadable file, version mismatch, or parameter set/shape that
    disagrees with the embedded config raises ConfigError.
    """
    try:
        payload = torch.load(path, map_location="cpu")
    except Exception as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    for key in ("format_version", "config", "epoch", "parameters", "momentum"):
        if key not in payload:
            raise ConfigError(f"checkpoint {path} is missing field {key!r}")
    if payload["format_version"] != FORMAT_VERSION:
        raise ConfigError(
            f"checkpoint format {payload['format_version']} unsupported "
            f"(expected {FORMAT_VERSION})"
        )

    config = ModelConfig.from_dict(payload["config"])
    model = MultiScaleDilatedUNet(config).to(dtype)
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    stored = payload["parameters"]
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise ConfigError(
            f"checkpoint parameters disagree with config: missing {missing}, "
            f"unexpected {extra}"
        )
    for name, shape in expected.items():
        if tuple(stored[name].shape) != shape:
            raise ConfigError(
                f"checkpoint parameter {name!r} has shape "
                f"{tuple(stored[name].shape)}, config requires {shape}"
            )
    model.load_state_dict(stored)

    momentum = {}
    for name, buf in payload["momentum"].items():
        if name not in expected:
            raise ConfigError(f"momentum buffer for unknown parameter {name!r}")
        if tuple(buf.shape) != expected[name]:
            raise ConfigError(
                f"momentum buffer {name!r} has shape {tuple(buf.shape)}, "
                f"parameter requires {expected[name]}"
            )
        momentum[name] = buf.to(dtype)
    return model, int(payload["epoch"]), momentum
