"""Run configuration and the flat ``key = value`` config-file format.

Blank lines and ``#`` comments are ignored. Tuple values are comma
separated. Every key is a field of ``TrainConfig``; unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple, get_args, get_origin, get_type_hints


class ConfigFileError(ValueError):
    pass


@dataclass
class TrainConfig:
    domain: str = "scene"                # scene | mnist
    grid: int = 32                       # action grid side (32 in the full task)
    episode_length: int = 0              # 0 = domain default (paint 10, scene 3)
    batch_size: int = 16
    g_lr: float = 1e-4
    d_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gp_weight: float = 10.0
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    gamma: float = 1.0
    d_steps: int = 1                     # discriminator updates per generator update
    iterations: int = 1000
    seed: int = 0
    reward_mode: str = "discriminator"   # discriminator | l2
    reward_transform: str = "raw"        # raw | sigmoid | log_sigmoid (discriminator mode)
    dataset_size: int = 0                # 0 = full size (mnist 60000, scene 32318)
    workers: int = 1
    deterministic: bool = True
    checkpoint_every: int = 0            # 0 = only at the end
    out_dir: str = "runs/default"
    idx_images: str = ""                 # MNIST IDX files; empty = synthetic glyphs
    idx_labels: str = ""
    glyph_count: int = 6000              # synthetic glyph pool size when no IDX is given
    # architecture
    embed_dim: int = 32
    text_hidden: int = 64
    conv_channels: Tuple[int, ...] = (16, 32, 64, 64)
    fusion_channels: int = 64
    mlp_hidden: int = 64
    core_hidden: int = 128
    action_embed: int = 32
    d_conv_channels: Tuple[int, ...] = ()  # empty = same as conv_channels

    def validate(self):
        if self.domain not in ("scene", "mnist"):
            raise ConfigFileError(f"domain must be scene or mnist, got {self.domain!r}")
        if self.reward_mode not in ("discriminator", "l2"):
            raise ConfigFileError(f"reward_mode must be discriminator or l2, got {self.reward_mode!r}")
        if self.reward_transform not in ("raw", "sigmoid", "log_sigmoid"):
            raise ConfigFileError(f"bad reward_transform {self.reward_transform!r}")
        if self.gp_weight < 0 or self.entropy_coef < 0:
            raise ConfigFileError("gp_weight and entropy_coef must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ConfigFileError("gamma must be in (0, 1]")
        if self.batch_size < 1 or self.workers < 1 or self.d_steps < 1 or self.iterations < 0:
            raise ConfigFileError("batch_size, workers, d_steps must be >= 1 and iterations >= 0")
        if not 1 <= self.grid <= 64:
            raise ConfigFileError("grid must be in [1, 64]")
        return self

    @property
    def steps(self) -> int:
        if self.episode_length:
            return self.episode_length
        return 10 if self.domain == "mnist" else 3

    def arch_overrides(self, network: str) -> dict:
        conv = self.conv_channels
        if network == "discriminator" and self.d_conv_channels:
            conv = self.d_conv_channels
        return dict(embed_dim=self.embed_dim, text_hidden=self.text_hidden, conv_channels=tuple(conv),
                    fusion_channels=self.fusion_channels, mlp_hidden=self.mlp_hidden,
                    core_hidden=self.core_hidden, action_embed=self.action_embed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_HINTS = get_type_hints(TrainConfig)


def coerce(key: str, raw: str):
    if key not in _HINTS:
        raise ConfigFileError(f"unknown config key {key!r}")
    typ = _HINTS[key]
    raw = raw.strip()
    try:
        if get_origin(typ) is tuple:
            inner = get_args(typ)[0]
            return tuple(inner(x) for x in raw.split(",") if x.strip())
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = coerce(k.strip(), v)
    return out


def load_config(path: Optional[str], **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return dataclasses.replace(TrainConfig(), **values).validate()
