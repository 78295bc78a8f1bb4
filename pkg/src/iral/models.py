"""Conditional discriminator and recurrent autoregressive policy.

Parameters are plain ``dict[str, Tensor]``; the forward functions are pure
functions of (inputs, params). Images are NHWC float arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    apply,
    broadcast_spatial,
    concat,
    conv2d,
    embedding,
    leaky_relu,
    linear,
    log_softmax,
    relu,
    sigmoid,
    softmax,
    sum_pool_spatial,
    tanh,
)
from .instructions import PAD_ID, VOCAB

Params = Dict[str, Tensor]

IMAGE_SIZE = 64


class ConfigError(ValueError):
    pass


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    arities: Tuple[int, ...]
    image_channels: int
    vocab_size: int = len(VOCAB)
    embed_dim: int = 32
    text_hidden: int = 64
    conv_channels: Tuple[int, ...] = (16, 32, 64, 64)
    conv_strides: Tuple[int, ...] = (2, 2, 2, 1)
    fusion_channels: int = 64
    fusion_layers: int = 4
    mlp_hidden: int = 64
    core_hidden: int = 128
    action_embed: int = 32
    leaky_alpha: float = 0.2

    @property
    def feature_size(self) -> int:
        s = IMAGE_SIZE
        for st in self.conv_strides:
            s = (s + 2 - 3) // st + 1
        return s

    def validate(self):
        if len(self.conv_channels) != len(self.conv_strides) or not self.conv_channels:
            raise ConfigError("conv_channels and conv_strides must have equal nonzero length")
        if any(a < 1 for a in self.arities) or not self.arities:
            raise ConfigError(f"bad action arities {self.arities}")
        if self.image_channels not in (1, 3):
            raise ConfigError("image_channels must be 1 or 3")
        for name in ("embed_dim", "text_hidden", "fusion_channels", "fusion_layers", "mlp_hidden",
                     "core_hidden", "action_embed", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.feature_size < 1:
            raise ConfigError("conv stack collapses the image")


# -- initialization -----------------------------------------------------------

# layers whose output goes through a rectifier get the He gain
_RECTIFIED = ("conv", "fuse", "mlp0", "img")


def _uniform(rng, shape, fan_in, name=""):
    scale = 6.0 if name.startswith(_RECTIFIED) else 1.0
    bound = np.sqrt(scale / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _param_shapes(arch: ArchConfig, which: str) -> List[Tuple[str, Tuple[int, ...], int]]:
    """(name, shape, fan_in) for every tensor; fan_in 0 means zero init."""
    E, H = arch.embed_dim, arch.text_hidden
    out = [
        ("embed", (arch.vocab_size, E), 1),
        ("text.wx", (E, 4 * H), E),
        ("text.wh", (H, 4 * H), H),
        ("text.b", (4 * H,), 0),
    ]
    cin = arch.image_channels
    for k, c in enumerate(arch.conv_channels):
        out += [(f"conv{k}.w", (3, 3, cin, c), 9 * cin), (f"conv{k}.b", (c,), 0)]
        cin = c
    fs = arch.feature_size
    if which == "discriminator":
        cin = arch.conv_channels[-1] + H
        for j in range(arch.fusion_layers):
            out += [(f"fuse{j}.w", (cin, arch.fusion_channels), cin), (f"fuse{j}.b", (arch.fusion_channels,), 0)]
            cin = arch.fusion_channels
        out += [
            ("mlp0.w", (cin, arch.mlp_hidden), cin), ("mlp0.b", (arch.mlp_hidden,), 0),
            ("mlp1.w", (arch.mlp_hidden, 1), arch.mlp_hidden), ("mlp1.b", (1,), 0),
        ]
    elif which == "policy":
        C = arch.core_hidden
        flat = fs * fs * arch.conv_channels[-1]
        out += [("img.w", (flat, C), flat), ("img.b", (C,), 0)]
        for c, n in enumerate(arch.arities):
            out.append((f"prev{c}", (n + 1, arch.action_embed), arch.action_embed))
        fin = H + C + len(arch.arities) * arch.action_embed
        out += [
            ("fuse.w", (fin, C), fin), ("fuse.b", (C,), 0),
            ("core.wx", (C, 4 * C), C), ("core.wh", (C, 4 * C), C), ("core.b", (4 * C,), 0),
            ("value.w", (C, 1), C), ("value.b", (1,), 0),
        ]
        for c, n in enumerate(arch.arities):
            out += [(f"head{c}.w", (C, n), C), (f"head{c}.b", (n,), 0)]
            if c < len(arch.arities) - 1:
                out.append((f"emit{c}", (n, C), C))
    else:
        raise ConfigError(f"unknown network {which}")
    return out


def init_params(arch: ArchConfig, seed: int, which: str) -> Params:
    """Deterministic uniform fan-in initialization; biases start at zero.

    Bounds are sqrt(6 / fan_in) for rectified layers and 1 / sqrt(fan_in) elsewhere.
    """
    arch.validate()
    rng = np.random.default_rng([seed, 0 if which == "policy" else 1])
    params = {}
    for name, shape, fan_in in _param_shapes(arch, which):
        data = _uniform(rng, shape, fan_in, name) if fan_in else np.zeros(shape, dtype=np.float32)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def param_count(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


# -- shared pieces ------------------------------------------------------------

def lstm_cell(x, h, c, wx, wh, b):
    n = h.shape[-1]
    gates = apply("bias_add", [apply("add", [apply("matmul", [x, wx]), apply("matmul", [h, wh])]), b])
    i = sigmoid(apply("slice", [gates], axis=-1, start=0, stop=n))
    f = sigmoid(apply("slice", [gates], axis=-1, start=n, stop=2 * n))
    g = tanh(apply("slice", [gates], axis=-1, start=2 * n, stop=3 * n))
    o = sigmoid(apply("slice", [gates], axis=-1, start=3 * n, stop=4 * n))
    c = f * c + i * g
    h = o * tanh(c)
    return h, c


def encode_text(tokens: np.ndarray, params: Params, arch: ArchConfig) -> Tensor:
    """Final LSTM state over right-padded token ids (B, L)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise ConfigError("tokens must be a non-empty (B, L) array")
    B = tokens.shape[0]
    H = arch.text_hidden
    h = Tensor(np.zeros((B, H), dtype=np.float32))
    c = Tensor(np.zeros((B, H), dtype=np.float32))
    for t in range(tokens.shape[1]):
        col = tokens[:, t]
        x = embedding(params["embed"], col)
        h2, c2 = lstm_cell(x, h, c, params["text.wx"], params["text.wh"], params["text.b"])
        live = col != PAD_ID
        if live.all():
            h, c = h2, c2
        else:
            m = Tensor(live.astype(np.float32)[:, None])
            h = h + m * (h2 - h)
            c = c + m * (c2 - c)
    return h


def encode_image(image, params: Params, arch: ArchConfig, act) -> Tensor:
    h = image
    for k, st in enumerate(arch.conv_strides):
        h = act(conv2d(h, params[f"conv{k}.w"], params[f"conv{k}.b"], stride=st, padding=1))
    return h


def _check_image(image, arch: ArchConfig):
    shape = image.shape
    if len(shape) != 4 or shape[1:] != (IMAGE_SIZE, IMAGE_SIZE, arch.image_channels):
        raise ShapeError(f"expected (N, {IMAGE_SIZE}, {IMAGE_SIZE}, {arch.image_channels}) images, got {shape}")


# -- discriminator --------------------------------------------------------------

def discriminator_forward(image, tokens, params: Params, arch: ArchConfig, text: Optional[Tensor] = None) -> Tensor:
    """Raw (unsquashed) realness scores, shape (N,)."""
    _check_image(image, arch)
    leaky = lambda z: leaky_relu(z, arch.leaky_alpha)  # noqa: E731
    q = encode_text(tokens, params, arch) if text is None else text
    if q.shape[0] != image.shape[0]:
        raise ShapeError("image and instruction batch sizes differ")
    feat = encode_image(image, params, arch, leaky)
    fs = feat.shape[1]
    z = concat([feat, broadcast_spatial(q, fs, fs)], axis=-1)
    for j in range(arch.fusion_layers):
        z = leaky(linear(z, params[f"fuse{j}.w"], params[f"fuse{j}.b"]))
    p = sum_pool_spatial(z)
    p = leaky(linear(p, params["mlp0.w"], params["mlp0.b"]))
    s = linear(p, params["mlp1.w"], params["mlp1.b"])
    return s.reshape(s.shape[0])


# -- policy ---------------------------------------------------------------------

@dataclass
class PolicyHidden:
    h: Tensor
    c: Tensor
    text: Tensor
    arities: Tuple[int, ...]

    @property
    def batch(self) -> int:
        return self.h.shape[0]


@dataclass
class PolicyStepOutput:
    action: np.ndarray                 # (B, n_components) ints, decode order
    component_logp: List[Tensor]       # each (B,)
    logp: Tensor                       # (B,) joint log-probability
    value: Tensor                      # (B,)
    hidden: PolicyHidden
    component_entropy: List[Tensor]    # each (B,)
    entropy: Tensor                    # (B,)
    probs: List[np.ndarray] = field(default_factory=list)  # head distributions actually used


def reset_hidden(tokens, params: Params, arch: ArchConfig) -> PolicyHidden:
    tokens = np.asarray(tokens)
    B, C = tokens.shape[0], arch.core_hidden
    zeros = np.zeros((B, C), dtype=np.float32)
    return PolicyHidden(Tensor(zeros), Tensor(zeros.copy()), encode_text(tokens, params, arch), tuple(arch.arities))


def null_action(batch: int, arch: ArchConfig) -> np.ndarray:
    return np.full((batch, len(arch.arities)), -1, dtype=np.int64)


def _choose(probs: np.ndarray, rng, mode: str) -> np.ndarray:
    if mode == "greedy":
        return probs.argmax(axis=-1)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs.astype(np.float64), axis=-1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def policy_step(tokens, prev_image, prev_action, hidden: PolicyHidden, params: Params, rng,
                mode: str = "sample", arch: ArchConfig = None,
                forced_action: Optional[np.ndarray] = None) -> PolicyStepOutput:
    """One recurrent step: embed inputs, advance the core LSTM, decode an action.

    Components are decoded in order; each head sees the LSTM output plus the
    embeddings of components already emitted in this step. ``forced_action``
    scores a given action instead of choosing one.
    """
    if arch is None:
        raise ConfigError("policy_step needs the architecture config")
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown mode {mode}")
    B = hidden.batch
    if tuple(hidden.arities) != tuple(arch.arities) or hidden.h.shape[1] != arch.core_hidden:
        raise StateError("hidden state belongs to a different domain/architecture")
    if prev_image.shape[0] != B or np.asarray(prev_action).shape != (B, len(arch.arities)):
        raise StateError("batch size of inputs does not match the hidden state")
    _check_image(prev_image, arch)

    feat = encode_image(prev_image if isinstance(prev_image, Tensor) else Tensor(prev_image), params, arch, relu)
    feat = relu(linear(feat.reshape(B, -1), params["img.w"], params["img.b"]))
    prev_action = np.asarray(prev_action)
    embs = []
    for c, n in enumerate(arch.arities):
        ids = np.where(prev_action[:, c] < 0, n, prev_action[:, c])
        embs.append(embedding(params[f"prev{c}"], ids))
    x = relu(linear(concat([hidden.text, feat] + embs, axis=-1), params["fuse.w"], params["fuse.b"]))
    h, cell = lstm_cell(x, hidden.h, hidden.c, params["core.wx"], params["core.wh"], params["core.b"])
    value = linear(h, params["value.w"], params["value.b"]).reshape(B)

    ctx = h
    action = np.zeros((B, len(arch.arities)), dtype=np.int64)
    comp_lp, comp_ent, probs_used = [], [], []
    for c, n in enumerate(arch.arities):
        logits = linear(ctx, params[f"head{c}.w"], params[f"head{c}.b"])
        lp_all = log_softmax(logits)
        p = np.exp(lp_all.data.astype(np.float64))
        probs_used.append(p)
        a = forced_action[:, c].astype(np.int64) if forced_action is not None else _choose(p, rng, mode)
        action[:, c] = a
        onehot = np.zeros((B, n), dtype=lp_all.data.dtype)
        onehot[np.arange(B), a] = 1.0
        comp_lp.append((lp_all * Tensor(onehot)).sum(axis=-1))
        comp_ent.append(-(softmax(logits) * lp_all).sum(axis=-1))
        if c < len(arch.arities) - 1:
            ctx = ctx + embedding(params[f"emit{c}"], a)
    logp = comp_lp[0]
    ent = comp_ent[0]
    for lp, e in zip(comp_lp[1:], comp_ent[1:]):
        logp = logp + lp
        ent = ent + e
    new_hidden = PolicyHidden(h, cell, hidden.text, hidden.arities)
    return PolicyStepOutput(action, comp_lp, logp, value, new_hidden, comp_ent, ent, probs_used)


def arch_for_env(env, **overrides) -> ArchConfig:
    return ArchConfig(arities=tuple(env.arities), image_channels=env.channels, **overrides)
