"""Reinforced adversarial training: rollouts, rewards, A2C generator updates,
and discriminator updates with a gradient penalty.

A ``Trajectory`` holds a batch of B episodes of equal length T. Per-step
log-probabilities, values and entropies are live graph tensors of shape (B,)
so the A2C loss can be backpropagated without re-running the policy.

Randomness: every random draw comes from
``np.random.default_rng([seed, iteration, stream, worker])`` with a fixed
stream id per use, so a run resumed at iteration k sees exactly the numbers
an uninterrupted run would.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .autodiff import (
    AdamState,
    NonFiniteGradient,
    NonFiniteValue,
    Tensor,
    adam_step,
    backward,
    concat,
    input_gradient,
    l2_norm,
    log_sigmoid,
    no_grad,
)
from .config import TrainConfig
from .env_paint import PaintEnv
from .env_scene import SceneEnv
from .instructions import Dataset, build_dataset, pad_tokens, tokenize
from .models import (
    ArchConfig,
    Params,
    arch_for_env,
    discriminator_forward,
    encode_text,
    init_params,
    null_action,
    policy_step,
    reset_hidden,
)

log = logging.getLogger(__name__)

STREAM_DATA, STREAM_ROLLOUT, STREAM_DISC, STREAM_DFRESH = 0, 1, 2, 3


class RewardMissing(ValueError):
    pass


class BatchError(ValueError):
    pass


def stream_rng(seed: int, iteration: int, stream: int, worker: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, stream, worker])


@dataclass
class Trajectory:
    tokens: np.ndarray                    # (B, L)
    actions: List[np.ndarray]             # T x (B, n_components)
    logp: List[Tensor]                    # T x (B,)
    values: List[Tensor]                  # T x (B,)
    entropies: List[Tensor]               # T x (B,)
    final_images: np.ndarray              # (B, 64, 64, C)
    final_states: list
    reward: Optional[np.ndarray] = None   # (B,)
    returns: Optional[np.ndarray] = None  # (T, B)

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def batch(self) -> int:
        return self.final_images.shape[0]


def make_env(domain: str, grid: int, steps: int):
    if domain == "scene":
        return SceneEnv(grid, steps)
    if domain == "mnist":
        return PaintEnv(grid, steps)
    raise ValueError(f"unknown domain {domain}")


def rollout(policy_params: Params, env, tokens, T: int, rng, arch: ArchConfig,
            mode: str = "sample") -> Trajectory:
    """Run T policy/environment alternations for a batch of instructions."""
    tokens = np.asarray(tokens)
    B = tokens.shape[0]
    states = [env.reset() for _ in range(B)]
    blank = env.render(states[0])
    img = np.broadcast_to(blank, (B,) + blank.shape).copy()
    hidden = reset_hidden(tokens, policy_params, arch)
    prev = null_action(B, arch)
    actions, logps, values, ents = [], [], [], []
    for _ in range(T):
        out = policy_step(tokens, img, prev, hidden, policy_params, rng, mode, arch)
        states = [env.step(s, env.from_components(a)) for s, a in zip(states, out.action)]
        img = np.stack([env.render(s) for s in states])
        actions.append(out.action)
        logps.append(out.logp)
        values.append(out.value)
        ents.append(out.entropy)
        hidden, prev = out.hidden, out.action
    return Trajectory(tokens, actions, logps, values, ents, img, states)


def transform_score(score: np.ndarray, how: str = "raw") -> np.ndarray:
    if how == "raw":
        return score
    if how == "sigmoid":
        return 1.0 / (1.0 + np.exp(-score))
    if how == "log_sigmoid":
        return np.minimum(score, 0) - np.log1p(np.exp(-np.abs(score)))
    raise ValueError(f"unknown reward transform {how}")


def assign_reward_discriminator(traj: Trajectory, disc_params: Params, arch: ArchConfig,
                                tokens=None, how: str = "raw") -> Trajectory:
    tokens = traj.tokens if tokens is None else np.asarray(tokens)
    with no_grad():
        s = discriminator_forward(traj.final_images, tokens, disc_params, arch).data
    traj.reward = transform_score(s.astype(np.float64), how)
    return traj


def l2_reward(generated: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Negative mean squared pixel difference per image."""
    generated = np.asarray(generated, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if generated.shape != goal.shape:
        from .autodiff import ShapeError
        raise ShapeError(f"generated {generated.shape} vs goal {goal.shape}")
    axes = tuple(range(1, generated.ndim)) if generated.ndim > 3 else None
    return -((generated - goal) ** 2).mean(axis=axes)


def assign_reward_l2(traj: Trajectory, goal_images: np.ndarray) -> Trajectory:
    traj.reward = l2_reward(traj.final_images, goal_images)
    return traj


def compute_returns(traj: Trajectory, gamma: float = 1.0) -> np.ndarray:
    """Terminal-only reward discounted back: R_t = gamma^(T-t) * R for t = 1..T."""
    if traj.reward is None:
        raise RewardMissing("assign a reward before computing returns")
    T = traj.length
    powers = np.array([gamma ** (T - 1 - t) for t in range(T)], dtype=np.float64)
    traj.returns = powers[:, None] * np.asarray(traj.reward, dtype=np.float64)[None, :]
    return traj.returns


def a2c_loss(trajs: Sequence[Trajectory], value_coef: float = 0.5, entropy_coef: float = 0.01) -> Tensor:
    """Batch-averaged actor-critic loss; the advantage is a constant in the policy term."""
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    total = None
    count = 0
    for tr in trajs:
        if tr.returns is None:
            raise RewardMissing("compute returns before the loss")
        for t in range(tr.length):
            v = tr.values[t]
            R = tr.returns[t].astype(v.data.dtype)
            adv = Tensor(R - v.data)
            term = -(tr.logp[t] * adv).sum()
            if value_coef:
                d = Tensor(R) - v
                term = term + (d * d).sum() * value_coef
            if entropy_coef:
                term = term - tr.entropies[t].sum() * entropy_coef
            total = term if total is None else total + term
        count += tr.batch
    return total / count


def discriminator_loss(real_images, real_tokens, fake_images, fake_tokens, disc_params: Params,
                       arch: ArchConfig, rng, gp_weight: float = 10.0):
    """Log-loss on real/fake pairs plus the interpolate gradient penalty.

    Returns (loss tensor, dict of float parts).
    """
    real_images = np.asarray(real_images)
    fake_images = np.asarray(fake_images)
    real_tokens = np.asarray(real_tokens)
    fake_tokens = np.asarray(fake_tokens)
    n = real_images.shape[0]
    if n == 0 or fake_images.shape[0] != n or real_tokens.shape[0] != n or fake_tokens.shape[0] != n:
        raise BatchError("real and fake batches must be non-empty and equally sized")
    if real_tokens.shape != fake_tokens.shape or (real_tokens != fake_tokens).any():
        raise BatchError("real/fake pairs must share their instruction")
    q = encode_text(real_tokens, disc_params, arch)
    both = np.concatenate([real_images, fake_images]).astype(np.float32, copy=False)
    scores = discriminator_forward(both, None, disc_params, arch, text=concat([q, q], axis=0))
    s_real = _take(scores, 0, n)
    s_fake = _take(scores, n, 2 * n)
    real_term = -log_sigmoid(s_real).mean()
    fake_term = -log_sigmoid(-s_fake).mean()
    loss = real_term + fake_term
    parts = {"real": real_term.item(), "fake": fake_term.item(), "penalty": 0.0}
    if gp_weight > 0:
        u = rng.random(n).astype(np.float32)[:, None, None, None]
        x_hat = (u * real_images + (1 - u) * fake_images).astype(np.float32)
        gx = input_gradient(lambda x: discriminator_forward(x, None, disc_params, arch, text=q).sum(), x_hat)
        norms = l2_norm(gx, axis=(1, 2, 3))
        d = norms - 1.0
        pen = (d * d).mean() * gp_weight
        loss = loss + pen
        parts["penalty"] = pen.item()
    return loss, parts


def _take(t: Tensor, start: int, stop: int) -> Tensor:
    from .autodiff import apply
    return apply("slice", [t], axis=0, start=start, stop=stop)


# -- data sources -----------------------------------------------------------------

def load_digits(cfg: TrainConfig):
    from .glyphs import synthetic_digits
    if cfg.idx_images:
        from .io import load_idx
        return load_idx(cfg.idx_images, cfg.idx_labels)
    return synthetic_digits(cfg.glyph_count, cfg.seed + 7919)


class GoalSource:
    """Maps dataset records to goal images (scene goals are rendered and cached)."""

    def __init__(self, env, digits=None):
        self.env = env
        self.digits = digits
        self._cache: Dict[object, np.ndarray] = {}

    def image(self, record) -> np.ndarray:
        if isinstance(record.goal, (int, np.integer)):
            return self.digits.images[int(record.goal)]
        img = self._cache.get(record.goal)
        if img is None:
            img = self.env.render_object(record.goal)
            self._cache[record.goal] = img
        return img

    def images(self, records) -> np.ndarray:
        return np.stack([self.image(r) for r in records])


# -- the training loop --------------------------------------------------------------

LOG_HEADER = "iteration\tg_loss\td_loss\tmean_reward\twall_clock"


@dataclass
class IterationMetrics:
    iteration: int
    g_loss: float
    d_loss: float
    mean_reward: float
    wall_clock: float

    def line(self, deterministic: bool) -> str:
        wall = "-" if deterministic else f"{self.wall_clock:.3f}"
        return f"{self.iteration}\t{self.g_loss!r}\t{self.d_loss!r}\t{self.mean_reward!r}\t{wall}"


class Trainer:
    """Owns parameters, optimizer states and the iteration counter of one run."""

    def __init__(self, cfg: TrainConfig, dataset: Optional[Dataset] = None, digits=None):
        cfg.validate()
        self.cfg = cfg
        self.env = make_env(cfg.domain, cfg.grid, cfg.steps)
        self.digits = digits
        if cfg.domain == "mnist" and self.digits is None:
            self.digits = load_digits(cfg)
        if dataset is None:
            size = cfg.dataset_size or (60000 if cfg.domain == "mnist" else 32318)
            src = self.digits if cfg.domain == "mnist" else self.env
            dataset = build_dataset(cfg.domain, size, cfg.seed, src)
        self.dataset = dataset
        self.goals = GoalSource(self.env, self.digits)
        self.tokens = [tokenize(r.instruction) for r in dataset.records]
        self.policy_arch = arch_for_env(self.env, **cfg.arch_overrides("policy"))
        self.disc_arch = arch_for_env(self.env, **cfg.arch_overrides("discriminator"))
        self.policy = init_params(self.policy_arch, cfg.seed, "policy")
        self.g_opt = AdamState(lr=cfg.g_lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
        self.disc: Optional[Params] = None
        self.d_opt: Optional[AdamState] = None
        if cfg.reward_mode == "discriminator":
            self.disc = init_params(self.disc_arch, cfg.seed, "discriminator")
            self.d_opt = AdamState(lr=cfg.d_lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
        self.iteration = 0
        self.history: List[IterationMetrics] = []
        self._pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 and not cfg.deterministic else None

    # -- pieces --------------------------------------------------------------
    def sample_records(self, rng, n: int):
        idx = rng.integers(len(self.dataset), size=n)
        recs = [self.dataset.records[i] for i in idx]
        toks = pad_tokens([self.tokens[i] for i in idx])
        return recs, toks

    def _chunks(self, n: int) -> List[slice]:
        w = min(self.cfg.workers, n)
        bounds = np.linspace(0, n, w + 1).astype(int)
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def collect(self, tokens, it: int, stream: int = STREAM_ROLLOUT) -> List[Trajectory]:
        """Roll out the batch split over workers, each with its own seeded rng."""
        jobs = [(k, sl) for k, sl in enumerate(self._chunks(len(tokens)))]

        def work(job):
            k, sl = job
            return rollout(self.policy, self.env, tokens[sl], self.cfg.steps,
                           stream_rng(self.cfg.seed, it, stream, k), self.policy_arch)

        if self._pool is not None:
            return list(self._pool.map(work, jobs))
        return [work(j) for j in jobs]

    def _reward(self, trajs, goal_images):
        off = 0
        for tr in trajs:
            b = tr.batch
            if self.cfg.reward_mode == "l2":
                assign_reward_l2(tr, goal_images[off:off + b])
            else:
                assign_reward_discriminator(tr, self.disc, self.disc_arch, how=self.cfg.reward_transform)
            compute_returns(tr, self.cfg.gamma)
            off += b

    def _apply(self, loss: Tensor, params: Params, opt: AdamState, what: str) -> bool:
        try:
            backward(loss, wrt=params.values())
            grads = {k: p.grad for k, p in params.items()}
            adam_step(params, grads, opt)
        except (NonFiniteGradient, NonFiniteValue) as exc:
            log.warning("iteration %d: %s step skipped (%s)", self.iteration, what, exc)
            return False
        return True

    def step(self) -> IterationMetrics:
        cfg, it = self.cfg, self.iteration
        t0 = time.perf_counter()
        recs, toks = self.sample_records(stream_rng(cfg.seed, it, STREAM_DATA), cfg.batch_size)
        goal_images = self.goals.images(recs)
        g_loss = d_loss = float("nan")
        mean_reward = float("nan")
        fakes = None
        try:
            trajs = self.collect(toks, it)
            self._reward(trajs, goal_images)
            mean_reward = float(np.mean(np.concatenate([t.reward for t in trajs])))
            loss = a2c_loss(trajs, cfg.value_coef, cfg.entropy_coef)
            g_loss = loss.item()
            fakes = np.concatenate([t.final_images for t in trajs])
            self._apply(loss, self.policy, self.g_opt, "generator")
        except NonFiniteValue as exc:
            log.warning("iteration %d: generator step skipped (%s)", it, exc)

        if self.disc is not None:
            for j in range(cfg.d_steps):
                if j == 0 and fakes is not None:
                    real, rtoks, fake = goal_images, toks, fakes
                else:
                    r2, rtoks = self.sample_records(stream_rng(cfg.seed, it, STREAM_DFRESH, j), cfg.batch_size)
                    real = self.goals.images(r2)
                    with no_grad():
                        fake = np.concatenate([t.final_images for t in self.collect(rtoks, it, 10 + j)])
                try:
                    loss, _ = discriminator_loss(real, rtoks, fake, rtoks, self.disc, self.disc_arch,
                                                 stream_rng(cfg.seed, it, STREAM_DISC, j), cfg.gp_weight)
                    d_loss = loss.item()
                    self._apply(loss, self.disc, self.d_opt, "discriminator")
                except NonFiniteValue as exc:
                    log.warning("iteration %d: discriminator step skipped (%s)", it, exc)
        self.iteration += 1
        m = IterationMetrics(it, g_loss, d_loss, mean_reward, time.perf_counter() - t0)
        self.history.append(m)
        return m

    def train(self, iterations: Optional[int] = None, log_path: Optional[str] = None,
              checkpoint_dir: Optional[str] = None, callback: Optional[Callable] = None):
        """Run until ``iterations`` total iterations have been done."""
        target = self.cfg.iterations if iterations is None else iterations
        fh = None
        if log_path:
            new = not Path(log_path).exists() or Path(log_path).stat().st_size == 0
            fh = open(log_path, "a")
            if new:
                fh.write(f"# domain={self.cfg.domain} seed={self.cfg.seed} config={self.cfg.digest()}\n")
                fh.write(LOG_HEADER + "\n")
        try:
            while self.iteration < target:
                m = self.step()
                if fh:
                    fh.write(m.line(self.cfg.deterministic) + "\n")
                    fh.flush()
                if checkpoint_dir and self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                    self.save(Path(checkpoint_dir) / f"ckpt_{self.iteration:07d}.bin")
                if callback:
                    callback(self, m)
        finally:
            if fh:
                fh.close()
        return self.history

    # -- persistence -----------------------------------------------------------
    def save(self, path):
        from .io import save_checkpoint
        save_checkpoint(path, self.checkpoint_state())

    def checkpoint_state(self) -> dict:
        tensors = {f"policy/{k}": p.data for k, p in self.policy.items()}
        opts = {"policy": self.g_opt}
        if self.disc is not None:
            tensors.update({f"disc/{k}": p.data for k, p in self.disc.items()})
            opts["disc"] = self.d_opt
        for name, st in opts.items():
            for k, v in st.m.items():
                tensors[f"adam/{name}/m/{k}"] = v
            for k, v in st.v.items():
                tensors[f"adam/{name}/v/{k}"] = v
        meta = {
            "config": self.cfg.to_text(),
            "iteration": self.iteration,
            "optimizers": {n: {"t": s.t, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}
                           for n, s in opts.items()},
            "rng": {"scheme": "default_rng([seed, iteration, stream, worker])", "seed": self.cfg.seed,
                    "next_iteration": self.iteration},
        }
        return {"domain": self.cfg.domain, "iteration": self.iteration, "tensors": tensors, "meta": meta}

    def load_state(self, state: dict):
        from .io import DomainMismatch
        if state["domain"] != self.cfg.domain:
            raise DomainMismatch(f"checkpoint is {state['domain']}, run is {self.cfg.domain}")
        t = state["tensors"]
        for k, p in self.policy.items():
            p.data = t[f"policy/{k}"].copy()
        opts = {"policy": self.g_opt}
        if self.disc is not None:
            for k, p in self.disc.items():
                p.data = t[f"disc/{k}"].copy()
            opts["disc"] = self.d_opt
        for name, st in opts.items():
            o = state["meta"]["optimizers"][name]
            st.t, st.lr, st.beta1, st.beta2, st.eps = o["t"], o["lr"], o["beta1"], o["beta2"], o["eps"]
            st.m = {k[len(f"adam/{name}/m/"):]: v.copy() for k, v in t.items() if k.startswith(f"adam/{name}/m/")}
            st.v = {k[len(f"adam/{name}/v/"):]: v.copy() for k, v in t.items() if k.startswith(f"adam/{name}/v/")}
        self.iteration = int(state["iteration"])

    @classmethod
    def from_checkpoint(cls, path, dataset=None, digits=None, **overrides) -> "Trainer":
        import dataclasses
        from .config import parse_config_text
        from .io import load_checkpoint
        state = load_checkpoint(path)
        cfg = dataclasses.replace(TrainConfig(), **parse_config_text(state["meta"]["config"]))
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        tr = cls(cfg, dataset=dataset, digits=digits)
        tr.load_state(state)
        return tr


def sample_episodes(policy_params: Params, arch: ArchConfig, env, instructions: Sequence[str], T: int,
                    seed: int = 0, mode: str = "sample", chunk: int = 256):
    """Run the policy without recording a graph; returns (images, final states)."""
    toks = pad_tokens([tokenize(t) for t in instructions])
    imgs, states = [], []
    with no_grad():
        for k, i in enumerate(range(0, len(toks), chunk)):
            tr = rollout(policy_params, env, toks[i:i + chunk], T, np.random.default_rng([seed, 99, k]), arch, mode)
            imgs.append(tr.final_images)
            states.extend(tr.final_states)
    return np.concatenate(imgs), states
