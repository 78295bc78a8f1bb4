"""Reduced painting experiment: 16x16 stroke grid, five strokes per episode.

Trains one generator on synthetic glyphs (or IDX digits via ``--config``) and
reports the classifier-based Inception Score and FID of 1,000 samples:

    python scripts/paint_toy.py --seed 0 --reward-mode discriminator
    python scripts/paint_toy.py --seed 0 --reward-mode l2
"""
import argparse
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from iral.cli import classifier_for
from iral.config import TrainConfig, parse_config_text
from iral.glyphs import synthetic_digits
from iral.instructions import Constraint, generate
from iral.metrics import evaluate_mnist
from iral.training import Trainer, sample_episodes

TOY = dict(domain="mnist", grid=16, episode_length=5, batch_size=32, dataset_size=6000, glyph_count=6000,
           g_lr=3e-4, d_lr=1e-3, d_steps=5, iterations=1000, conv_channels=(8, 16, 32, 32), fusion_channels=32,
           mlp_hidden=32, core_hidden=64, text_hidden=32, embed_dim=16, action_embed=16)
N_SAMPLES = 1000
EVAL_SEED = 4242


def toy_config(**overrides) -> TrainConfig:
    return dataclasses.replace(TrainConfig(**TOY), **overrides).validate()


def reference(results: Path):
    """Fixed evaluation classifier and real reference set, shared by every run."""
    digits = synthetic_digits(6000, 31337)
    clf = classifier_for(digits, str(results / "paint_classifier.ckpt"), seed=0)
    return clf, digits.images[:N_SAMPLES]


def evaluate(tr: Trainer, clf, real, n: int = N_SAMPLES):
    labels = np.arange(n) % 10
    texts = [generate(Constraint("mnist", class_label=int(l))) for l in labels]
    imgs, _ = sample_episodes(tr.policy, tr.policy_arch, tr.env, texts, tr.cfg.steps, EVAL_SEED + 1000 * tr.cfg.seed)
    return evaluate_mnist(imgs, labels, clf, real, n // 10)


def run(cfg: TrainConfig, results: Path, eval_every: int = 0, log=print):
    clf, real = reference(results)
    tr = Trainer(cfg)
    t0 = time.time()

    def cb(trainer, m):
        if eval_every and trainer.iteration % eval_every == 0:
            r = evaluate(trainer, clf, real, 200)
            log(f"it={trainer.iteration} t={time.time() - t0:.0f}s reward={m.mean_reward:.4f} d_loss={m.d_loss:.4f} "
                f"IS200={r.inception_score:.3f} FID200={r.fid:.2f} acc={r.correctness:.2f}", flush=True)

    tr.train(cfg.iterations, callback=cb)
    seconds = time.time() - t0
    r = evaluate(tr, clf, real)
    return {"seed": cfg.seed, "reward_mode": cfg.reward_mode, "iteration": tr.iteration, "seconds": seconds,
            "config": cfg.digest(), "is": r.inception_score, "fid": r.fid, "correctness": r.correctness}


def cached_run(mode: str, seed: int, results: Path, **overrides) -> dict:
    """Result for one (mode, seed), reusing ``results/`` when the config digest matches."""
    cfg = toy_config(seed=seed, reward_mode=mode, **overrides)
    path = Path(results) / f"paint_{mode}_s{seed}.json"
    if path.exists():
        row = json.loads(path.read_text())
        if row.get("config") == cfg.digest():
            return row
    path.parent.mkdir(parents=True, exist_ok=True)
    row = run(cfg, Path(results))
    path.write_text(json.dumps(row, indent=1))
    return row


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reward-mode", default="discriminator", choices=["discriminator", "l2"])
    p.add_argument("--iterations", type=int, default=TOY["iterations"])
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--config", help="optional key = value file applied over the toy defaults")
    p.add_argument("--results", default="results")
    a = p.parse_args()
    over = parse_config_text(open(a.config).read()) if a.config else {}
    if a.iterations != TOY["iterations"] or a.eval_every or over:
        cfg = toy_config(seed=a.seed, reward_mode=a.reward_mode, iterations=a.iterations, **over)
        print(json.dumps(run(cfg, Path(a.results), a.eval_every)))
    else:
        print(json.dumps(cached_run(a.reward_mode, a.seed, Path(a.results))))


if __name__ == "__main__":
    main()
