"""Command-line entry point: gen-data, train, sample, eval, render-script.

Configuration precedence, lowest to highest: built-in defaults, the
``--config`` file, explicit flags. Flags that have no effect under the chosen
reward mode (``--d-lr``, ``--gp-weight``, ``--d-steps``, ``--reward-transform``
with ``--reward-mode l2``) are accepted, recorded as warnings, and ignored.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigFileError, TrainConfig, load_config

log = logging.getLogger("iral")

DISC_ONLY_FLAGS = ("d_lr", "gp_weight", "d_steps", "reward_transform")

# flag name -> TrainConfig field, for train overrides
TRAIN_FLAGS = {
    "domain": str, "seed": int, "reward_mode": str, "iterations": int, "grid": int, "episode_length": int,
    "batch_size": int, "g_lr": float, "d_lr": float, "gp_weight": float, "entropy_coef": float,
    "d_steps": int, "workers": int, "checkpoint_every": int, "dataset_size": int, "reward_transform": str,
    "idx_images": str, "idx_labels": str,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iral", description="Instruction-conditioned reinforced adversarial image programs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="build a dataset manifest (and scene goal images)")
    g.add_argument("--domain", required=True, choices=["scene", "mnist"])
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--grid", type=int, default=32)
    g.add_argument("--idx-images", default="")
    g.add_argument("--idx-labels", default="")
    g.add_argument("--glyph-count", type=int, default=6000)

    t = sub.add_parser("train", help="train a generator")
    t.add_argument("--config")
    t.add_argument("--out-dir")
    t.add_argument("--dataset", help="manifest from gen-data (default: build from the config)")
    t.add_argument("--resume", help="checkpoint to continue from")
    det = t.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    det.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    for name, typ in TRAIN_FLAGS.items():
        kw = {"choices": ["discriminator", "l2"]} if name == "reward_mode" else {}
        if name == "domain":
            kw = {"choices": ["scene", "mnist"]}
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, **kw)

    s = sub.add_parser("sample", help="draw samples for one instruction")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--instruction", required=True)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--greedy", action="store_true")

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", help="manifest of real data (mnist: FID reference)")
    e.add_argument("--n", type=int, default=0, help="samples per instruction (default: scene 10, mnist 100)")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--classifier", help="classifier checkpoint (trained and cached if missing)")

    r = sub.add_parser("render-script", help="render an action script to PNG")
    r.add_argument("--domain", required=True, choices=["scene", "mnist"])
    r.add_argument("--script", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--grid", type=int, default=32)
    return p


def resolve_train_config(args) -> tuple:
    """Merge defaults, config file and flags; returns (config, warnings)."""
    flags = {k: getattr(args, k) for k in list(TRAIN_FLAGS) + ["deterministic"] if getattr(args, k) is not None}
    if args.out_dir:
        flags["out_dir"] = args.out_dir
    cfg = load_config(args.config, **flags)
    warnings = []
    if cfg.reward_mode == "l2":
        for k in DISC_ONLY_FLAGS:
            if k in flags:
                warnings.append(f"--{k.replace('_', '-')} has no effect with --reward-mode l2; ignored")
    return cfg, warnings


def _stamp(cfg: TrainConfig) -> dict:
    return {"config": cfg.digest(), "seed": str(cfg.seed)}


def cmd_gen_data(args) -> int:
    from .env_scene import SceneEnv
    from .instructions import build_dataset
    from .io import write_manifest
    from .training import load_digits

    cfg = TrainConfig(domain=args.domain, grid=args.grid, seed=args.seed, idx_images=args.idx_images,
                      idx_labels=args.idx_labels, glyph_count=args.glyph_count).validate()
    env = SceneEnv(args.grid) if args.domain == "scene" else None
    src = env if args.domain == "scene" else load_digits(cfg)
    ds = build_dataset(args.domain, args.count, args.seed, src)
    path = write_manifest(ds, args.out, env, config_hash=cfg.digest())
    print(f"wrote {len(ds)} records to {path}")
    return 0


def cmd_train(args) -> int:
    from .io import read_manifest
    from .training import Trainer

    cfg, warnings = resolve_train_config(args)
    for w in warnings:
        log.warning(w)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = cfg.to_text() + "".join(f"# warning: {w}\n" for w in warnings)
    (out / "config.txt").write_text(text)
    print(text, end="")
    dataset = read_manifest(args.dataset) if args.dataset else None
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, dataset=dataset, iterations=cfg.iterations, out_dir=cfg.out_dir)
    else:
        trainer = Trainer(cfg, dataset=dataset)
    trainer.train(cfg.iterations, log_path=str(out / "metrics.tsv"), checkpoint_dir=str(out))
    trainer.save(out / "final.ckpt")
    last = trainer.history[-1] if trainer.history else None
    print(f"done: {trainer.iteration} iterations" + (f", last mean reward {last.mean_reward:.4f}" if last else ""))
    return 0


def _load_generator(path):
    from .training import Trainer
    tr = Trainer.from_checkpoint(path, dataset_size=64)
    return tr


def cmd_sample(args) -> int:
    from .io import export_outputs
    from .training import sample_episodes

    tr = _load_generator(args.checkpoint)
    imgs, _ = sample_episodes(tr.policy, tr.policy_arch, tr.env, [args.instruction] * args.n, tr.cfg.steps,
                              args.seed, "greedy" if args.greedy else "sample")
    out = Path(args.out)
    paths = export_outputs([list(imgs)], None, out.parent if out.suffix else out,
                           out.stem if out.suffix else "samples", _stamp(tr.cfg))
    print("\n".join(str(p) for p in paths))
    return 0


def cmd_eval(args) -> int:
    from .io import export_outputs, read_manifest
    from .metrics import evaluate_mnist, evaluate_scene
    from .training import sample_episodes

    tr = _load_generator(args.checkpoint)
    cfg, env = tr.cfg, tr.env
    out = Path(args.out)
    if cfg.domain == "scene":
        n = args.n or 10
        sheet = []

        def sample_fn(text, k):
            imgs, states = sample_episodes(tr.policy, tr.policy_arch, env, [text] * k, cfg.steps,
                                           args.seed + len(sheet))
            sheet.append(list(imgs))
            return states

        report = evaluate_scene(env, sample_fn, n)
    else:
        n = args.n or 100
        digits = tr.digits
        clf = classifier_for(digits, args.classifier or str(out / "classifier.ckpt"), cfg.seed)
        labels = np.repeat(np.arange(10), n)
        from .instructions import Constraint, generate
        texts = [generate(Constraint("mnist", class_label=int(l))) for l in labels]
        imgs, _ = sample_episodes(tr.policy, tr.policy_arch, env, texts, cfg.steps, args.seed)
        if args.dataset:
            idx = np.array([r.goal for r in read_manifest(args.dataset).records])
            real = digits.images[idx]
        else:
            real = digits.images
        report = evaluate_mnist(imgs, labels, clf, real[: max(len(imgs), 1000)], n)
        report.extra["classifier_accuracy"] = clf.heldout_accuracy
        sheet = [list(imgs[labels == l][:10]) for l in range(10)]
    export_outputs(sheet, report, out, "eval", _stamp(cfg))
    print(report.to_record())
    return 0


def classifier_for(digits, path: str, seed: int):
    """Load a cached classifier or train one and cache it."""
    from .autodiff import Tensor
    from .io import load_checkpoint, save_checkpoint
    from .metrics import ClassifierParams, train_classifier

    p = Path(path)
    if p.exists():
        st = load_checkpoint(p, domain="classifier")
        params = {k: Tensor(v) for k, v in st["tensors"].items()}
        return ClassifierParams(params, st["meta"]["feature_dim"], st["meta"]["heldout_accuracy"], st["meta"]["seed"])
    clf = train_classifier(digits, seed)
    save_checkpoint(p, {"domain": "classifier", "iteration": 0,
                        "tensors": {k: t.data for k, t in clf.params.items()},
                        "meta": {"feature_dim": clf.feature_dim, "heldout_accuracy": clf.heldout_accuracy,
                                 "seed": seed, "source": digits.source}})
    return clf


def cmd_render_script(args) -> int:
    from .io import read_action_script, write_png
    from .training import make_env

    env = make_env(args.domain, args.grid, 0)
    state = env.run(read_action_script(args.script, env))
    write_png(args.out, env.render(state))
    print(f"rendered {state.step_count} actions to {args.out}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval,
            "render-script": cmd_render_script}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigFileError as exc:
        parser.error(str(exc))
    return 2


if __name__ == "__main__":
    sys.exit(main())
