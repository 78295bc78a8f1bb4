"""Evaluation: a small digit classifier, Inception-Score and FID analogues on
its outputs, state-level correctness, and attribute entropy.

All logs are natural logs, so entropies are in nats.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .autodiff import (
    AdamState,
    Tensor,
    adam_step,
    backward,
    conv2d,
    linear,
    log_softmax,
    no_grad,
    relu,
)

FEATURE_DIM = 64
NUM_CLASSES = 10
EIG_TOL = 1e-8


class DataError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


# -- classifier -----------------------------------------------------------------

@dataclass
class ClassifierParams:
    params: Dict[str, Tensor]
    feature_dim: int = FEATURE_DIM
    heldout_accuracy: float = float("nan")
    seed: int = 0

    def logits(self, images) -> Tensor:
        return linear(self.features_t(images), self.params["fc1.w"], self.params["fc1.b"])

    def features_t(self, images) -> Tensor:
        p = self.params
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        h = relu(conv2d(x, p["conv0.w"], p["conv0.b"], stride=2, padding=2))
        h = relu(conv2d(h, p["conv1.w"], p["conv1.b"], stride=2, padding=2))
        h = h.reshape(h.shape[0], -1)
        return relu(linear(h, p["fc0.w"], p["fc0.b"]))

    def _batched(self, fn, images, chunk=256) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        with no_grad():
            return np.concatenate([fn(images[i:i + chunk]).data for i in range(0, len(images), chunk)])

    def predict_proba(self, images) -> np.ndarray:
        lg = self._batched(self.logits, images).astype(np.float64)
        lg -= lg.max(axis=1, keepdims=True)
        e = np.exp(lg)
        return e / e.sum(axis=1, keepdims=True)

    def features(self, images) -> np.ndarray:
        return self._batched(self.features_t, images).astype(np.float64)

    def predict(self, images) -> np.ndarray:
        return self.predict_proba(images).argmax(axis=1)


def init_classifier(seed: int, feature_dim: int = FEATURE_DIM) -> Dict[str, Tensor]:
    rng = np.random.default_rng([seed, 5])
    shapes = {"conv0.w": ((5, 5, 1, 16), 25), "conv1.w": ((5, 5, 16, 32), 400),
              "fc0.w": ((16 * 16 * 32, feature_dim), 16 * 16 * 32), "fc1.w": ((feature_dim, NUM_CLASSES), feature_dim)}
    out = {}
    for name, (shape, fan) in shapes.items():
        # He-style scale for the ReLU stack
        out[name] = Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan)).astype(np.float32), requires_grad=True)
        out[name.replace(".w", ".b")] = Tensor(np.zeros(shape[-1], dtype=np.float32), requires_grad=True)
    return out


def train_classifier(digits, seed: int = 0, epochs: int = 3, batch: int = 64, lr: float = 1e-3,
                     holdout: float = 0.1, feature_dim: int = FEATURE_DIM) -> ClassifierParams:
    """Train on ``digits`` (images, labels); accuracy on a seeded holdout split is recorded."""
    images = np.asarray(digits.images, dtype=np.float32)
    labels = np.asarray(digits.labels, dtype=np.int64)
    n = len(labels)
    if n < 20 or len(np.unique(labels)) < 2:
        raise DataError(f"need at least 20 labelled images over 2+ classes, got {n}")
    rng = np.random.default_rng([seed, 6])
    perm = rng.permutation(n)
    n_hold = max(int(n * holdout), 1)
    hold, train = perm[:n_hold], perm[n_hold:]
    params = init_classifier(seed, feature_dim)
    clf = ClassifierParams(params, feature_dim, seed=seed)
    opt = AdamState(lr=lr)
    for _ in range(epochs):
        order = rng.permutation(train)
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            lp = log_softmax(clf.logits(images[idx]))
            onehot = np.zeros(lp.shape, dtype=np.float32)
            onehot[np.arange(len(idx)), labels[idx]] = 1.0
            loss = -(lp * Tensor(onehot)).sum() / len(idx)
            backward(loss, wrt=params.values())
            adam_step(params, {k: p.grad for k, p in params.items()}, opt)
    clf.heldout_accuracy = float((clf.predict(images[hold]) == labels[hold]).mean())
    return clf


# -- distribution scores ----------------------------------------------------------

def inception_score_from_probs(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) < 2:
        raise DataError("inception score needs at least 2 predictive distributions")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score(images, classifier: ClassifierParams) -> float:
    if len(images) == 0:
        raise DataError("empty image set")
    return inception_score_from_probs(classifier.predict_proba(images))


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    _check_eigs(w)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def _check_eigs(w):
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite eigenvalues")
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -EIG_TOL * scale:
        raise NumericError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3g})")


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) for Gaussians."""
    mu_a, mu_b = np.asarray(mu_a, np.float64), np.asarray(mu_b, np.float64)
    cov_a = np.asarray(cov_a, np.float64)
    cov_b = np.asarray(cov_b, np.float64)
    cov_a, cov_b = (cov_a + cov_a.T) / 2, (cov_b + cov_b.T) / 2
    try:
        ra = _sqrt_psd(cov_a)
        mid = ra @ cov_b @ ra
        w = np.linalg.eigvalsh((mid + mid.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise NumericError(str(exc)) from exc
    _check_eigs(w)
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    d = mu_a - mu_b
    return float(max(d @ d + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_sqrt, 0.0))


def fid_from_features(fa, fb) -> float:
    fa, fb = np.asarray(fa, np.float64), np.asarray(fb, np.float64)
    dim = fa.shape[1]
    if len(fa) < dim + 1 or len(fb) < dim + 1:
        raise DataError(f"need at least {dim + 1} samples per set, got {len(fa)} and {len(fb)}")
    return frechet_distance(fa.mean(0), np.cov(fa, rowvar=False), fb.mean(0), np.cov(fb, rowvar=False))


def fid(images_a, images_b, classifier: ClassifierParams) -> float:
    need = classifier.feature_dim + 1
    if len(images_a) < need or len(images_b) < need:
        raise DataError(f"need at least {need} images per set")
    return fid_from_features(classifier.features(images_a), classifier.features(images_b))


# -- task scores ----------------------------------------------------------------

def correctness(results) -> float:
    """Mean over instructions of the number of correct samples.

    ``results`` maps instruction -> sequence of booleans (or is a sequence of them).
    """
    groups = results.values() if isinstance(results, dict) else results
    counts = [int(np.sum(np.asarray(list(g), dtype=bool))) for g in groups]
    return float(np.mean(counts)) if counts else 0.0


def diversity_entropy(values: Iterable, categories: Optional[Sequence] = None) -> float:
    """Shannon entropy in nats of the histogram of ``values``; 0 for no values."""
    values = list(values)
    if not values:
        return 0.0
    if categories is not None:
        unknown = set(values) - set(categories)
        if unknown:
            raise ValueError(f"values outside the category set: {sorted(map(str, unknown))}")
    _, counts = np.unique(np.asarray([str(v) for v in values]), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() + 0.0)


@dataclass
class MetricReport:
    inception_score: float = float("nan")
    fid: float = float("nan")
    correctness: float = float("nan")
    diversity_colors: float = float("nan")
    diversity_sizes: float = float("nan")
    n_per_instruction: int = 0
    n_samples: int = 0
    n_correct: int = 0
    extra: Dict[str, object] = field(default_factory=dict)

    def to_record(self) -> str:
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return "\t".join(f"{k}={v}" for k, v in d.items())


def evaluate_scene(env, sample_fn, n: int = 10) -> MetricReport:
    """Score a scene generator on all 30 instructions.

    ``sample_fn(instruction, n)`` returns n final states. Entropy of a free
    attribute pools the correct samples of every instruction that leaves it free.
    """
    from .env_scene import check_constraint, object_matches
    from .instructions import parse_constraint, scene_grammar_enumerate

    per: Dict[str, List[bool]] = {}
    pooled = {"color": [], "size": []}
    for text in scene_grammar_enumerate():
        c = parse_constraint(text)
        ok = []
        for st in sample_fn(text, n):
            good = check_constraint(st, c)
            ok.append(good)
            if good and c.free_attribute:
                obj = next(o for o in st.objects if object_matches(o, c))
                pooled[c.free_attribute].append(getattr(obj, c.free_attribute))
        per[text] = ok
    from .instructions import COLORS, SIZES
    return MetricReport(
        correctness=correctness(per),
        diversity_colors=diversity_entropy(pooled["color"], COLORS),
        diversity_sizes=diversity_entropy(pooled["size"], SIZES),
        n_per_instruction=n, n_samples=n * len(per), n_correct=int(sum(map(sum, per.values()))),
        extra={"per_instruction": ";".join(str(sum(v)) for v in per.values())},
    )


def evaluate_mnist(images, labels, classifier: ClassifierParams, real_images, n_per_label: int = 0) -> MetricReport:
    """IS and FID of generated digit images plus classifier-based correctness."""
    probs = classifier.predict_proba(images)
    pred = probs.argmax(1)
    labels = np.asarray(labels)
    per = {int(l): (pred[labels == l] == l) for l in np.unique(labels)}
    return MetricReport(
        inception_score=inception_score_from_probs(probs),
        fid=fid_from_features(classifier.features(images), classifier.features(real_images)),
        correctness=correctness(per), n_per_instruction=n_per_label, n_samples=len(images),
        n_correct=int((pred == labels).sum()),
    )
