import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iral.env_scene import SceneEnv, SceneObject, SceneState
from iral.glyphs import synthetic_digits
from iral.instructions import COLORS, SIZES, parse_constraint, scene_grammar_enumerate
from iral.metrics import (
    DataError,
    MetricReport,
    NumericError,
    correctness,
    diversity_entropy,
    evaluate_scene,
    fid,
    fid_from_features,
    frechet_distance,
    inception_score_from_probs,
    train_classifier,
)


def test_inception_score_extremes():
    same = np.tile([0.1, 0.2, 0.7], (50, 1))
    assert inception_score_from_probs(same) == pytest.approx(1.0, abs=1e-12)
    onehot = np.eye(10)[np.arange(100) % 10]
    assert inception_score_from_probs(onehot) == pytest.approx(10.0, abs=1e-9)
    with pytest.raises(DataError):
        inception_score_from_probs(np.ones((1, 10)) / 10)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10**6))
def test_inception_score_bounds(n, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(10) * 0.3, size=n)
    s = inception_score_from_probs(p)
    assert 1.0 - 1e-9 <= s <= 10.0 + 1e-9


def test_two_gaussian_closed_form():
    mu_a, mu_b = np.array([1.0, 2.0]), np.array([0.0, -1.0])
    ca, cb = np.diag([4.0, 1.0]), np.diag([1.0, 9.0])
    # commuting diagonal covariances: Tr term is sum (sqrt(a) - sqrt(b))^2
    expect = (1 + 9) + (2 - 1) ** 2 + (1 - 3) ** 2
    assert frechet_distance(mu_a, ca, mu_b, cb) == pytest.approx(expect, abs=1e-12)


def test_feature_level_fid_against_sampled_gaussians():
    rng = np.random.default_rng(0)
    d = 4
    A = rng.normal(size=(d, d))
    ca = A @ A.T / d + np.eye(d)
    cb = np.eye(d) * 2.0
    mu_a, mu_b = np.zeros(d), np.full(d, 0.5)
    fa = rng.multivariate_normal(mu_a, ca, size=200_000)
    fb = rng.multivariate_normal(mu_b, cb, size=200_000)
    w, v = np.linalg.eigh(ca)
    s = (v * np.sqrt(w)) @ v.T
    mid = np.linalg.eigvalsh(s @ cb @ s)
    exact = d * 0.25 + np.trace(ca) + np.trace(cb) - 2 * np.sqrt(mid).sum()
    assert fid_from_features(fa, fb) == pytest.approx(exact, abs=0.05)


def test_fid_identity_and_symmetry():
    rng = np.random.default_rng(1)
    fa, fb = rng.normal(size=(100, 8)), rng.normal(1.0, 2.0, size=(120, 8))
    assert fid_from_features(fa, fa) < 1e-6
    assert fid_from_features(fa, fb) == pytest.approx(fid_from_features(fb, fa), abs=1e-6)
    with pytest.raises(DataError):
        fid_from_features(fa[:8], fb)


def test_fid_rejects_indefinite_covariance():
    with pytest.raises(NumericError):
        frechet_distance(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))


def test_correctness_cases():
    assert correctness({"a": [True] * 10, "b": [True] * 10}) == 10.0
    assert correctness({"a": [False] * 10}) == 0.0
    assert correctness([[True, False], [True, True]]) == 1.5


@given(st.lists(st.lists(st.booleans(), min_size=3, max_size=3), min_size=1, max_size=8), st.randoms())
def test_correctness_permutation_invariant(groups, rnd):
    shuffled = [rnd.sample(g, len(g)) for g in groups]
    rnd.shuffle(shuffled)
    assert correctness(shuffled) == correctness(groups)


def test_diversity_entropy_cases():
    assert diversity_entropy([]) == 0.0
    assert diversity_entropy(["red"] * 7, COLORS) == 0.0
    assert diversity_entropy(list(COLORS) * 3, COLORS) == pytest.approx(np.log(8), abs=1e-12)
    assert diversity_entropy(["small", "large"], SIZES) == pytest.approx(np.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        diversity_entropy(["pink"], COLORS)


@given(st.lists(st.sampled_from(COLORS), max_size=40))
def test_diversity_entropy_bounds(values):
    h = diversity_entropy(values, COLORS)
    assert 0.0 <= h <= np.log(8) + 1e-12


def test_evaluate_scene_with_an_oracle_generator():
    env = SceneEnv(8)

    def perfect(text, n):
        c = parse_constraint(text)
        out = []
        for i in range(n):
            color = c.color or COLORS[i % 8]
            size = c.size or SIZES[i % 2]
            out.append(SceneState((SceneObject(c.shape, size, color, i),), 1))
        return out

    r = evaluate_scene(env, perfect, 16)
    assert r.correctness == 16.0
    assert r.diversity_colors == pytest.approx(np.log(8))
    assert r.diversity_sizes == pytest.approx(np.log(2))
    empty = evaluate_scene(env, lambda t, n: [SceneState(())] * n, 4)
    assert empty.correctness == 0.0 and empty.diversity_colors == 0.0


def test_report_record_is_one_line():
    line = MetricReport(correctness=6.8, diversity_colors=1.48).to_record()
    assert "\n" not in line and "correctness=6.8" in line


@pytest.fixture(scope="module")
def classifier():
    return train_classifier(synthetic_digits(2000, 3), seed=0, epochs=2)


def test_classifier_accuracy_and_determinism(classifier):
    assert classifier.heldout_accuracy >= 0.97
    again = train_classifier(synthetic_digits(200, 3), seed=0, epochs=1)
    twice = train_classifier(synthetic_digits(200, 3), seed=0, epochs=1)
    assert all(np.array_equal(again.params[k].data, twice.params[k].data) for k in again.params)
    assert classifier.logits(np.zeros((3, 64, 64, 1), np.float32)).shape == (3, 10)
    np.testing.assert_allclose(classifier.predict_proba(np.zeros((2, 64, 64, 1))).sum(1), 1.0)


def test_classifier_needs_data():
    with pytest.raises(DataError):
        train_classifier(synthetic_digits(10, 0))


def test_image_fid_is_zero_on_identical_sets(classifier):
    imgs = synthetic_digits(80, 9).images
    assert fid(imgs, imgs, classifier) < 1e-6
    with pytest.raises(DataError):
        fid(imgs[:10], imgs, classifier)
