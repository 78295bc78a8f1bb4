import numpy as np
import pytest

from iral.autodiff import Tensor, no_grad
from iral.env_paint import PaintEnv
from iral.env_scene import SceneEnv
from iral.instructions import VOCAB, pad_tokens, tokenize
from iral.models import (
    ArchConfig,
    ConfigError,
    StateError,
    arch_for_env,
    discriminator_forward,
    init_params,
    null_action,
    param_count,
    policy_step,
    reset_hidden,
)
from iral.autodiff import ShapeError

SMALL = dict(embed_dim=8, text_hidden=8, conv_channels=(4, 4, 4, 4), fusion_channels=8, mlp_hidden=8,
             core_hidden=16, action_embed=4)


def _toks(*texts):
    return pad_tokens([tokenize(t) for t in texts])


def test_arities_follow_the_environment():
    assert arch_for_env(PaintEnv(32)).arities == (2, 1024, 1024, 4, 10)
    assert arch_for_env(SceneEnv(32)).arities == (3, 1024, 3, 2, 8)


def test_init_is_seeded():
    arch = arch_for_env(SceneEnv(8), **SMALL)
    a, b, c = (init_params(arch, s, "policy") for s in (0, 0, 1))
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_bad_config_rejected():
    with pytest.raises(ConfigError):
        init_params(ArchConfig((3, 4), 3, conv_channels=(4, 4)), 0, "policy")
    with pytest.raises(ConfigError):
        init_params(ArchConfig((3, 4), 2), 0, "policy")


def test_discriminator_parameter_count_closed_form():
    arch = arch_for_env(SceneEnv(8))
    V, E, H = len(VOCAB), 32, 64
    text = V * E + E * 4 * H + H * 4 * H + 4 * H
    conv = (27 * 16 + 16) + (9 * 16 * 32 + 32) + (9 * 32 * 64 + 64) + (9 * 64 * 64 + 64)
    fusion = (64 + H) * 64 + 64 + 3 * (64 * 64 + 64)
    mlp = 64 * 64 + 64 + 64 + 1
    assert param_count(init_params(arch, 0, "discriminator")) == text + conv + fusion + mlp == 111_681


def test_policy_parameter_count_closed_form():
    arch = arch_for_env(SceneEnv(8))
    ar = (3, 64, 3, 2, 8)
    V, E, H, C, A = len(VOCAB), 32, 64, 128, 32
    text = V * E + E * 4 * H + H * 4 * H + 4 * H
    conv = (27 * 16 + 16) + (9 * 16 * 32 + 32) + (9 * 32 * 64 + 64) + (9 * 64 * 64 + 64)
    img = 8 * 8 * 64 * C + C
    prev = sum((n + 1) * A for n in ar)
    core = (H + C + 5 * A) * C + C + 2 * C * 4 * C + 4 * C + C + 1
    heads = sum(C * n + n for n in ar) + sum(n * C for n in ar[:-1])
    assert param_count(init_params(arch, 0, "policy")) == text + conv + img + prev + core + heads


def test_discriminator_zero_weights_give_bias():
    arch = arch_for_env(SceneEnv(8), **SMALL)
    p = init_params(arch, 0, "discriminator")
    p["mlp1.w"].data[:] = 0
    p["mlp1.b"].data[:] = 0.37
    imgs = np.random.default_rng(0).random((3, 64, 64, 3)).astype(np.float32)
    s = discriminator_forward(imgs, _toks("There is a red cube.", "There is a small sphere.", "There is a blue cube."),
                              p, arch)
    np.testing.assert_allclose(s.data, 0.37, rtol=1e-6)


def test_discriminator_conditioning_is_live():
    arch = arch_for_env(SceneEnv(8), **SMALL)
    p = init_params(arch, 3, "discriminator")
    img = np.random.default_rng(1).random((1, 64, 64, 3)).astype(np.float32)
    a = discriminator_forward(img, _toks("There is a red cube."), p, arch).item()
    b = discriminator_forward(img, _toks("There is a large cylinder."), p, arch).item()
    assert a != b


def test_discriminator_shape_errors():
    arch = arch_for_env(SceneEnv(8), **SMALL)
    p = init_params(arch, 0, "discriminator")
    with pytest.raises(ShapeError):
        discriminator_forward(np.zeros((1, 64, 64, 1), np.float32), _toks("There is a red cube."), p, arch)
    with pytest.raises(ShapeError):
        discriminator_forward(np.zeros((2, 64, 64, 3), np.float32), _toks("There is a red cube."), p, arch)


def _policy(env, seed=0):
    arch = arch_for_env(env, **SMALL)
    return arch, init_params(arch, seed, "policy")


def _first_step(env, arch, params, toks, mode="sample", rng=None):
    h = reset_hidden(toks, params, arch)
    img = np.zeros((len(toks), 64, 64, env.channels), np.float32)
    return policy_step(toks, img, null_action(len(toks), arch), h, params, rng or np.random.default_rng(0), mode, arch)


@pytest.mark.parametrize("env", [SceneEnv(8), PaintEnv(16)])
def test_policy_outputs_are_consistent(env):
    arch, p = _policy(env)
    toks = _toks("There is a red cube.", "Draw 3.")
    out = _first_step(env, arch, p, toks)
    assert out.action.shape == (2, 5)
    for probs, n in zip(out.probs, arch.arities):
        assert probs.shape == (2, n)
        np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-6)
    total = sum(lp.data for lp in out.component_logp)
    np.testing.assert_allclose(out.logp.data, total, rtol=1e-6)
    assert (out.logp.data <= 0).all() and out.value.shape == (2,)
    # chosen components have the probability the log-probs claim
    for c, probs in enumerate(out.probs):
        np.testing.assert_allclose(np.log(probs[[0, 1], out.action[:, c]]), out.component_logp[c].data, rtol=1e-4)


def test_greedy_is_deterministic():
    env = SceneEnv(8)
    arch, p = _policy(env)
    toks = _toks("There is a red cube.")
    a = _first_step(env, arch, p, toks, "greedy", np.random.default_rng(1)).action
    b = _first_step(env, arch, p, toks, "greedy", np.random.default_rng(2)).action
    np.testing.assert_array_equal(a, b)


def test_sampling_frequencies_match_head():
    env = SceneEnv(8)
    arch, p = _policy(env)
    n = 10_000
    toks = np.repeat(_toks("There is a small sphere."), n, axis=0)
    with no_grad():
        out = _first_step(env, arch, p, toks, rng=np.random.default_rng(7))
    probs = out.probs[0][0]   # the flag head sees the same context for every row
    freq = np.bincount(out.action[:, 0], minlength=len(probs)) / n
    se = np.sqrt(probs * (1 - probs) / n)
    assert (np.abs(freq - probs) <= 3 * se + 1e-12).all()


def test_forced_action_scores_the_given_action():
    env = SceneEnv(8)
    arch, p = _policy(env)
    toks = _toks("There is a red cube.")
    first = _first_step(env, arch, p, toks)
    h = reset_hidden(toks, p, arch)
    img = np.zeros((1, 64, 64, 3), np.float32)
    again = policy_step(toks, img, null_action(1, arch), h, p, None, "sample", arch, forced_action=first.action)
    np.testing.assert_array_equal(again.action, first.action)
    np.testing.assert_allclose(again.logp.data, first.logp.data)


def test_hidden_from_other_domain_is_rejected():
    arch_s, p_s = _policy(SceneEnv(8))
    arch_p, p_p = _policy(PaintEnv(8))
    toks = _toks("Draw 1.")
    h = reset_hidden(toks, p_p, arch_p)
    with pytest.raises(StateError):
        policy_step(toks, np.zeros((1, 64, 64, 3), np.float32), null_action(1, arch_s), h, p_s,
                    np.random.default_rng(0), "sample", arch_s)
