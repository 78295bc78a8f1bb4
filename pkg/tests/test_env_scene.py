import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iral.env_paint import RangeError
from iral.env_scene import BACKGROUND, SceneAction, SceneEnv, SceneObject, SceneState, check_constraint
from iral.instructions import Constraint

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))


@pytest.fixture(scope="module")
def env():
    return SceneEnv(32, 3)


def test_action_space(env):
    assert env.action_space_size == 147_456
    assert env.decode_action(0) == SceneAction((0, 0), "cube", "small", "gray", "add_new")
    assert env.encode_action(env.decode_action(147_455)) == 147_455
    with pytest.raises(RangeError):
        env.decode_action(147_456)


def test_exhaustive_bijection(env):
    seen = set()
    for i in range(env.action_space_size):
        a = env.decode_action(i)
        assert env.encode_action(a) == i
        seen.add(a)
    assert len(seen) == env.action_space_size


@settings(max_examples=200)
@given(st.integers(0, 147_455))
def test_component_and_field_views_agree(i):
    env = SceneEnv(32)
    a = env.decode_action(i)
    assert env.from_components(env.to_components(a)) == a
    assert env.from_fields(env.to_fields(a)) == a


def test_dynamics(env):
    add = SceneAction((1, 2), "cube", "large", "red", "add_new")
    change = SceneAction((3, 3), "sphere", "small", "blue", "change_previous")
    noop = SceneAction((0, 0), "cylinder", "small", "gray", "no_op")
    s = env.step(env.reset(), add)
    assert env.step(s, noop).objects == s.objects
    s2 = env.step(s, change)
    assert s2.objects == (SceneObject("sphere", "small", "blue", 3 * 32 + 3),)
    assert env.step(env.reset(), change).objects == ()
    with pytest.raises(RangeError):
        env.step(s, SceneAction((32, 0), "cube", "large", "red", "add_new"))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 147_455), max_size=6))
def test_object_count_bounded_by_steps(indices):
    env = SceneEnv(32)
    s = env.run([env.decode_action(i) for i in indices])
    assert len(s.objects) <= s.step_count == len(indices)


def test_empty_render_is_background(env):
    img = env.render(env.reset())
    assert img.shape == (64, 64, 3) and img.dtype == np.float32
    np.testing.assert_array_equal(img, np.broadcast_to(np.float32(BACKGROUND), img.shape))


def test_non_overlapping_objects_compose(env):
    a = SceneObject("cube", "large", "red", 5 * 32 + 5)
    b = SceneObject("sphere", "small", "cyan", 25 * 32 + 25)
    both = env.render(SceneState((a, b)))
    ra, rb = env.render_object(a), env.render_object(b)
    bg = env.render(env.reset())
    expect = np.where((ra != bg).any(-1, keepdims=True), ra, bg)
    expect = np.where((rb != bg).any(-1, keepdims=True), rb, expect)
    np.testing.assert_array_equal(both, expect)


def test_render_goldens():
    from freeze_goldens import goldens
    for name, img in goldens().items():
        if name.startswith("scene"):
            gold = np.load(DATA / name)
            assert img.dtype == gold.dtype and np.array_equal(img, gold), name


def test_constraint_oracle():
    small_sphere = Constraint("scene", shape="sphere", size="small")
    assert check_constraint(SceneState((SceneObject("sphere", "small", "gray", 0),)), small_sphere)
    assert not check_constraint(SceneState((SceneObject("sphere", "large", "gray", 0),)), small_sphere)
    mixed = SceneState((SceneObject("cube", "small", "blue", 0), SceneObject("sphere", "large", "red", 9)))
    assert check_constraint(mixed, Constraint("scene", shape="sphere", color="red"))
    assert not check_constraint(SceneState(()), small_sphere)
