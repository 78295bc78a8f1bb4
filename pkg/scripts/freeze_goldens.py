"""Regenerate the frozen renderer goldens in tests/data.

Run only when a rendering change is intended; the golden tests compare
bit-exactly against these files.
"""
from pathlib import Path

import numpy as np

from iral.env_paint import PaintAction, PaintEnv
from iral.env_scene import SceneAction, SceneEnv

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

PAINT_SCRIPT = [
    PaintAction(end=(4, 4), control=(10, 20), pressure=9, size=2, flag=1),
    PaintAction(end=(28, 8), control=(16, 2), pressure=5, size=1, flag=1),
    PaintAction(end=(28, 28), control=(0, 0), pressure=3, size=0, flag=0),
    PaintAction(end=(16, 30), control=(31, 31), pressure=7, size=3, flag=1),
    PaintAction(end=(2, 30), control=(9, 24), pressure=0, size=2, flag=1),
]

SCENE_SCRIPT = [
    SceneAction((6, 4), "cube", "large", "blue", "add_new"),
    SceneAction((10, 20), "cylinder", "small", "yellow", "add_new"),
    SceneAction((20, 10), "sphere", "large", "green", "add_new"),
    SceneAction((22, 26), "cube", "small", "purple", "add_new"),
    SceneAction((8, 8), "sphere", "small", "cyan", "change_previous"),
]


def goldens():
    paint, scene = PaintEnv(32, 5), SceneEnv(32, 5)
    red = SceneAction((16, 16), "sphere", "small", "red", "add_new")
    return {
        "paint_script.npy": paint.render(paint.run(PAINT_SCRIPT)),
        "scene_red_sphere.npy": scene.render(scene.run([red])),
        "scene_script.npy": scene.render(scene.run(SCENE_SCRIPT)),
    }


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    for name, img in goldens().items():
        np.save(DATA / name, img)
        print(name, img.shape, img.dtype)
