import struct

import numpy as np
import pytest

from iral.env_paint import PaintEnv
from iral.env_scene import SceneEnv
from iral.instructions import build_dataset
from iral.io import (
    ConsistencyError,
    CorruptionError,
    DomainMismatch,
    FormatError,
    IoError,
    TruncationError,
    VersionError,
    checkpoint_bytes,
    contact_sheet,
    export_outputs,
    idx_bytes,
    load_checkpoint,
    load_idx,
    parse_checkpoint,
    read_action_script,
    read_manifest,
    read_png,
    save_checkpoint,
    write_action_script,
    write_idx,
    write_manifest,
    write_png,
)
from iral.metrics import MetricReport


def _idx_files(tmp_path, imgs, labels):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, imgs)
    write_idx(lp, labels)
    return ip, lp


def test_hand_built_idx_buffer(tmp_path):
    pix = np.zeros((2, 28, 28), np.uint8)
    pix[0, 0, 0] = 255
    pix[1, 27, 27] = 51
    raw = struct.pack(">IIII", 2051, 2, 28, 28) + pix.tobytes()
    (tmp_path / "i").write_bytes(raw)
    (tmp_path / "l").write_bytes(struct.pack(">II", 2049, 2) + bytes([3, 9]))
    d = load_idx(tmp_path / "i", tmp_path / "l")
    assert d.images.shape == (2, 64, 64, 1) and list(d.labels) == [3, 9]
    # nearest neighbour: source pixel 0 covers output rows/cols 0..1, pixel 27 covers 62..63
    assert (d.images[0, :2, :2, 0] == 1.0).all() and d.images[0, 2, 2, 0] == 0.0
    assert d.images[1, 61, 61, 0] == 0.0
    assert d.images[1, 62:, 62:, 0] == pytest.approx(0.2)
    assert raw == idx_bytes(pix)


def test_idx_errors(tmp_path):
    good = np.zeros((3, 28, 28), np.uint8)
    ip, lp = _idx_files(tmp_path, good, np.array([1, 2, 3], np.uint8))
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">I", 9999) + b"\0" * 8)
    with pytest.raises(FormatError):
        load_idx(bad, lp)
    short = tmp_path / "short"
    short.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(TruncationError):
        load_idx(short, lp)
    _, lp2 = _idx_files(tmp_path, good, np.array([1, 2], np.uint8))
    with pytest.raises(ConsistencyError):
        load_idx(ip, lp2)
    _, lp3 = _idx_files(tmp_path, good, np.array([1, 10, 3], np.uint8))
    with pytest.raises(ValueError):
        load_idx(ip, lp3)


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for img in (rng.random((64, 64, 1)), rng.random((64, 64, 3)), rng.random((5, 7))):
        buf = write_png(tmp_path / "x.png", img, text={"seed": "0"})
        assert np.array_equal(read_png(tmp_path / "x.png"), buf)


def test_contact_sheet_layout():
    imgs = [[np.full((4, 4, 3), i / 3) for _ in range(10)] for i in range(3)]
    sheet = contact_sheet(imgs, pad=1)
    assert sheet.shape == (3 * 5 + 1, 10 * 5 + 1, 3)
    assert (sheet[1 + 2 * 5, 1] == 170).all()


def test_export_outputs(tmp_path, caplog):
    rows = [[np.zeros((64, 64, 1))] * 10 for _ in range(3)]
    paths = export_outputs(rows, MetricReport(correctness=1.0), tmp_path, "s", {"config": "abc", "seed": "1"})
    assert [p.name for p in paths] == ["s.png", "s_metrics.txt"]
    assert read_png(paths[0]).shape == (3 * 66 + 2, 10 * 66 + 2)
    assert paths[1].read_text().startswith("config=abc\tseed=1\t")
    assert export_outputs([], None, tmp_path, "empty") == []
    assert not (tmp_path / "empty.png").exists() and "no images" in caplog.text
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(IoError):
        export_outputs(rows, None, blocker / "sub")


def _state():
    return {"domain": "scene", "iteration": 7, "meta": {"config": "seed = 1\n", "x": [1, 2]},
            "tensors": {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5]),
                        "c": np.array([[3]], dtype=np.int64), "s": np.zeros((), np.float32)}}


def test_checkpoint_round_trip(tmp_path):
    p = tmp_path / "c.ckpt"
    save_checkpoint(p, _state())
    back = load_checkpoint(p)
    for k, v in _state()["tensors"].items():
        assert back["tensors"][k].dtype == v.dtype and np.array_equal(back["tensors"][k], v)
    assert back["iteration"] == 7 and back["meta"]["x"] == [1, 2]
    save_checkpoint(tmp_path / "d.ckpt", back)
    assert (tmp_path / "d.ckpt").read_bytes() == p.read_bytes()


def test_checkpoint_rejections(tmp_path):
    raw = bytearray(checkpoint_bytes(_state()))
    v2 = bytearray(raw)
    v2[8:12] = struct.pack("<I", 2)
    with pytest.raises(VersionError):
        parse_checkpoint(bytes(v2))
    flipped = bytearray(raw)
    flipped[40] ^= 0xFF
    with pytest.raises(CorruptionError):
        parse_checkpoint(bytes(flipped))
    with pytest.raises(CorruptionError):
        parse_checkpoint(bytes(raw[:-9]))
    with pytest.raises(CorruptionError):
        parse_checkpoint(b"NOTACKPT" + bytes(raw[8:]))
    p = tmp_path / "p.ckpt"
    save_checkpoint(p, {**_state(), "domain": "mnist"})
    with pytest.raises(DomainMismatch):
        load_checkpoint(p, domain="scene")


@pytest.mark.parametrize("domain", ["scene", "mnist"])
def test_manifest_round_trip(tmp_path, domain):
    from iral.glyphs import synthetic_digits
    env = SceneEnv(8)
    src = env if domain == "scene" else synthetic_digits(30, 0)
    ds = build_dataset(domain, 25, 4, src)
    p = write_manifest(ds, tmp_path, env if domain == "scene" else None, config_hash="h")
    assert p.read_text().splitlines()[0] == f"# domain={domain} seed=4 count=25 config=h"
    back = read_manifest(p)
    assert back.records == ds.records and back.seed == 4
    if domain == "scene":
        img = read_png(tmp_path / "goals" / "000003.png")
        assert img.shape == (64, 64, 3)


@pytest.mark.parametrize("env", [PaintEnv(32), SceneEnv(32)])
def test_action_script_round_trip(tmp_path, env):
    rng = np.random.default_rng(0)
    acts = [env.decode_action(int(i)) for i in rng.integers(env.action_space_size, size=5)]
    p = tmp_path / "a.txt"
    write_action_script(p, acts, env)
    assert read_action_script(p, env) == acts
    p.write_text("# comment\n1 2 3\n")
    with pytest.raises(FormatError):
        read_action_script(p, env)
