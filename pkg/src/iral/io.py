"""File formats: IDX digits in, PNG and contact sheets, checkpoints, dataset
manifests, action scripts and metric records.

Checkpoint layout (all integers little-endian):

    8s   magic  b"IRALCKPT"
    u32  format version
    u16  domain tag length, then ASCII tag
    u64  iteration
    u32  meta length, then UTF-8 JSON (sorted keys)
    u32  tensor count, then per tensor (sorted by name):
         u16 name length, UTF-8 name, 4s dtype ("<f4", "<f8", "<i8", space padded),
         u8 ndim, ndim x u64 dims, raw C-order bytes
    u32  CRC32 of every preceding byte
"""
from __future__ import annotations

import gzip
import json
import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image, PngImagePlugin

from .glyphs import LabeledDigits

log = logging.getLogger(__name__)

MAGIC = b"IRALCKPT"
VERSION = 1
_DTYPES = {"<f4": np.float32, "<f8": np.float64, "<i8": np.int64}


class FormatError(ValueError):
    pass


class TruncationError(FormatError):
    pass


class ConsistencyError(ValueError):
    pass


class VersionError(ValueError):
    pass


class CorruptionError(ValueError):
    pass


class DomainMismatch(ValueError):
    pass


class IoError(OSError):
    pass


# -- IDX ------------------------------------------------------------------------

IDX_IMAGES, IDX_LABELS = 2051, 2049


def _read_bytes(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf: bytes, expect_magic: int) -> np.ndarray:
    if len(buf) < 4:
        raise TruncationError("IDX header truncated")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expect_magic:
        raise FormatError(f"IDX magic {magic}, expected {expect_magic}")
    ndim = buf[3]
    hdr = 4 + 4 * ndim
    if len(buf) < hdr:
        raise TruncationError("IDX dimension table truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:hdr])
    need = int(np.prod(dims, dtype=np.int64))
    if len(buf) - hdr < need:
        raise TruncationError(f"IDX body has {len(buf) - hdr} bytes, header promises {need}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=hdr).reshape(dims)


def nearest_resize(images: np.ndarray, size: int = 64) -> np.ndarray:
    """Nearest-neighbour resample of (N, h, w) to (N, size, size)."""
    h, w = images.shape[1:3]
    ry = ((np.arange(size) + 0.5) * h / size).astype(np.int64)
    rx = ((np.arange(size) + 0.5) * w / size).astype(np.int64)
    return images[:, ry][:, :, rx]


def load_idx(images_path, labels_path) -> LabeledDigits:
    imgs = parse_idx(_read_bytes(images_path), IDX_IMAGES)
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS)
    if imgs.ndim != 3:
        raise FormatError(f"image file must be 3-D, got {imgs.ndim}-D")
    if labels.ndim != 1:
        raise FormatError(f"label file must be 1-D, got {labels.ndim}-D")
    if len(imgs) != len(labels):
        raise ConsistencyError(f"{len(imgs)} images but {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise ValueError(f"label {int(labels.max())} outside 0..9")
    out = nearest_resize(imgs).astype(np.float32) / 255.0
    return LabeledDigits(out[..., None], labels.astype(np.int64), source=f"idx:{images_path}")


def idx_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = 0x800 | arr.ndim
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def write_idx(path, arr):
    Path(path).write_bytes(idx_bytes(arr))


# -- PNG ------------------------------------------------------------------------

def to_uint8(img) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img, text: Optional[Dict[str, str]] = None) -> np.ndarray:
    """Write a (H, W), (H, W, 1) or (H, W, 3) image; returns the 8-bit buffer written."""
    buf = to_uint8(img)
    if buf.ndim == 3 and buf.shape[2] == 1:
        buf = buf[..., 0]
    info = PngImagePlugin.PngInfo()
    for k, v in (text or {}).items():
        info.add_text(k, str(v))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(buf).save(path, pnginfo=info)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return buf


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).copy()


def contact_sheet(rows: Sequence[Sequence[np.ndarray]], pad: int = 2, fill: int = 255) -> np.ndarray:
    """Tile rows of equally sized images into one 8-bit image."""
    first = to_uint8(rows[0][0])
    h, w = first.shape[:2]
    ch = 1 if first.ndim == 2 else first.shape[2]
    n_cols = max(len(r) for r in rows)
    sheet = np.full((len(rows) * (h + pad) + pad, n_cols * (w + pad) + pad, ch), fill, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            b = to_uint8(img).reshape(h, w, ch)
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            sheet[y:y + h, x:x + w] = b
    return sheet[..., 0] if ch == 1 else sheet


def export_outputs(rows, report=None, out_dir=".", name: str = "samples", stamp: Optional[dict] = None) -> List[Path]:
    """Write a contact sheet (rows = instructions) and optionally a metric record."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    written = []
    if not rows or not any(len(r) for r in rows):
        log.warning("no images to export; no contact sheet written")
    else:
        p = out / f"{name}.png"
        write_png(p, contact_sheet(rows), text=stamp)
        written.append(p)
    if report is not None:
        p = out / f"{name}_metrics.txt"
        append_record(p, report, stamp)
        written.append(p)
    return written


def append_record(path, report, stamp: Optional[dict] = None):
    line = report.to_record()
    if stamp:
        line = "\t".join(f"{k}={v}" for k, v in stamp.items()) + "\t" + line
    try:
        with open(path, "a") as fh:
            fh.write(line + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# -- checkpoints -------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))


def checkpoint_bytes(state: dict) -> bytes:
    domain = state["domain"].encode("ascii")
    meta = json.dumps(state.get("meta", {}), sort_keys=True, default=_json_default).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<H", len(domain)), domain,
             struct.pack("<Q", int(state["iteration"])), struct.pack("<I", len(meta)), meta]
    tensors = state.get("tensors", {})
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = arr.dtype.newbyteorder("<").str
        if code not in _DTYPES:
            raise TypeError(f"unsupported tensor dtype {arr.dtype} for {name}")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, code.encode().ljust(4), struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), np.ascontiguousarray(arr, dtype=code).tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptionError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf: bytes) -> dict:
    if buf[:8] != MAGIC:
        raise CorruptionError("not a checkpoint (bad magic)")
    r = _Reader(buf)
    r.take(8)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {VERSION}")
    if len(buf) < 16 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise CorruptionError("checksum mismatch")
    r.buf = buf[:-4]
    try:
        (n,) = r.unpack("<H")
        domain = r.take(n).decode("ascii")
        (iteration,) = r.unpack("<Q")
        (n,) = r.unpack("<I")
        meta = json.loads(r.take(n).decode())
        (count,) = r.unpack("<I")
        tensors = {}
        for _ in range(count):
            (n,) = r.unpack("<H")
            name = r.take(n).decode()
            code = r.take(4).rstrip(b" ").decode()
            if code not in _DTYPES:
                raise CorruptionError(f"unknown dtype {code!r}")
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q")
            nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(code).itemsize
            tensors[name] = np.frombuffer(r.take(nbytes), dtype=code).reshape(shape).copy()
    except (UnicodeDecodeError, json.JSONDecodeError, struct.error) as exc:
        raise CorruptionError(str(exc)) from exc
    if r.pos != len(r.buf):
        raise CorruptionError("trailing bytes after tensor table")
    return {"domain": domain, "iteration": iteration, "meta": meta, "tensors": tensors}


def save_checkpoint(path, state: dict):
    data = checkpoint_bytes(state)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path, domain: Optional[str] = None) -> dict:
    state = parse_checkpoint(Path(path).read_bytes())
    if domain is not None and state["domain"] != domain:
        raise DomainMismatch(f"checkpoint is {state['domain']}, expected {domain}")
    return state


# -- dataset manifests ------------------------------------------------------------

MANIFEST_COLUMNS = ("instruction", "goal", "class_label", "shape", "color", "size",
                    "goal_shape", "goal_size", "goal_color", "goal_location")


def write_manifest(dataset, out_dir, env=None, config_hash: str = "-") -> Path:
    """Tab-separated manifest; scene goals are also rendered to PNG files.

    Header: ``# domain=<d> seed=<s> count=<n> config=<hash>`` then a column line.
    Unset constraint fields are written as ``-``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# domain={dataset.domain} seed={dataset.seed} count={len(dataset)} config={config_hash}",
             "\t".join(MANIFEST_COLUMNS)]
    dash = lambda v: "-" if v is None else str(v)  # noqa: E731
    for i, r in enumerate(dataset.records):
        c = r.constraint
        if dataset.domain == "scene":
            rel = f"goals/{i:06d}.png"
            if env is not None:
                write_png(out / rel, env.render_object(r.goal))
            g = r.goal
            tail = [g.shape, g.size, g.color, str(g.location)]
        else:
            rel = str(int(r.goal))
            tail = ["-"] * 4
        lines.append("\t".join([r.instruction, rel, dash(c.class_label), dash(c.shape), dash(c.color),
                                dash(c.size)] + tail))
    p = out / "manifest.tsv"
    p.write_text("\n".join(lines) + "\n")
    return p


def read_manifest(path):
    from .env_scene import SceneObject
    from .instructions import Dataset, Record, parse_constraint

    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise FormatError("manifest header missing")
    head = dict(kv.split("=", 1) for kv in text[0][2:].split())
    records = []
    for line in text[2:]:
        if not line.strip():
            continue
        f = line.split("\t")
        if len(f) != len(MANIFEST_COLUMNS):
            raise FormatError(f"manifest row has {len(f)} fields: {line!r}")
        c = parse_constraint(f[0])
        goal = int(f[1]) if head["domain"] == "mnist" else SceneObject(f[6], f[7], f[8], int(f[9]))
        records.append(Record(f[0], c, goal))
    if len(records) != int(head["count"]):
        raise ConsistencyError(f"manifest header says {head['count']} records, found {len(records)}")
    counts: dict = {}
    for r in records:
        counts[r.instruction] = counts.get(r.instruction, 0) + 1
    return Dataset(head["domain"], int(head["seed"]), records, counts)


# -- action scripts ---------------------------------------------------------------

def read_action_script(path, env) -> list:
    """One action per line as five integers; ``#`` starts a comment."""
    actions = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 5:
            raise FormatError(f"line {n}: expected 5 integers, got {len(parts)}")
        try:
            fields = [int(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"line {n}: {exc}") from exc
        actions.append(env.from_fields(fields))
    return actions


def write_action_script(path, actions, env):
    lines = [" ".join(str(v) for v in env.to_fields(a)) for a in actions]
    Path(path).write_text("\n".join(lines) + "\n")
