"""Datasets, the synthetic disk generator, and file formats.

Formats:

* images: binary PPM (P6, maxval 255); bytes map to [0, 1] by ``/255``
* masks: binary PGM (P5, maxval 255); id 255 is IGNORE
* perturbations: ``SGPD`` | u16 version | u32 H | u32 W | f32 LE (H, W, 3)
* dataset directories: ``MANIFEST.json`` + ``images/<id>.ppm`` + ``masks/<id>.pgm``
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_core import IGNORE


class FormatError(ValueError):
    pass


class DataError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class Dataset:
    items: list  # (image_id, image (H, W, 3) float64, mask (H, W) int64)
    classes: int
    class_names: list = field(default_factory=list)
    background_id: int | None = None

    def __post_init__(self):
        ids = [i for i, _, _ in self.items]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate image ids")
        if not self.class_names:
            self.class_names = [f"class{k}" for k in range(self.classes)]
        for image_id, _, mask in self.items:
            bad = (mask != IGNORE) & ((mask < 0) | (mask >= self.classes))
            if np.any(bad):
                raise DataError(f"{image_id}: mask id {int(mask[bad][0])} >= class count {self.classes}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.items[:n], self.classes, list(self.class_names), self.background_id)


# -- synthetic disks -------------------------------------------------------

@dataclass
class SynthSpec:
    size: int = 32
    large_count: int = 1
    small_count: int = 3
    large_radius: tuple = (8, 12)
    small_radius: tuple = (2, 3)
    noise: float = 0.08
    color_jitter: float = 0.05
    seed: int = 0
    n_train: int = 64
    n_test: int = 16
    max_retries: int = 200
    # mean RGB per class: background, large object, small object
    colors: tuple = ((0.45, 0.45, 0.45), (0.6, 0.4, 0.4), (0.4, 0.4, 0.6))

    def __post_init__(self):
        if self.large_count != 1:
            raise DataError("the generator places exactly one large disk per image")
        if 2 * self.large_radius[1] + 1 > self.size:
            raise DataError("large radius does not fit in the image")
        if self.small_count < 0 or self.small_radius[0] < 1:
            raise DataError("invalid small-object settings")
        if self.small_radius[1] >= self.large_radius[0]:
            raise DataError("small disks must be strictly smaller than large disks")


CLASS_NAMES = ["background", "large", "small"]


def _disk(size, cy, cx, r):
    yy, xx = np.mgrid[:size, :size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _render(spec: SynthSpec, rng: np.random.Generator):
    s = spec.size
    mask = np.zeros((s, s), dtype=np.int64)
    r = int(rng.integers(spec.large_radius[0], spec.large_radius[1] + 1))
    cy, cx = rng.integers(r, s - r, size=2)
    mask[_disk(s, cy, cx, r)] = 1
    occupied = mask > 0
    for _ in range(spec.small_count):
        for _attempt in range(spec.max_retries):
            r = int(rng.integers(spec.small_radius[0], spec.small_radius[1] + 1))
            cy, cx = rng.integers(r, s - r, size=2)
            disk = _disk(s, cy, cx, r)
            # keep a one-pixel gap so objects never touch
            grown = _disk(s, cy, cx, r + 1)
            if not np.any(grown & occupied):
                mask[disk] = 2
                occupied |= disk
                break
        else:
            raise GenerationError(f"could not place a small disk after {spec.max_retries} tries")
    colors = np.asarray(spec.colors, dtype=np.float64)
    jitter = rng.uniform(-spec.color_jitter, spec.color_jitter, size=colors.shape)
    image = (colors + jitter)[mask]
    image += rng.uniform(-spec.noise, spec.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask


def gen_synthetic_dataset(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) datasets of colored disks on a noisy background.

    Each image holds one large disk (class 1) and ``small_count`` small disks
    (class 2). Train and test draw from separate seeded streams and use
    disjoint id prefixes.
    """
    out = []
    for split, n, stream in (("train", spec.n_train, 0), ("test", spec.n_test, 1)):
        rng = np.random.default_rng([spec.seed, stream])
        items = []
        for k in range(n):
            image, mask = _render(spec, rng)
            items.append((f"{split}_{k:04d}", image, mask))
        out.append(Dataset(items, 3, list(CLASS_NAMES), background_id=0))
    return out[0], out[1]


# -- netpbm ----------------------------------------------------------------

def _parse_netpbm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int]:
    """Return (width, height, payload offset) for a binary netpbm file."""
    if raw[:2] != magic:
        raise FormatError(f"{path}: bad magic {raw[:2]!r} at byte 0, expected {magic!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed header at byte {pos}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected 255")
    return width, height, pos


def _read_payload(raw, offset, count, path):
    if len(raw) - offset < count:
        raise FormatError(f"{path}: truncated payload at byte {len(raw)}, expected {offset + count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)


def quantize(image) -> np.ndarray:
    """Round half up to 8 bits: ``floor(255 * v + 0.5)``."""
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def store_image(path, image) -> None:
    q = quantize(image)
    h, w, c = q.shape
    if c != 3:
        raise FormatError("images must have 3 channels")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())


def load_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, off = _parse_netpbm_header(raw, b"P6", path)
    data = _read_payload(raw, off, w * h * 3, path)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def store_mask(path, mask) -> None:
    m = np.asarray(mask)
    if np.any((m < 0) | (m > 255)):
        raise FormatError("mask ids must fit in 8 bits")
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(m.astype(np.uint8).tobytes())


def load_mask(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, off = _parse_netpbm_header(raw, b"P5", path)
    return _read_payload(raw, off, w * h, path).reshape(h, w).astype(np.int64)


# -- perturbations ---------------------------------------------------------

PERTURBATION_MAGIC = b"SGPD"
PERTURBATION_VERSION = 1
_PERT_HEADER = struct.Struct("<4sHII")


def store_perturbation(path, delta) -> None:
    d = np.asarray(delta)
    h, w, c = d.shape
    if c != 3:
        raise FormatError("perturbations must have 3 channels")
    with open(path, "wb") as fh:
        fh.write(_PERT_HEADER.pack(PERTURBATION_MAGIC, PERTURBATION_VERSION, h, w))
        fh.write(d.astype("<f4").tobytes())


def load_perturbation(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PERTURBATION_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte 0, expected {PERTURBATION_MAGIC!r}")
    if len(raw) < _PERT_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    _, version, h, w = _PERT_HEADER.unpack_from(raw)
    if version != PERTURBATION_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    expected = _PERT_HEADER.size + 4 * h * w * 3
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} bytes does not match header ({expected} bytes)")
    return np.frombuffer(raw, dtype="<f4", offset=_PERT_HEADER.size).reshape(h, w, 3).astype(np.float64)


# -- resizing --------------------------------------------------------------

def _source_coords(n_out, n_in):
    # half-pixel centers, clamped at the borders
    c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(c, 0.0, n_in - 1)


def resize_pair(image, mask, size: tuple[int, int] | None = None, longer: int | None = None):
    """Resize an image bilinearly and its mask by nearest neighbour.

    Give either ``size=(height, width)`` or ``longer=L`` to scale the longer
    side to L pixels while keeping the aspect ratio.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    h, w = mask.shape
    if size is None:
        if longer is None:
            raise ValueError("give size or longer")
        size = longer_side_target(h, w, longer)
    th, tw = size
    if th <= 0 or tw <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    if (th, tw) == (h, w):
        return image.copy(), mask.copy()
    ys, xs = _source_coords(th, h), _source_coords(tw, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    out_image = top * (1 - wy) + bot * wy
    ny = np.minimum(np.floor((np.arange(th) + 0.5) * h / th).astype(int), h - 1)
    nx = np.minimum(np.floor((np.arange(tw) + 0.5) * w / tw).astype(int), w - 1)
    return out_image, mask[ny][:, nx]


# -- dataset directories ---------------------------------------------------

def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for image_id, image, mask in ds:
        store_image(root / "images" / f"{image_id}.ppm", image)
        store_mask(root / "masks" / f"{image_id}.pgm", mask)
    manifest = {
        "classes": ds.classes,
        "class_names": list(ds.class_names),
        "background_id": ds.background_id,
        "images": [i for i, _, _ in ds],
    }
    (root / "MANIFEST.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / "MANIFEST.json"
    if not manifest_path.exists():
        raise DataError(f"missing dataset manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: {exc}") from exc
    items = []
    for image_id in manifest["images"]:
        ipath = root / "images" / f"{image_id}.ppm"
        mpath = root / "masks" / f"{image_id}.pgm"
        for p in (ipath, mpath):
            if not p.exists():
                raise DataError(f"missing file: {p}")
        items.append((image_id, load_image(ipath), load_mask(mpath)))
    return Dataset(items, int(manifest["classes"]), list(manifest.get("class_names", [])),
                   manifest.get("background_id"))


def longer_side_target(h: int, w: int, longer: int) -> tuple[int, int]:
    scale = longer / max(h, w)
    return max(1, math.floor(h * scale + 0.5)), max(1, math.floor(w * scale + 0.5))
