"""ShapesWorld synthetic data, labeled/unlabeled splits and on-disk formats.

Formats
-------
* images: binary PPM (P6, maxval 255)
* label masks: binary PGM (P5), gray value = class id, 255 = IGNORE
* probability maps: ``ASPM`` | u32 version=1 | u32 C, H, W | C*H*W f32, all little-endian
* manifest: header ``ASMANIFEST v1 labeled=M unlabeled=N confighash=HEX`` then
  one ``IMG <path> MASK <path|->`` line per entry, paths relative to the manifest
"""
import hashlib
import json
import math
import os
import re
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .grids import IGNORE, check_image

DEFAULT_PALETTE = (
    (0.35, 0.35, 0.35),  # background
    (0.85, 0.35, 0.30),  # circle
    (0.30, 0.75, 0.35),  # square
    (0.30, 0.40, 0.85),  # triangle
)
SHAPE_KINDS = ("circle", "square", "triangle")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ShapesWorldConfig:
    image_size: int = 64
    num_classes: int = 4
    shapes_per_image: tuple = (1, 3)
    noise_std: float = 0.05
    color_palette: tuple = None
    # std of the per-instance offset added to each base color (background included)
    color_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if not 0.0 <= self.noise_std <= 0.2:
            raise ValueError("noise_std must lie in [0, 0.2]")
        if not 0.0 <= self.color_jitter <= 0.2:
            raise ValueError("color_jitter must lie in [0, 0.2]")
        lo, hi = self.shapes_per_image
        if not 0 <= lo <= hi:
            raise ValueError("shapes_per_image must be a range 0 <= lo <= hi")
        if self.color_palette is None:
            object.__setattr__(self, "color_palette", default_palette(self.num_classes))
        if len(self.color_palette) != self.num_classes:
            raise ValueError("color_palette needs one RGB triple per class")
        object.__setattr__(self, "shapes_per_image", (int(lo), int(hi)))
        object.__setattr__(self, "color_palette", tuple(tuple(float(v) for v in c) for c in self.color_palette))

    def config_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def default_palette(num_classes):
    """The 4-class palette, or evenly spaced hues for other class counts."""
    if num_classes == len(DEFAULT_PALETTE):
        return DEFAULT_PALETTE
    import colorsys

    hues = [colorsys.hsv_to_rgb(k / (num_classes - 1), 0.6, 0.8) for k in range(num_classes - 1)]
    return (DEFAULT_PALETTE[0],) + tuple(tuple(round(v, 4) for v in c) for c in hues)


def _shape_region(kind, xs, ys, cx, cy, size, angle):
    # rotate pixel centres into the shape frame
    u = (xs - cx) * math.cos(angle) + (ys - cy) * math.sin(angle)
    v = -(xs - cx) * math.sin(angle) + (ys - cy) * math.cos(angle)
    if kind == "circle":
        return u * u + v * v <= size * size
    if kind == "square":
        half = size / math.sqrt(2.0)
        return (np.abs(u) <= half) & (np.abs(v) <= half)
    # equilateral triangle with circumradius `size`: inside all three edges
    inside = np.ones_like(u, dtype=bool)
    for k in range(3):
        a = math.pi / 2 + 2 * math.pi * k / 3
        inside &= u * math.cos(a) + v * math.sin(a) >= -size / 2.0
    return inside


def _jittered(color, cfg, rng):
    if cfg.color_jitter == 0:
        return color
    return np.clip(color + rng.normal(0.0, cfg.color_jitter, size=3), 0.0, 1.0)


def generate_one(cfg, index):
    """Sample ``index`` of the config's stream; a pure function of ``(cfg, index)``."""
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.image_size
    palette = np.asarray(cfg.color_palette)
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    img = np.broadcast_to(_jittered(palette[0], cfg, rng), (s, s, 3)).copy()
    mask = np.zeros((s, s), dtype=np.uint8)
    lo, hi = cfg.shapes_per_image
    for _ in range(int(rng.integers(lo, hi + 1))):
        cls = int(rng.integers(1, cfg.num_classes))
        size = rng.uniform(0.08, 0.2) * s
        cx, cy = rng.uniform(size, s - size, size=2)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        region = _shape_region(SHAPE_KINDS[(cls - 1) % 3], xs, ys, cx, cy, size, angle)
        img[region] = _jittered(palette[cls], cfg, rng)
        mask[region] = cls
    if cfg.noise_std > 0:
        img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
    return np.clip(img, 0.0, 1.0), mask


def generate(cfg, count, start=0):
    if count < 1:
        raise ValueError("count must be >= 1")
    return [generate_one(cfg, start + k) for k in range(count)]


# -- manifest / split ------------------------------------------------------------

@dataclass
class DatasetManifest:
    entries: list
    config_hash: str = ""
    base_dir: str = field(default=".", compare=False)

    @property
    def labeled(self):
        return [e for e in self.entries if e[1] is not None]

    @property
    def unlabeled(self):
        return [e for e in self.entries if e[1] is None]

    @property
    def labeled_count(self):
        return len(self.labeled)

    @property
    def unlabeled_count(self):
        return len(self.unlabeled)

    def resolve(self, path):
        return os.path.join(self.base_dir, path)


def split(samples, labeled_ratio, seed, config_hash=""):
    """Shuffle ``(image_path, mask_path)`` pairs and drop masks past the first ceil(ratio * n)."""
    if not 0 < labeled_ratio <= 1:
        raise ValueError("labeled_ratio must lie in (0, 1]")
    samples = list(samples)
    order = np.random.default_rng(seed).permutation(len(samples))
    m = min(len(samples), math.ceil(labeled_ratio * len(samples) - 1e-9))
    entries = []
    for rank, k in enumerate(order):
        img_path, mask_path = samples[int(k)]
        entries.append((img_path, mask_path if rank < m else None))
    return DatasetManifest(entries, config_hash)


def manifest_text(manifest):
    lines = [
        f"ASMANIFEST v1 labeled={manifest.labeled_count} "
        f"unlabeled={manifest.unlabeled_count} confighash={manifest.config_hash or '-'}"
    ]
    for img_path, mask_path in manifest.entries:
        if any(ch.isspace() for ch in img_path + (mask_path or "")):
            raise ValueError("manifest paths may not contain whitespace")
        lines.append(f"IMG {img_path} MASK {mask_path or '-'}")
    return "\n".join(lines) + "\n"


def write_manifest(path, manifest):
    with open(path, "w", newline="\n") as fh:
        fh.write(manifest_text(manifest))


_HEADER_RE = re.compile(r"^ASMANIFEST v1 labeled=(\d+) unlabeled=(\d+) confighash=(\S+)$")


def read_manifest(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not _HEADER_RE.match(lines[0]):
        raise FormatError(f"{path}: missing ASMANIFEST v1 header")
    m, n, chash = _HEADER_RE.match(lines[0]).groups()
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "IMG" or parts[2] != "MASK":
            raise FormatError(f"{path}:{lineno}: expected 'IMG <path> MASK <path|->'")
        entries.append((parts[1], None if parts[3] == "-" else parts[3]))
    manifest = DatasetManifest(entries, "" if chash == "-" else chash, os.path.dirname(os.path.abspath(path)))
    if manifest.labeled_count != int(m) or manifest.unlabeled_count != int(n):
        raise FormatError(f"{path}: header counts do not match entries")
    return manifest


def load_manifest_samples(manifest):
    """Read ``(labeled [(img, mask)], unlabeled [img])`` from disk in manifest order."""
    labeled, unlabeled = [], []
    for img_path, mask_path in manifest.entries:
        img = read_image(manifest.resolve(img_path))
        if mask_path is None:
            unlabeled.append(img)
        else:
            labeled.append((img, read_mask(manifest.resolve(mask_path))))
    return labeled, unlabeled


# -- PPM / PGM -------------------------------------------------------------------

def _parse_pnm(data, magic):
    if data[:2] != magic:
        raise FormatError(f"expected {magic.decode()} at byte 0, found {data[:2]!r}")
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"malformed header at byte {pos}")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"malformed header at byte {pos}")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte {pos}")
    return width, height, pos + 1


def _read_pnm(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, offset = _parse_pnm(data, magic)
    need = width * height * channels
    if len(data) - offset < need:
        raise FormatError(
            f"{path}: truncated payload at byte {len(data)}, expected {offset + need} bytes"
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return pixels.reshape((height, width, channels) if channels > 1 else (height, width))


def write_image(path, img):
    img = check_image(img)
    h, w = img.shape[:2]
    payload = np.round(img * 255.0).astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii") + payload)


def read_image(path):
    return _read_pnm(path, b"P6", 3).astype(np.float64) / 255.0


def write_mask(path, mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be (H, W)")
    if mask.size and (mask.min() < 0 or mask.max() > IGNORE):
        raise ValueError(f"mask values must lie in [0, {IGNORE}] to fit in 8 bits")
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii") + mask.astype(np.uint8).tobytes())


def read_mask(path):
    return _read_pnm(path, b"P5", 1).astype(np.uint8)


def write_validity(path, valid):
    write_mask(path, np.where(np.asarray(valid, dtype=bool), 255, 0))


# -- probability maps ------------------------------------------------------------

PROBMAP_MAGIC = b"ASPM"
PROBMAP_VERSION = 1


def write_probmap(path, p):
    p = np.asarray(p)
    if p.ndim != 3:
        raise ValueError("probability map must be (C, H, W)")
    header = PROBMAP_MAGIC + struct.pack("<IIII", PROBMAP_VERSION, *p.shape)
    with open(path, "wb") as fh:
        fh.write(header + p.astype("<f4").tobytes())


def read_probmap(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PROBMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {PROBMAP_MAGIC!r}")
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header, expected 20 bytes, found {len(data)}")
    version, c, h, w = struct.unpack("<IIII", data[4:20])
    if version != PROBMAP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 20 + 4 * c * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=20).astype(np.float64).reshape(c, h, w)
