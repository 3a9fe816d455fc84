"""Rotation + translation transforms applied consistently to grids.

Coordinates are pixel indices: column ``x`` in ``[0, W)``, row ``y`` in
``[0, H)``, with pixel ``(i, j)`` centred at ``x = j, y = i``.  A pixel owns
the half-open square ``[j - 0.5, j + 0.5) x [i - 0.5, i + 0.5)``, so the
canvas is ``[-0.5, W - 0.5) x [-0.5, H - 0.5)``.

The forward map rotates counterclockwise (as seen on screen, rows growing
downward) about the image centre, then translates::

    p' = R (p - c) + c + T,   T = (dx * W, dy * H)

Every output pixel is filled by sampling the source at the inverse-mapped
coordinate.  Output pixels whose source falls outside the canvas are invalid.
"""
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grids import IGNORE, check_image

# source coordinates are snapped to this many decimals so that exact integer
# and half-integer offsets survive floating point round-off
_SNAP_DECIMALS = 9


class Interpolation(str, Enum):
    BILINEAR = "bilinear"
    NEAREST = "nearest"


@dataclass(frozen=True)
class SpatialTransform:
    rotation_deg: float = 0.0
    translate_dx: float = 0.0
    translate_dy: float = 0.0

    def __post_init__(self):
        vals = (self.rotation_deg, self.translate_dx, self.translate_dy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("transform fields must be finite")
        if abs(self.translate_dx) > 1 or abs(self.translate_dy) > 1:
            raise ValueError("translation fractions must lie in [-1, 1]")
        object.__setattr__(self, "rotation_deg", math.fmod(float(self.rotation_deg), 360.0))
        object.__setattr__(self, "translate_dx", float(self.translate_dx))
        object.__setattr__(self, "translate_dy", float(self.translate_dy))

    @property
    def is_identity(self):
        return self.rotation_deg == 0 and self.translate_dx == 0 and self.translate_dy == 0

    @property
    def translation_ratio(self):
        return math.hypot(self.translate_dx, self.translate_dy)


IDENTITY = SpatialTransform()


def _cos_sin(deg):
    quarter, rem = divmod(deg, 90.0)
    if rem == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(quarter) % 4]
    rad = math.radians(deg)
    return math.cos(rad), math.sin(rad)


def _rotation(deg):
    # counterclockwise on screen with y pointing down
    c, s = _cos_sin(deg)
    return np.array([[c, s], [-s, c]])


def affine_matrix(t, h, w):
    """Forward 2x3 matrix mapping source ``(x, y, 1)`` to output coordinates."""
    rot = _rotation(t.rotation_deg)
    centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    shift = np.array([t.translate_dx * w, t.translate_dy * h])
    return np.hstack([rot, (centre + shift - rot @ centre)[:, None]])


def invert(t, shape=None):
    """Transform whose coordinate map undoes ``t``.

    The inverse of "rotate then translate" is "translate back then rotate
    back"; re-expressed in rotate-then-translate form, the translation
    becomes ``-R^T T``.  ``shape=(h, w)`` is needed for non-square images
    since the translation fractions are relative to each axis; square is
    assumed otherwise.
    """
    h, w = shape if shape is not None else (1.0, 1.0)
    rot = _rotation(t.rotation_deg)
    shift = np.array([t.translate_dx * w, t.translate_dy * h])
    back = -rot.T @ shift
    dx, dy = back[0] / w, back[1] / h
    # rounding noise only; exact zero keeps identity-like results clean
    dx, dy = (0.0 if abs(v) < 1e-15 else float(v) for v in (dx, dy))
    if abs(dx) > 1 or abs(dy) > 1:
        raise ValueError("inverse translation is not representable as fractions in [-1, 1]")
    return SpatialTransform(-t.rotation_deg, dx, dy)


def source_coords(t, h, w):
    """Inverse-mapped (snapped) source coordinates ``(sx, sy)`` for every output pixel."""
    rot = _rotation(t.rotation_deg)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = xs - cx - t.translate_dx * w
    v = ys - cy - t.translate_dy * h
    # R^T applied to (u, v)
    sx = rot[0, 0] * u + rot[1, 0] * v + cx
    sy = rot[0, 1] * u + rot[1, 1] * v + cy
    return np.round(sx, _SNAP_DECIMALS), np.round(sy, _SNAP_DECIMALS)


def _nearest(t, h, w):
    sx, sy = source_coords(t, h, w)
    ix = np.floor(sx + 0.5).astype(np.int64)
    iy = np.floor(sy + 0.5).astype(np.int64)
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    return ix, iy, valid


def validity_of(t, h, w):
    if h < 1 or w < 1:
        raise ValueError("grid must be at least 1x1")
    return _nearest(t, h, w)[2]


def apply_to_image(img, t, interpolation=Interpolation.BILINEAR):
    """Warp an ``(H, W, 3)`` image; out-of-canvas pixels are 0 and invalid."""
    img = check_image(img)
    h, w = img.shape[:2]
    if t.is_identity:
        return img.copy(), np.ones((h, w), dtype=bool)
    ix, iy, valid = _nearest(t, h, w)
    out = np.zeros_like(img)
    if Interpolation(interpolation) is Interpolation.NEAREST:
        out[valid] = img[iy[valid], ix[valid]]
        return out, valid

    sx, sy = source_coords(t, h, w)
    sx = np.clip(sx[valid], 0, w - 1)
    sy = np.clip(sy[valid], 0, h - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    out[valid] = np.clip((1 - fy) * top + fy * bottom, 0.0, 1.0)
    return out, valid


def apply_to_mask(mask, t):
    """Nearest-neighbour warp of a label mask; out-of-canvas pixels become IGNORE."""
    mask = np.asarray(mask)
    h, w = mask.shape
    ix, iy, valid = _nearest(t, h, w)
    out = np.full_like(mask, IGNORE)
    out[valid] = mask[iy[valid], ix[valid]]
    return out, valid


def apply_to_probmap(p, t):
    """Move whole class vectors by nearest neighbour, so valid pixels stay on the simplex."""
    p = np.asarray(p, dtype=np.float64)
    _, h, w = p.shape
    ix, iy, valid = _nearest(t, h, w)
    out = np.zeros_like(p)
    out[:, valid] = p[:, iy[valid], ix[valid]]
    return out, valid


def photometric_jitter(img, brightness, contrast):
    if not -0.5 <= brightness <= 0.5:
        raise ValueError(f"brightness {brightness} outside [-0.5, 0.5]")
    if not 0.5 <= contrast <= 1.5:
        raise ValueError(f"contrast {contrast} outside [0.5, 1.5]")
    img = check_image(img)
    if brightness == 0 and contrast == 1:
        return img.copy()
    return np.clip(contrast * (img - 0.5) + 0.5 + brightness, 0.0, 1.0)


def hflip(grid):
    """Mirror a mask ``(H, W)`` or class-major map ``(C, H, W)`` left-right."""
    return np.flip(grid, axis=-1).copy()


def hflip_image(img):
    return np.flip(img, axis=1).copy()
