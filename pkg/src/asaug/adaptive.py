"""Prediction entropy and the entropy-to-magnitude mappings for spatial augmentation."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, xlogy

from .spatial import SpatialTransform


def pixel_entropy(p):
    """Per-pixel Shannon entropy (nats) of a ``(C, H, W)`` probability map, 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    return np.maximum(-xlogy(p, p).sum(axis=0), 0.0)


def mean_entropy(entropy, valid=None, normalize=True, num_classes=None):
    """Mean of an entropy map over valid pixels, optionally divided by ln C."""
    entropy = np.asarray(entropy, dtype=np.float64)
    vals = entropy if valid is None else entropy[np.asarray(valid, dtype=bool)]
    if vals.size == 0:
        raise ValueError("empty entropy reduction")
    h = float(vals.mean())
    if normalize:
        if num_classes is None or num_classes < 2:
            raise ValueError("normalization needs the class count C >= 2")
        h /= math.log(num_classes)
    return h


# -- mapping strategies -------------------------------------------------------

@dataclass(frozen=True)
class Eaw:
    """Entropy-based adaptive weight: magnitudes follow a logistic in the entropy."""

    name = "eaw"


@dataclass(frozen=True)
class Fixed:
    angle_deg: float = 30.0
    ratio: float = 0.1
    name = "fixed"


@dataclass(frozen=True)
class FixedHigh:
    angle_deg: float = 80.0
    ratio: float = 0.25
    name = "fixed_high"


@dataclass(frozen=True)
class BiPart:
    """Low magnitude below ``threshold`` (entropy units of the caller), high at or above."""

    threshold: float = 0.5
    low: tuple = (30.0, 0.1)
    high: tuple = (80.0, 0.25)
    name = "bi_part"


@dataclass(frozen=True)
class RangeDyn:
    breakpoints: tuple = (1.0 / 3.0, 2.0 / 3.0)
    levels: tuple = ((20.0, 0.1), (45.0, 0.25), (80.0, 0.45))
    name = "range_dyn"


STRATEGIES = {cls.name: cls for cls in (Eaw, Fixed, FixedHigh, BiPart, RangeDyn)}


def _levels_of(strategy):
    if isinstance(strategy, (Fixed, FixedHigh)):
        return [(strategy.angle_deg, strategy.ratio)], []
    if isinstance(strategy, BiPart):
        return [tuple(strategy.low), tuple(strategy.high)], [strategy.threshold]
    if isinstance(strategy, RangeDyn):
        if len(strategy.breakpoints) != 2 or len(strategy.levels) != 3:
            raise ValueError("range_dyn needs 2 breakpoints and 3 levels")
        return [tuple(lv) for lv in strategy.levels], list(strategy.breakpoints)
    return [], []


@dataclass(frozen=True)
class EawConfig:
    k_r: float = 11.0
    k_t: float = 7.0
    d_r: float = 1.0
    d_t: float = 1.0
    r_max: float = 180.0
    t_max: float = 0.5
    normalize_entropy: bool = True
    clamp_output: bool = True
    strategy: object = field(default_factory=Eaw)

    def __post_init__(self):
        if not 0 < self.r_max <= 180:
            raise ValueError("r_max must lie in (0, 180]")
        if not 0 < self.t_max <= 1:
            raise ValueError("t_max must lie in (0, 1]")
        if self.k_r <= 0 or self.k_t <= 0:
            raise ValueError("k_r and k_t must be positive")
        levels, thresholds = _levels_of(self.strategy)
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("strategy thresholds must be strictly increasing")
        for angle, ratio in levels:
            if not 0 <= angle <= self.r_max:
                raise ValueError(f"strategy angle {angle} outside [0, r_max]")
            if not 0 <= ratio <= self.t_max:
                raise ValueError(f"strategy ratio {ratio} outside [0, t_max]")


# Cityscapes-style parameter set; r_max and t_max are shared with the default
CITYSCAPES_EAW = EawConfig(k_r=5.5, k_t=3.0, d_r=0.5, d_t=0.5)


def eaw_rotation(h, cfg):
    """Rotation magnitude in degrees: ``r_max * k_r / (1 + exp(d_r - h))``."""
    raw = cfg.r_max * cfg.k_r * float(expit(h - cfg.d_r))
    return min(raw, cfg.r_max) if cfg.clamp_output else raw


def eaw_translation(h, cfg):
    """Translation magnitude as a fraction of the image side."""
    raw = cfg.t_max * cfg.k_t * float(expit(h - cfg.d_t))
    return min(raw, cfg.t_max) if cfg.clamp_output else raw


def magnitude(h, cfg):
    """``(angle_deg, ratio)`` chosen by the configured strategy for entropy ``h``."""
    if h < 0:
        raise ValueError("entropy must be non-negative")
    strategy = cfg.strategy
    if isinstance(strategy, Eaw):
        return eaw_rotation(h, cfg), eaw_translation(h, cfg)
    levels, thresholds = _levels_of(strategy)
    index = sum(h >= th for th in thresholds)
    return levels[index]


def sample_transform(h, cfg, rng):
    """Draw a signed, randomly directed transform with entropy-determined magnitude.

    The rng is always advanced by exactly two draws (rotation sign, then the
    translation direction) so streams stay aligned across strategies.
    """
    angle, ratio = magnitude(h, cfg)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    phi = rng.uniform(0.0, 2.0 * math.pi)
    dx, dy = ratio * math.cos(phi), ratio * math.sin(phi)
    return SpatialTransform(sign * angle, dx, dy)
