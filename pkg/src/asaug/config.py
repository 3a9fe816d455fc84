"""Experiment configuration files.

The format is INI-style ``key = value`` text with ``[section]`` headers,
read with :mod:`configparser`.  Every key has a default; unknown sections
and keys are rejected so typos fail loudly.
"""
import configparser
import io
from dataclasses import dataclass, field, replace

from .adaptive import STRATEGIES, BiPart, Eaw, EawConfig, Fixed, FixedHigh, RangeDyn
from .data_io import ShapesWorldConfig
from .trainer import TrainConfig

ABLATION_STRATEGIES = (
    "supervised_only", "wscr_ce_baseline", "fixed", "fixed_high", "bi_part", "range_dyn", "eaw",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyTable:
    """Parameters of every mapping strategy, so any of them can be selected later."""

    fixed: Fixed = field(default_factory=Fixed)
    fixed_high: FixedHigh = field(default_factory=FixedHigh)
    bi_part: BiPart = field(default_factory=BiPart)
    range_dyn: RangeDyn = field(default_factory=RangeDyn)

    def get(self, name):
        if name == "eaw":
            return Eaw()
        if name not in STRATEGIES:
            raise ConfigError(f"eaw.strategy: unknown strategy {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class ExperimentConfig:
    data: ShapesWorldConfig = field(default_factory=ShapesWorldConfig)
    val_count: int = 0
    labeled_ratio: float = 0.125
    split_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    strategies: StrategyTable = field(default_factory=StrategyTable)
    ablation_seeds: tuple = (0, 1, 2)
    ablation_strategies: tuple = ABLATION_STRATEGIES
    output_dir: str = "out"

    def with_strategy(self, name, seed=None):
        """Copy whose training run uses ablation entry ``name`` (a mode or a mapping)."""
        train = self.train if seed is None else replace(self.train, seed=seed)
        if name in ("supervised_only", "wscr_ce_baseline"):
            return replace(self, train=replace(train, mode=name))
        eaw = replace(train.eaw, strategy=self.strategies.get(name))
        return replace(self, train=replace(train, mode="asaug", eaw=eaw))


# -- value codecs ---------------------------------------------------------------

def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("expected 'angle, ratio'")
    return vals


def _pairs(text):
    return tuple(_pair(chunk) for chunk in text.split(";") if chunk.strip())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _names(text):
    return tuple(v for v in text.replace(",", " ").split())


def _palette(text):
    if text.strip() == "default":
        return None
    return tuple(tuple(_floats(chunk)) for chunk in text.split(";") if chunk.strip())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(", ".join(_fmt(x) for x in item) for item in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# section -> key -> parser of the raw text value
_SCHEMA = {
    "data": {
        "image_size": int, "num_classes": int, "shapes_per_image": _ints,
        "noise_std": float, "color_palette": _palette, "color_jitter": float, "seed": int,
        "val_count": int,
    },
    "split": {"labeled_ratio": float, "seed": int},
    "train": {
        "lr_init": float, "poly_power": float, "weight_decay": float, "lambda": float,
        "epochs": int, "batch_size": int, "ema_alpha": float, "seed": int, "mode": str,
        "teacher_targets": str, "weak_flip_prob": float, "warmup_epochs": int,
        "jitter_brightness": float, "jitter_contrast": float,
    },
    "eaw": {
        "k_r": float, "k_t": float, "d_r": float, "d_t": float, "r_max": float,
        "t_max": float, "normalize_entropy": _bool, "clamp_output": _bool, "strategy": str,
        "fixed_angle": float, "fixed_ratio": float, "fixed_high_angle": float,
        "fixed_high_ratio": float, "bipart_threshold": float, "bipart_low": _pair,
        "bipart_high": _pair, "rangedyn_breakpoints": _floats, "rangedyn_levels": _pairs,
    },
    "ablation": {"seeds": _ints, "strategies": _names},
    "output": {"dir": str},
}


def to_sections(cfg):
    d, t, e, st = cfg.data, cfg.train, cfg.train.eaw, cfg.strategies
    return {
        "data": {
            "image_size": d.image_size, "num_classes": d.num_classes,
            "shapes_per_image": d.shapes_per_image, "noise_std": d.noise_std,
            "color_palette": d.color_palette, "color_jitter": d.color_jitter, "seed": d.seed,
            "val_count": cfg.val_count,
        },
        "split": {"labeled_ratio": cfg.labeled_ratio, "seed": cfg.split_seed},
        "train": {
            "lr_init": t.lr_init, "poly_power": t.poly_power, "weight_decay": t.weight_decay,
            "lambda": t.lam, "epochs": t.epochs, "batch_size": t.batch_size,
            "ema_alpha": t.ema_alpha, "seed": t.seed, "mode": t.mode,
            "teacher_targets": t.teacher_targets, "weak_flip_prob": t.weak_flip_prob,
            "warmup_epochs": t.warmup_epochs, "jitter_brightness": t.jitter_brightness,
            "jitter_contrast": t.jitter_contrast,
        },
        "eaw": {
            "k_r": e.k_r, "k_t": e.k_t, "d_r": e.d_r, "d_t": e.d_t, "r_max": e.r_max,
            "t_max": e.t_max, "normalize_entropy": e.normalize_entropy,
            "clamp_output": e.clamp_output, "strategy": e.strategy.name,
            "fixed_angle": st.fixed.angle_deg, "fixed_ratio": st.fixed.ratio,
            "fixed_high_angle": st.fixed_high.angle_deg, "fixed_high_ratio": st.fixed_high.ratio,
            "bipart_threshold": st.bi_part.threshold, "bipart_low": tuple(st.bi_part.low),
            "bipart_high": tuple(st.bi_part.high),
            "rangedyn_breakpoints": tuple(st.range_dyn.breakpoints),
            "rangedyn_levels": tuple(tuple(lv) for lv in st.range_dyn.levels),
        },
        "ablation": {"seeds": cfg.ablation_seeds, "strategies": cfg.ablation_strategies},
        "output": {"dir": cfg.output_dir},
    }


def dump(cfg):
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in to_sections(cfg).items():
        parser[section] = {k: _fmt(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


class _Section:
    """Turns validation errors raised while building one section into ConfigErrors."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None or issubclass(exc_type, ConfigError):
            return False
        if issubclass(exc_type, (ValueError, TypeError)):
            msg = str(exc)
            key = next((k for k in _SCHEMA[self.name] if msg.startswith(k)), None)
            if key is None and msg.startswith("lam"):
                key = "lambda"
            where = f"{self.name}.{key}" if key else f"[{self.name}]"
            raise ConfigError(f"{where}: {msg}") from exc
        return False


def _from_sections(s):
    d, t, e = s["data"], s["train"], s["eaw"]
    with _Section("eaw"):
        strategies = StrategyTable(
            fixed=Fixed(e["fixed_angle"], e["fixed_ratio"]),
            fixed_high=FixedHigh(e["fixed_high_angle"], e["fixed_high_ratio"]),
            bi_part=BiPart(e["bipart_threshold"], e["bipart_low"], e["bipart_high"]),
            range_dyn=RangeDyn(e["rangedyn_breakpoints"], e["rangedyn_levels"]),
        )
        eaw = EawConfig(
            k_r=e["k_r"], k_t=e["k_t"], d_r=e["d_r"], d_t=e["d_t"], r_max=e["r_max"],
            t_max=e["t_max"], normalize_entropy=e["normalize_entropy"],
            clamp_output=e["clamp_output"], strategy=strategies.get(e["strategy"]),
        )
        # every strategy must be valid for these bounds, not only the selected one
        for name in ("fixed", "fixed_high", "bi_part", "range_dyn"):
            replace(eaw, strategy=strategies.get(name))
    with _Section("train"):
        train = TrainConfig(
            lr_init=t["lr_init"], poly_power=t["poly_power"], weight_decay=t["weight_decay"],
            lam=t["lambda"], epochs=t["epochs"], batch_size=t["batch_size"],
            ema_alpha=t["ema_alpha"], seed=t["seed"], eaw=eaw, mode=t["mode"],
            teacher_targets=t["teacher_targets"], weak_flip_prob=t["weak_flip_prob"],
            warmup_epochs=t["warmup_epochs"], jitter_brightness=t["jitter_brightness"],
            jitter_contrast=t["jitter_contrast"],
        )
    with _Section("data"):
        data = ShapesWorldConfig(
            image_size=d["image_size"], num_classes=d["num_classes"],
            shapes_per_image=d["shapes_per_image"], noise_std=d["noise_std"],
            color_palette=d["color_palette"], color_jitter=d["color_jitter"], seed=d["seed"],
        )
        if d["val_count"] < 0:
            raise ValueError("val_count must be non-negative")
    with _Section("split"):
        if not 0 < s["split"]["labeled_ratio"] <= 1:
            raise ValueError("labeled_ratio must lie in (0, 1]")
    unknown = [n for n in s["ablation"]["strategies"] if n not in ABLATION_STRATEGIES]
    if unknown:
        raise ConfigError(f"ablation.strategies: unknown entries {unknown}")
    return ExperimentConfig(
        data=data, val_count=d["val_count"], labeled_ratio=s["split"]["labeled_ratio"],
        split_seed=s["split"]["seed"], train=train, strategies=strategies,
        ablation_seeds=s["ablation"]["seeds"], ablation_strategies=s["ablation"]["strategies"],
        output_dir=s["output"]["dir"],
    )


def parse(text, base=None):
    """Parse config text on top of ``base`` (defaults when omitted)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = to_sections(base or ExperimentConfig())
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                sections[section][key] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
    return _from_sections(sections)


def load(path):
    with open(path) as fh:
        return parse(fh.read())
