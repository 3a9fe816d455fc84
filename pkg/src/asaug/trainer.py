"""Mean-teacher weak-to-strong training with entropy-adaptive spatial augmentation."""
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adaptive, losses, spatial
from .adaptive import EawConfig
from .data_io import load_manifest_samples
from .grids import softmax
from .metrics import evaluate
from .model import LinearSegModel, checksum, extract_features, param_grad, sgd_step, ema_update

log = logging.getLogger(__name__)

MODES = ("supervised_only", "asaug", "wscr_ce_baseline")
TEACHER_TARGETS = ("soft", "hard")
REPORT_COLUMNS = (
    "epoch", "lr", "loss_sup", "loss_unsup", "mean_entropy",
    "mean_abs_rot_deg", "mean_trans_ratio", "val_miou",
)
TRACE_COLUMNS = (
    "iteration", "epoch", "entropy", "rotation_deg", "dx", "dy", "valid_count", "skipped",
)


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 0.001
    poly_power: float = 0.9
    weight_decay: float = 1e-4
    lam: float = 0.5
    epochs: int = 10
    batch_size: int = 8
    ema_alpha: float = 0.99
    seed: int = 0
    eaw: EawConfig = field(default_factory=EawConfig)
    mode: str = "asaug"
    teacher_targets: str = "soft"
    weak_flip_prob: float = 0.5
    # supervised-only epochs before the unlabeled branch switches on
    warmup_epochs: int = 0
    # photometric strong augmentation of the cross-entropy baseline
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.25

    def __post_init__(self):
        if self.lr_init <= 0:
            raise ValueError("lr_init must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in [0, 1]")
        if not 0.0 <= self.weak_flip_prob <= 1.0:
            raise ValueError("weak_flip_prob must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.teacher_targets not in TEACHER_TARGETS:
            raise ValueError(f"teacher_targets must be one of {TEACHER_TARGETS}")
        if not 0.0 <= self.jitter_brightness <= 0.5:
            raise ValueError("jitter_brightness must lie in [0, 0.5]")
        if not 0.0 <= self.jitter_contrast <= 0.5:
            raise ValueError("jitter_contrast must lie in [0, 0.5]")


def poly_lr(lr_init, iteration, total_iters, power=0.9):
    if not 0 <= iteration <= total_iters:
        raise ValueError("iteration must lie in [0, total_iters]")
    if total_iters == 0:
        return lr_init
    return lr_init * (1.0 - iteration / total_iters) ** power


def weak_augment(img, rng, flip_prob=0.5):
    """Random horizontal flip; returns the image and whether it was flipped."""
    flipped = bool(rng.random() < flip_prob)
    return (spatial.hflip_image(img) if flipped else img), flipped


@dataclass
class StepTrace:
    entropy: float
    transform: spatial.SpatialTransform
    valid_count: int
    flipped: bool = False
    skipped: bool = False


class _Features:
    """Cache of model features per image and flip state."""

    def __init__(self, images):
        self.images = images
        self._cache = {}

    def get(self, k, flipped=False):
        key = (k, flipped)
        if key not in self._cache:
            img = self.images[k]
            self._cache[key] = extract_features(spatial.hflip_image(img) if flipped else img)
        return self._cache[key]


def _unlabeled_step(x, feats_raw, feats_weak, flipped, student, teacher, cfg, rng):
    num_classes = teacher.num_classes
    probs = softmax(teacher.forward_features(feats_weak))
    h = adaptive.mean_entropy(
        adaptive.pixel_entropy(probs), None, cfg.eaw.normalize_entropy, num_classes
    )
    target = losses.hard_targets(probs) if cfg.teacher_targets == "hard" else probs
    if flipped:
        # back into the frame of the raw image x
        target = spatial.hflip(target)

    if cfg.mode == "wscr_ce_baseline":
        brightness = rng.uniform(-cfg.jitter_brightness, cfg.jitter_brightness)
        contrast = rng.uniform(1.0 - cfg.jitter_contrast, 1.0 + cfg.jitter_contrast)
        feats = extract_features(spatial.photometric_jitter(x, brightness, contrast))
        valid = np.ones(target.shape[1:], dtype=bool)
        loss = losses.consistency_ce(student.forward_features(feats), target, valid)
        return loss, StepTrace(h, spatial.IDENTITY, loss.valid_count, flipped), feats

    t = adaptive.sample_transform(h, cfg.eaw, rng)
    aligned, valid = spatial.apply_to_probmap(target, t)
    n = int(valid.sum())
    if n == 0:
        empty = losses.LossValue(0.0, np.zeros((num_classes,) + valid.shape), 0)
        return empty, StepTrace(h, t, 0, flipped, skipped=True), None
    feats = feats_raw if t.is_identity else extract_features(spatial.apply_to_image(x, t)[0])
    loss = losses.spatial_mse(student.forward_features(feats), aligned, valid)
    return loss, StepTrace(h, t, n, flipped), feats


def unlabeled_step(x, student, teacher, cfg, rng):
    """One pass of the unlabeled branch for image ``x``.

    Weakly augment, let the teacher predict, turn the mean prediction entropy
    into a spatial transform, move the teacher target with that transform and
    compare it with the student's prediction on the transformed image.
    """
    x_w, flipped = weak_augment(x, rng, cfg.weak_flip_prob)
    loss, trace, _ = _unlabeled_step(
        x, extract_features(x), extract_features(x_w), flipped, student, teacher, cfg, rng
    )
    return loss, trace


@dataclass
class RunReport:
    rows: list
    traces: list
    final_checksum: str
    student_checksum: str
    config: dict
    seed: int

    @property
    def final_miou(self):
        return self.rows[-1]["val_miou"]

    def to_csv(self):
        lines = [",".join(REPORT_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row[c]) for c in REPORT_COLUMNS))
        return "\n".join(lines) + "\n"

    def traces_csv(self):
        lines = [",".join(TRACE_COLUMNS)]
        for tr in self.traces:
            lines.append(",".join(_fmt(tr[c]) for c in TRACE_COLUMNS))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train_config_dict(cfg):
    d = asdict(cfg)
    d["eaw"]["strategy"] = {"name": cfg.eaw.strategy.name, **asdict(cfg.eaw.strategy)}
    return d


def _mean(values):
    return float(np.mean(values)) if values else 0.0


def train(labeled, unlabeled, cfg, num_classes, val=None, config_echo=None):
    """Train from in-memory samples; returns ``(report, teacher, student)``.

    ``labeled`` holds ``(image, mask)`` pairs, ``unlabeled`` bare images and
    ``val`` the ``(image, mask)`` pairs scored each epoch (the labeled set
    when omitted).  Epoch 0 of the report scores the untrained model.
    """
    if not labeled:
        raise ValueError("training needs at least one labeled sample")
    use_unlabeled = cfg.mode != "supervised_only"
    if use_unlabeled and not unlabeled:
        raise ValueError(f"mode {cfg.mode} needs at least one unlabeled sample")
    val = labeled if val is None else val

    lab_feats = _Features([img for img, _ in labeled])
    unl_feats = _Features(list(unlabeled))
    val_feats = [extract_features(img) for img, _ in val]

    n_unl = len(unlabeled)
    iters_per_epoch = math.ceil((n_unl if n_unl else len(labeled)) / cfg.batch_size)
    total_iters = cfg.epochs * iters_per_epoch
    rng_lab = np.random.default_rng([cfg.seed, 1])
    rng_unl = np.random.default_rng([cfg.seed, 2])

    student = LinearSegModel.zeros(num_classes)
    teacher = student
    _, miou0 = evaluate(teacher.quantized(), val, val_feats)
    rows = [dict(epoch=0, lr=cfg.lr_init, loss_sup=0.0, loss_unsup=0.0, mean_entropy=0.0,
                 mean_abs_rot_deg=0.0, mean_trans_ratio=0.0, val_miou=miou0)]
    traces = []
    lab_queue = []
    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        unl_active = use_unlabeled and epoch > cfg.warmup_epochs
        unl_order = rng_unl.permutation(n_unl) if unl_active else None
        sup_vals, unsup_vals, epoch_traces = [], [], []
        lr = cfg.lr_init
        for b in range(iters_per_epoch):
            lr = poly_lr(cfg.lr_init, iteration, total_iters, cfg.poly_power)

            sup_value, sup_grad = 0.0, np.zeros_like(student.weights)
            for _ in range(cfg.batch_size):
                if not lab_queue:
                    lab_queue = list(rng_lab.permutation(len(labeled)))
                k = int(lab_queue.pop(0))
                flipped = bool(rng_lab.random() < cfg.weak_flip_prob)
                mask = labeled[k][1]
                feats = lab_feats.get(k, flipped)
                loss = losses.supervised_ce(
                    student.forward_features(feats), spatial.hflip(mask) if flipped else mask
                )
                sup_value += loss.value
                sup_grad += param_grad(feats, loss.grad)
            l_sup = losses.LossValue(sup_value / cfg.batch_size, sup_grad / cfg.batch_size, 0)

            l_unsup = losses.LossValue(0.0, np.zeros_like(student.weights), 0)
            if unl_active:
                batch = unl_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                u_value, u_grad = 0.0, np.zeros_like(student.weights)
                for k in batch:
                    k = int(k)
                    flipped = bool(rng_unl.random() < cfg.weak_flip_prob)
                    loss, trace, feats = _unlabeled_step(
                        unlabeled[k], unl_feats.get(k), unl_feats.get(k, flipped), flipped,
                        student, teacher, cfg, rng_unl,
                    )
                    if not trace.skipped:
                        u_value += loss.value
                        u_grad += param_grad(feats, loss.grad)
                    t = trace.transform
                    epoch_traces.append(dict(
                        iteration=iteration, epoch=epoch, entropy=float(trace.entropy),
                        rotation_deg=t.rotation_deg, dx=t.translate_dx, dy=t.translate_dy,
                        valid_count=trace.valid_count, skipped=trace.skipped,
                    ))
                l_unsup = losses.LossValue(u_value / len(batch), u_grad / len(batch), 0)

            total = losses.total_loss(l_sup, l_unsup, cfg.lam)
            student = sgd_step(student, total.grad, lr, cfg.weight_decay)
            teacher = ema_update(teacher, student, cfg.ema_alpha)
            sup_vals.append(l_sup.value)
            unsup_vals.append(l_unsup.value)
            iteration += 1

        _, val_miou = evaluate(teacher.quantized(), val, val_feats)
        row = dict(
            epoch=epoch, lr=lr, loss_sup=_mean(sup_vals), loss_unsup=_mean(unsup_vals),
            mean_entropy=_mean([tr["entropy"] for tr in epoch_traces]),
            mean_abs_rot_deg=_mean([abs(tr["rotation_deg"]) for tr in epoch_traces]),
            mean_trans_ratio=_mean([math.hypot(tr["dx"], tr["dy"]) for tr in epoch_traces]),
            val_miou=val_miou,
        )
        rows.append(row)
        traces.extend(epoch_traces)
        log.info("epoch %d loss_sup=%.4f loss_unsup=%.4f val_miou=%.4f",
                 epoch, row["loss_sup"], row["loss_unsup"], val_miou)

    report = RunReport(
        rows=rows, traces=traces, final_checksum=checksum(teacher),
        student_checksum=checksum(student),
        config=config_echo if config_echo is not None else train_config_dict(cfg), seed=cfg.seed,
    )
    return report, teacher, student


def train_manifest(manifest, cfg, num_classes, val_manifest=None, config_echo=None):
    if not manifest.entries:
        raise ValueError("empty manifest")
    labeled, unlabeled = load_manifest_samples(manifest)
    val = None
    if val_manifest is not None:
        val, _ = load_manifest_samples(val_manifest)
    return train(labeled, unlabeled, cfg, num_classes, val, config_echo)
