"""Confusion matrix and mean intersection-over-union."""
import numpy as np

from .grids import IGNORE


def confusion_matrix(num_classes):
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(cm, pred, gt):
    """Return ``cm`` plus counts for one image; rows are ground truth, columns prediction."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    n = cm.shape[0]
    keep = gt != IGNORE
    g = gt[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    if g.size and (g.max() >= n or p.min() < 0 or p.max() >= n):
        raise ValueError("class out of range")
    return cm + np.bincount(n * g + p, minlength=n * n).reshape(n, n)


def miou(cm):
    """Per-class IoU (None where the class never occurs) and their mean."""
    cm = np.asarray(cm)
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    per_class = [float(i) / float(u) if u > 0 else None for i, u in zip(inter, union)]
    present = [v for v in per_class if v is not None]
    if not present:
        raise ValueError("all classes absent")
    return per_class, float(np.mean(present))


def iou_csv(per_class, mean):
    lines = ["class,iou"]
    for c, v in enumerate(per_class):
        lines.append(f"{c},{'absent' if v is None else repr(v)}")
    lines.append(f"miou,{mean!r}")
    return "\n".join(lines) + "\n"


def evaluate(model, samples, features=None):
    """mIoU of ``model`` over ``(img, mask)`` samples; ``features`` may hold precomputed maps."""
    cm = confusion_matrix(model.num_classes)
    for k, (img, mask) in enumerate(samples):
        logits = model.forward_features(features[k]) if features is not None else model.forward(img)
        cm = accumulate(cm, np.argmax(logits, axis=0), mask)
    return miou(cm)
