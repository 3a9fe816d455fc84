"""Grid value types and the elementwise conversions between them.

All grids are plain numpy arrays with fixed layouts:

* image: ``(H, W, 3)`` float64 in [0, 1], channel-interleaved
* logits / probability map: ``(C, H, W)`` float64, class-major
* label mask: ``(H, W)`` integer class ids, ``IGNORE`` marks unlabeled pixels
* validity mask: ``(H, W)`` bool, True where a pixel takes part in losses
"""
import numpy as np

IGNORE = 255
PROB_TOL = 1e-5


def check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must be finite and within [0, 1]")
    return img


def check_probmap(p, tol=PROB_TOL):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] < 2:
        raise ValueError(f"probability map must be (C>=2, H, W), got {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    if np.max(np.abs(p.sum(axis=0) - 1.0)) > tol:
        raise ValueError("probabilities must sum to 1 per pixel")
    return p


def check_mask(mask, num_classes=None):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"label mask must be (H, W), got {mask.shape}")
    if not np.issubdtype(mask.dtype, np.integer):
        raise ValueError("label mask must hold integer class ids")
    if num_classes is not None:
        labeled = mask[mask != IGNORE]
        if labeled.size and (labeled.min() < 0 or labeled.max() >= num_classes):
            raise ValueError("class out of range")
    return mask


def softmax(logits):
    """Per-pixel softmax over the class axis of a ``(C, H, W)`` logit map."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("invalid logits")
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("invalid logits")
    z = logits - logits.max(axis=0, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=0, keepdims=True))


def argmax(prob):
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(np.asarray(prob), axis=0).astype(np.int64)


def one_hot(mask, num_classes):
    """Expand a label mask to a one-hot probability map.

    IGNORE pixels become all-zero vectors and are marked invalid.

    Returns
    -------
    (probmap, valid) : ``(C, H, W)`` float64 and ``(H, W)`` bool
    """
    mask = check_mask(mask, num_classes)
    valid = mask != IGNORE
    out = np.zeros((num_classes,) + mask.shape, dtype=np.float64)
    ii, jj = np.nonzero(valid)
    out[mask[ii, jj], ii, jj] = 1.0
    return out, valid
