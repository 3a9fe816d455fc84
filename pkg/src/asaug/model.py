"""Fixed-feature linear softmax segmentation model and its checkpoint format."""
import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .grids import check_image

NUM_FEATURES = 12
BLUR_SIGMAS = (2.0, 5.0)
CHECKPOINT_MAGIC = b"ASMD"
CHECKPOINT_VERSION = 1


def extract_features(img):
    """Per-pixel features ``(12, H, W)``.

    Order: raw RGB, RGB blurred at sigma 2, RGB blurred at sigma 5, column
    coordinate ``(j + 0.5) / W``, row coordinate ``(i + 0.5) / H``, bias.
    Blurs use a kernel truncated at 3 sigma with edge replication.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    chw = np.moveaxis(img, 2, 0)
    feats = [chw]
    for sigma in BLUR_SIGMAS:
        feats.append(np.stack([gaussian_filter(c, sigma, mode="nearest", truncate=3.0) for c in chw]))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    feats.append(np.stack([(xs + 0.5) / w, (ys + 0.5) / h, np.ones((h, w))]))
    return np.concatenate(feats, axis=0)


@dataclass(frozen=True, eq=False)
class LinearSegModel:
    """Per-pixel classifier ``logits[c] = sum_f W[c, f] * features[f]``."""

    weights: np.ndarray

    @classmethod
    def zeros(cls, num_classes, num_features=NUM_FEATURES):
        return cls(np.zeros((num_classes, num_features)))

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def theta(self):
        return self.weights.reshape(-1)

    def forward_features(self, feats):
        return np.tensordot(self.weights, feats, axes=(1, 0))

    def forward(self, img):
        return self.forward_features(extract_features(img))

    def quantized(self):
        """Copy with weights rounded to float32, as stored in checkpoints."""
        return LinearSegModel(self.weights.astype(np.float32).astype(np.float64))


def forward(model, img):
    return model.forward(img)


def param_grad(feats, dlogits):
    """``dL/dW[c, f] = sum_ij dL/dlogits[c, i, j] * features[f, i, j]``."""
    feats = np.asarray(feats)
    dlogits = np.asarray(dlogits)
    if feats.shape[1:] != dlogits.shape[1:]:
        raise ValueError("feature and gradient grids differ")
    return np.tensordot(dlogits, feats, axes=([1, 2], [1, 2]))


def sgd_step(model, grad, lr, weight_decay=0.0):
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    w = model.weights
    return LinearSegModel(w - lr * (np.reshape(grad, w.shape) + weight_decay * w))


def ema_update(teacher, student, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if teacher.weights.shape != student.weights.shape:
        raise ValueError("teacher and student parameter shapes differ")
    return LinearSegModel(alpha * teacher.weights + (1.0 - alpha) * student.weights)


# -- checkpoints ----------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model):
    c, f = model.weights.shape
    header = CHECKPOINT_MAGIC + struct.pack("<III", CHECKPOINT_VERSION, c, f)
    return header + model.weights.astype("<f4").tobytes()


def checksum(model):
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def save_checkpoint(path, model):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic {data[:4]!r}")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header ({len(data)} bytes)")
    version, c, f = struct.unpack("<III", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    expected = 16 + 4 * c * f
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")
    weights = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float64).reshape(c, f)
    return LinearSegModel(weights)
