"""Gradient-weighted class activation maps and heat-map overlays.

The map for class c at a convolutional layer is built from that layer's
forward activations A and the gradient of the pre-softmax class score with
respect to A: per-channel weights are the spatial mean of the gradient, the
weighted channel sum is rectified, bilinearly upsampled to the input size,
and normalized so the maximum is exactly 1 whenever the map is nonzero.
The pre-softmax logit is targeted rather than the probability so saturated
softmax outputs cannot flatten the gradient.
"""

from dataclasses import dataclass

import numpy as np

from .data import bilinear_resize
from .errors import ConfigError, ShapeError, StateError

# Fixed color ramp from low activation (violet-blue) to high (red-yellow).
HEAT_RAMP = (
    (0.00, (70, 0, 160)),
    (0.25, (0, 90, 255)),
    (0.50, (0, 200, 120)),
    (0.75, (255, 200, 0)),
    (1.00, (255, 60, 0)),
)


@dataclass
class Heatmap:
    values: np.ndarray  # [H, W] in [0, 1]
    source_layer: str


def grad_cam(model, x, class_index, target_layer=None):
    """Compute the class activation heat-map for a single [1, 3, S, S] input.

    ``target_layer`` names a convolutional layer; default is the last one.
    The model must be in evaluation mode so the pass is deterministic.
    """
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"grad_cam expects a single [1, 3, S, S] image, got {x.shape}")
    conv_names = model.conv_layer_names()
    if not conv_names:
        raise ConfigError("model has no convolutional layers to target")
    if target_layer is None:
        target_layer = conv_names[-1]
    if target_layer not in conv_names:
        raise ConfigError(
            f"layer {target_layer!r} is not convolutional; valid targets: {conv_names}")
    if model.layers[-1][1].kind != "softmax":
        raise ConfigError("grad_cam expects a softmax-headed model")
    if model.mode != "eval":
        raise StateError("grad_cam requires the model in evaluation mode")

    model.forward(x)
    idx = model.layer_index(target_layer)
    activations = model._outputs[idx]           # [1, C, h, w]
    logits = model._outputs[-2]                 # pre-softmax scores [1, K]
    if not 0 <= int(class_index) < logits.shape[1]:
        raise ConfigError(f"class_index {class_index} out of range for {logits.shape[1]} classes")

    dy = np.zeros_like(logits)
    dy[0, int(class_index)] = 1.0
    for _, layer in reversed(model.layers[idx + 1 : -1]):
        dy = layer.backward(dy)                 # d(score)/d(activations) at the target

    weights = dy.mean(axis=(2, 3), keepdims=True)
    raw = (weights * activations).sum(axis=1)[0]
    cam = np.maximum(raw, 0.0)
    size = x.shape[2]
    cam = bilinear_resize(cam, size, x.shape[3])
    cam = np.maximum(cam, 0.0)                  # interpolation cannot add mass below 0
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return Heatmap(values=cam.astype(np.float64), source_layer=target_layer)


def heat_color(values):
    """Map heat in [0, 1] through the fixed ramp to float RGB [..., 3]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    rgb = np.zeros(v.shape + (3,))
    for (p0, c0), (p1, c1) in zip(HEAT_RAMP, HEAT_RAMP[1:]):
        mask = (v >= p0) & (v <= p1)
        t = np.where(mask, (v - p0) / (p1 - p0), 0.0)[..., None]
        seg = (1 - t) * np.asarray(c0, dtype=np.float64) + t * np.asarray(c1, dtype=np.float64)
        rgb = np.where(mask[..., None], seg, rgb)
    return rgb


def overlay(hm, img, alpha=0.4):
    """Blend the colorized heat-map over an [H, W, 3] image in [0, 255].

    Returns 8-bit RGB: round(alpha * color(heat) + (1 - alpha) * img).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"overlay expects [H, W, 3], got {img.shape}")
    if hm.values.shape != img.shape[:2]:
        raise ShapeError(f"heat-map {hm.values.shape} does not match image {img.shape[:2]}")
    blended = alpha * heat_color(hm.values) + (1 - alpha) * img
    return np.clip(np.round(blended), 0, 255).astype(np.uint8)
