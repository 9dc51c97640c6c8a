"""Loss family for the twin networks.

MSE and SmoothL1 carry the gradient; the Canny edge term compares binary
edge maps of prediction and target and is piecewise-constant, so it adds
value but no gradient.  The combined forms weight the regression term by
lambda and the edge term by (1 - lambda); the headline loss is the sum
of both combined forms.  A soft IoU loss and a pixel-accuracy metric
cover the ablation study.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _node


@dataclass(frozen=True)
class LossWeights:
    lambda_weight: float = 0.85
    beta_smooth: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError(f"lambda_weight must be in [0, 1], got {self.lambda_weight}")
        if self.beta_smooth <= 0:
            raise ValueError(f"beta_smooth must be > 0, got {self.beta_smooth}")


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.0
    gaussian_radius: int = 2
    low_threshold: float = 0.1    # fraction of the max gradient magnitude
    high_threshold: float = 0.2

    def __post_init__(self):
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be > 0")
        if not 0 < self.low_threshold < self.high_threshold < 1:
            raise ValueError("need 0 < low_threshold < high_threshold < 1")


def _as_array(t):
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


def _check_same_shape(pred, target):
    ta = _as_array(target)
    if pred.shape != ta.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {ta.shape}")
    if ta.size == 0:
        raise ShapeError("empty tensors")
    return ta


def mse(pred: Tensor, target) -> Tensor:
    t = _check_same_shape(pred, target)
    d = pred.data - t
    n = d.size
    return _node(np.mean(d * d), (pred,), lambda g: (g * 2.0 / n * d,))


def smooth_l1(pred: Tensor, target, beta_smooth: float = 1.0) -> Tensor:
    """Mean of 0.5 d^2 / beta inside |d| < beta, |d| - 0.5 beta outside."""
    if beta_smooth <= 0:
        raise ValueError("beta_smooth must be > 0")
    t = _check_same_shape(pred, target)
    d = pred.data - t
    ad = np.abs(d)
    inner = ad < beta_smooth
    per_pixel = np.where(inner, 0.5 * d * d / beta_smooth, ad - 0.5 * beta_smooth)
    n = d.size

    def grad_fn(g):
        return (g / n * np.where(inner, d / beta_smooth, np.sign(d)),)

    return _node(per_pixel.mean(), (pred,), grad_fn)


def _gaussian_kernel1d(sigma, radius):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _smooth(img, sigma, radius):
    k = _gaussian_kernel1d(sigma, radius)
    padded = np.pad(img, radius, mode="edge")
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, padded)
    out = np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, out)
    return out


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _conv3x3(img, kernel):
    p = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for i in range(3):
        for j in range(3):
            out += kernel[i, j] * p[i:i + img.shape[0], j:j + img.shape[1]]
    return out


def _nonmax_suppress(mag, gx, gy):
    """Keep pixels that are local maxima along the quantized gradient direction."""
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    h, w = mag.shape
    out = np.zeros_like(mag)
    padded = np.pad(mag, 1)
    m = padded[1:-1, 1:-1]
    # neighbor offsets per 45-degree sector
    sectors = [
        ((angle < 22.5) | (angle >= 157.5), (0, 1)),    # horizontal gradient
        ((angle >= 22.5) & (angle < 67.5), (1, 1)),     # diagonal /
        ((angle >= 67.5) & (angle < 112.5), (1, 0)),    # vertical gradient
        ((angle >= 112.5) & (angle < 157.5), (1, -1)),  # diagonal \
    ]
    for mask, (dy, dx) in sectors:
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep = mask & (m >= fwd) & (m >= bwd)
        out[keep] = m[keep]
    return out


def _hysteresis(nms, low, high):
    """Strong pixels seed an 8-connected flood that keeps weak pixels."""
    strong = nms >= high
    weak = nms >= low
    keep = strong.copy()
    queue = deque(zip(*np.nonzero(strong)))
    h, w = nms.shape
    while queue:
        y, x = queue.popleft()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and weak[ny, nx] and not keep[ny, nx]:
                    keep[ny, nx] = True
                    queue.append((ny, nx))
    return keep


def canny(image: np.ndarray, params: CannyParams = CannyParams()) -> np.ndarray:
    """Five-stage Canny producing a {0, 1} uint8 edge map.

    Thresholds are fractions of the per-image max gradient magnitude, so
    the result is invariant to global intensity shifts and scales.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"canny expects a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("canny input must be finite")
    smoothed = _smooth(img, params.gaussian_sigma, params.gaussian_radius)
    gx = _conv3x3(smoothed, _SOBEL_X)
    gy = _conv3x3(smoothed, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    scale = max(np.abs(img).max(), 1e-30)
    if peak <= 1e-9 * scale:  # flat image up to float noise
        return np.zeros(img.shape, dtype=np.uint8)
    # normalize and quantize so NMS ties and thresholds are stable under
    # global intensity shifts (which only perturb mag at float epsilon)
    mag_rel = np.round(mag / peak, 9)
    nms = _nonmax_suppress(mag_rel, gx, gy)
    edges = _hysteresis(nms, params.low_threshold, params.high_threshold)
    return edges.astype(np.uint8)


def _edge_maps(arr, params):
    """Canny per channel for (H, W) or (C, H, W) arrays."""
    if arr.ndim == 2:
        return canny(arr, params)[None]
    return np.stack([canny(ch, params) for ch in arr])


def edge_preserving(pred: Tensor, target, params: CannyParams = CannyParams()) -> Tensor:
    """Mean absolute difference of the two edge maps.

    The edge detector is piecewise-constant, so this term contributes no
    gradient to pred; it is recorded as a constant node.
    """
    t = _check_same_shape(pred, target)
    ep = _edge_maps(pred.data, params).astype(np.float64)
    et = _edge_maps(t, params).astype(np.float64)
    return Tensor(np.float64(np.abs(et - ep).mean()))


def mse_canny(pred, target, weights: LossWeights = LossWeights(),
              params: CannyParams = CannyParams()) -> Tensor:
    lam = weights.lambda_weight
    return lam * mse(pred, target) + (1.0 - lam) * edge_preserving(pred, target, params)


def smoothl1_canny(pred, target, weights: LossWeights = LossWeights(),
                   params: CannyParams = CannyParams()) -> Tensor:
    lam = weights.lambda_weight
    return (lam * smooth_l1(pred, target, weights.beta_smooth)
            + (1.0 - lam) * edge_preserving(pred, target, params))


def mssce(pred, target, weights: LossWeights = LossWeights(),
          params: CannyParams = CannyParams()) -> Tensor:
    return mse_canny(pred, target, weights, params) + smoothl1_canny(pred, target, weights, params)


IOU_EPS = 1e-6


def iou_loss(pred: Tensor, target) -> Tensor:
    """1 - soft IoU; differentiable for pred in [0, 1], target in {0, 1}."""
    t = _check_same_shape(pred, target)
    p = pred.data
    inter = float((p * t).sum())
    union = float(p.sum() + t.sum() - inter)
    value = 1.0 - (inter + IOU_EPS) / (union + IOU_EPS)

    def grad_fn(g):
        du = union + IOU_EPS
        gp = -(t * du - (inter + IOU_EPS) * (1.0 - t)) / (du * du)
        return (g * gp,)

    return _node(np.float64(value), (pred,), grad_fn)


def pixel_accuracy(pred, target, threshold: float = 0.5) -> float:
    """Fraction of pixels whose thresholded prediction matches the target."""
    p = _as_array(pred)
    t = _as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != target shape {t.shape}")
    return float(np.mean((p > threshold) == (t > threshold)))
