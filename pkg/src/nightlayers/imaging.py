"""Image I/O and per-pixel / spatial helpers on ``(H, W, C)`` float arrays.

Images are plain float32 numpy arrays with values in [0, 1] and one or three
channels. No gamma linearisation is applied anywhere: the decomposition runs
directly on display-referred values.
"""

from __future__ import annotations

import os

import cv2
import numpy as np

from .autodiff import bilinear_matrix

DEFAULT_SIGMA = 0.2


class ImageError(ValueError):
    pass


def as_image(img) -> np.ndarray:
    """Validate and return ``img`` as a float32 ``(H, W, C)`` array."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError(f"empty image {arr.shape}")
    return arr


def load_image(path) -> np.ndarray:
    path = os.fspath(path)
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageError(f"cannot read image: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageError(f"unsupported sample type {raw.dtype} in {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    if raw.shape[2] == 3:
        raw = raw[:, :, ::-1]  # BGR -> RGB
    return (raw.astype(np.float32) / np.float32(scale)).copy()


def quantize(img) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    data = quantize(arr)
    if data.shape[2] == 3:
        data = data[:, :, ::-1]
    path = os.fspath(path)
    try:
        ok = cv2.imwrite(path, np.ascontiguousarray(data))
    except cv2.error as exc:
        raise OSError(f"cannot write image: {path}") from exc
    if not ok:
        raise OSError(f"cannot write image: {path}")


def max_channel(img) -> np.ndarray:
    """Per-pixel maximum over RGB, the shading initialiser."""
    img = as_image(img)
    if img.shape[2] != 3:
        raise ImageError("max_channel needs a 3-channel image")
    return img.max(axis=2, keepdims=True)


def adaptive_fusion_gray(img, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Well-exposedness weighted channel fusion.

    Each channel is weighted by ``exp(-(v - 0.5)^2 / (2 sigma^2))`` so that
    under-exposed and saturated (light-effects) samples contribute little.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    img = as_image(img)
    if img.shape[2] != 3:
        raise ImageError("adaptive_fusion_gray needs a 3-channel image")
    x = img.astype(np.float64)
    w = np.exp(-((x - 0.5) ** 2) / (2.0 * sigma**2))
    return (w * x).sum(axis=2, keepdims=True).astype(np.float32) / np.float32(3.0)


def spatial_gradient(img) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences ``(dx, dy)``; zero in the last column / row."""
    img = as_image(img)
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[:, :-1] = img[:, 1:] - img[:, :-1]
    dy[:-1] = img[1:] - img[:-1]
    return dx, dy


def laplacian(img) -> np.ndarray:
    """5-point Laplacian with replicated borders, applied per channel."""
    img = as_image(img)
    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * img


def resize_bilinear(img, new_h: int, new_w: int) -> np.ndarray:
    if new_h < 1 or new_w < 1:
        raise ImageError(f"target extent must be >= 1, got {new_h}x{new_w}")
    img = as_image(img)
    mh = bilinear_matrix(img.shape[0], new_h)
    mw = bilinear_matrix(img.shape[1], new_w)
    out = mh @ img.transpose(2, 0, 1).astype(np.float64) @ mw.T
    return out.transpose(1, 2, 0).astype(np.float32)


def to_nchw(img) -> np.ndarray:
    return np.ascontiguousarray(as_image(img).transpose(2, 0, 1)[None])


def from_nchw(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 4 or arr.shape[0] != 1:
        raise ImageError(f"expected (1, C, H, W), got {arr.shape}")
    return np.ascontiguousarray(arr[0].transpose(1, 2, 0)).astype(np.float32)
