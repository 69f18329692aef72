"""Guided filtering, the high-frequency feature bank and perceptual extractors.

The tensor versions (suffix ``_t``) run on a :class:`~nightlayers.autodiff.Tape`
so that feature-consistency losses can be differentiated; the plain versions
take and return ``(H, W, C)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .archive import ArchiveError, read_archive
from .autodiff import Tape, Tensor
from .imaging import as_image, from_nchw, to_nchw


@dataclass(frozen=True)
class HFConfig:
    """Bank of guided-filter residuals: every (kernel, eps) pair."""

    kernels: tuple[int, ...] = (4, 8, 16)
    eps: tuple[float, ...] = (0.04, 0.08)

    def bank(self) -> list[tuple[int, float]]:
        if not self.kernels or not self.eps:
            raise ValueError("HF bank is empty")
        return [(k, e) for k in self.kernels for e in self.eps]


def kernel_radius(k: int) -> int:
    return max(1, k // 2)


# -- tensor path -------------------------------------------------------------


def guided_filter_t(p: Tensor, guide: Tensor, radius: int, eps: float) -> Tensor:
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    box = lambda t: ad.box_filter(t, radius)  # noqa: E731
    mean_i = box(guide)
    mean_p = box(p)
    cov = box(guide * p) - mean_i * mean_p
    var = box(guide * guide) - mean_i * mean_i
    a = cov / (var + eps)
    b = mean_p - a * mean_i
    return box(a) * guide + box(b)


def hf_features_t(x: Tensor, cfg: HFConfig = HFConfig()) -> list[Tensor]:
    return [x - guided_filter_t(x, x, kernel_radius(k), e) for k, e in cfg.bank()]


class FeatureExtractor(Protocol):
    def extract_t(self, x: Tensor) -> list[Tensor]: ...


class GradientPyramidExtractor:
    """Weight-free stand-in for a pretrained perceptual network.

    At three dyadic scales it emits a local high-pass residual and the L1
    gradient magnitude.
    """

    def __init__(self, scales: int = 3, radius: int = 2):
        self.scales = scales
        self.radius = radius

    def extract_t(self, x: Tensor) -> list[Tensor]:
        feats = []
        for s in range(self.scales):
            if s:
                x = ad.downsample(x)
            feats.append(x - ad.box_filter(x, self.radius))
            feats.append(abs(ad.grad_x(x)) + abs(ad.grad_y(x)))
        return feats


class ConvExtractor:
    """Convolutional extractor loaded from a weight archive.

    Archive entries are evaluated in order: ``conv`` (weight
    ``(out, in, kh, kw)``, optionally followed by a ``bias`` entry), ``relu``
    and ``maxpool``. Bias entries do not count as layers; evaluation stops
    after layer index ``depth`` (0-based), so ``depth=15`` on a VGG16 layout
    ends at relu3_3.
    """

    def __init__(self, directory, depth: int = 15):
        entries = read_archive(directory)
        self.layers: list[tuple[str, np.ndarray | None, np.ndarray | None]] = []
        for entry in entries:
            if entry.kind == "bias":
                if not self.layers or self.layers[-1][0] != "conv":
                    raise ArchiveError(f"bias {entry.name!r} does not follow a conv layer")
                kind, w, _ = self.layers[-1]
                self.layers[-1] = (kind, w, entry.data.reshape(-1))
            elif entry.kind == "conv":
                if entry.data is None or entry.data.ndim != 4:
                    raise ArchiveError(f"conv {entry.name!r} needs a 4-d weight")
                self.layers.append(("conv", entry.data, None))
            elif entry.kind in ("relu", "maxpool"):
                self.layers.append((entry.kind, None, None))
            else:
                raise ArchiveError(f"unknown layer kind {entry.kind!r}")
        if depth < 0 or depth >= len(self.layers):
            raise ArchiveError(f"depth {depth} outside archive of {len(self.layers)} layers")
        self.depth = depth
        self.directory = Path(directory)

    def extract_t(self, x: Tensor) -> list[Tensor]:
        tape = x.tape
        for kind, w, b in self.layers[: self.depth + 1]:
            if kind == "conv":
                bias = None if b is None else tape.constant(b)
                x = ad.conv2d(x, tape.constant(w), bias)
            elif kind == "relu":
                x = x.relu()
            else:
                x = ad.maxpool2(x)
        return [x]


def _l1_maps(a: Sequence[Tensor], b: Sequence[Tensor]) -> Tensor:
    terms = [abs(x - y).mean() for x, y in zip(a, b)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / float(len(terms))


def gray_feat_loss_t(
    refined: Tensor,
    gray3: Tensor,
    extractor: FeatureExtractor | None = None,
    cfg: HFConfig = HFConfig(),
) -> Tensor:
    """HF-feature plus perceptual-feature L1 consistency."""
    if refined.shape != gray3.shape:
        raise ad.ShapeError(f"gray_feat_loss: {refined.shape} vs {gray3.shape}")
    extractor = extractor or GradientPyramidExtractor()
    hf = _l1_maps(hf_features_t(refined, cfg), hf_features_t(gray3, cfg))
    perceptual = _l1_maps(extractor.extract_t(refined), extractor.extract_t(gray3))
    return hf + perceptual


# -- array front-ends ----------------------------------------------------------


def box_filter(img, radius: int) -> np.ndarray:
    tape = Tape(np.float64)
    out = ad.box_filter(tape.constant(to_nchw(img)), radius)
    return from_nchw(out.data)


def guided_filter(p, guide, k: int, eps: float) -> np.ndarray:
    """Guided filter with box radius ``k // 2``; ``guide`` may be 1- or C-channel."""
    p = as_image(p)
    guide = as_image(guide)
    if p.shape[:2] != guide.shape[:2]:
        raise ValueError(f"extent mismatch {p.shape[:2]} vs {guide.shape[:2]}")
    tape = Tape(np.float64)
    out = guided_filter_t(tape.constant(to_nchw(p)), tape.constant(to_nchw(guide)), kernel_radius(k), eps)
    return from_nchw(out.data)


def hf_features(img, cfg: HFConfig = HFConfig()) -> list[np.ndarray]:
    tape = Tape(np.float64)
    maps = hf_features_t(tape.constant(to_nchw(img)), cfg)
    return [from_nchw(m.data) for m in maps]


def gray3(gray) -> np.ndarray:
    gray = as_image(gray)
    if gray.shape[2] != 1:
        raise ValueError("expected a single-channel image")
    return np.repeat(gray, 3, axis=2)


def gray_feat_loss(refined, gray_image, extractor: FeatureExtractor | None = None, cfg: HFConfig = HFConfig()) -> float:
    refined = as_image(refined)
    gray_image = as_image(gray_image)
    if refined.shape != gray_image.shape:
        raise ValueError(f"extent mismatch {refined.shape} vs {gray_image.shape}")
    tape = Tape(np.float64)
    loss = gray_feat_loss_t(tape.constant(to_nchw(refined)), tape.constant(to_nchw(gray_image)), extractor, cfg)
    return loss.item()
