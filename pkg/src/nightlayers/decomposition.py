"""Per-image decomposition ``I = R * L + G`` into reflectance, shading and
light-effects layers.

The three layers are free fields squashed through a sigmoid and fitted by Adam
against four unsupervised priors: initialisation, gradient exclusion, colour
constancy and reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor, adam_step
from .imaging import ImageError, as_image, from_nchw, max_channel, to_nchw

TRACE_HEADER = "iteration,L_init,L_excl,L_cc,L_recon,total"
LOGIT_BOUND = 15.0
INIT_MARGIN = 1e-3


@dataclass
class DecompConfig:
    lambda_init: float = 1.0
    lambda_excl: float = 1.0
    lambda_recon: float = 0.1
    lambda_cc: float = 0.5
    iterations: int = 800
    lr: float = 0.05
    scales: int = 3
    seed: int = 0
    eps0: float = 1e-6
    mu: float = 0.05
    hqs_iters: int = 20


@dataclass
class LayerSet:
    R: np.ndarray
    L: np.ndarray
    G: np.ndarray

    @property
    def J_init(self) -> np.ndarray:
        return (self.R * self.L).astype(np.float32)


@dataclass
class DecompResult:
    layers: LayerSet
    trace: list[tuple[int, float, float, float, float, float]] = field(default_factory=list)
    best_iteration: int = 0

    @property
    def initial_loss(self) -> float:
        return self.trace[0][-1]

    @property
    def final_loss(self) -> float:
        return self.trace[self.best_iteration][-1]

    def trace_csv(self) -> str:
        rows = [TRACE_HEADER]
        rows += [f"{r[0]}," + ",".join(f"{v:.8g}" for v in r[1:]) for r in self.trace]
        return "\n".join(rows) + "\n"


# -- initialisers ----------------------------------------------------------------


def init_shading(img) -> np.ndarray:
    return max_channel(img)


def _relsmooth_channel(chan: np.ndarray, mu: float, iters: int) -> np.ndarray:
    h, w = chan.shape
    # even reflection makes the periodic solver boundary-free
    ext = np.concatenate([chan, chan[::-1]], axis=0)
    ext = np.concatenate([ext, ext[:, ::-1]], axis=1)
    shape = ext.shape

    def dx(u):
        return np.roll(u, -1, axis=1) - u

    def dy(u):
        return np.roll(u, -1, axis=0) - u

    def lap(u):
        return np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4 * u

    # transfer functions of the periodic operators, from their impulse responses
    delta = np.zeros(shape)
    delta[0, 0] = 1.0
    fx, fy, fl = (np.fft.fft2(op(delta)) for op in (dx, dy, lap))
    grad_mag = np.abs(fx) ** 2 + np.abs(fy) ** 2
    lap_mag = np.abs(fl) ** 2

    def objective(g):
        return float(np.sum(lap(g) ** 2) + mu * np.sum(np.abs(dx(ext - g)) + np.abs(dy(ext - g))))

    ix, iy = dx(ext), dy(ext)
    g = np.zeros(shape)
    best, best_val = g, objective(g)
    beta = mu
    for _ in range(iters):
        bx, by = ix - dx(g), iy - dy(g)
        thresh = mu / (2.0 * beta)
        zx = np.sign(bx) * np.maximum(np.abs(bx) - thresh, 0.0)
        zy = np.sign(by) * np.maximum(np.abs(by) - thresh, 0.0)
        rhs = beta * (np.conj(fx) * np.fft.fft2(ix - zx) + np.conj(fy) * np.fft.fft2(iy - zy))
        den = lap_mag + beta * grad_mag
        den[0, 0] = 1.0
        gh = rhs / den
        gh[0, 0] = 0.0
        g = np.real(np.fft.ifft2(gh))
        val = objective(g)
        if val < best_val:
            best, best_val = g, val
        beta *= 2.0
    return best[:h, :w]


def init_light_effects(img, mu: float = 0.05, iters: int = 20) -> np.ndarray:
    """Smooth light-effects estimate by relative smoothness.

    Per channel solves ``min_G |lap G|^2 + mu |grad(I - G)|_1`` by
    half-quadratic splitting with a frequency-domain G-update, then fixes the
    free constant so the layer's floor is zero and clamps to ``0 <= G <= I``.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    img = as_image(img)
    if img.shape[2] != 3:
        raise ImageError("init_light_effects needs a 3-channel image")
    x = img.astype(np.float64)
    out = np.empty_like(x)
    for c in range(3):
        g = _relsmooth_channel(x[:, :, c], mu, iters)
        g -= g.min()
        out[:, :, c] = np.minimum(g, x[:, :, c])
    return np.clip(out, 0.0, None).astype(np.float32)


# -- losses (tensor path, (N, C, H, W)) ---------------------------------------------


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ad.ShapeError(f"{name}: {a.shape} vs {b.shape}")


def loss_init_t(G: Tensor, L: Tensor, G_i: Tensor, L_i: Tensor) -> Tensor:
    _same_shape("loss_init", G, G_i)
    _same_shape("loss_init", L, L_i)
    return abs(G - G_i).mean() + abs(L - L_i).mean()


def _frobenius_rms(parts: list[Tensor]) -> Tensor:
    count = sum(p.data.size for p in parts)
    total = parts[0].square().sum()
    for p in parts[1:]:
        total = total + p.square().sum()
    return (total / float(count)).sqrt()


def loss_excl_t(G: Tensor, J: Tensor, scales: int = 3, eps0: float = 1e-6) -> Tensor:
    """Multi-scale gradient exclusion between two layers.

    Each scale contributes the size-normalised Frobenius norm of
    ``tanh(a |grad G|) * tanh(|grad J| / a)`` with
    ``a = sqrt((mean|grad J| + eps0) / (mean|grad G| + eps0))``.
    """
    if G.shape[-2:] != J.shape[-2:]:
        raise ad.ShapeError(f"loss_excl: extents {G.shape} vs {J.shape}")
    total = None
    for n in range(scales):
        if n:
            G, J = ad.downsample(G), ad.downsample(J)
        gx, gy = abs(ad.grad_x(G)), abs(ad.grad_y(G))
        jx, jy = abs(ad.grad_x(J)), abs(ad.grad_y(J))
        mass_g = (gx.mean() + gy.mean()) + eps0
        mass_j = (jx.mean() + jy.mean()) + eps0
        scale_g = (mass_j / mass_g).sqrt()
        scale_j = (mass_g / mass_j).sqrt()
        px = (gx * scale_g).tanh() * (jx * scale_j).tanh()
        py = (gy * scale_g).tanh() * (jy * scale_j).tanh()
        term = _frobenius_rms([px, py])
        total = term if total is None else total + term
    return total


def loss_cc_t(J: Tensor) -> Tensor:
    """Gray-world colour constancy: pairwise gaps between channel means."""
    if J.shape[1] != 3:
        raise ImageError("loss_cc needs a 3-channel layer")
    means = J.mean(axis=(0, 2, 3), keepdims=True)
    r, g, b = (ad.slice_channels(means, c, c + 1) for c in range(3))
    return (abs(r - g) + abs(r - b) + abs(g - b)).sum()


def loss_recon_t(I: Tensor, R: Tensor, L: Tensor, G: Tensor) -> Tensor:
    _same_shape("loss_recon", I, R)
    _same_shape("loss_recon", I, G)
    if L.shape[1] != 1 and L.shape != R.shape:
        raise ad.ShapeError(f"loss_recon: shading {L.shape} vs reflectance {R.shape}")
    if L.shape[1] == 1:
        L = ad.broadcast_channels(L, R.shape[1])
    return abs(I - (R * L + G)).mean()


def _losses(I, R, L, G, G_i, L_i, cfg: DecompConfig) -> dict[str, Tensor]:
    J = R * ad.broadcast_channels(L, 3)
    parts = {
        "init": loss_init_t(G, L, G_i, L_i),
        "excl": loss_excl_t(G, J, cfg.scales, cfg.eps0),
        "cc": loss_cc_t(J),
        "recon": loss_recon_t(I, R, L, G),
    }
    parts["total"] = (
        parts["init"] * cfg.lambda_init
        + parts["excl"] * cfg.lambda_excl
        + parts["cc"] * cfg.lambda_cc
        + parts["recon"] * cfg.lambda_recon
    )
    return parts


# -- array front-ends -------------------------------------------------------------


def _scalar(fn, *arrays) -> float:
    tape = Tape(np.float64)
    return fn(*(tape.constant(to_nchw(a)) for a in arrays)).item()


def loss_init(G, L, G_i, L_i) -> float:
    return _scalar(loss_init_t, G, L, G_i, L_i)


def loss_excl(G, J, scales: int = 3, eps0: float = 1e-6) -> float:
    return _scalar(lambda g, j: loss_excl_t(g, j, scales, eps0), G, J)


def loss_cc(J) -> float:
    return _scalar(loss_cc_t, J)


def loss_recon(I, R, L, G) -> float:
    return _scalar(loss_recon_t, I, R, L, G)


# -- optimisation -----------------------------------------------------------------


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x.astype(np.float64), INIT_MARGIN, 1.0 - INIT_MARGIN)
    return np.log(x / (1.0 - x)).astype(np.float32)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(np.float32)


class DecompositionProblem:
    """The total objective as a function of the three logit fields."""

    def __init__(self, img, cfg: DecompConfig, G_i=None, L_i=None):
        img = as_image(img)
        if img.shape[2] != 3:
            raise ImageError("decompose needs a 3-channel image")
        self.cfg = cfg
        self.I = to_nchw(img)
        self.L_i = to_nchw(init_shading(img) if L_i is None else L_i)
        self.G_i = to_nchw(init_light_effects(img, cfg.mu, cfg.hqs_iters) if G_i is None else G_i)

    def initial_logits(self) -> dict[str, np.ndarray]:
        L_i = self.L_i
        R0 = self.I / np.maximum(L_i, 0.01)
        return {"r": _logit(R0), "l": _logit(L_i), "g": _logit(self.G_i)}

    def evaluate(self, tape: Tape, r: Tensor, l: Tensor, g: Tensor) -> dict[str, Tensor]:
        c = tape.constant
        return _losses(c(self.I), r.sigmoid(), l.sigmoid(), g.sigmoid(), c(self.G_i), c(self.L_i), self.cfg)


def decompose(img, cfg: DecompConfig | None = None, G_i=None, L_i=None) -> DecompResult:
    """Fit ``R``, ``L``, ``G`` to ``img`` and return the best iterate.

    The trace holds one row per evaluated iterate (the initialisation is row
    0); the returned layers are those of the lowest total loss.
    """
    cfg = cfg or DecompConfig()
    problem = DecompositionProblem(img, cfg, G_i, L_i)
    params = {k: Parameter(v, k) for k, v in problem.initial_logits().items()}
    best_vals = {k: p.value.copy() for k, p in params.items()}
    best_total, best_it = np.inf, 0
    trace = []
    for it in range(cfg.iterations + 1):
        tape = Tape()
        leaves = {k: tape.watch(p) for k, p in params.items()}
        parts = problem.evaluate(tape, leaves["r"], leaves["l"], leaves["g"])
        row = tuple(parts[k].item() for k in ("init", "excl", "cc", "recon", "total"))
        trace.append((it, *row))
        if row[-1] < best_total:
            best_total, best_it = row[-1], it
            best_vals = {k: p.value.copy() for k, p in params.items()}
        if it == cfg.iterations:
            break
        tape.backward(parts["total"])
        adam_step(params.values(), cfg.lr)
        for p in params.values():
            np.clip(p.value, -LOGIT_BOUND, LOGIT_BOUND, out=p.value)
    layers = LayerSet(
        R=from_nchw(_sigmoid(best_vals["r"])),
        L=from_nchw(_sigmoid(best_vals["l"])),
        G=from_nchw(_sigmoid(best_vals["g"])),
    )
    return DecompResult(layers, trace, best_it)
