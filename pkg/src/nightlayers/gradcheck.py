"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor

Builder = Callable[[Sequence[Tensor]], Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _evaluate(build: Builder, values: Sequence[np.ndarray]) -> float:
    tape = Tape(np.float64)
    loss = build([tape.constant(v) for v in values])
    return float(loss.data.reshape(()))


def check_gradients(
    build: Builder,
    values: Sequence[np.ndarray],
    step: float = 1e-3,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between taped and central-difference gradients.

    ``build`` maps one tensor per entry of ``values`` to a scalar tensor. With
    ``coords`` set, only that many random entries per input are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    values = [np.array(v, dtype=np.float64) for v in values]
    params = [Parameter(v) for v in values]
    tape = Tape(np.float64)
    # watch() would round through float32 parameters; keep float64 leaves
    leaves = []
    for p, v in zip(params, values):
        leaf = tape.watch(p)
        tape.nodes[leaf.node].value = v.copy()
        leaves.append(leaf)
    loss = build(leaves)
    grads = [np.zeros_like(v) for v in values]
    for p, g in zip(params, grads):
        p.grad = g  # float64 accumulator
    tape.backward(loss)

    worst = 0.0
    for k, value in enumerate(values):
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = rng.choice(flat.size, size=coords, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = _evaluate(build, values)
            flat[i] = orig - step
            down = _evaluate(build, values)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * step)
        analytic = params[k].grad.reshape(-1)[idx]
        if len(idx):
            worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    mag = rng.uniform(0.2, 1.0, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _weighted_sum(t: Tensor, rng_seed: int = 7) -> Tensor:
    # random projection so every output entry contributes a distinct weight
    w = np.random.default_rng(rng_seed).uniform(0.5, 1.5, size=t.shape)
    return (t * w).sum()


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Builder, list[np.ndarray]]]:
    """One small randomized case per registered operation kind."""
    img = lambda c=2, h=5, w=6: rng.uniform(-1.0, 1.0, size=(1, c, h, w))  # noqa: E731
    pos = lambda shape: rng.uniform(0.3, 2.0, size=shape)  # noqa: E731
    vec = lambda n=4: rng.uniform(-1.0, 1.0, size=(n,))  # noqa: E731
    cases: dict[str, tuple[Builder, list[np.ndarray]]] = {
        "add": (lambda t: _weighted_sum(t[0] + t[1]), [vec(), vec()]),
        "sub": (lambda t: _weighted_sum(t[0] - t[1]), [img(), img(1)]),
        "mul": (lambda t: _weighted_sum(t[0] * t[1]), [img(), img()]),
        "div": (lambda t: _weighted_sum(t[0] / t[1]), [img(), pos((1, 2, 5, 6))]),
        "abs": (lambda t: _weighted_sum(abs(t[0])), [_away_from_zero(rng, (3, 4))]),
        "tanh": (lambda t: _weighted_sum(t[0].tanh()), [img()]),
        "exp": (lambda t: _weighted_sum(t[0].exp()), [img()]),
        "log": (lambda t: _weighted_sum(t[0].log()), [pos((3, 4))]),
        "sqrt": (lambda t: _weighted_sum(t[0].sqrt()), [pos((3, 4))]),
        "square": (lambda t: _weighted_sum(t[0].square()), [img()]),
        "sigmoid": (lambda t: _weighted_sum(t[0].sigmoid()), [3.0 * img()]),
        "relu": (lambda t: _weighted_sum(t[0].relu()), [_away_from_zero(rng, (3, 4))]),
        "leaky_relu": (lambda t: _weighted_sum(t[0].leaky_relu(0.2)), [_away_from_zero(rng, (3, 4))]),
        "clamp": (
            lambda t: _weighted_sum(t[0].clamp(-0.5, 0.5)),
            [np.array([-0.9, -0.3, 0.1, 0.45, 0.8, -0.7])],
        ),
        "sum": (lambda t: _weighted_sum(t[0].sum(axis=1, keepdims=True)), [img(3)]),
        "mean": (lambda t: _weighted_sum(t[0].mean(axis=(2, 3))), [img(3)]),
        "conv2d": (
            lambda t: _weighted_sum(ad.conv2d(t[0], t[1], t[2], stride=2))
            + _weighted_sum(ad.conv2d(t[0], t[1], t[2], stride=1), 3),
            [img(2, 6, 7), rng.normal(0, 0.5, size=(3, 2, 3, 3)), rng.normal(0, 0.5, size=(3,))],
        ),
        "resize_bilinear": (lambda t: _weighted_sum(ad.resize_bilinear(t[0], 7, 4)), [img()]),
        "downsample_bilinear": (lambda t: _weighted_sum(ad.downsample(t[0])), [img(2, 6, 7)]),
        "upsample_nearest": (lambda t: _weighted_sum(ad.upsample(t[0])), [img(2, 3, 4)]),
        "maxpool2": (lambda t: _weighted_sum(ad.maxpool2(t[0])), [img(2, 4, 6)]),
        "concat": (lambda t: _weighted_sum(ad.concat(t[0], t[1])), [img(2), img(1)]),
        "broadcast_channels": (lambda t: _weighted_sum(ad.broadcast_channels(t[0], 3)), [img(1)]),
        "slice_channels": (lambda t: _weighted_sum(ad.slice_channels(t[0], 1, 3)), [img(3)]),
        "crop": (lambda t: _weighted_sum(ad.crop(t[0], 1, 2, 3, 3)), [img()]),
        "grad_x": (lambda t: _weighted_sum(ad.grad_x(t[0])), [img()]),
        "grad_y": (lambda t: _weighted_sum(ad.grad_y(t[0])), [img()]),
        "box_filter": (lambda t: _weighted_sum(ad.box_filter(t[0], 1)), [img(2, 6, 7)]),
    }
    missing = set(ad.OPS) - set(cases)
    if missing:
        raise RuntimeError(f"no gradient-check case for kinds: {sorted(missing)}")
    return cases


def check_all_ops(seed: int = 0, step: float = 1e-3, coords: int | None = None) -> dict[str, float]:
    """Max relative error per registered kind."""
    rng = np.random.default_rng(seed)
    return {
        kind: check_gradients(build, values, step=step, coords=coords, rng=rng)
        for kind, (build, values) in op_cases(rng).items()
    }


def check_objective(seed: int = 0, coords: int = 5, size: int = 16, step: float = 1e-5) -> float:
    """Max relative error of the full decomposition objective w.r.t. its logits.

    The logits start from the usual initialisation of a synthetic composite,
    jittered so that no coordinate sits on a clamp or kink.
    """
    from .decomposition import DecompConfig, DecompositionProblem
    from .synthbench import GlowSpec, synth_composite, synth_scene

    rng = np.random.default_rng(seed)
    img, _ = synth_composite(synth_scene(size, size, seed), GlowSpec.random(size, size, seed, radius=(3.0, 6.0)))
    problem = DecompositionProblem(img, DecompConfig())
    init = problem.initial_logits()
    values = [init[k].astype(np.float64) + rng.normal(0.0, 0.3, size=init[k].shape) for k in ("r", "l", "g")]

    def build(t: Sequence[Tensor]) -> Tensor:
        return problem.evaluate(t[0].tape, t[0], t[1], t[2])["total"]

    return check_gradients(build, values, step=step, coords=coords, rng=rng)
