"""Light-effects-guided refinement: generator, domain classifier,
patch discriminator, their losses and the unpaired training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .archive import ArchiveError, Entry, read_archive, write_archive
from .autodiff import Parameter, Tape, Tensor, adam_step
from .decomposition import DecompConfig, LayerSet, decompose
from .features import FeatureExtractor, HFConfig, gray3, gray_feat_loss_t
from .imaging import adaptive_fusion_gray, as_image, load_image, resize_bilinear, to_nchw
from .synthbench import list_images

log = logging.getLogger(__name__)

PROB_EPS = 1e-6
LOG_HEADER = "step,L_adv_d,L_adv_g,L_atten,L_iden,L_gray_feat"


@dataclass
class SuppressionConfig:
    lambda_gray_feat: float = 1.0
    lambda_atten: float = 0.5
    lambda_adv: float = 1.0
    lambda_iden: float = 5.0
    lr_gen: float = 2e-4
    lr_dis: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    steps: int = 2000
    crop: int = 128
    batch: int = 2
    seed: int = 0
    adv_mode: str = "log"
    # fraction of ``steps`` after which both learning rates decay linearly to zero
    decay_from: float = 0.5
    # inference uses an exponential moving average of the generator weights;
    # 0 keeps the average equal to the latest weights
    ema_decay: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.decay_from <= 1.0:
            raise ValueError(f"decay_from must lie in [0, 1], got {self.decay_from}")
        if self.adv_mode not in ("log", "lsgan"):
            raise ValueError(f"adv_mode must be 'log' or 'lsgan', got {self.adv_mode!r}")


@dataclass
class DomainSample:
    """One network input: image plus guidance, and the night input it came from.

    For the light-effects domain ``image`` is the background estimate and
    ``guidance`` the light-effects layer; for the effects-free domain the
    guidance is all zeros.
    """

    image: np.ndarray
    guidance: np.ndarray
    effects: bool
    source: np.ndarray | None = None

    def __post_init__(self):
        self.image = as_image(self.image)
        self.guidance = as_image(self.guidance)
        if self.guidance.shape != self.image.shape:
            raise ValueError(f"guidance {self.guidance.shape} vs image {self.image.shape}")
        if not self.effects and np.any(self.guidance != 0):
            raise ValueError("effects-free samples must carry all-zero guidance")

    @classmethod
    def effects_free(cls, image) -> "DomainSample":
        image = as_image(image)
        return cls(image, np.zeros_like(image), False, image)


# -- parameters -----------------------------------------------------------------


class Module:
    """Named, ordered collection of parameters."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.params: dict[str, Parameter] = {}

    def _add(self, name: str, value: np.ndarray) -> None:
        full = f"{self.prefix}.{name}"
        self.params[name] = Parameter(value, full)

    def _conv(self, rng: np.random.Generator, name: str, cin: int, cout: int, k: int = 3, gain: float = 1.0):
        std = gain * np.sqrt(2.0 / (cin * k * k))
        self._add(f"{name}.w", rng.normal(0.0, std, size=(cout, cin, k, k)))
        self._add(f"{name}.b", np.zeros(cout))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def bind(self, tape: Tape, trainable: bool) -> dict[str, Tensor]:
        if trainable:
            return {k: tape.watch(p) for k, p in self.params.items()}
        return {k: tape.constant(p.value) for k, p in self.params.items()}


def _block(x: Tensor, p: dict[str, Tensor], name: str, stride: int = 1) -> Tensor:
    return ad.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride).leaky_relu(0.2)


def _pad_to(arr: np.ndarray, multiple: int) -> tuple[np.ndarray, int, int]:
    h, w = arr.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return arr, h, w
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode), h, w


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 1e-3, 1.0 - 1e-3)
    return np.log(x / (1.0 - x))


class Generator(Module):
    """Encoder / residual bottleneck / decoder with light-effects modulation.

    Every encoder and decoder activation is scaled by
    ``1 + mean_c(resize(G))`` at its resolution. The head predicts a
    correction in logit space on top of the input image.
    """

    def __init__(self, seed: int = 0, width: int = 16):
        super().__init__("gen")
        rng = np.random.default_rng([seed, 1])
        c1, c2, c3 = width, 2 * width, 4 * width
        self.channels = (c1, c2, c3)
        self._conv(rng, "enc1", 6, c1)
        self._conv(rng, "enc2", c1, c2)
        self._conv(rng, "enc3", c2, c3)
        for i in (1, 2):
            self._conv(rng, f"res{i}a", c3, c3)
            self._conv(rng, f"res{i}b", c3, c3, gain=0.1)
        self._conv(rng, "dec3", c3, c2)
        self._conv(rng, "dec2", c2, c1)
        self._conv(rng, "dec1", c1, c1)
        self._conv(rng, "head", c1, 3, gain=0.1)

    def forward(
        self,
        tape: Tape,
        image: np.ndarray,
        guidance: np.ndarray,
        trainable: bool = False,
        modulate: bool = True,
        params: dict[str, Tensor] | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Return ``(refined, bottleneck)`` for ``(N, 3, H, W)`` inputs."""
        if image.shape != guidance.shape or image.ndim != 4 or image.shape[1] != 3:
            raise ad.ShapeError(f"generator inputs {image.shape} / {guidance.shape}")
        p = params if params is not None else self.bind(tape, trainable)
        x_img, h, w = _pad_to(image, 8)
        x_gui, _, _ = _pad_to(guidance, 8)
        guide_gray = x_gui.mean(axis=1, keepdims=True)
        use_mod = modulate and bool(np.any(guide_gray))

        def mod(t: Tensor) -> Tensor:
            if not use_mod:
                return t
            n, c, th, tw = t.shape
            factor = 1.0 + np.stack([resize_bilinear(g[0][:, :, None], th, tw)[:, :, 0] for g in guide_gray])
            return t * ad.broadcast_channels(tape.constant(factor[:, None]), c)

        x = ad.concat(tape.constant(x_img), tape.constant(x_gui))
        e1 = mod(_block(x, p, "enc1", 2))
        e2 = mod(_block(e1, p, "enc2", 2))
        e3 = mod(_block(e2, p, "enc3", 2))
        b = e3
        for i in (1, 2):
            r = _block(b, p, f"res{i}a")
            b = b + ad.conv2d(r, p[f"res{i}b.w"], p[f"res{i}b.b"])
        d3 = mod(_block(ad.upsample(b), p, "dec3"))
        d2 = mod(_block(ad.upsample(d3), p, "dec2"))
        d1 = mod(_block(ad.upsample(d2), p, "dec1"))
        delta = ad.conv2d(d1, p["head.w"], p["head.b"])
        out = (delta + tape.constant(_logit(x_img))).sigmoid()
        if out.shape[-2:] != (h, w):
            out = ad.crop(out, 0, 0, h, w)
        return out, b


class Classifier(Module):
    """Global-average-pooled linear domain classifier over bottleneck maps."""

    def __init__(self, channels: int = 64, seed: int = 0):
        super().__init__("cls")
        rng = np.random.default_rng([seed, 2])
        self._add("w", rng.normal(0.0, 1.0 / np.sqrt(channels), size=(channels,)))
        self._add("b", np.zeros(1))

    def forward(self, tape: Tape, feats: Tensor, trainable: bool = False) -> Tensor:
        """Probability of the light-effects domain, shape ``(N,)``."""
        p = self.bind(tape, trainable)
        if feats.shape[1] != p["w"].shape[0]:
            raise ad.ShapeError(f"classifier expects {p['w'].shape[0]} channels, got {feats.shape[1]}")
        pooled = feats.mean(axis=(2, 3))
        return ((pooled * p["w"]).sum(axis=1) + p["b"]).sigmoid()

    def attention_map(self, feats: np.ndarray) -> np.ndarray:
        return attention_map(feats, self.params["w"].value)


class Discriminator(Module):
    def __init__(self, seed: int = 0, width: int = 16):
        super().__init__("dis")
        rng = np.random.default_rng([seed, 3])
        chans = [3, width, 2 * width, 4 * width, 8 * width]
        for i in range(4):
            self._conv(rng, f"conv{i + 1}", chans[i], chans[i + 1])
        self._conv(rng, "head", chans[-1], 1, gain=0.5)

    def forward(self, tape: Tape, x: Tensor, trainable: bool = False) -> Tensor:
        """Patch logits, ``(N, 1, H/16, W/16)``."""
        p = self.bind(tape, trainable)
        for i in range(4):
            x = _block(x, p, f"conv{i + 1}", 2)
        return ad.conv2d(x, p["head.w"], p["head.b"])


def attention_map(feats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Classifier-weighted channel average, min-max normalised per sample.

    ``feats`` is ``(N, C, h, w)`` or ``(C, h, w)``; constant maps become zeros.
    """
    feats = np.asarray(feats, dtype=np.float64)
    squeeze = feats.ndim == 3
    if squeeze:
        feats = feats[None]
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if feats.shape[1] != weights.size:
        raise ad.ShapeError(f"attention_map: {feats.shape[1]} channels vs {weights.size} weights")
    cam = (feats * weights[None, :, None, None]).mean(axis=1)
    out = np.zeros_like(cam)
    for i, m in enumerate(cam):
        lo, hi = m.min(), m.max()
        if hi > lo:
            out[i] = (m - lo) / (hi - lo)
    out = out.astype(np.float32)
    return out[0] if squeeze else out


@dataclass
class Networks:
    """Generator, classifier and discriminator plus the averaged generator weights."""

    gen: Generator
    cls: Classifier
    dis: Discriminator
    step: int = 0
    ema: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.gen.params.items():
            self.ema.setdefault(name, p.value.copy())

    @classmethod
    def create(cls, seed: int = 0) -> "Networks":
        gen = Generator(seed)
        return cls(gen, Classifier(gen.channels[-1], seed), Discriminator(seed))

    def update_ema(self, decay: float) -> None:
        for name, p in self.gen.params.items():
            avg = self.ema[name]
            avg *= decay
            avg += (1.0 - decay) * p.value

    def averaged_params(self, tape: Tape) -> dict[str, Tensor]:
        return {k: tape.constant(v) for k, v in self.ema.items()}

    def modules(self) -> list[Module]:
        return [self.gen, self.cls, self.dis]

    def all_parameters(self) -> list[Parameter]:
        return [p for m in self.modules() for p in m.parameters()]

    def save(self, directory) -> Path:
        entries = [Entry("train.step", "counter", np.array([self.step], dtype=np.float32))]
        for p in self.all_parameters():
            entries.append(Entry(p.name, "tensor", p.value))
            entries.append(Entry(f"{p.name}.adam_m", "adam_m", p.m))
            entries.append(Entry(f"{p.name}.adam_v", "adam_v", p.v))
            entries.append(Entry(f"{p.name}.adam_t", "adam_t", np.array([p.step], dtype=np.float32)))
        for name, value in self.ema.items():
            entries.append(Entry(f"gen_ema.{name}", "ema", value))
        return write_archive(directory, entries)

    @classmethod
    def load(cls, directory) -> "Networks":
        data = {e.name: e for e in read_archive(directory)}
        nets = cls.create(0)
        for p in nets.all_parameters():
            if p.name not in data:
                raise ArchiveError(f"weights archive {directory} lacks {p.name}")
            value = data[p.name].data
            if value.shape != p.value.shape:
                raise ArchiveError(f"{p.name}: archive shape {value.shape} vs {p.value.shape}")
            p.value = value.copy()
            p.grad = np.zeros_like(p.value)
            if f"{p.name}.adam_m" in data:
                p.m = data[f"{p.name}.adam_m"].data.copy()
                p.v = data[f"{p.name}.adam_v"].data.copy()
                p.step = int(data[f"{p.name}.adam_t"].data[0])
        for name, p in nets.gen.params.items():
            avg = data.get(f"gen_ema.{name}")
            nets.ema[name] = (avg.data if avg is not None else p.value).copy()
        if "train.step" in data:
            nets.step = int(data["train.step"].data[0])
        return nets


# -- losses -----------------------------------------------------------------------


def _clamp_prob(p: Tensor) -> Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def loss_atten_t(p_effects: Tensor, p_free: Tensor) -> Tensor:
    pe, pf = _clamp_prob(p_effects), _clamp_prob(p_free)
    return -(pe.log().mean() + (1.0 - pf).log().mean())


def adv_objective_t(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``E[log D(real)] + E[log(1 - D(fake))]`` on probabilities; maximised by D."""
    dr, df = _clamp_prob(d_real), _clamp_prob(d_fake)
    return dr.log().mean() + (1.0 - df).log().mean()


def adv_gen_t(d_fake: Tensor) -> Tensor:
    """Non-saturating generator term ``-E[log D(fake)]``."""
    return -(_clamp_prob(d_fake).log().mean())


def loss_iden_t(out: Tensor, target: Tensor) -> Tensor:
    if out.shape != target.shape:
        raise ad.ShapeError(f"loss_iden: {out.shape} vs {target.shape}")
    return abs(out - target).mean()


def _probs(x) -> Tensor:
    tape = Tape(np.float64)
    return tape.constant(np.atleast_1d(np.asarray(x, dtype=np.float64)))


def loss_atten(p_effects, p_free) -> float:
    pe = _probs(p_effects)
    pf = pe.tape.constant(np.atleast_1d(np.asarray(p_free, dtype=np.float64)))
    return loss_atten_t(pe, pf).item()


def loss_adv(d_real, d_fake) -> tuple[float, float]:
    """Return ``(discriminator objective, generator loss)`` for probabilities."""
    dr = _probs(d_real)
    df = dr.tape.constant(np.atleast_1d(np.asarray(d_fake, dtype=np.float64)))
    return adv_objective_t(dr, df).item(), adv_gen_t(df).item()


def loss_iden(out, target) -> float:
    tape = Tape(np.float64)
    return loss_iden_t(tape.constant(out), tape.constant(target)).item()


def _disc_loss(d_real_logit: Tensor, d_fake_logit: Tensor, mode: str) -> Tensor:
    if mode == "lsgan":
        return (d_real_logit - 1.0).square().mean() + d_fake_logit.square().mean()
    return -adv_objective_t(d_real_logit.sigmoid(), d_fake_logit.sigmoid())


# -- training ------------------------------------------------------------------------


def _stack(samples: Sequence[DomainSample], attr: str) -> np.ndarray:
    return np.stack([getattr(s, attr).transpose(2, 0, 1) for s in samples]).astype(np.float32)


@dataclass
class StepRecord:
    step: int
    adv_d: float
    adv_g: float
    atten: float
    iden: float
    gray_feat: float
    p_effects: list[float] = field(default_factory=list)
    p_free: list[float] = field(default_factory=list)

    def csv(self) -> str:
        return f"{self.step},{self.adv_d:.8g},{self.adv_g:.8g},{self.atten:.8g},{self.iden:.8g},{self.gray_feat:.8g}"


def lr_scale(cfg: SuppressionConfig, step: int) -> float:
    """Multiplier on both learning rates at ``step`` (0-based)."""
    start = cfg.decay_from * cfg.steps
    if step < start or cfg.steps <= start:
        return 1.0
    return max(0.0, 1.0 - (step - start) / (cfg.steps - start))


def train_step(
    batch_e: Sequence[DomainSample],
    batch_ef: Sequence[DomainSample],
    nets: Networks,
    cfg: SuppressionConfig,
    extractor: FeatureExtractor | None = None,
    hf_cfg: HFConfig = HFConfig(),
) -> StepRecord:
    """One discriminator update followed by one generator + classifier update."""
    if not batch_e or not batch_ef:
        raise ValueError("train_step needs non-empty batches from both domains")
    img_e, gui_e = _stack(batch_e, "image"), _stack(batch_e, "guidance")
    img_f, gui_f = _stack(batch_ef, "image"), _stack(batch_ef, "guidance")
    gray = np.stack(
        [gray3(adaptive_fusion_gray(s.source if s.source is not None else s.image)).transpose(2, 0, 1) for s in batch_e]
    ).astype(np.float32)

    scale = lr_scale(cfg, nets.step)
    tape = Tape()
    gp = nets.gen.bind(tape, trainable=True)
    refined, feat_e = nets.gen.forward(tape, img_e, gui_e, params=gp)
    iden_out, feat_f = nets.gen.forward(tape, img_f, gui_f, params=gp)

    # (1) discriminator
    dtape = Tape()
    d_real = nets.dis.forward(dtape, dtape.constant(img_f), trainable=True)
    d_fake = nets.dis.forward(dtape, dtape.constant(refined.data), trainable=True)
    d_loss = _disc_loss(d_real, d_fake, cfg.adv_mode)
    dtape.backward(d_loss * cfg.lambda_adv)
    adam_step(nets.dis.parameters(), cfg.lr_dis * scale, cfg.beta1, cfg.beta2)

    # (2) generator and classifier against the updated discriminator
    fake_logit = nets.dis.forward(tape, refined)
    if cfg.adv_mode == "lsgan":
        adv_g = (fake_logit - 1.0).square().mean()
    else:
        adv_g = adv_gen_t(fake_logit.sigmoid())
    p_e = nets.cls.forward(tape, feat_e, trainable=True)
    p_f = nets.cls.forward(tape, feat_f, trainable=True)
    atten = loss_atten_t(p_e, p_f)
    iden = loss_iden_t(iden_out, tape.constant(img_f))
    gfeat = gray_feat_loss_t(refined, tape.constant(gray), extractor, hf_cfg)
    total = (
        adv_g * cfg.lambda_adv
        + atten * cfg.lambda_atten
        + iden * cfg.lambda_iden
        + gfeat * cfg.lambda_gray_feat
    )
    tape.backward(total)
    adam_step(nets.gen.parameters() + nets.cls.parameters(), cfg.lr_gen * scale, cfg.beta1, cfg.beta2)
    nets.update_ema(cfg.ema_decay)
    nets.step += 1
    return StepRecord(
        nets.step,
        d_loss.item(),
        adv_g.item(),
        atten.item(),
        iden.item(),
        gfeat.item(),
        [float(v) for v in p_e.data],
        [float(v) for v in p_f.data],
    )


def _load_folder(directory) -> list[tuple[str, np.ndarray]]:
    try:
        paths = list_images(directory)
    except (FileNotFoundError, NotADirectoryError):
        raise FileNotFoundError(f"cannot read image folder: {directory}") from None
    if not paths:
        raise FileNotFoundError(f"image folder is empty: {directory}")
    return [(p.name, load_image(p)) for p in paths]


def _three(img: np.ndarray) -> np.ndarray:
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def decompose_cached(name: str, img: np.ndarray, cfg: DecompConfig, cache_dir: Path | None) -> LayerSet:
    if cache_dir is not None:
        path = Path(cache_dir) / f"{Path(name).stem}.npz"
        if path.is_file():
            with np.load(path) as z:
                if z["I"].shape == img.shape and np.array_equal(z["I"], img):
                    return LayerSet(z["R"], z["L"], z["G"])
    layers = decompose(img, cfg).layers
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        np.savez(path, I=img, R=layers.R, L=layers.L, G=layers.G)
    return layers


def _crop(arrs: Iterable[np.ndarray], top: int, left: int, size_h: int, size_w: int) -> list[np.ndarray]:
    return [a[top : top + size_h, left : left + size_w] for a in arrs]


def build_domains(
    effects_dir,
    effects_free_dir,
    decomp_cfg: DecompConfig | None = None,
    cache_dir=None,
) -> tuple[list[tuple[np.ndarray, np.ndarray, np.ndarray]], list[np.ndarray]]:
    """Decompose the effects folder and load the effects-free folder.

    Effects entries are ``(J_init, G, I)`` triples.
    """
    decomp_cfg = decomp_cfg or DecompConfig()
    effects = []
    for name, img in _load_folder(effects_dir):
        img = _three(img)
        layers = decompose_cached(name, img, decomp_cfg, cache_dir)
        effects.append((layers.J_init, layers.G, img))
        log.info("decomposed %s", name)
    free = [_three(img) for _, img in _load_folder(effects_free_dir)]
    return effects, free


def sample_batch(
    effects: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    free: Sequence[np.ndarray],
    cfg: SuppressionConfig,
    step: int,
) -> tuple[list[DomainSample], list[DomainSample]]:
    """Deterministic batch for ``step``: random items, random crops."""
    rng = np.random.default_rng([cfg.seed, step])
    batch_e, batch_f = [], []
    for _ in range(cfg.batch):
        j, g, src = effects[int(rng.integers(len(effects)))]
        ch, cw = min(cfg.crop, j.shape[0]), min(cfg.crop, j.shape[1])
        top = int(rng.integers(j.shape[0] - ch + 1))
        left = int(rng.integers(j.shape[1] - cw + 1))
        j, g, src = _crop((j, g, src), top, left, ch, cw)
        batch_e.append(DomainSample(j, g, True, src))
        ref = free[int(rng.integers(len(free)))]
        fh, fw = min(ch, ref.shape[0]), min(cw, ref.shape[1])
        if (fh, fw) != (ch, cw):
            ref = resize_bilinear(ref, ch, cw)
        else:
            top = int(rng.integers(ref.shape[0] - ch + 1))
            left = int(rng.integers(ref.shape[1] - cw + 1))
            (ref,) = _crop((ref,), top, left, ch, cw)
        batch_f.append(DomainSample.effects_free(ref))
    return batch_e, batch_f


def train_suppression(
    effects_dir,
    effects_free_dir,
    cfg: SuppressionConfig | None = None,
    decomp_cfg: DecompConfig | None = None,
    nets: Networks | None = None,
    cache_dir=None,
    extractor: FeatureExtractor | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
    domains=None,
    stop_at: int | None = None,
    hf_cfg: HFConfig = HFConfig(),
) -> tuple[Networks, list[StepRecord]]:
    """Train until ``nets.step == cfg.steps`` (or ``stop_at``); resumes from ``nets.step``.

    Batches and the learning-rate schedule depend only on ``(cfg, step)``, so
    a run interrupted and resumed from a saved archive reproduces an
    uninterrupted run exactly.
    """
    cfg = cfg or SuppressionConfig()
    nets = nets or Networks.create(cfg.seed)
    effects, free = domains if domains is not None else build_domains(
        effects_dir, effects_free_dir, decomp_cfg, cache_dir
    )
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    records = []
    while nets.step < end:
        batch_e, batch_f = sample_batch(effects, free, cfg, nets.step)
        rec = train_step(batch_e, batch_f, nets, cfg, extractor, hf_cfg)
        records.append(rec)
        if on_step is not None:
            on_step(rec)
    return nets, records


# -- inference ------------------------------------------------------------------------


def refine(
    nets: Networks, image: np.ndarray, guidance: np.ndarray, modulate: bool = True, averaged: bool = True
) -> np.ndarray:
    """Run the generator on one HWC image; ``averaged`` selects the EMA weights."""
    tape = Tape()
    params = nets.averaged_params(tape) if averaged else None
    out, _ = nets.gen.forward(tape, to_nchw(image), to_nchw(guidance), modulate=modulate, params=params)
    return np.ascontiguousarray(out.data[0].transpose(1, 2, 0))


def enhance(
    img,
    nets: Networks | None,
    mode: str = "suppress",
    decomp_cfg: DecompConfig | None = None,
    trace: dict | None = None,
) -> np.ndarray:
    """Full pipeline. ``lowlight`` skips decomposition and feeds zero guidance."""
    if nets is None:
        raise ValueError("enhance needs trained weights")
    if mode not in ("suppress", "lowlight"):
        raise ValueError(f"mode must be 'suppress' or 'lowlight', got {mode!r}")
    img = _three(as_image(img))
    if mode == "lowlight":
        image, guidance = img, np.zeros_like(img)
        decomposed = False
    else:
        layers = decompose(img, decomp_cfg).layers
        image, guidance = layers.J_init, layers.G
        decomposed = True
    if trace is not None:
        trace["decomposed"] = decomposed
    return refine(nets, image, guidance)


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
