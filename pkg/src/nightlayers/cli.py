"""Command-line entry point: ``nightlayers <subcommand> ...``.

Settings are resolved in three layers: dataclass defaults, then an optional
``--config`` file of ``key = value`` lines, then explicit flags. The
``NIGHTLAYERS_SEED`` environment variable replaces the default seed.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .archive import ArchiveError
from .decomposition import DecompConfig, decompose
from .features import ConvExtractor, HFConfig
from .gradcheck import check_all_ops, check_objective
from .imaging import ImageError, load_image, save_image
from .suppression import LOG_HEADER, Networks, SuppressionConfig, enhance, train_suppression
from .synthbench import GlowSpec, eval_dataset, list_images, synth_composite

log = logging.getLogger("nightlayers")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "NIGHTLAYERS_SEED"
GRADCHECK_TOL = 1e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- config plumbing ---------------------------------------------------------------


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


# Keys shared by both configs are listed once; hf_* keys build an HFConfig.
def _option_table() -> dict[str, type]:
    table: dict[str, type] = {}
    for cls in (DecompConfig, SuppressionConfig):
        for f in dataclasses.fields(cls):
            table.setdefault(f.name, type(f.default))
    table["hf_kernels"] = _parse_ints
    table["hf_eps"] = _parse_floats
    return table


OPTIONS = _option_table()


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _convert(key: str, value):
    kind = OPTIONS[key]
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {key}: {value!r}") from None


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    settings = {}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        settings["seed"] = _convert("seed", env_seed)
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            settings[key] = _convert(key, value)
    for key in OPTIONS:
        if key in vars(args):
            settings[key] = _convert(key, getattr(args, key))
    return settings


def _build(cls, settings: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    try:
        return cls(**{k: v for k, v in settings.items() if k in names})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _hf_config(settings: dict) -> HFConfig:
    default = HFConfig()
    return HFConfig(settings.get("hf_kernels", default.kernels), settings.get("hf_eps", default.eps))


# -- subcommands -------------------------------------------------------------------


def cmd_decompose(args, settings) -> int:
    img = load_image(args.image)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    cfg = _build(DecompConfig, settings)
    log.info("decomposing %s (%d iterations)", args.image, cfg.iterations)
    result = decompose(img, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layers = result.layers
    for name, arr in (("R", layers.R), ("L", layers.L), ("G", layers.G), ("J_init", layers.J_init)):
        save_image(arr, out / f"{name}.png")
    (out / "trace.csv").write_text(result.trace_csv())
    log.info("loss %.6g -> %.6g (best iterate %d)", result.initial_loss, result.final_loss, result.best_iteration)
    return EXIT_OK


def cmd_enhance(args, settings) -> int:
    nets = Networks.load(args.weights)
    img = load_image(args.image)
    trace: dict = {}
    out = enhance(img, nets, args.mode, _build(DecompConfig, settings), trace)
    save_image(out, args.out)
    log.info("%s mode, decomposition %s", args.mode, "run" if trace["decomposed"] else "skipped")
    return EXIT_OK


def cmd_train(args, settings) -> int:
    cfg = _build(SuppressionConfig, settings)
    out = Path(args.out)
    nets = None
    if args.resume and (out / "manifest.txt").is_file():
        nets = Networks.load(out)
        log.info("resuming from step %d", nets.step)
    extractor = ConvExtractor(args.extractor, args.extractor_depth) if args.extractor else None
    log_path = Path(args.log) if args.log else out / "train_log.csv"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    resumed = nets is not None and nets.step > 0 and log_path.is_file()
    with open(log_path, "a" if resumed else "w") as fh:
        if not resumed:
            fh.write(LOG_HEADER + "\n")

        def on_step(rec):
            fh.write(rec.csv() + "\n")
            if rec.step % 50 == 0 or rec.step == cfg.steps:
                log.info("step %d/%d  %s", rec.step, cfg.steps, rec.csv())

        nets, _ = train_suppression(
            args.effects,
            args.effects_free,
            cfg,
            _build(DecompConfig, settings),
            nets=nets,
            cache_dir=args.cache,
            extractor=extractor,
            on_step=on_step,
            hf_cfg=_hf_config(settings),
        )
    nets.save(out)
    log.info("weights written to %s", out)
    return EXIT_OK


def cmd_eval(args, settings) -> int:
    report = eval_dataset(args.pred, args.gt)
    Path(args.out).write_text(report.to_csv())
    print(report.summary())
    return EXIT_OK


def _glow_spec(args, seed: int, h: int, w: int) -> GlowSpec:
    if args.glows is None and args.sigma is None and args.amp is None:
        return GlowSpec.random(h, w, seed)
    rng = np.random.default_rng(seed)
    count = args.glows if args.glows is not None else int(rng.integers(1, 4))
    centers = [(float(rng.uniform(0.15 * w, 0.85 * w)), float(rng.uniform(0.15 * h, 0.85 * h))) for _ in range(count)]
    radii = [args.sigma if args.sigma is not None else float(rng.uniform(8, 18)) for _ in range(count)]
    amps = [(args.amp,) * 3 if args.amp is not None else (float(rng.uniform(0.3, 0.7)),) * 3 for _ in range(count)]
    return GlowSpec(centers, amps, radii, seed)


def cmd_synth(args, settings) -> int:
    seed = settings.get("seed", 0)
    out = Path(args.out)
    (out / "input").mkdir(parents=True, exist_ok=True)
    (out / "glow").mkdir(parents=True, exist_ok=True)
    paths = list_images(args.clean)
    if not paths:
        raise FileNotFoundError(f"no images in {args.clean}")
    for i, path in enumerate(paths):
        clean = load_image(path)
        if clean.shape[2] == 1:
            clean = np.repeat(clean, 3, axis=2)
        try:
            spec = _glow_spec(args, seed * 100_003 + i, clean.shape[0], clean.shape[1])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        img, glow = synth_composite(clean, spec)
        name = path.with_suffix(".png").name
        save_image(img, out / "input" / name)
        save_image(glow, out / "glow" / name)
    log.info("wrote %d composites to %s", len(paths), out)
    return EXIT_OK


def cmd_gradcheck(args, settings) -> int:
    seed = settings.get("seed", 0)
    errors = check_all_ops(seed=seed, coords=args.coords)
    errors["decomposition_objective"] = check_objective(seed=seed, coords=args.coords)
    for kind, err in sorted(errors.items()):
        log.info("%-24s %.3e", kind, err)
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} over {len(errors)} checks")
    return EXIT_OK if worst <= GRADCHECK_TOL else EXIT_NUMERIC


# -- parser --------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, cls) -> None:
    group = p.add_argument_group(f"{cls.__name__} fields")
    for f in dataclasses.fields(cls):
        if f.name == "seed":
            continue
        group.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            default=argparse.SUPPRESS,
            metavar=type(f.default).__name__.upper(),
            help=f"default {f.default}",
        )


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value settings file; flags win on conflict")
    common.add_argument("--seed", dest="seed", default=argparse.SUPPRESS, help=f"default 0 or ${SEED_ENV}")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="nightlayers", description="Night-image layer decomposition and light-effects suppression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", parents=[common], help="split an image into R, L, G and J_init")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    _add_config_flags(p, DecompConfig)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("enhance", parents=[common], help="refine an image with trained weights")
    p.add_argument("image")
    p.add_argument("--weights", required=True)
    p.add_argument("--mode", choices=("suppress", "lowlight"), default="suppress")
    p.add_argument("--out", required=True)
    _add_config_flags(p, DecompConfig)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", parents=[common], help="train the suppression networks on unpaired folders")
    p.add_argument("--effects", required=True)
    p.add_argument("--effects-free", required=True)
    p.add_argument("--out", required=True, help="weights archive directory")
    p.add_argument("--log", help="loss log CSV (default OUT/train_log.csv)")
    p.add_argument("--cache", help="directory for cached decompositions")
    p.add_argument("--resume", action="store_true", help="continue from the archive in OUT")
    p.add_argument("--extractor", help="convolutional feature-extractor weight archive")
    p.add_argument("--extractor-depth", type=int, default=15)
    p.add_argument("--hf-kernels", dest="hf_kernels", default=argparse.SUPPRESS)
    p.add_argument("--hf-eps", dest="hf_eps", default=argparse.SUPPRESS)
    _add_config_flags(p, SuppressionConfig)
    _add_config_flags(p, DecompConfig)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="PSNR / SSIM / MSE of a prediction folder")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="composite Gaussian glows onto clean images")
    p.add_argument("--clean", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--glows", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--amp", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every operation")
    p.add_argument("--coords", type=int, default=5, help="random coordinates per input")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"nightlayers: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr, force=True)
    try:
        settings = resolve_settings(args)
        return args.func(args, settings)
    except UsageError as exc:
        print(f"nightlayers: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageError, ArchiveError) as exc:
        print(f"nightlayers: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"nightlayers: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"nightlayers: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
