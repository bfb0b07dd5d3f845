"""Command-line entry point: ``ganforensics {train,eval,synth,gradcheck,preview}``.

Every run prints its fully resolved spec as ``key=value`` lines (and writes
it to ``<out>/spec.txt`` when there is an output directory). Feeding that
file back through ``--config`` reproduces the run; explicit flags override
config-file values. Errors are reported as a single ``category: detail``
line on stderr with a nonzero exit status.
"""

import argparse
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, data, gradcheck as gradcheck_mod, model as model_mod, pipeline, preprocess
from .errors import ConfigError, DataError, ForensicsError
from .optim import AdamHyper

EXIT_ERROR = 2
EXIT_CHECK_FAILED = 1
SPEC_FILE = "spec.txt"


def _csv(kind):
    def parse(text):
        text = text.strip()
        return tuple(kind(t.strip()) for t in text.split(",")) if text else ()

    parse.__name__ = f"{kind.__name__} list"
    return parse


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, "config.usage")


def _common(p, out_required=True):
    p.add_argument("--config", type=Path, default=None, help="flat key=value file of flag values (flags override it)")
    p.add_argument("--out", type=Path, default=None, help="output directory" + (" (required)" if out_required else ""))
    p.add_argument("--threads", type=_positive_int, default=1, help="BLAS threads; 1 keeps runs bit-reproducible")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="ganforensics", description="Train and evaluate real-vs-fake image discriminators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train one discriminator (M, M_GB or M_GN)", formatter_class=fmt)
    t.add_argument("--mode", default="none", choices=preprocess.KINDS + preprocess.EXPERIMENTAL_KINDS,
                   help="training-time preprocessing: none -> M, blur -> M_GB, noise -> M_GN")
    t.add_argument("--train-manifest", type=Path, default=None, help="manifest of training images (required)")
    t.add_argument("--sources", type=_csv(str), default=(), help="comma list of sources to keep; empty keeps all")
    t.add_argument("--train-count", type=int, default=0, help="first N records of each source; 0 keeps all")
    t.add_argument("--input-size", type=int, default=data.IMAGE_SIZE, help="image side after resizing")
    t.add_argument("--widths", type=_csv(int), default=model_mod.DiscriminatorConfig().widths, help="conv widths")
    t.add_argument("--batch-size", type=int, default=64, help="images per batch, half real and half fake")
    t.add_argument("--epochs", type=int, default=20, help="passes over the training set")
    t.add_argument("--lr", type=float, default=AdamHyper().lr, help="Adam learning rate")
    t.add_argument("--beta1", type=float, default=AdamHyper().beta1, help="Adam first-moment decay")
    t.add_argument("--beta2", type=float, default=AdamHyper().beta2, help="Adam second-moment decay")
    t.add_argument("--adam-eps", type=float, default=AdamHyper().eps, help="Adam denominator epsilon")
    t.add_argument("--init-seed", type=int, default=0, help="weight initialization seed")
    t.add_argument("--shuffle-seed", type=int, default=0, help="batch order seed")
    t.add_argument("--preprocess-seed", type=int, default=0, help="blur/noise parameter and noise field seed")
    t.add_argument("--checkpoint-every", type=int, default=0, help="epochs between extra checkpoints; 0 = final only")
    t.add_argument("--allow-experimental", type=_bool, default=False, help="permit the experimental 'mixed' mode")
    _common(t)

    e = sub.add_parser("eval", help="evaluate checkpoints on raw (unprocessed) test images", formatter_class=fmt)
    e.add_argument("--checkpoint", type=Path, default=None, help="single-model mode: checkpoint to evaluate")
    e.add_argument("--manifest", type=Path, default=None, help="single-model mode: test manifest")
    e.add_argument("--table1", type=_bool, nargs="?", const=True, default=False,
                   help="generalization report over --checkpoints x test sets")
    e.add_argument("--checkpoints", type=_csv(Path), default=(), help="comma list, e.g. M,M_GB,M_GN checkpoints")
    e.add_argument("--test-manifests", type=_csv(Path), default=(),
                   help="comma list of test manifests; a single manifest with several fake sources is split per source")
    e.add_argument("--test-count", type=int, default=0, help="last N records of each source; 0 keeps all")
    _common(e, out_required=False)

    s = sub.add_parser("synth", help="generate a synthetic real/fake-family dataset", formatter_class=fmt)
    s.add_argument("--families", type=_csv(str), default=("A", "B"), help=f"comma list from {sorted(data.DEFAULT_FAMILIES)}")
    s.add_argument("--n", type=int, default=200, help="images per class")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--size", type=int, default=data.IMAGE_SIZE, help="image side in pixels")
    s.add_argument("--diagnostic-count", type=int, default=50, help="images per class used for the energy diagnostics")
    _common(s)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks", formatter_class=fmt)
    g.add_argument("--layer", default="all", choices=("all",) + gradcheck_mod.LAYERS, help="which check to run")
    g.add_argument("--seed", type=int, default=0, help="seed for the random test instances")
    _common(g, out_required=False)

    v = sub.add_parser("preview", help="write an image under every preprocessing parameter", formatter_class=fmt)
    v.add_argument("--input", type=Path, default=None, help="image file (required)")
    v.add_argument("--seed", type=int, default=0, help="noise seed")
    _common(v)
    return parser


# -- config files and the resolved spec ----------------------------------------


def read_config(path):
    """Parse a flat ``key=value`` file. Keys may use dashes or underscores."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", "io.config_missing")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise ConfigError(f"unknown command {command!r}")


def _spec_keys(sub):
    return [a.dest for a in sub._actions if a.dest not in ("help", "config")]


def parse_args(argv=None):
    """Parse ``argv`` with config-file overrides; returns (namespace, resolved spec)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("missing command; expected one of train, eval, synth, gradcheck, preview", "config.usage")
    sub = _subparser(parser, args.command)
    if args.config is not None:
        # empty values stand for "unset" and keep the built-in default
        values = {k: v for k, v in read_config(args.config).items() if v != ""}
        command = values.pop("command", args.command)
        if command != args.command:
            raise ConfigError(f"config file is for {command!r}, not {args.command!r}")
        keys = set(_spec_keys(sub))
        unknown = sorted(set(values) - keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    spec = OrderedDict(command=args.command)
    for key in _spec_keys(sub):
        spec[key] = getattr(args, key)
    return args, spec


def spec_text(spec):
    return "".join(f"{k}={_format_value(v)}\n" for k, v in spec.items())


def _emit_spec(spec, out):
    text = spec_text(spec)
    sys.stdout.write(text)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / SPEC_FILE).write_text(text, encoding="utf-8")


def _need(args, *names):
    for name in names:
        if getattr(args, name) in (None, ()):
            raise ConfigError(f"--{name.replace('_', '-')} is required", "config.missing")


# -- subcommands ---------------------------------------------------------------


def _select(manifest, sources):
    if not sources:
        return manifest
    missing = [s for s in sources if s not in manifest.sources()]
    if missing:
        raise DataError(f"sources not in manifest: {', '.join(missing)}", "io.manifest_format")
    return data.Manifest([r for r in manifest if r.source in sources], manifest.image_size)


def cmd_train(args):
    _need(args, "train_manifest", "out")
    manifest = _select(data.read_manifest(args.train_manifest), args.sources)
    if args.train_count:
        manifest, _ = data.split_by_source(manifest, args.train_count, 0)
    config = pipeline.TrainConfig(
        mode=args.mode,
        batch_size=args.batch_size,
        epochs=args.epochs,
        init_seed=args.init_seed,
        shuffle_seed=args.shuffle_seed,
        preprocess_seed=args.preprocess_seed,
        adam=AdamHyper(lr=args.lr, beta1=args.beta1, beta2=args.beta2, eps=args.adam_eps),
        model=model_mod.DiscriminatorConfig(input_size=args.input_size, widths=tuple(args.widths)),
        checkpoint_every=args.checkpoint_every,
        allow_experimental=args.allow_experimental,
    )
    real = data.load_pixels(manifest.with_label(data.REAL), args.input_size)
    fake = data.load_pixels(manifest.with_label(data.FAKE), args.input_size)
    print(f"# training {config.model_id} on {len(real)} real / {len(fake)} fake images")
    result = pipeline.train(config, real, fake, args.out)
    for entry in result.log:
        print(entry.line())
    print(f"# checkpoint {result.checkpoint_path}")
    return 0


def _load_models(paths):
    models = OrderedDict()
    for i, path in enumerate(paths):
        fallback = pipeline.TABLE_MODELS[i] if i < len(pipeline.TABLE_MODELS) else f"model{i + 1}"
        try:
            ckpt = model_mod.load_checkpoint(path)
        except ForensicsError as exc:
            if exc.category != "io.checkpoint_missing":
                raise
            print(f"warning: {exc.category}: {exc}; its rows are left empty", file=sys.stderr)
            models[fallback] = None
            continue
        name = ckpt.metadata.get("model_id", fallback)
        if name in models:
            name = f"{name}#{i + 1}"
        models[name] = ckpt.model
    sizes = {m.config.input_size for m in models.values() if m is not None}
    if len(sizes) > 1:
        raise ConfigError(f"checkpoints disagree on input size: {sorted(sizes)}", "config.input_size")
    return models


def _test_sets(paths, test_count):
    """``(name, manifest)`` pairs; a manifest with several fake sources yields one set per source."""
    sets = []
    for path in paths:
        manifest = data.read_manifest(path)
        if test_count:
            _, manifest = data.split_by_source(manifest, 0, test_count)
        real = manifest.with_label(data.REAL)
        fake_sources = [s for s in manifest.sources() if s in {r.source for r in manifest.with_label(data.FAKE)}]
        real_name = "+".join(real.sources())
        if len(fake_sources) <= 1:
            name = "+".join(fake_sources + [real_name]) if real_name else "+".join(fake_sources) or Path(path).stem
            sets.append((name, manifest))
            continue
        for source in fake_sources:
            sets.append((f"{source}+{real_name}", pipeline.compose_test_set(real, manifest.by_source(source))))
    return sets


def cmd_eval(args):
    if args.table1:
        _need(args, "checkpoints", "test_manifests")
        models = _load_models(args.checkpoints)
        report = pipeline.generalization_report(models, _test_sets(args.test_manifests, args.test_count))
    else:
        _need(args, "checkpoint", "manifest")
        models = _load_models([args.checkpoint])
        (name, net), = models.items()
        if net is None:
            raise ForensicsError(f"checkpoint not found: {args.checkpoint}", "io.checkpoint_missing")
        report = pipeline.generalization_report(models, _test_sets([args.manifest], args.test_count)[:1])
    sys.stdout.write(report.to_table())
    if args.out is not None:
        report.write(args.out)
    return 0


def family_diagnostics(manifest, specs, count, cfg):
    """Per-family energy checks: HF separation vs reals and artifact survival under k=7 blur."""
    reals = [r.pixels for r in manifest.with_label(data.REAL)][:count]
    real_hf = {}
    rows = []
    for spec in specs:
        lo = spec.band[0] if spec.kind == "band" else spec.cutoff
        if lo not in real_hf:
            real_hf[lo] = float(np.mean([data.spectral_energy(p, lo) for p in reals]))
        fakes = [r.pixels for r in manifest.by_source(spec.name)][:count]
        fake_hf = float(np.mean([data.spectral_energy(p, lo) for p in fakes]))
        ratio = fake_hf / real_hf[lo] if real_hf[lo] > 0 else float("inf")
        rng = np.random.default_rng([0, len(rows)])
        art = [data.family_artifact(spec, rng, cfg.size) + 128.0 for _ in range(min(count, 8))]
        before = np.mean([data.spectral_energy(a) for a in art])
        after = np.mean([data.spectral_energy(preprocess.gaussian_blur(a, 7)) for a in art])
        rows.append((spec.name, real_hf[lo], fake_hf, ratio, 1.0 - after / before))
    return rows


def cmd_synth(args):
    _need(args, "out")
    unknown = [f for f in args.families if f not in data.DEFAULT_FAMILIES]
    if unknown:
        raise ConfigError(f"unknown families {unknown}; expected names from {sorted(data.DEFAULT_FAMILIES)}", "config.family")
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    cfg = data.SynthConfig(size=args.size)
    specs = [data.DEFAULT_FAMILIES[f] for f in args.families]
    manifest = data.synth_families(args.n, specs, args.seed, cfg)
    path = data.export_manifest(manifest, args.out)
    print(f"# wrote {len(manifest)} images and {path}")
    print("family\treal_hf_energy\tfake_hf_energy\tratio\tratio_ok(>=3)\tblur7_attenuation\tattenuation_ok(>=0.8)")
    for name, r_hf, f_hf, ratio, att in family_diagnostics(manifest, specs, args.diagnostic_count, cfg):
        print(f"{name}\t{r_hf:.4f}\t{f_hf:.4f}\t{ratio:.2f}\t{ratio >= 3.0}\t{att:.4f}\t{att >= 0.8}")
    return 0


def cmd_gradcheck(args):
    layers = gradcheck_mod.LAYERS if args.layer == "all" else (args.layer,)
    results = gradcheck_mod.run_all(layers, seed=args.seed)
    print("layer\tmax_rel_error\ttolerance\tstatus")
    for layer, (err, tol, ok) in results.items():
        print(f"{layer}\t{err:.3e}\t{tol:.0e}\t{'PASS' if ok else 'FAIL'}")
    return 0 if all(ok for _, _, ok in results.values()) else EXIT_CHECK_FAILED


def _to_uint8(img):
    return np.rint(np.clip(img, 0.0, 255.0)).astype(np.uint8)


def preview_images(pixels, seed):
    """OrderedDict name -> uint8 image for every blur kernel size and integer noise std 0..5."""
    out = OrderedDict()
    for k in preprocess.KERNEL_SIZES:
        out[f"blur_k{k}"] = _to_uint8(preprocess.gaussian_blur(pixels, k))
    for std in range(int(preprocess.MAX_NOISE_STD) + 1):
        rng = np.random.default_rng([seed, std])
        out[f"noise_s{std}"] = _to_uint8(preprocess.add_gaussian_noise(pixels, float(std), rng))
    return out


def cmd_preview(args):
    _need(args, "input", "out")
    if not args.input.is_file():
        raise DataError(f"input image not found: {args.input}", "io.input_missing")
    pixels = data.decode_image(args.input.read_bytes(), str(args.input))
    images = preview_images(pixels, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in images.items():
        (out / f"{name}.png").write_bytes(data.encode_png(img))
    sheet = np.concatenate([pixels] + list(images.values()), axis=1)
    (out / "sheet.png").write_bytes(data.encode_png(sheet))
    print(f"# wrote {len(images)} previews and sheet.png to {out}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "synth": cmd_synth, "gradcheck": cmd_gradcheck, "preview": cmd_preview}


def main(argv=None):
    try:
        args, spec = parse_args(argv)
        _emit_spec(spec, args.out if args.command != "gradcheck" else None)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except ForensicsError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"config.invalid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io.error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
