"""``lddr`` command line: train, align, eval, net-info, synth, init-weights.

Exit codes: 0 success, 1 some samples failed to align, 2 configuration error,
3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import TrainConfig, check_engine, load_model, parallel_map, predict, save_model, train_cascade
from .data import clip_box, load_image, load_manifest, write_manifest, write_pts
from .errors import ConfigurationError, InputError, LddrError, MetricError, NumericalError
from .metrics import PROTOCOLS, ced_curve, evaluate, format_ced
from .net import (
    DEFAULT_CHANNELS,
    DEFAULT_GROUPS,
    StageConfig,
    build_layers,
    geometry_report,
    init_random_weights,
    load_weights,
    min_input_size,
    original_network_config,
    receptive_field,
    save_weights,
    shared_engine,
    standard_stage_config,
)
from .shape import FaceFrame
from .synth import SynthSpec, synth_generate

log = logging.getLogger("lddr")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class _UsageError(Exception):
    """Bad or missing flags; reported with the subcommand's usage text."""


# -- config files -------------------------------------------------------------


def read_key_values(path) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key] = value.strip()
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _apply_config(parser: argparse.ArgumentParser, path) -> None:
    """Install config-file values as defaults so explicit flags still win."""
    actions = {}
    for a in parser._actions:
        if a.dest in ("help", "config"):
            continue
        actions[a.dest] = a
        # long option names work too, so "lambda" reaches dest "lam"
        for opt in a.option_strings:
            if opt.startswith("--"):
                actions[opt[2:].replace("-", "_")] = a
    defaults = {}
    for key, value in read_key_values(path).items():
        action = actions.get(key)
        if action is None:
            raise ConfigurationError(f"{path}: unknown key {key!r} for this subcommand")
        key = action.dest
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if value.lower() not in _TRUE | _FALSE:
                raise ConfigurationError(f"{path}: {key} must be a boolean, got {value!r}")
            flag = value.lower() in _TRUE
            defaults[key] = flag if isinstance(action, argparse._StoreTrueAction) else not flag
            continue
        try:
            defaults[key] = action.type(value) if action.type else value
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: bad value for {key}: {exc}") from None
        if action.choices is not None and defaults[key] not in action.choices:
            raise ConfigurationError(f"{path}: {key} must be one of {list(action.choices)}")
    parser.set_defaults(**defaults)


def read_net_config(path) -> StageConfig:
    """A custom stage from ``input_size``, ``strides``, ``channels``, ``groups`` keys.

    ``strides`` lists conv1, max1, conv2, max2; the other keys default to the
    standard network.
    """
    kv = read_key_values(path)
    unknown = set(kv) - {"input_size", "strides", "channels", "groups", "stage"}
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")

    def ints(key, default, n):
        if key not in kv:
            return default
        try:
            vals = tuple(int(v) for v in kv[key].replace(",", " ").split())
        except ValueError:
            raise ConfigurationError(f"{path}: {key} must be integers, got {kv[key]!r}") from None
        if len(vals) != n:
            raise ConfigurationError(f"{path}: {key} needs {n} values, got {len(vals)}")
        return vals

    if "input_size" not in kv:
        raise ConfigurationError(f"{path}: input_size is required")
    (size,) = ints("input_size", None, 1)
    (stage,) = ints("stage", (0,), 1)
    layers = build_layers(ints("strides", (1, 1, 1, 1), 4), ints("channels", DEFAULT_CHANNELS, 5), ints("groups", DEFAULT_GROUPS, 5))
    if size < 1:
        raise ConfigurationError(f"{path}: input_size must be positive")
    return StageConfig(stage, size, layers)


# -- shared helpers -------------------------------------------------------------


def _threads_default() -> int:
    raw = os.environ.get("LDDR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"LDDR_THREADS must be an integer, got {raw!r}") from None
    return n


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _channel_list(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(vals) != 5 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"need 5 positive widths, got {text!r}")
    return vals


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise _UsageError(f"missing required option(s): {', '.join(missing)}")


def _match_channels(image: np.ndarray, channels: int) -> np.ndarray:
    if image.shape[2] == channels:
        return image
    if image.shape[2] == 1:
        return np.repeat(image, channels, axis=2)
    raise InputError(f"image has {image.shape[2]} channels, network expects {channels}")


def _load_face(sample, channels: int):
    image = _match_channels(load_image(sample.image_path), channels)
    h, w = image.shape[:2]
    return image, FaceFrame(*clip_box(sample.box, w, h))


# -- subcommands -------------------------------------------------------------------


def cmd_train(args) -> int:
    _require(args, "manifest", "weights", "out")
    if not 1 <= args.stages <= 4:
        raise ConfigurationError(f"--stages must be 1..4, got {args.stages}")
    if args.threads < 1:
        raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
    weights = load_weights(args.weights)
    # layer widths follow the weight file, so narrow test networks train too
    groups = tuple(w.groups for w in weights.layers.values())
    stages = [standard_stage_config(s, weights.channels, groups) for s in range(1, args.stages + 1)]
    engine = shared_engine(weights, stages)
    samples = load_manifest(args.manifest)
    if not samples:
        raise InputError(f"{args.manifest}: no training samples")
    dataset = []
    for s in samples:
        if s.shape is None:
            raise InputError(f"{s.identifier}: training needs ground-truth landmarks")
        image, frame = _load_face(s, weights.in_channels)
        dataset.append((image, frame, s.shape))
    config = TrainConfig(
        stage_configs=stages,
        lam=args.lam,
        augment=not args.no_augment,
        n_rotations=args.rotations,
        max_rotation_deg=args.max_rotation,
        perturb_init=not args.no_perturb,
        seed=args.seed,
        threads=args.threads,
    )
    model, report = train_cascade(dataset, config, engine)
    save_model(model, args.out)
    report_path = Path(args.report) if args.report else Path(f"{args.out}.report.tsv")
    report_path.write_text(format_report(report, args))
    print(f"trained {report.n_samples} samples in {report.seconds:.1f} s", file=sys.stderr)
    return EXIT_OK


def format_report(report, args) -> str:
    """Deterministic TSV; wall-clock timing goes to stderr instead."""
    lines = [
        f"# seed\t{args.seed}",
        f"# samples\t{report.n_samples}",
        f"# augment\t{'off' if args.no_augment else f'flip+{args.rotations}rot'}",
        "stage\tlambda\tmean_error",
        f"0\t-\t{report.stage_errors[0]:.6f}",
    ]
    for t, (lam, err) in enumerate(zip(report.lambdas, report.stage_errors[1:]), 1):
        lines.append(f"{t}\t{lam:g}\t{err:.6f}")
    return "\n".join(lines) + "\n"


def _prepare_out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".lddr-write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


def cmd_align(args) -> int:
    _require(args, "model", "weights", "manifest", "out")
    if args.threads < 1:
        raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
    model = load_model(args.model)
    weights = load_weights(args.weights)
    engine = shared_engine(weights, model.stage_configs)
    check_engine(model, engine)
    samples = load_manifest(args.manifest)
    out = _prepare_out_dir(args.out)
    ids = [s.identifier for s in samples]
    if len(set(ids)) != len(ids):
        raise InputError(f"{args.manifest}: duplicate sample identifiers")

    def run(sample):
        try:
            image, frame = _load_face(sample, weights.in_channels)
            return predict(model, image, frame, engine), None
        except (LddrError, OSError) as exc:
            return None, exc

    results = parallel_map(run, samples, args.threads)
    rows, failed = [], 0
    for sample, (shape, err) in zip(samples, results):
        if err is not None:
            failed += 1
            log.error("%s: %s", sample.identifier, err)
            continue
        pts = f"{sample.identifier}.pts"
        try:
            write_pts(shape, out / pts)
        except OSError as exc:
            raise InputError(f"cannot write {out / pts}: {exc.strerror}") from None
        rows.append((os.path.relpath(sample.image_path, out), pts, sample.box))
    write_manifest(rows, out / "predictions.tsv")
    if failed:
        log.error("%d of %d samples failed", failed, len(samples))
        return EXIT_PARTIAL
    return EXIT_OK


def _default_protocols(n_points: int) -> list:
    if n_points == 68:
        return ["interpupil68", "interpupil49", "facesize"]
    if n_points == 49:
        return ["interpupil49", "facesize"]
    if n_points == 3:
        return ["eye_nose_3pt", "facesize"]
    return ["facesize"]


def cmd_eval(args) -> int:
    _require(args, "pred", "gt")
    preds = {s.identifier: s for s in load_manifest(args.pred)}
    gts = {s.identifier: s for s in load_manifest(args.gt)}
    stray = sorted(set(preds) - set(gts))
    if stray:
        raise InputError(f"{len(stray)} predictions have no ground truth, e.g. {stray[0]!r}")
    common = [i for i in gts if i in preds]
    if not common:
        raise InputError("no identifiers in common between predictions and ground truth")
    if len(common) < len(gts):
        log.warning("%d ground-truth samples have no prediction and are skipped", len(gts) - len(common))
    for i in common:
        if preds[i].shape is None or gts[i].shape is None:
            raise InputError(f"{i}: missing landmarks in {'predictions' if preds[i].shape is None else 'ground truth'}")
    p = [preds[i].shape for i in common]
    g = [gts[i].shape for i in common]
    boxes = [gts[i].box for i in common]
    protocols = args.protocol or _default_protocols(len(g[0]))
    results = []
    for proto in protocols:
        res = evaluate(p, g, proto, boxes)
        if res.failed:
            log.warning("%s: %d images with a zero normalizer excluded", proto, len(res.failed))
        if not res.per_image:
            raise MetricError(f"{proto}: every image has a zero normalizer")
        results.append(res)
        print(f"{proto}\t{res.mean:.5f}")
    if args.ced:
        thresholds = np.linspace(0.0, args.ced_max, args.ced_bins + 1)
        Path(args.ced).write_text(format_ced(ced_curve(results[0].per_image, thresholds)))
    return EXIT_OK


def cmd_net_info(args) -> int:
    if args.net_config:
        configs = [read_net_config(args.net_config)]
    elif args.preset == "original":
        configs = [original_network_config()]
    elif args.stage is not None:
        configs = [standard_stage_config(args.stage)]
    else:
        configs = [standard_stage_config(s) for s in (1, 2, 3, 4)]
    print("stage\tlayer\tout_h\tout_w\tout_c\trf\tjump")
    for cfg in configs:
        label = "original" if args.preset == "original" else str(cfg.stage_index)
        for row in geometry_report(cfg):
            print(label + "\t" + "\t".join(str(v) for v in row))
    print()
    print("stage\tinput_size\tmin_input_size")
    for cfg in configs:
        label = "original" if args.preset == "original" else str(cfg.stage_index)
        print(f"{label}\t{cfg.input_size}\t{min_input_size(cfg)}")
    if args.preset == "original":
        rf5, _ = receptive_field(configs[0].layers, "conv5")
        rfp, _ = receptive_field(configs[0].layers, "pool5")
        print(f"# receptive field is {rf5} px at conv5 and {rfp} px at pool5; the commonly quoted 195 px holds only after pool5")
    return EXIT_OK


def cmd_synth(args) -> int:
    _require(args, "out")
    spec = SynthSpec(seed=args.seed, count=args.count, image_size=args.image_size)
    _prepare_out_dir(args.out)
    manifest = synth_generate(spec, args.out)
    print(manifest)
    return EXIT_OK


def cmd_init_weights(args) -> int:
    _require(args, "out")
    if not args.scale > 0:
        raise ConfigurationError(f"--scale must be positive, got {args.scale}")
    weights = init_random_weights(args.seed, scale=args.scale, channels=args.channels)
    save_weights(weights, args.out)
    print(weights.digest())
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lddr", description="Face alignment by cascaded regression on deep local descriptors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, threads=False):
        p.add_argument("--config", metavar="FILE", help="key = value defaults; explicit flags win")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if threads:
            p.add_argument("--threads", type=int, default=None, help="workers (default: $LDDR_THREADS or 1)")

    p = sub.add_parser("train", help="train a cascade on a manifest")
    common(p, threads=True)
    p.add_argument("--manifest")
    p.add_argument("--weights")
    p.add_argument("--out", metavar="MODEL")
    p.add_argument("--report", metavar="TSV", help="default: MODEL.report.tsv")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed ridge strength (default: cross-validate)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stages", type=int, default=4)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--rotations", type=int, default=1, help="random rotations per original and mirrored image")
    p.add_argument("--max-rotation", type=float, default=15.0, metavar="DEG")
    p.add_argument("--no-perturb", action="store_true", help="start every sample from the plain mean shape")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="predict landmarks for every manifest entry")
    common(p, threads=True)
    p.add_argument("--model")
    p.add_argument("--weights")
    p.add_argument("--manifest")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="NME and CED of predictions against ground truth")
    common(p)
    p.add_argument("--pred", metavar="MANIFEST")
    p.add_argument("--gt", metavar="MANIFEST")
    p.add_argument("--protocol", action="append", choices=PROTOCOLS)
    p.add_argument("--ced", metavar="FILE", help="CED of the first protocol")
    p.add_argument("--ced-max", type=float, default=0.2)
    p.add_argument("--ced-bins", type=_positive, default=40)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("net-info", help="layer geometry and receptive fields")
    common(p)
    p.add_argument("--stage", type=int)
    p.add_argument("--preset", choices=["standard", "original"], default="standard")
    p.add_argument("--net-config", metavar="FILE")
    p.set_defaults(func=cmd_net_info)

    p = sub.add_parser("synth", help="render a synthetic face dataset")
    common(p)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=160)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-weights", help="write seeded random network weights")
    common(p)
    p.add_argument("--out", metavar="FILE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="gain on the fan-in initialization std")
    p.add_argument("--channels", type=_channel_list, default=DEFAULT_CHANNELS, help="conv1..conv5 widths, comma separated")
    p.set_defaults(func=cmd_init_weights)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    sp = _subparser(parser, args.command)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.config:
            _apply_config(sp, args.config)
            args = parser.parse_args(argv)
        if getattr(args, "threads", 0) is None:
            args.threads = _threads_default()
        if args.command == "net-info" and args.stage is not None and not 1 <= args.stage <= 4:
            raise ConfigurationError(f"--stage must be 1..4, got {args.stage}")
        t0 = time.perf_counter()
        code = args.func(args)
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
        return code
    except _UsageError as exc:
        sp.print_usage(sys.stderr)
        print(f"lddr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"lddr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, OSError) as exc:
        print(f"lddr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, MetricError) as exc:
        print(f"lddr: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
