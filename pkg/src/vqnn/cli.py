"""``vqnn`` command line: train, evaluate, predict, expectation, calibrate, inspect, gradcheck, plot.

Exit codes: 0 ok, 2 usage/input, 3 divergence, 4 corrupt artifact, 5 check failure.
Every subcommand accepts ``--config FILE`` (key=value lines, flags win) and
``--seed``, and echoes its resolved configuration to stderr.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

from . import ansatz, data, gradcheck, train
from .errors import CheckpointError, DatasetLayoutError, DivergenceError, IDXFormatError, IDXLengthError, \
    ImageDecodeError, StratificationError
from .kvfile import read_kv

log = logging.getLogger("vqnn")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CORRUPT, EXIT_CHECK = 0, 2, 3, 4, 5
DATA_ENV = "VQNN_DATA_DIR"

# Per-dataset defaults for flags left unset.  The crack preset standardizes
# each image and uses a smaller step; see README.
PRESETS = {
    "mnist": {"epochs": 20, "lr": 0.05, "normalize": "none", "size": 28, "limit": 200},
    "crack": {"epochs": 30, "lr": 0.01, "normalize": "standardize", "size": 64, "limit": 200},
}
MNIST_NAMES = (
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
    ("mnist01-images-idx3-ubyte", "mnist01-labels-idx1-ubyte"),
)


class UsageError(Exception):
    """Bad flags or input paths (exit 2)."""


# --- argument parsing ------------------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _finite(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be finite, got {text}")
    return value


def _grid(text: str) -> int:
    value = int(text)
    if value < 8:
        raise argparse.ArgumentTypeError(f"grid must be >= 8, got {value}")
    return value


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="key=value file; explicit flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=sorted(PRESETS), default="mnist")
    p.add_argument("--data-dir", type=Path, default=None, help=f"dataset root (default: ${DATA_ENV} or ./data)")
    p.add_argument("--limit", type=_positive_int, default=None,
                   help="mnist: training images; crack: images per class")
    p.add_argument("--size", type=_positive_int, default=None, help="crack: resize side length")
    p.add_argument("--split-ratio", type=float, default=0.8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqnn", description="Hybrid CNN + QAOA-layer binary classifier")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("train", parents=[common], help="train a hybrid model")
    _data_flags(p)
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--lr", type=_positive_float, default=None)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--pool", choices=("max", "avg"), default="max")
    p.add_argument("--normalize", choices=("none", "center", "standardize"), default=None)
    p.add_argument("--calibration", type=Path, default=None, help="gamma/beta file (default: packaged)")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--name", default=None, help="output file stem (default: dataset name)")
    p.add_argument("--wall-time", action="store_true",
                   help="record measured wall_ms in the CSV (default 0, keeping reruns byte-identical)")

    p = sub.add_parser("evaluate", parents=[common], help="accuracy of a checkpoint on a dataset split")
    _data_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "validation"), default="validation")

    p = sub.add_parser("predict", parents=[common], help="classify one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)

    p = sub.add_parser("expectation", parents=[common], help="print <C> for one theta")
    p.add_argument("--theta", type=_finite, required=True)
    p.add_argument("--gamma", type=_finite)
    p.add_argument("--beta", type=_finite)
    p.add_argument("--calibration", type=Path, default=None)

    p = sub.add_parser("calibrate", parents=[common], help="grid-search gamma/beta for a target <C>")
    p.add_argument("--target", type=_finite, default=ansatz.REFERENCE_EXPECTATION)
    p.add_argument("--theta", type=_finite, default=ansatz.THETA_REF)
    p.add_argument("--grid", type=_grid, default=256)
    p.add_argument("--output", type=Path, default=Path("calibration.txt"))

    p = sub.add_parser("inspect", parents=[common], help="print the ansatz, one gate per line")
    p.add_argument("--theta", type=_finite, default=ansatz.THETA_REF)
    p.add_argument("--gamma", type=_finite)
    p.add_argument("--beta", type=_finite)
    p.add_argument("--calibration", type=Path, default=None)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--perturb", type=float, default=1.0, help=argparse.SUPPRESS)

    p = sub.add_parser("plot", parents=[common], help="render a run CSV as an SVG accuracy plot")
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--output", type=Path, default=None)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse twice: file values become defaults, so explicit flags still win."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        values = read_kv(args.config)
    except OSError as exc:
        parser.error(f"cannot read config file {args.config}: {exc.strerror}")
    sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            parser.error(f"{args.config}: unknown key {key!r} for {args.command}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"{args.config}: bad value for {key}: {exc}")
            if action.choices is not None and value not in action.choices:
                parser.error(f"{args.config}: {key} must be one of {sorted(action.choices)}")
            defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _echo(args: argparse.Namespace) -> None:
    print(f"# vqnn {args.command}", file=sys.stderr)
    for key, value in sorted(vars(args).items()):
        if key not in ("command", "perturb"):
            print(f"#   {key}={value}", file=sys.stderr)


# --- data helpers -------------------------------------------------------------------------

def _data_root(args) -> Path:
    root = args.data_dir or Path(os.environ.get(DATA_ENV, "data"))
    if not root.is_dir():
        raise UsageError(f"data directory {root} does not exist")
    return root


def find_mnist(root: Path) -> tuple[Path, Path]:
    for d in (root, root / "mnist"):
        for images, labels in MNIST_NAMES:
            for suffix in ("", ".gz"):
                ip, lp = d / (images + suffix), d / (labels + suffix)
                if ip.is_file() and lp.is_file():
                    return ip, lp
    raise UsageError(f"no MNIST IDX image/label pair found under {root}")


def find_crack(root: Path) -> Path:
    for d in (root, root / "crack"):
        if all((d / name).is_dir() for name in data.CRACK_CLASSES):
            return d
    raise UsageError(f"no Negative/ and Positive/ folders under {root}")


def load_dataset(args) -> data.DatasetSplit:
    preset = PRESETS[args.dataset]
    root = _data_root(args)
    limit = args.limit or preset["limit"]
    if args.dataset == "mnist":
        images, labels = find_mnist(root)
        return data.load_mnist_idx(images, labels, max_per_split=limit, seed=args.seed)
    return data.load_image_folder(find_crack(root), resize_to=args.size or preset["size"], max_per_class=limit,
                                  seed=args.seed, split_ratio=args.split_ratio)


def _ansatz_config(args) -> ansatz.AnsatzConfig:
    if (args.gamma is None) != (args.beta is None):
        raise UsageError("--gamma and --beta must be given together")
    if args.gamma is not None:
        return ansatz.AnsatzConfig.single(args.gamma, args.beta)
    if args.calibration is not None and not args.calibration.is_file():
        raise UsageError(f"calibration file {args.calibration} does not exist")
    return ansatz.AnsatzConfig.from_calibration(args.calibration)


# --- commands -------------------------------------------------------------------------------

def cmd_train(args) -> int:
    from . import plotting
    from .nn import TrunkConfig

    preset = PRESETS[args.dataset]
    for key in ("epochs", "lr", "normalize"):
        if getattr(args, key) is None:
            setattr(args, key, preset[key])
    if args.calibration is not None and not args.calibration.is_file():
        raise UsageError(f"calibration file {args.calibration} does not exist")
    _echo(args)
    split = load_dataset(args)
    shape = split.train[0].image.shape
    trunk_cfg = TrunkConfig(input_shape=shape, pool=args.pool, activation=args.activation, normalize=args.normalize)
    model = train.HybridModel.create(trunk_cfg, ansatz.AnsatzConfig.from_calibration(args.calibration), args.seed)
    cfg = train.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, momentum=args.momentum,
                            seed=args.seed, dataset=args.dataset, split_ratio=args.split_ratio,
                            calibration=str(args.calibration) if args.calibration else None)

    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.out / (args.name or args.dataset)
    def report(row: train.EpochRow) -> None:
        print(f"epoch {row.epoch:>3}  train_loss={row.train_loss:.4f} train_acc={row.train_acc:.4f} "
              f"val_loss={row.val_loss:.4f} val_acc={row.val_acc:.4f}  {row.wall_ms} ms", file=sys.stderr)

    result = train.fit(model, split, cfg, checkpoint_path=stem.with_suffix(".ckpt"), on_epoch=report)
    result.record.to_csv(stem.with_suffix(".csv"), wall_time=args.wall_time)
    plotting.accuracy_plot(result.record, stem.with_suffix(".svg"),
                           title=f"{args.dataset}: {len(split.train)} train / {len(split.validation)} validation")

    model.trunk.load_state_dict(result.best_state)
    shown = split.validation[:16]
    ev = train.evaluate(model, shown)
    plotting.prediction_grid([s.image for s in shown], [s.label for s in shown], ev.probabilities,
                             stem.parent / f"{stem.name}-predictions.svg")
    final = result.record.final
    print(f"epochs={final.epoch} train_acc={final.train_acc:.4f} val_acc={final.val_acc:.4f} "
          f"best_epoch={result.best_epoch}")
    print(f"wrote {stem.with_suffix('.csv')} {stem.with_suffix('.svg')} {stem.with_suffix('.ckpt')}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _echo(args)
    model = train.load_model(args.checkpoint)
    split = load_dataset(args)
    samples = split.train if args.split == "train" else split.validation
    if samples[0].image.shape != model.trunk.config.input_shape:
        raise UsageError(f"checkpoint expects {model.trunk.config.input_shape} images, data has "
                         f"{samples[0].image.shape}")
    ev = train.evaluate(model, samples)
    print(f"split={args.split} n={len(samples)} loss={ev.loss:.4f} accuracy={ev.accuracy:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    _echo(args)
    model = train.load_model(args.checkpoint)
    if not args.input.is_file():
        raise UsageError(f"input image {args.input} does not exist")
    _, h, w = model.trunk.config.input_shape
    try:
        image = data.load_image(args.input, (h, w))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot decode {args.input}: {exc}") from exc
    theta, p = train.hybrid_forward(model, image)
    print(f"label={train.predict_label(p)} p={p:.4f} theta={theta:.4f}")
    return EXIT_OK


def cmd_expectation(args) -> int:
    _echo(args)
    cfg = _ansatz_config(args)
    value = round(ansatz.quantum_forward(args.theta, cfg).expectation, 6) + 0.0  # no "-0.000000"
    print(f"{value:.6f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    _echo(args)
    gamma, beta, achieved = ansatz.calibrate_gamma_beta(args.target, args.theta, grid_steps=args.grid)
    cal = ansatz.Calibration(gamma, beta, achieved, args.theta, args.target, args.grid)
    ansatz.write_calibration(args.output, cal)
    print(f"gamma={cal.gamma:.10f} beta={cal.beta:.10f} achieved={cal.achieved_expectation:.6f} "
          f"residual={cal.residual:.3e}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _echo(args)
    cfg = _ansatz_config(args)
    print(ansatz.build_ansatz(cfg).diagram({ansatz.THETA: args.theta}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    _echo(args)
    results = gradcheck.run_all(args.seed, perturb=args.perturb)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_plot(args) -> int:
    from . import plotting

    _echo(args)
    if not args.csv.is_file():
        raise UsageError(f"run record {args.csv} does not exist")
    try:
        record = train.RunRecord.from_csv(args.csv)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot parse run record {args.csv}: {exc}") from exc
    out = args.output or args.csv.with_suffix(".svg")
    plotting.accuracy_plot(record, out, title=args.csv.stem)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict, "expectation": cmd_expectation,
    "calibrate": cmd_calibrate, "inspect": cmd_inspect, "gradcheck": cmd_gradcheck, "plot": cmd_plot,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DatasetLayoutError, IDXFormatError, IDXLengthError, ImageDecodeError,
            StratificationError) as exc:
        print(f"vqnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"vqnn {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"vqnn {args.command}: corrupt artifact: {exc}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())
