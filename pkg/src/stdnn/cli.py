"""Command line entry point: ``stdnn <command> [--config FILE] [--key value ...]``.

Commands: ``train``, ``segment``, ``eval``, ``probe``, ``gradcheck``,
``describe`` and ``synth`` (write a synthetic dataset).  Every command
writes its artifacts and a ``manifest.json`` under ``--out``.

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, config, evalmetrics, probe, raster, segment, synthetic, training
from .descriptor import (DescriptorNet, PreprocessSpec, WeightsFormatError, load_weights,
                         save_weights, weights_metadata)
from .poisson import SolverError

log = logging.getLogger("stdnn")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# helpers -------------------------------------------------------------

class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command: str, cfg: config.RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {self.out}: {exc.strerror}") from None
        self.inputs: list[Path] = []
        self.artifacts: list[str] = []

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"no such file or directory: {p}")
        self.inputs.append(p)
        return p

    def artifact(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def finish(self) -> None:
        entries = []
        for p in self.inputs:
            files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
            for q in files:
                entries.append({"path": str(q), "sha256": hashlib.sha256(q.read_bytes()).hexdigest()})
        manifest = {
            "command": self.command,
            "version": __version__,
            "config_sha256": self.cfg.digest(),
            "inputs": entries,
            "artifacts": self.artifacts,
        }
        (self.out / "config.txt").write_text(self.cfg.to_text())
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _require(cfg, key: str) -> str:
    value = getattr(cfg, key)
    if value is None:
        raise UsageError(f"missing required setting {key!r}")
    return value


def _read_image(cfg, run: Run, path) -> np.ndarray:
    img = raster.load_image(run.input(path))
    return raster.normalize(img) if cfg.normalize else img


def load_dataset(root) -> list[tuple[Path, Path]]:
    """Pair ``root/images/<stem>.*`` with ``root/labels/<stem>.*``."""
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    images, labels = root / "images", root / "labels"
    for d in (images, labels):
        if not d.is_dir():
            raise UsageError(f"dataset directory lacks {d.name}/: {d}")
    label_files = {p.stem: p for p in labels.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
    pairs = []
    for img in sorted(p for p in images.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        if img.stem not in label_files:
            raise UsageError(f"no label map for {img} in {labels}")
        pairs.append((img, label_files[img.stem]))
    if not pairs:
        raise UsageError(f"no images found in {images}")
    return pairs


def _spec(cfg) -> PreprocessSpec:
    return PreprocessSpec(tuple(np.deg2rad(cfg.orientations)), tuple(cfg.scales))


def _segment_params(cfg) -> segment.SegmentParams:
    return segment.SegmentParams(beta=cfg.beta, dt=cfg.dt, dilation_radius=cfg.dilation_radius,
                                 inner_steps=cfg.inner_steps, max_iterations=cfg.max_iters,
                                 multistart=cfg.multistart, monotone=cfg.monotone, solver=cfg.solver,
                                 threads=cfg.threads)


def _load_net(cfg, run: Run) -> DescriptorNet:
    path = run.input(_require(cfg, "weights"))
    net = load_weights(path)
    factor = int(weights_metadata(path).get("downsample_factor", 1))
    return net.rescaled(factor, cfg.alpha_exponent) if factor != 1 else net


def _pipeline(cfg, net):
    params = _segment_params(cfg)
    return lambda image: segment.segment(image, net, cfg.n, params).labels


# commands -------------------------------------------------------------

def cmd_train(cfg, run: Run) -> int:
    pairs = load_dataset(_require(cfg, "dataset"))
    run.input(cfg.dataset)
    data = []
    for img_path, lab_path in pairs:
        img = raster.load_image(img_path)
        data.append((raster.normalize(img) if cfg.normalize else img, raster.load_labels(lab_path)))
    net = DescriptorNet.initialize(cfg.hidden, _spec(cfg), cfg.layer_alpha, cfg.init_seed)
    tc = training.TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                              downsample_factor=cfg.downsample_factor or None, batch=cfg.batch,
                              seed=cfg.seed, momentum=cfg.momentum, solver=cfg.solver, threads=cfg.threads)
    result = training.train(net, data, tc)
    save_weights(run.artifact("weights.bin"), result.net, result.downsample_factor)
    run.artifacts.append("weights.bin.json")
    training.write_history(run.artifact("loss.csv"), result.history)
    first, last = result.history[0], result.history[-1]
    print(f"trained {len(data)} images for {cfg.epochs} epochs: total {first[3]:.6f} -> {last[3]:.6f}")
    return EXIT_OK


def cmd_segment(cfg, run: Run) -> int:
    net = _load_net(cfg, run)
    img = _read_image(cfg, run, _require(cfg, "image"))
    result = segment.segment(img, net, cfg.n, _segment_params(cfg))
    raster.save_labels(run.artifact("labels.pgm"), result.labels)
    segment.write_diagnostics(run.artifact("diagnostics.csv"), result)
    print(f"{result.iterations} iterations, energy {result.energies[-1]:.6f}, converged {result.converged}")
    return EXIT_OK


def cmd_eval(cfg, run: Run) -> int:
    seg = raster.load_labels(run.input(_require(cfg, "seg")))
    gt = raster.load_labels(run.input(_require(cfg, "gt")))
    if seg.shape != gt.shape:
        raise UsageError(f"label maps differ in shape: {seg.shape} vs {gt.shape}")
    report = evalmetrics.score(seg, gt, cfg.boundary_tol)
    header = ["gt_covering", "rand_index", "voi", "boundary_f"]
    row = [repr(v) for v in report.row()]
    with open(run.artifact("scores.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerow(row)
    print(",".join(header))
    print(",".join(row))
    return EXIT_OK


def _transform(theta_deg: float, shift) -> probe.Transform:
    t = probe.Rotation(float(np.deg2rad(theta_deg)))
    if any(shift):
        t = probe.Compose(t, probe.Shift(*shift))
    return t


def cmd_probe(cfg, run: Run) -> int:
    net = _load_net(cfg, run)
    img = _read_image(cfg, run, _require(cfg, "image"))
    pipe = _pipeline(cfg, net)
    with open(run.artifact("covariance.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_deg", "shift_y", "shift_x", "gt_covering"])
        for angle in cfg.angles:
            score = probe.covariance_score(pipe, img, _transform(angle, cfg.shift))
            writer.writerow([angle, cfg.shift[0], cfg.shift[1], repr(score)])
            print(f"rotation {angle:g} deg, shift {tuple(cfg.shift)}: gt_covering {score:.4f}")
    rows = probe.robustness_sweep(pipe, img, cfg.norms, cfg.seeds, cfg.n_max)
    probe.write_sweep(run.artifact("sweep.csv"), rows)
    probe.write_gnuplot(run.artifact("sweep.dat"), rows)
    for norm in sorted({r.norm for r in rows}):
        sel = [r.gt_covering for r in rows if r.norm == norm]
        print(f"norm^2 {norm:g}: mean gt_covering {np.mean(sel):.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg, run: Run) -> int:
    rng = np.random.default_rng(cfg.seed)
    size = cfg.check_size
    image = rng.uniform(size=(3, size, size))
    labels = np.zeros((size, size), np.int64)
    labels[:, size // 2:] = 1
    spec = PreprocessSpec(tuple(np.deg2rad(cfg.orientations)), tuple(cfg.check_scales))
    net = DescriptorNet.initialize(cfg.check_hidden, spec, cfg.layer_alpha, cfg.init_seed)
    sample = training.prepare(net, image, labels)
    check = training.finite_difference_check(net, sample, cfg.check_eps)
    dot = training.dot_product_test(net, sample, cfg.seed)
    with open(run.artifact("gradcheck.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "analytic", "numeric", "rel_error"])
        for i, (a, n, e) in enumerate(zip(check.analytic, check.numeric, check.rel_error)):
            writer.writerow([i, repr(a), repr(n), repr(e)])
    print(f"{check.rel_error.size} parameters, max rel error {check.max_rel_error:.3e}, dot-product {dot:.3e}")
    if check.max_rel_error >= 1e-4 or dot >= 1e-8:
        print("stdnn gradcheck: numerical failure: gradient check failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_describe(cfg, run: Run) -> int:
    if cfg.weights is not None:
        net = load_weights(run.input(cfg.weights))
    else:
        net = DescriptorNet.initialize(cfg.hidden, _spec(cfg), cfg.layer_alpha, cfg.init_seed)
    info = net.describe()
    run.artifact("describe.json").write_text(json.dumps(info, indent=2) + "\n")
    print(f"layers: {info['layers']}")
    print(f"input channels: {info['input_channels']}")
    print("widths: " + "/".join(str(w) for w in info["widths"]))
    print(f"parameters: {info['parameters']}")
    print(f"layer alpha: {info['layer_alpha']:g}")
    return EXIT_OK


def cmd_synth(cfg, run: Run) -> int:
    kind = None if cfg.kind == "mixed" else cfg.kind
    data = synthetic.dataset(cfg.count, (cfg.size, cfg.size), cfg.seed, kind=kind)
    (run.out / "images").mkdir(exist_ok=True)
    (run.out / "labels").mkdir(exist_ok=True)
    for k, (img, lab) in enumerate(data):
        raster.save_image(run.artifact(f"images/{k:03d}.png"), img)
        raster.save_labels(run.artifact(f"labels/{k:03d}.pgm"), lab)
    print(f"wrote {len(data)} images to {run.out}")
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "train a descriptor net on a dataset directory"),
    "segment": (cmd_segment, "segment one image"),
    "eval": (cmd_eval, "score a label map against ground truth"),
    "probe": (cmd_probe, "covariance and deformation-robustness probes"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the gradients"),
    "describe": (cmd_describe, "print the architecture and parameter count"),
    "synth": (cmd_synth, "write a synthetic two-texture dataset"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = config.option_help()
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(config.RunConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest="opt_" + f.name, metavar="VALUE",
                           help=helps.get(f.name) or None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    func = COMMANDS[args.command][0]
    try:
        cfg = config.load(args.config, overrides)
        run = Run(args.command, cfg)
        code = func(cfg, run)
        run.finish()
        return code
    except (UsageError, config.ConfigError, raster.RasterError, WeightsFormatError) as exc:
        print(f"stdnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, SolverError, training.TrainingDiverged, FloatingPointError) as exc:
        print(f"stdnn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"stdnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
