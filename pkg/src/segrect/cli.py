"""Command-line interface: ``python -m segrect <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .classifiers import ClassifierSource
from .core import InvalidInputError, WeightVector
from .edges import EdgeConfig
from .evaluation import accumulation_curve, format_tsv, frame_metrics, uniform_baseline_weights
from .io import (
    read_config,
    read_depth,
    read_edge_map,
    read_manifest,
    read_mask,
    read_prob_map,
    read_rgb,
    read_weights,
    write_config,
    write_mask,
    write_text_table,
    write_weights,
)
from .learning import (
    NORMALIZATIONS,
    PRIOR_GRID,
    LearnConfig,
    TrainingSample,
    cross_validate_prior,
    run_cutting_plane,
    theorem1_harness,
    train_ossvm,
    train_ossvm_rgbd,
)
from .pipeline import PipelineConfig, load_frames, propagate_sequence, rectify_frame, training_samples
from .synth import BiasSpec, SceneSpec, generate_sequence

log = logging.getLogger("segrect")

DEFAULTS: dict[str, str] = {
    "seed": "0",
    "threads": "1",
    "learning.C": "1",
    "learning.prior_weight": "0",
    "learning.max_iterations": "10",
    "learning.violation_tolerance": "1e-4",
    "learning.qp_kkt_tolerance": "1e-8",
    "learning.normalize": "pixels",
    "learning.layout": "rgb",
    "classifier.kind": "mixture",
    "classifier.components": "5",
    "pipeline.threshold": "0.5",
    "pipeline.rounds": "1",
    "pipeline.soft": "false",
    "pipeline.mode": "chained",
    "edges.percentile": "90",
    "cv.folds": "10",
    "cv.grid": ",".join(f"{p:g}" for p in PRIOR_GRID),
    "synth.sequences": "1",
    "synth.frames": "10",
    "synth.height": "128",
    "synth.width": "128",
    "synth.shape": "disk",
    "synth.size": "24",
    "synth.velocity": "1,0",
    "synth.rotation": "0",
    "synth.blur": "0.7",
    "synth.clutter": "0",
    "synth.depth": "false",
    "bias.fp_rate": "0",
    "bias.fn_rate": "0",
    "bias.band": "3",
    "bias.speckle_rate": "0",
    "theorem1.samples": "20",
}

# flag destination -> config key
FLAG_KEYS = {
    "seed": "seed",
    "threads": "threads",
    "C": "learning.C",
    "prior": "learning.prior_weight",
    "max_iterations": "learning.max_iterations",
    "normalize": "learning.normalize",
    "layout": "learning.layout",
    "classifier": "classifier.kind",
    "components": "classifier.components",
    "threshold": "pipeline.threshold",
    "rounds": "pipeline.rounds",
    "soft": "pipeline.soft",
    "mode": "pipeline.mode",
    "percentile": "edges.percentile",
    "folds": "cv.folds",
    "grid": "cv.grid",
    "sequences": "synth.sequences",
    "frames": "synth.frames",
    "height": "synth.height",
    "width": "synth.width",
    "shape": "synth.shape",
    "size": "synth.size",
    "velocity": "synth.velocity",
    "rotation": "synth.rotation",
    "blur": "synth.blur",
    "clutter": "synth.clutter",
    "depth_maps": "synth.depth",
    "fp_rate": "bias.fp_rate",
    "fn_rate": "bias.fn_rate",
    "band": "bias.band",
    "speckle_rate": "bias.speckle_rate",
    "samples": "theorem1.samples",
}


class UsageError(InvalidInputError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Settings:
    """Resolved configuration: defaults, then the config file, then flags."""

    def __init__(self, values: dict[str, str]):
        self.values = values

    @classmethod
    def resolve(cls, args: argparse.Namespace) -> "Settings":
        values = dict(DEFAULTS)
        if args.config:
            if not Path(args.config).is_file():
                raise InvalidInputError(f"missing config file: {args.config}")
            for key, value in read_config(args.config).items():
                if key not in DEFAULTS:
                    raise InvalidInputError(f"unknown config key {key!r} in {args.config}")
                values[key] = value
        for dest, key in FLAG_KEYS.items():
            v = getattr(args, dest, None)
            if v is not None:
                values[key] = str(v).lower() if isinstance(v, bool) else str(v)
        return cls(values)

    def str(self, key: str) -> str:
        return self.values[key]

    def int(self, key: str) -> int:
        return self._convert(key, int)

    def float(self, key: str) -> float:
        return self._convert(key, float)

    def bool(self, key: str) -> bool:
        v = self.values[key].lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise InvalidInputError(f"{key} must be a boolean, got {self.values[key]!r}")
        return v in ("true", "1", "yes")

    def floats(self, key: str) -> list[float]:
        try:
            return [float(x) for x in self.values[key].split(",") if x.strip()]
        except ValueError:
            raise InvalidInputError(f"{key} must be a comma-separated list of numbers") from None

    def _convert(self, key, kind):
        try:
            return kind(self.values[key])
        except ValueError:
            raise InvalidInputError(f"{key} must be {kind.__name__}, got {self.values[key]!r}") from None

    def learn_config(self) -> LearnConfig:
        return LearnConfig(C=self.float("learning.C"), prior_weight=self.float("learning.prior_weight"),
                           max_iterations=self.int("learning.max_iterations"),
                           violation_tolerance=self.float("learning.violation_tolerance"),
                           qp_kkt_tolerance=self.float("learning.qp_kkt_tolerance"),
                           threads=self.int("threads"))

    def classifier(self) -> ClassifierSource:
        return ClassifierSource(kind=self.str("classifier.kind").replace("builtin", "mixture"),
                                components=self.int("classifier.components"), seed=self.int("seed"))

    def pipeline(self, weights: WeightVector) -> PipelineConfig:
        return PipelineConfig(weights=weights, classifier=self.classifier(),
                              threshold=self.float("pipeline.threshold"), rounds=self.int("pipeline.rounds"),
                              soft=self.bool("pipeline.soft"), edges=EdgeConfig(self.float("edges.percentile")))


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_weights(spec: str, layout: str = "rgb") -> WeightVector:
    if spec == "uniform":
        return uniform_baseline_weights(layout)
    if not Path(spec).is_file():
        raise InvalidInputError(f"missing weights file: {spec}")
    return read_weights(spec)


def _read_feature_table(path) -> list[TrainingSample]:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"missing features file: {path}")
    samples = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [float(x) for x in line.split()]
        except ValueError:
            raise InvalidInputError(f"{path}:{n}: non-numeric feature value") from None
        samples.append(TrainingSample(np.array(values), f"{path.name}:{n}"))
    return samples


def _manifest_samples(manifests, settings: Settings) -> list[list[TrainingSample]]:
    layout = settings.str("learning.layout")
    weights = uniform_baseline_weights(layout)
    config = settings.pipeline(weights)
    if config.classifier.kind == "external":
        config.classifier = ClassifierSource.external({})
    normalize = settings.str("learning.normalize")
    if normalize not in NORMALIZATIONS:
        raise InvalidInputError(f"learning.normalize must be one of {NORMALIZATIONS}")
    groups = []
    for i, m in enumerate(manifests):
        frames = load_frames(read_manifest(m), need_gt=True)
        if layout == "rgbd" and any(f.depth is None for f in frames):
            raise InvalidInputError(f"{m}: rgbd layout needs a depth asset for every frame")
        groups.append(training_samples(frames, config, normalize, prefix=f"{i}:"))
    return groups


def cmd_train_ossvm(args, settings: Settings) -> dict:
    out = _out_dir(args)
    if args.features:
        samples = _read_feature_table(args.features)
    elif args.manifest:
        samples = [s for g in _manifest_samples(args.manifest, settings) for s in g]
    else:
        raise UsageError("train-ossvm needs --features or --manifest")
    cfg = settings.learn_config()
    if not samples:
        raise InvalidInputError("no training samples")
    trainer = train_ossvm_rgbd if samples[0].features_gt.size == 12 else train_ossvm
    start = time.perf_counter()
    w = trainer(samples, cfg)
    elapsed = time.perf_counter() - start
    write_weights(out / "weights.txt", w)
    print(f"trained one-class weights on {len(samples)} samples in {elapsed:.4f} s")
    print("weights " + " ".join(f"{v:.4f}" for v in w.values))
    return {"train.seconds": f"{elapsed:.6f}", "train.samples": str(len(samples))}


def cmd_train_2cssvm(args, settings: Settings) -> dict:
    out = _out_dir(args)
    if not args.manifest:
        raise UsageError("train-2cssvm needs --manifest")
    samples = [s for g in _manifest_samples(args.manifest, settings) for s in g]
    start = time.perf_counter()
    result = run_cutting_plane(samples, settings.learn_config())
    elapsed = time.perf_counter() - start
    write_weights(out / "weights.txt", result.weights)
    rows = [(i + 1, v, result.objectives[i] if i < len(result.objectives) else float("nan"))
            for i, v in enumerate(result.max_violations)]
    write_text_table(out / "iterations.tsv", format_tsv(("iteration", "max_violation", "objective"), rows))
    state = "converged" if result.converged else "stopped at the iteration limit"
    print(f"cutting planes {state} after {result.iterations} iterations ({len(result.constraints)} planes, "
          f"{elapsed:.2f} s)")
    print("weights " + " ".join(f"{v:.4f}" for v in result.weights.values))
    return {"train.seconds": f"{elapsed:.6f}", "train.converged": str(result.converged).lower()}


def cmd_rectify(args, settings: Settings) -> dict:
    out = _out_dir(args)
    if not args.image or not args.hypothesis:
        raise UsageError("rectify needs --image and --hypothesis")
    weights = _load_weights(args.weights, settings.str("learning.layout"))
    config = settings.pipeline(weights)
    image = read_rgb(args.image)
    prob = read_prob_map(args.hypothesis)
    hyp = prob if config.soft else (prob >= config.threshold).astype(np.float64)
    edges = read_edge_map(args.edges) if args.edges else None
    depth = read_depth(args.depth) if args.depth else None
    mask = rectify_frame(image, hyp, config, depth=depth, edges=edges)
    write_mask(out / "rectified.png", mask)
    print(f"wrote {out / 'rectified.png'}")
    return {"rectify.weights": args.weights}


def cmd_propagate(args, settings: Settings) -> dict:
    out = _out_dir(args)
    if not args.manifest:
        raise UsageError("propagate needs --manifest")
    manifest = read_manifest(args.manifest[0])
    weights = _load_weights(args.weights, settings.str("learning.layout"))
    config = settings.pipeline(weights)
    frames = load_frames(manifest)
    if args.keyframe:
        key = read_mask(args.keyframe)
    elif frames and frames[0].gt is not None:
        key = frames[0].gt
    else:
        raise InvalidInputError(f"frame {manifest.frames[0].frame_id!r} has no gt asset and no --keyframe given")
    if config.classifier.kind == "external":
        config.classifier = ClassifierSource.external({})
    result = propagate_sequence(frames, key, config, settings.str("pipeline.mode"))
    (out / "masks").mkdir(exist_ok=True)
    (out / "hypotheses").mkdir(exist_ok=True)
    for fid, mask, hyp in zip(result.frame_ids, result.masks, result.hypotheses):
        write_mask(out / "masks" / f"{fid}.png", mask)
        write_mask(out / "hypotheses" / f"{fid}.png", hyp)
    if any(result.metrics):
        rows = [(k + 1, fid, m["fpr"], m["fnr"], m["boundary_deviation"])
                for k, (fid, m) in enumerate(zip(result.frame_ids, result.metrics)) if m]
        write_text_table(out / "metrics.tsv", format_tsv(("offset", "frame_id", "fpr", "fnr", "boundary_deviation"), rows))
    print(f"propagated {len(result)} frames into {out / 'masks'}")
    return {"propagate.weights": args.weights}


def cmd_evaluate(args, settings: Settings) -> dict:
    out = _out_dir(args)
    if not args.manifest or not args.pred or len(args.manifest) != len(args.pred):
        raise UsageError("evaluate needs matching --manifest and --pred lists")
    per_seq: dict[str, list[list[float]]] = {"boundary_deviation": [], "fpr": [], "fnr": []}
    for mpath, pdir in zip(args.manifest, args.pred):
        manifest = read_manifest(mpath)
        pdir = Path(pdir)
        masks_dir = pdir / "masks" if (pdir / "masks").is_dir() else pdir
        series = {k: [] for k in per_seq}
        for rec in manifest.frames[1:]:
            pred_path = masks_dir / f"{rec.frame_id}.png"
            if not pred_path.is_file():
                raise InvalidInputError(f"frame {rec.frame_id!r}: missing predicted mask {pred_path}")
            m = frame_metrics(read_mask(pred_path), read_mask(rec.require("gt")))
            for k in series:
                series[k].append(m[k])
        for k in per_seq:
            per_seq[k].append(series[k])
    curves = {k: accumulation_curve(v) for k, v in per_seq.items()}
    rows = []
    for i, row in enumerate(curves["boundary_deviation"]):
        rows.append((row.offset, row.mean, row.std, curves["fpr"][i].mean, curves["fnr"][i].mean, row.count))
    table = format_tsv(("offset", "boundary_deviation_mean", "boundary_deviation_std", "fpr_mean", "fnr_mean",
                        "sequences"), rows)
    write_text_table(out / "accumulation.tsv", table)
    sys.stdout.write(table)
    return {}


def cmd_cross_validate(args, settings: Settings) -> dict:
    out = _out_dir(args)
    if not args.manifest:
        raise UsageError("cross-validate needs --manifest (one per sequence)")
    groups = _manifest_samples(args.manifest, settings)
    cfg = settings.learn_config()
    result = cross_validate_prior(groups, settings.floats("cv.grid"), settings.int("cv.folds"), cfg)
    write_text_table(out / "cv.tsv", result.table())
    all_samples = [s for g in groups for s in g]
    cfg.prior_weight = result.best_prior
    w = (train_ossvm_rgbd if all_samples[0].features_gt.size == 12 else train_ossvm)(all_samples, cfg)
    write_weights(out / "weights.txt", w)
    sys.stdout.write(result.table())
    print(f"selected prior {result.best_prior:g}")
    return {"cv.selected_prior": f"{result.best_prior:g}"}


def cmd_synth(args, settings: Settings) -> dict:
    out = _out_dir(args)
    seed = settings.int("seed")
    size = settings.floats("synth.size")
    velocity = settings.floats("synth.velocity")
    if len(velocity) != 2:
        raise InvalidInputError("synth.velocity needs two comma-separated numbers (dx,dy)")
    bias = BiasSpec(settings.float("bias.fp_rate"), settings.float("bias.fn_rate"), settings.int("bias.band"),
                    settings.float("bias.speckle_rate"), seed)
    use_bias = bias.fp_rate > 0 or bias.fn_rate > 0 or bias.speckle_rate > 0
    paths = []
    for i in range(settings.int("synth.sequences")):
        spec = SceneSpec(height=settings.int("synth.height"), width=settings.int("synth.width"),
                         shape=settings.str("synth.shape"), size=tuple(size), velocity=tuple(velocity),
                         rotation=settings.float("synth.rotation"), blur=settings.float("synth.blur"),
                         clutter=settings.float("synth.clutter"), frames=settings.int("synth.frames"),
                         depth=settings.bool("synth.depth"), seed=seed + i)
        seq_dir = out / f"seq_{i:03d}"
        b = BiasSpec(bias.fp_rate, bias.fn_rate, bias.band, bias.speckle_rate, seed + 1000 * i) if use_bias else None
        generate_sequence(spec, seq_dir, b)
        paths.append(seq_dir / "manifest.tsv")
    for p in paths:
        print(p)
    return {}


def cmd_theorem1(args, settings: Settings) -> dict:
    rng = np.random.default_rng(settings.int("seed"))
    n_samples = settings.int("theorem1.samples")
    layout = settings.str("learning.layout")
    n = 11 if layout == "rgb" else 12
    samples = [TrainingSample(rng.random(n) * rng.uniform(0.1, 2.0), f"s{k}") for k in range(n_samples)]
    totals = rng.uniform(0.0, n, n_samples)
    cfg = settings.learn_config()
    cfg.prior_weight = 0.0
    report = theorem1_harness(samples, totals, cfg)
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    if args.out:
        write_text_table(_out_dir(args) / "theorem1.txt", text)
    return {}


COMMANDS = {
    "train-ossvm": cmd_train_ossvm,
    "train-2cssvm": cmd_train_2cssvm,
    "rectify": cmd_rectify,
    "propagate": cmd_propagate,
    "evaluate": cmd_evaluate,
    "cross-validate": cmd_cross_validate,
    "synth": cmd_synth,
    "theorem1": cmd_theorem1,
}


def build_parser() -> Parser:
    parser = Parser(prog="segrect", description="Learn and apply asymmetric segmentation rectification weights.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    common = Parser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    learn = Parser(add_help=False)
    learn.add_argument("--manifest", nargs="+")
    learn.add_argument("--C", type=float, dest="C")
    learn.add_argument("--prior", type=float)
    learn.add_argument("--max-iterations", type=int)
    learn.add_argument("--normalize", choices=NORMALIZATIONS)
    learn.add_argument("--layout", choices=("rgb", "rgbd"))
    learn.add_argument("--classifier", choices=("mixture", "external"))
    learn.add_argument("--components", type=int)
    learn.add_argument("--percentile", type=float)

    apply_ = Parser(add_help=False)
    apply_.add_argument("--weights", default="uniform", help="weight file or 'uniform'")
    apply_.add_argument("--threshold", type=float)
    apply_.add_argument("--rounds", type=int)
    apply_.add_argument("--soft", action="store_const", const=True)

    p = sub.add_parser("train-ossvm", parents=[common, learn], help="one-class training (closed-form QP)")
    p.add_argument("--features", help="whitespace-separated feature vectors, one sample per line")
    sub.add_parser("train-2cssvm", parents=[common, learn], help="two-class training by cutting planes")
    p = sub.add_parser("rectify", parents=[common, apply_], help="rectify one hypothesis mask")
    p.add_argument("--image")
    p.add_argument("--hypothesis", help="mask or probability map")
    p.add_argument("--edges")
    p.add_argument("--depth")
    p.add_argument("--layout", choices=("rgb", "rgbd"))
    p.add_argument("--percentile", type=float)
    p = sub.add_parser("propagate", parents=[common, apply_], help="propagate a keyframe mask through a sequence")
    p.add_argument("--manifest", nargs=1)
    p.add_argument("--keyframe")
    p.add_argument("--mode", choices=("chained", "per-pair"))
    p.add_argument("--classifier", choices=("mixture", "external"))
    p.add_argument("--components", type=int)
    p.add_argument("--layout", choices=("rgb", "rgbd"))
    p.add_argument("--percentile", type=float)
    p = sub.add_parser("evaluate", parents=[common], help="accumulation table from propagated masks")
    p.add_argument("--manifest", nargs="+")
    p.add_argument("--pred", nargs="+", help="propagate output directories, in manifest order")
    p = sub.add_parser("cross-validate", parents=[common, learn], help="choose the edge prior by k-fold CV")
    p.add_argument("--folds", type=int)
    p.add_argument("--grid", help="comma-separated prior weights")
    p = sub.add_parser("synth", parents=[common], help="generate synthetic sequences")
    for flag, kind in (("--sequences", int), ("--frames", int), ("--height", int), ("--width", int),
                       ("--shape", str), ("--size", str), ("--velocity", str), ("--rotation", float),
                       ("--blur", float), ("--clutter", float), ("--fp-rate", float), ("--fn-rate", float),
                       ("--band", int), ("--speckle-rate", float)):
        p.add_argument(flag, type=kind)
    p.add_argument("--depth-maps", action="store_const", const=True)
    p = sub.add_parser("theorem1", parents=[common], help="numerical check of the one-class/two-class equivalence")
    p.add_argument("--samples", type=int)
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--layout", choices=("rgb", "rgbd"))
    return parser


def run_command(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = Settings.resolve(args)
        extra = COMMANDS[args.command](args, settings)
        if args.out:
            write_config(Path(args.out) / "config.txt",
                         {**settings.values, "command": args.command, **(extra or {})})
        return 0
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())
