"""Command-line front end: train -> calibrate -> quantize -> evaluate -> search.

Configuration is a flat key=value file; every flag and key has a default,
and the effective configuration is echoed into each output artifact
("# key=value" header lines in CSVs, a "config" field in JSON files), so
any artifact can be reproduced from itself plus the seed.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from gruq import calib as calib_mod
from gruq import dataio, evolve, qgru, refnet
from gruq.blocks import NUM_BLOCKS

log = logging.getLogger(__name__)


class UsageError(ValueError):
    """Invalid flags, config values, or missing input files."""


@dataclass
class RunConfig:
    task: str = "synthetic"
    seed: int = 42
    out: str = "runs"
    jobs: int = 1

    hidden_size: int = 16

    synthetic_classes: int = 8
    synthetic_timesteps: int = 12
    synthetic_features: int = 8
    synthetic_per_class: int = 150
    synthetic_noise_std: float = 0.1

    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    mnist_subset: int = 0

    split_train: float = 0.7
    split_val: float = 0.15
    split_test: float = 0.15

    train_batch_size: int = 256
    train_epochs: int = 50
    train_learning_rate: float = 1e-3
    train_validation_fraction: float = 0.05
    train_validate_every: int = 5

    qat_batch_size: int = 1024
    qat_epochs: int = 12
    qat_learning_rate: float = 5e-5
    qat_train_fraction: float = 0.1
    qat_validation_fraction: float = 0.05
    qat_validate_every: int = 3

    calib_fraction: float = 1.0

    population_size: int = 32
    generations: int = 20
    crossover_probability: float = 0.9
    crossover_index: float = 15.0
    mutation_probability: float = 1.0 / NUM_BLOCKS
    mutation_index: float = 20.0
    finetune_mode: str = "ptq"
    knee_min_size_complement: float = 0.25


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values: dict = {}
    if path:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key=value")
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()

    field_types = {f.name: f.type for f in fields(RunConfig)}
    cfg = RunConfig()
    for key, raw in values.items():
        if key not in field_types:
            raise UsageError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            setattr(cfg, key, type(current)(raw))
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {raw!r} ({exc})") from exc
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def config_items(cfg: RunConfig):
    return sorted((f.name, getattr(cfg, f.name)) for f in fields(cfg))


def _config_header(cfg: RunConfig) -> str:
    return "".join(f"# {k}={v}\n" for k, v in config_items(cfg))


def _config_dict(cfg: RunConfig) -> dict:
    return {k: v for k, v in config_items(cfg)}


# ---------------------------------------------------------------------------
# data and artifact plumbing


def load_task(cfg: RunConfig):
    """Return (train, val, test) splits for the configured task."""
    if cfg.task == "synthetic":
        ds = dataio.make_synthetic_task(
            cfg.synthetic_classes, cfg.synthetic_timesteps,
            cfg.synthetic_features, cfg.synthetic_per_class,
            cfg.synthetic_noise_std, seed=cfg.seed)
        return dataio.split(ds, (cfg.split_train, cfg.split_val, cfg.split_test),
                            seed=cfg.seed)
    if cfg.task == "mnist-rows":
        for key in ("mnist_train_images", "mnist_train_labels",
                    "mnist_test_images", "mnist_test_labels"):
            path = getattr(cfg, key)
            if not path:
                raise UsageError(f"{key} must be set for task mnist-rows")
            if not os.path.exists(path):
                raise UsageError(f"{key}: file not found: {path}")
        train_full = dataio.load_mnist_idx(cfg.mnist_train_images,
                                           cfg.mnist_train_labels)
        test = dataio.load_mnist_idx(cfg.mnist_test_images,
                                     cfg.mnist_test_labels)
        if cfg.mnist_subset > 0:
            rng = np.random.default_rng(cfg.seed)
            idx = rng.permutation(len(train_full))[:cfg.mnist_subset]
            train_full = dataio.SequenceDataset(
                X=train_full.X[idx], y=train_full.y[idx],
                name=train_full.name, num_classes=train_full.num_classes)
        # the IDX test set is held out as-is; carve validation from train
        train, val = dataio.split(train_full, (1.0 - cfg.split_val, cfg.split_val),
                                  seed=cfg.seed)
        return train, val, test
    raise UsageError(f"unknown task {cfg.task!r}")


def _paths(cfg: RunConfig) -> dict:
    out = cfg.out
    return {name: os.path.join(out, name + ext) for name, ext in (
        ("weights", ".json"), ("stats", ".json"), ("archive", ".csv"),
        ("front", ".csv"), ("best_scheme", ".json"), ("baselines", ".csv"),
        ("qmodel", ".json"))}


def _require(path: str, what: str):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path} (run the producing command first)")


def _train_config(cfg: RunConfig) -> refnet.TrainConfig:
    return refnet.TrainConfig(
        batch_size=cfg.train_batch_size, epochs=cfg.train_epochs,
        learning_rate=cfg.train_learning_rate,
        validation_fraction=cfg.train_validation_fraction,
        validate_every=cfg.train_validate_every, seed=cfg.seed)


def _qat_config(cfg: RunConfig) -> refnet.TrainConfig:
    return refnet.TrainConfig(
        batch_size=cfg.qat_batch_size, epochs=cfg.qat_epochs,
        learning_rate=cfg.qat_learning_rate,
        validation_fraction=cfg.qat_validation_fraction,
        validate_every=cfg.qat_validate_every,
        train_fraction=cfg.qat_train_fraction, seed=cfg.seed)


def parse_genome(text: str):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    try:
        genome = [int(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"genome must be comma-separated integers: {text!r}") from exc
    if len(genome) != NUM_BLOCKS:
        raise UsageError(f"genome must have {NUM_BLOCKS} genes, got {len(genome)}")
    if any(not (2 <= g <= 8) for g in genome):
        raise UsageError(f"genes must lie in [2, 8]: {text!r}")
    return tuple(genome)


def _make_context(cfg: RunConfig, weights, stats, train_ds, val_ds) -> evolve.EvalContext:
    return evolve.EvalContext(
        weights=weights, stats=stats,
        val_X=val_ds.X, val_y=val_ds.y,
        finetune_mode=cfg.finetune_mode,
        qat_data=train_ds, qat_config=_qat_config(cfg), seed=cfg.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig) -> int:
    train_ds, val_ds, test_ds = load_task(cfg)
    dims = refnet.ModelDims(input_features=train_ds.features,
                            hidden_size=cfg.hidden_size,
                            num_classes=train_ds.num_classes)
    weights = refnet.train(train_ds, _train_config(cfg), dims=dims)
    os.makedirs(cfg.out, exist_ok=True)
    paths = _paths(cfg)
    refnet.save_weights(weights, paths["weights"])
    with open(paths["weights"]) as f:
        doc = json.load(f)
    doc["config"] = _config_dict(cfg)
    with open(paths["weights"], "w") as f:
        json.dump(doc, f)

    print(f"train_accuracy={refnet.accuracy_float(weights, train_ds.X, train_ds.y):.4f}")
    print(f"val_accuracy={refnet.accuracy_float(weights, val_ds.X, val_ds.y):.4f}")
    print(f"test_accuracy={refnet.accuracy_float(weights, test_ds.X, test_ds.y):.4f}")
    print(f"weights={paths['weights']}")
    return 0


def cmd_calibrate(cfg: RunConfig, fraction: float | None = None) -> int:
    paths = _paths(cfg)
    _require(paths["weights"], "float model file")
    weights = refnet.load_weights(paths["weights"])
    train_ds, _, _ = load_task(cfg)
    stats = calib_mod.calibrate(weights, train_ds.X,
                                fraction=fraction or cfg.calib_fraction,
                                seed=cfg.seed)
    stats.to_json(paths["stats"])
    with open(paths["stats"]) as f:
        doc = json.load(f)
    doc["config"] = _config_dict(cfg)
    with open(paths["stats"], "w") as f:
        json.dump(doc, f)
    print(f"stats={paths['stats']} sites={len(stats.minmax)} "
          f"samples={stats.sample_count}")
    return 0


def _load_stats(path) -> calib_mod.CalibrationStats:
    return calib_mod.CalibrationStats.from_json(path)


def _build_model(cfg: RunConfig, genome_bits):
    paths = _paths(cfg)
    _require(paths["weights"], "float model file")
    _require(paths["stats"], "calibration stats file")
    weights = refnet.load_weights(paths["weights"])
    stats = _load_stats(paths["stats"])
    return weights, stats, qgru.quantize_model(weights, stats, genome_bits)


def cmd_quantize_eval(cfg: RunConfig, bits: int | None, genome: str | None,
                      finetune: str = "none") -> int:
    if (bits is None) == (genome is None):
        raise UsageError("exactly one of --bits or --genome is required")
    if bits is not None:
        if not (2 <= bits <= 16):
            raise UsageError(f"--bits must lie in [2, 16], got {bits}")
        genome_bits = (bits,) * NUM_BLOCKS
    else:
        genome_bits = parse_genome(genome)

    paths = _paths(cfg)
    _require(paths["weights"], "float model file")
    _require(paths["stats"], "calibration stats file")
    weights = refnet.load_weights(paths["weights"])
    stats = _load_stats(paths["stats"])
    train_ds, _, test_ds = load_task(cfg)

    if finetune == "qat":
        weights = refnet.qat_finetune(weights, genome_bits, train_ds,
                                      _qat_config(cfg))
        stats = calib_mod.calibrate(weights, train_ds.X,
                                    fraction=cfg.calib_fraction, seed=cfg.seed)
    model = qgru.quantize_model(weights, stats, genome_bits)

    accuracy = qgru.quantized_accuracy(model, test_ds.X, test_ds.y)
    size_bits = qgru.model_size_bits(genome_bits, weights.dims)
    complement = qgru.size_complement(genome_bits, weights.dims)
    print(f"accuracy={accuracy:.4f}")
    print(f"size_bits={size_bits}")
    print(f"size_complement={complement:.6f}")
    return 0


ARCHIVE_COLUMNS = ("generation,index,accuracy,size_bits,size_complement,"
                   + ",".join(f"g{i}" for i in range(NUM_BLOCKS)))


def _archive_row(ind: evolve.Individual, index: int, dims) -> str:
    acc, complement = ind.fitness
    size_bits = qgru.model_size_bits(ind.genome, dims)
    genes = ",".join(str(g) for g in ind.genome)
    return (f"{ind.generation_born},{index},{acc!r},{size_bits},"
            f"{complement!r},{genes}\n")


def cmd_search(cfg: RunConfig) -> int:
    paths = _paths(cfg)
    _require(paths["weights"], "float model file")
    _require(paths["stats"], "calibration stats file")
    weights = refnet.load_weights(paths["weights"])
    stats = _load_stats(paths["stats"])
    train_ds, val_ds, _ = load_task(cfg)
    dims = weights.dims

    ctx = _make_context(cfg, weights, stats, train_ds, val_ds)
    search_cfg = evolve.SearchConfig(
        population_size=cfg.population_size, generations=cfg.generations,
        crossover_probability=cfg.crossover_probability,
        crossover_index=cfg.crossover_index,
        mutation_probability=cfg.mutation_probability,
        mutation_index=cfg.mutation_index,
        seed=cfg.seed, finetune_mode=cfg.finetune_mode)

    os.makedirs(cfg.out, exist_ok=True)
    with open(paths["archive"], "w") as archive_file:
        archive_file.write(_config_header(cfg))
        archive_file.write(ARCHIVE_COLUMNS + "\n")
        archive_file.flush()

        def on_evaluated(ind, index):
            # flushed per row so interrupted searches keep a usable archive
            archive_file.write(_archive_row(ind, index, dims))
            archive_file.flush()

        result = evolve.run_nsga2(search_cfg, evolve.make_evaluator(ctx),
                                  jobs=cfg.jobs, on_evaluated=on_evaluated)

    with open(paths["front"], "w") as f:
        f.write(_config_header(cfg))
        f.write(ARCHIVE_COLUMNS + "\n")
        for index, ind in enumerate(result.front):
            f.write(_archive_row(ind, index, dims))

    knee = _knee_point(result.front, cfg.knee_min_size_complement)
    scheme = {
        "version": 1,
        "genome": list(knee.genome) if knee else None,
        "accuracy": knee.fitness[0] if knee else None,
        "size_bits": qgru.model_size_bits(knee.genome, dims) if knee else None,
        "size_complement": knee.fitness[1] if knee else None,
        "knee_min_size_complement": cfg.knee_min_size_complement,
        "config": _config_dict(cfg),
    }
    with open(paths["best_scheme"], "w") as f:
        json.dump(scheme, f, indent=2)

    print(f"archive={paths['archive']} rows={len(result.archive)}")
    print(f"front={paths['front']} rows={len(result.front)}")
    print(f"best_scheme={paths['best_scheme']}")
    return 0


def _knee_point(front, min_complement):
    eligible = [ind for ind in front if ind.fitness[1] >= min_complement]
    pool = eligible or list(front)
    if not pool:
        return None
    return max(pool, key=lambda ind: (ind.fitness[0], ind.fitness[1]))


def cmd_baseline_sweep(cfg: RunConfig) -> int:
    paths = _paths(cfg)
    _require(paths["weights"], "float model file")
    _require(paths["stats"], "calibration stats file")
    weights = refnet.load_weights(paths["weights"])
    stats = _load_stats(paths["stats"])
    train_ds, val_ds, _ = load_task(cfg)
    ctx = _make_context(cfg, weights, stats, train_ds, val_ds)
    eval_fn = evolve.make_evaluator(ctx)

    os.makedirs(cfg.out, exist_ok=True)
    with open(paths["baselines"], "w") as f:
        f.write(_config_header(cfg))
        f.write("bits,accuracy,size_bits,size_complement\n")
        for bits in range(3, 9):
            genome = (bits,) * NUM_BLOCKS
            acc, complement = eval_fn(genome)
            size_bits = qgru.model_size_bits(genome, weights.dims)
            f.write(f"{bits},{acc!r},{size_bits},{complement!r}\n")
            print(f"bits={bits} accuracy={acc:.4f} size_bits={size_bits}")
    print(f"baselines={paths['baselines']}")
    return 0


def cmd_export(cfg: RunConfig, bits: int | None, genome: str | None) -> int:
    if (bits is None) == (genome is None):
        raise UsageError("exactly one of --bits or --genome is required")
    if bits is not None:
        if not (2 <= bits <= 16):
            raise UsageError(f"--bits must lie in [2, 16], got {bits}")
        genome_bits = (bits,) * NUM_BLOCKS
    else:
        genome_bits = parse_genome(genome)
    _, _, model = _build_model(cfg, genome_bits)
    paths = _paths(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    qgru.save_model(model, paths["qmodel"], extra={"config": _config_dict(cfg)})
    print(f"qmodel={paths['qmodel']}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gruq",
        description="Mixed-precision integer GRU quantization and bit-width search")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--task", choices=["synthetic", "mnist-rows"], default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel fitness evaluations")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", help="train the float reference model")
    p = sub.add_parser("calibrate", help="record per-site activation extrema")
    p.add_argument("--fraction", type=float, default=None)

    p = sub.add_parser("quantize-eval", help="build and evaluate one scheme")
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--genome", default=None)
    p.add_argument("--finetune", choices=["none", "qat"], default="none")

    sub.add_parser("baseline-sweep", help="homogeneous baselines at 3..8 bits")
    sub.add_parser("search", help="NSGA-II bit-width search")

    p = sub.add_parser("export", help="write the quantized model JSON")
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--genome", default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRUQ_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, {
            "seed": args.seed, "task": args.task, "out": args.out,
            "jobs": args.jobs})
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, fraction=args.fraction)
        if args.command == "quantize-eval":
            return cmd_quantize_eval(cfg, args.bits, args.genome, args.finetune)
        if args.command == "baseline-sweep":
            return cmd_baseline_sweep(cfg)
        if args.command == "search":
            return cmd_search(cfg)
        if args.command == "export":
            return cmd_export(cfg, args.bits, args.genome)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
