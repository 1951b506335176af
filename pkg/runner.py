"""
Command-line entry point.
Wires configuration, data loading, training, evaluation and checkpoints together.

    python runner.py train    --config cora.env
    python runner.py eval     --config cora.env --seeds 5
    python runner.py gradcheck --layers 2 --max-rel-error 1e-4
    python runner.py ablate   --config mutag.env --seeds 5
    python runner.py sweep    --config mutag.env --parameter lambda_deg --values 0,0.1,1,10
    python runner.py export-embeddings --config cora.env --layer 2
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import RunConfig, load_config
from data_io import (
    export_embeddings,
    load_checkpoint,
    load_edgelist_dataset,
    load_tu_dataset,
    save_checkpoint,
    tu_features,
)
from errors import (
    ConfigError,
    DataFormatError,
    GraphError,
    NumericalError,
    ShapeError,
)
from evaluation import (
    TASK_METRIC,
    dataset_input_dim,
    evaluate_embeddings,
    make_link_split,
    map_seeds,
    run_ablation,
    run_sensitivity,
    summarize,
)
from gradcheck import run_gradcheck
from models import CitationDataset, TuDataset
from parameters import ParameterStore
from training import embed, init_model_params, train_unsupervised

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

CHECKPOINT_DIR = "checkpoint"
LOSS_LOG = "loss_log.txt"
RUN_RECORD = "config.json"

# RunConfig field -> (flag type, help)
CONFIG_FLAGS: Dict[str, tuple] = {
    "task": (str, "node | link | graph"),
    "dataset_name": (str, "Name used in tables and exports"),
    "edge_file": (str, "Edge list (one 0-based pair per line)"),
    "feature_file": (str, "Node feature rows"),
    "label_file": (str, "Node labels"),
    "train_split_file": (str, "Shipped train node indices"),
    "val_split_file": (str, "Shipped validation node indices"),
    "test_split_file": (str, "Shipped test node indices"),
    "tu_directory": (str, "Directory with <NAME>_A.txt etc."),
    "max_degree_bucket": (int, "Degree one-hot width - 1 for featureless graphs"),
    "layer_kind": (str, "gcn | gin | sum"),
    "num_layers": (int, "Encoder depth L"),
    "hidden_dim": (int, "Encoder width for every layer"),
    "decoder_hidden": (int, "Hidden width of the decoder FNNs"),
    "lambda_nei": (float, "Weight of the neighborhood KL loss"),
    "lambda_deg": (float, "Weight of the degree loss"),
    "learning_rate": (float, "Adam learning rate"),
    "max_epochs": (int, "Training epoch cap"),
    "patience": (int, "Plateau patience in epochs"),
    "tolerance": (float, "Relative improvement that resets the plateau counter"),
    "seed": (int, "Base random seed"),
    "checkpoint_every": (int, "Also checkpoint every k epochs (0 = only at the end)"),
    "link_scorer": (str, "inner | mlp"),
    "node_ratios": (str, "Generated node split, e.g. 0.6,0.2,0.2"),
    "link_ratios": (str, "Edge split, e.g. 0.85,0.05,0.1"),
    "graph_ratios": (str, "Graph split, e.g. 0.5,0.2,0.3"),
    "eval_seeds": (int, "Number of consecutive seeds starting at --seed"),
    "workers": (int, "Threads for seed-parallel evaluation"),
    "output_dir": (str, "Where artifacts are written"),
}

FLAG_NAMES = {"eval_seeds": "--seeds"}

Dataset = Union[CitationDataset, TuDataset]


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s | %(name)s | %(levelname)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="KEY=value configuration file")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    group = common.add_argument_group("configuration overrides")
    for field, (flag_type, help_text) in CONFIG_FLAGS.items():
        flag = FLAG_NAMES.get(field, "--" + field.replace("_", "-"))
        group.add_argument(flag, dest=field, type=flag_type, default=None, help=help_text)

    parser = argparse.ArgumentParser(description="Variational graph autoencoder with an inverse-GNN decoder")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("train", parents=[common], help="Unsupervised training; writes a checkpoint")

    p_eval = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint's frozen embeddings")
    p_eval.add_argument("--checkpoint", type=Path, default=None)

    p_grad = commands.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    p_grad.add_argument("--layers", type=int, default=2)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--max-rel-error", dest="max_rel_error", type=float, default=1e-4)

    commands.add_parser("ablate", parents=[common], help="Loss-term ablation over seeds")

    p_sweep = commands.add_parser("sweep", parents=[common], help="λ sensitivity sweep over seeds")
    p_sweep.add_argument("--parameter", choices=["lambda_nei", "lambda_deg"], required=True)
    p_sweep.add_argument("--values", required=True, help="Comma-separated values")

    p_export = commands.add_parser("export-embeddings", parents=[common], help="Write embeddings as text")
    p_export.add_argument("--checkpoint", type=Path, default=None)
    p_export.add_argument("--layer", type=int, default=None, help="Layer l of H^(l) (default: last)")
    p_export.add_argument("--out", type=Path, default=None)
    return parser


# --- helpers ------------------------------------------------------------

def load_dataset(config: RunConfig) -> Dataset:
    if config.task == "graph":
        return load_tu_dataset(config.tu_directory, config.dataset_name)
    split_files = None
    if config.val_split_file is not None:
        split_files = (config.train_split_file, config.val_split_file, config.test_split_file)
    return load_edgelist_dataset(
        config.edge_file,
        feature_file=config.feature_file,
        label_file=config.label_file,
        split_files=split_files,
        name=config.dataset_name,
    )


def seed_list(config: RunConfig) -> List[int]:
    return list(range(config.seed, config.seed + config.eval_seeds))


def write_run_record(config: RunConfig, **extra: Any) -> Path:
    """Echo the effective configuration next to the command's outputs."""
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / RUN_RECORD
    with open(path, "w") as f:
        json.dump({"config": config.to_record(), **extra}, f, indent=2, sort_keys=True)
    return path


def write_table(frame: pd.DataFrame, config: RunConfig, name: str) -> Path:
    path = Path(config.output_dir) / f"{name}.tsv"
    frame.to_csv(path, sep="\t", index=False)
    print(frame.to_string(index=False))
    logger.info(f"Wrote {path}")
    return path


def training_inputs(dataset: Dataset, config: RunConfig):
    """(graphs, features, link split or None) exactly as training saw them."""
    if isinstance(dataset, TuDataset):
        return dataset.graphs, tu_features(dataset, config.max_degree_bucket), None
    if config.task == "link":
        split, train_graph = make_link_split(dataset.graph, config.link_ratios, config.seed)
        return train_graph, dataset.features, split
    return dataset.graph, dataset.features, None


def restore_params(checkpoint_path: Path, input_dim: int):
    """Load a checkpoint and check it fits a dataset with `input_dim` feature columns."""
    checkpoint = load_checkpoint(checkpoint_path)
    try:
        trained = RunConfig(**checkpoint.config)
    except ValidationError as e:
        raise ConfigError(f"Checkpoint config is not a valid run configuration: {e}") from e
    train_config = trained.train_config(input_dim)

    expected = init_model_params(train_config)
    problems = [
        f"{name}: checkpoint {checkpoint.params[name].shape if name in checkpoint.params else 'missing'}, "
        f"dataset needs {value.shape}"
        for name, value in expected.items()
        if name not in checkpoint.params or checkpoint.params[name].shape != value.shape
    ]
    if problems:
        raise ConfigError("Checkpoint is incompatible with the dataset: " + "; ".join(problems[:5]))
    return checkpoint, trained, train_config


# --- commands -------------------------------------------------------------

def cmd_train(config: RunConfig) -> int:
    dataset = load_dataset(config)
    train_config = config.train_config(dataset_input_dim(dataset, config))
    output_dir = Path(config.output_dir)
    record = config.to_record()
    graphs, features, _ = training_inputs(dataset, config)

    def on_epoch(epoch: int, params: ParameterStore, breakdown, rng) -> None:
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(
                params, record, rng, output_dir / f"{CHECKPOINT_DIR}_epoch_{epoch:04d}",
                extra={"epoch": epoch, "total_loss": breakdown.total},
            )

    store, _, report = train_unsupervised(
        graphs,
        features,
        train_config,
        log_file=output_dir / LOSS_LOG,
        on_epoch=on_epoch,
        log_header="config=" + json.dumps(record, sort_keys=True),
    )
    save_checkpoint(
        store, record, report.rng, output_dir / CHECKPOINT_DIR,
        extra={"epochs": report.epochs, "stop_reason": report.stop_reason, "final_loss": report.final.total},
    )
    write_run_record(config, epochs=report.epochs, stop_reason=report.stop_reason)
    write_table(report.to_frame().tail(1), config, "final_loss")
    report.to_frame().to_csv(output_dir / "loss_history.tsv", sep="\t", index=False)
    logger.info(f"Training finished after {report.epochs} epochs ({report.stop_reason})")
    return EXIT_OK


def cmd_eval(config: RunConfig, checkpoint_path: Optional[Path]) -> int:
    dataset = load_dataset(config)
    checkpoint_path = checkpoint_path or Path(config.output_dir) / CHECKPOINT_DIR
    checkpoint, trained, train_config = restore_params(checkpoint_path, dataset_input_dim(dataset, config))

    # rebuild the training inputs with the settings the checkpoint was trained under
    graphs, features, link_split = training_inputs(
        dataset, config.model_copy(update={"seed": trained.seed, "link_ratios": trained.link_ratios})
    )
    embeddings = embed(graphs, features, checkpoint.params, train_config)

    seeds = seed_list(config)
    results = map_seeds(
        lambda s: evaluate_embeddings(config.task, dataset, embeddings, config, s, link_split=link_split),
        seeds,
        config.workers,
    )
    metric = TASK_METRIC[config.task]
    rows = [
        summarize(part, dataset.name, metric, [r[part] for r in results], seeds)
        for part in ("train", "val", "test")
    ]
    frame = pd.DataFrame(rows).rename(columns={"variant": "partition"})
    write_run_record(config, checkpoint=str(checkpoint_path))
    write_table(frame, config, "metrics")
    return EXIT_OK


def cmd_gradcheck(config: RunConfig, layers: int, step: float, tolerance: float) -> int:
    report = run_gradcheck(
        num_layers=layers,
        layer_kind=config.effective_layer_kind,
        seed=config.seed,
        step=step,
        tolerance=tolerance,
    )
    write_run_record(config, layers=layers, worst_relative_error=report.worst, passed=report.passed)
    write_table(report.to_frame(), config, "gradcheck")
    return EXIT_OK if report.passed else EXIT_GRADCHECK_FAILED


def cmd_ablate(config: RunConfig) -> int:
    dataset = load_dataset(config)
    frame = run_ablation(dataset, config.task, config, seed_list(config))
    write_run_record(config)
    write_table(frame, config, "ablation")
    return EXIT_OK


def parse_values(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--values must be comma-separated numbers, got '{text}'") from e
    if not values:
        raise ConfigError("--values is empty")
    return values


def cmd_sweep(config: RunConfig, parameter: str, values: Sequence[float]) -> int:
    dataset = load_dataset(config)
    frame = run_sensitivity(dataset, config.task, config, parameter, values, seed_list(config))
    write_run_record(config, parameter=parameter, values=list(values))
    write_table(frame, config, f"sweep_{parameter}")
    return EXIT_OK


def cmd_export(config: RunConfig, checkpoint_path: Optional[Path], layer: Optional[int], out: Optional[Path]) -> int:
    dataset = load_dataset(config)
    checkpoint_path = checkpoint_path or Path(config.output_dir) / CHECKPOINT_DIR
    checkpoint, trained, train_config = restore_params(checkpoint_path, dataset_input_dim(dataset, config))
    graphs, features, _ = training_inputs(
        dataset, config.model_copy(update={"seed": trained.seed, "link_ratios": trained.link_ratios})
    )
    embeddings = embed(graphs, features, checkpoint.params, train_config)

    num_layers = train_config.encoder.num_layers
    layer = num_layers if layer is None else layer
    if not 0 <= layer <= num_layers:
        raise ConfigError(f"--layer must be in 0..{num_layers}, got {layer}")

    if isinstance(embeddings, list):
        matrix = np.vstack([stack.layers[layer].value.sum(axis=0) for stack in embeddings])
    else:
        matrix = embeddings.layers[layer].value
    out = out or Path(config.output_dir) / f"{dataset.name}_layer{layer}.txt"
    export_embeddings(out, matrix, dataset.name, layer)
    write_run_record(config, checkpoint=str(checkpoint_path), export=str(out), layer=layer)
    logger.info(f"Exported {matrix.shape[0]} x {matrix.shape[1]} embeddings to {out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        overrides = {field: getattr(args, field) for field in CONFIG_FLAGS}
        config = load_config(args.config, overrides, check_paths=args.command != "gradcheck")
        logger.info(f"Running '{args.command}' (task={config.task}, dataset={config.dataset_name})")

        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint)
        if args.command == "gradcheck":
            return cmd_gradcheck(config, args.layers, args.step, args.max_rel_error)
        if args.command == "ablate":
            return cmd_ablate(config)
        if args.command == "sweep":
            return cmd_sweep(config, args.parameter, parse_values(args.values))
        return cmd_export(config, args.checkpoint, args.layer, args.out)

    except (ConfigError, ShapeError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (DataFormatError, GraphError) as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
