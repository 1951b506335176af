"""
Benchmark-scale runs on real datasets.

Skipped unless the dataset directories are provided:
    GRAPHVAE_CORA_DIR  edges.txt, features.txt, labels.txt (+ optional val/test.txt, train.txt)
    GRAPHVAE_TU_DIR    MUTAG/MUTAG_A.txt etc.
"""
import numpy as np
import pytest

from config import RunConfig
from conftest import CORA_DIR_ENV, TU_DIR_ENV, dataset_dir
from data_io import load_edgelist_dataset, load_tu_dataset
from evaluation import map_seeds, run_ablation, run_seed

CORA_DIR = dataset_dir(CORA_DIR_ENV)
TU_DIR = dataset_dir(TU_DIR_ENV)

needs_cora = pytest.mark.skipif(CORA_DIR is None, reason=f"{CORA_DIR_ENV} not set")
needs_mutag = pytest.mark.skipif(
    TU_DIR is None or not (TU_DIR / "MUTAG").is_dir(), reason=f"{TU_DIR_ENV}/MUTAG not available"
)

MUTAG_SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(scope="module")
def cora():
    split_files = None
    if (CORA_DIR / "val.txt").is_file() and (CORA_DIR / "test.txt").is_file():
        train = CORA_DIR / "train.txt"
        split_files = (train if train.is_file() else None, CORA_DIR / "val.txt", CORA_DIR / "test.txt")
    return load_edgelist_dataset(
        CORA_DIR / "edges.txt",
        feature_file=CORA_DIR / "features.txt",
        label_file=CORA_DIR / "labels.txt",
        split_files=split_files,
        name="cora",
    )


@pytest.fixture(scope="module")
def mutag():
    return load_tu_dataset(TU_DIR / "MUTAG", "MUTAG")


@pytest.mark.slow
@needs_cora
def test_cora_node_accuracy(cora):
    config = RunConfig(task="node", dataset_name="cora")
    assert run_seed("node", cora, config, seed=0)["test"] >= 0.80


@pytest.mark.slow
@needs_cora
def test_cora_link_auc(cora):
    config = RunConfig(task="link", dataset_name="cora")
    assert run_seed("link", cora, config, seed=0)["test"] >= 0.90


@pytest.mark.slow
@needs_mutag
def test_mutag_graph_accuracy(mutag):
    config = RunConfig(task="graph", dataset_name="MUTAG", workers=len(MUTAG_SEEDS))
    results = map_seeds(lambda s: run_seed("graph", mutag, config, s), MUTAG_SEEDS, config.workers)
    assert np.mean([r["test"] for r in results]) >= 0.85


@pytest.mark.slow
@needs_mutag
def test_mutag_ablation_direction(mutag):
    config = RunConfig(task="graph", dataset_name="MUTAG", workers=len(MUTAG_SEEDS))
    table = run_ablation(mutag, "graph", config, MUTAG_SEEDS).set_index("variant")
    assert table.loc["full", "mean"] >= table.loc["no_nei_no_deg", "mean"] - 0.02


@pytest.mark.slow
@needs_mutag
def test_mutag_runs_are_reproducible(mutag):
    config = RunConfig(task="graph", dataset_name="MUTAG", max_epochs=20)
    assert run_seed("graph", mutag, config, 3) == run_seed("graph", mutag, config, 3)
