"""
Shared pytest fixtures.
"""
import os
from pathlib import Path
from typing import Optional

import numpy as np
import pytest

from config import EncoderConfig, TrainConfig
from graph_core import build_graph, complete_graph, erdos_renyi_graph, path_graph, star_graph

CORA_DIR_ENV = "GRAPHVAE_CORA_DIR"
TU_DIR_ENV = "GRAPHVAE_TU_DIR"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: benchmark-scale run on a real dataset")


def dataset_dir(env_name: str) -> Optional[Path]:
    """Directory named by an environment variable, or None when unset / missing."""
    value = os.environ.get(env_name)
    if not value or not Path(value).is_dir():
        return None
    return Path(value)


@pytest.fixture
def triangle():
    return complete_graph(3)


@pytest.fixture
def p5():
    return path_graph(5)


@pytest.fixture
def p3():
    return path_graph(3)


@pytest.fixture
def star4():
    return star_graph(4)


@pytest.fixture
def two_edges():
    return build_graph(4, [(0, 1), (2, 3)])


@pytest.fixture
def er12():
    return erdos_renyi_graph(12, 0.3, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_train_config():
    """Narrow model that trains in well under a second per run."""
    def make(input_dim: int, layer_kind: str = "gcn", num_layers: int = 2, width: int = 8, **changes):
        encoder = EncoderConfig(layer_kind=layer_kind, dims=(input_dim,) + (width,) * num_layers)
        values = dict(encoder=encoder, decoder_hidden=8, max_epochs=50, patience=50, seed=0)
        values.update(changes)
        return TrainConfig(**values)
    return make


@pytest.fixture
def write_files(tmp_path):
    """Write {relative name: text} into tmp_path and return the directory."""
    def write(files):
        for name, text in files.items():
            path = tmp_path / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        return tmp_path
    return write
