"""
Tests for the unsupervised training loop, convergence rule and loss log.
"""
import dataclasses
import logging

import numpy as np
import pytest

from errors import ConfigError, ShapeError, TrainingDivergedError
from graph_core import complete_graph, disjoint_union, erdos_renyi_graph, path_graph
from training import (
    embed,
    has_converged,
    init_model_params,
    model_loss,
    parse_loss_log,
    setup_loss_logging,
    train_unsupervised,
)


def features(n, width=4, seed=0):
    return np.random.default_rng(seed).standard_normal((n, width))


# --- has_converged -----------------------------------------------------------------

def test_decreasing_history_not_converged():
    assert not has_converged([10.0, 9.0, 8.0, 7.0, 6.0, 5.0], tolerance=1e-4, patience=3)


def test_constant_history_converged():
    assert has_converged([5.0] * 6, tolerance=1e-4, patience=3)


def test_flat_tail_converges_after_patience():
    history = [10.0, 9.0, 9.0001, 9.0002]
    assert not has_converged(history, tolerance=1e-3, patience=3)
    assert has_converged(history + [9.0003], tolerance=1e-3, patience=3)


def test_small_improvements_do_not_reset():
    history = [1.0, 0.99999, 0.99998, 0.99997]
    assert has_converged(history, tolerance=1e-3, patience=3)


def test_empty_history_rejected():
    with pytest.raises(ValueError):
        has_converged([], tolerance=1e-4, patience=1)


# --- train_unsupervised --------------------------------------------------------------

def test_zero_epochs_rejected(er12, small_train_config):
    with pytest.raises(ConfigError):
        train_unsupervised(er12, features(12), small_train_config(4, max_epochs=0))


def test_one_epoch_runs_one_step(er12, small_train_config):
    config = small_train_config(4, max_epochs=1)
    before = init_model_params(config)
    store, stack, report = train_unsupervised(er12, features(12), config)
    assert report.epochs == 1
    assert len(report.history) == 1
    assert report.stop_reason == "max_epochs"
    assert any(not np.array_equal(store[name], before[name]) for name in before)
    assert stack.num_layers == 2


def test_training_is_deterministic(er12, small_train_config):
    config = small_train_config(4, max_epochs=15)
    runs = [train_unsupervised(er12, features(12), config) for _ in range(2)]
    for name in runs[0][0].names():
        np.testing.assert_array_equal(runs[0][0][name], runs[1][0][name])
    assert [b.total for b in runs[0][2].history] == [b.total for b in runs[1][2].history]


def test_different_seeds_differ(er12, small_train_config):
    a, _, _ = train_unsupervised(er12, features(12), small_train_config(4, max_epochs=2, seed=0))
    b, _, _ = train_unsupervised(er12, features(12), small_train_config(4, max_epochs=2, seed=1))
    assert not np.array_equal(a["encoder.0.weight"], b["encoder.0.weight"])


def test_loss_decreases(small_train_config):
    improved = 0
    for seed in range(10):
        g = erdos_renyi_graph(12, 0.3, seed=seed)
        config = small_train_config(
            4, max_epochs=200, patience=200, tolerance=0.0, learning_rate=1e-2, seed=seed
        )
        _, _, report = train_unsupervised(g, features(12, seed=seed), config)
        assert report.epochs == 200
        if report.history[-1].total < report.history[0].total:
            improved += 1
    assert improved >= 9


def test_plateau_stops_early(er12, small_train_config):
    config = small_train_config(4, max_epochs=500, patience=3, tolerance=0.5)
    _, _, report = train_unsupervised(er12, features(12), config)
    assert report.stop_reason == "converged"
    assert report.epochs < 500


def test_zero_point_is_a_fixed_point(er12, small_train_config):
    config = small_train_config(4, lambda_deg=0.0, max_epochs=3)
    store = init_model_params(config)
    for name in store.names("decoder"):
        store[name][...] = 0.0
    before = store.copy()

    trained, _, report = train_unsupervised(er12, np.zeros((12, 4)), config, params=store, sample=False)
    assert all(b.total == 0.0 for b in report.history)
    for name in before:
        np.testing.assert_array_equal(trained[name], before[name])


def test_divergence_reports_epoch(er12, small_train_config):
    x = features(12)
    x[3, 1] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train_unsupervised(er12, x, small_train_config(4, max_epochs=5))
    assert exc.value.epoch == 1


def test_final_embeddings_are_noise_free(er12, small_train_config):
    config = small_train_config(4, max_epochs=5)
    store, stack, _ = train_unsupervised(er12, features(12), config)
    again = embed(er12, features(12), store, config)
    for a, b in zip(stack.layers, again.layers):
        np.testing.assert_array_equal(a.value, b.value)


def test_epoch_callback(er12, small_train_config):
    seen = []
    config = small_train_config(4, max_epochs=4)
    train_unsupervised(er12, features(12), config,
                       on_epoch=lambda epoch, params, breakdown, rng: seen.append((epoch, rng.draws)))
    assert [epoch for epoch, _ in seen] == [1, 2, 3, 4]
    # one noise draw per layer per epoch
    assert [draws for _, draws in seen] == [2, 4, 6, 8]


def test_loss_log_records(tmp_path, er12, small_train_config):
    log_file = tmp_path / "logs" / "loss.txt"
    config = small_train_config(4, max_epochs=6)
    _, _, report = train_unsupervised(er12, features(12), config, log_file=log_file, log_header="config={}")
    lines = log_file.read_text().splitlines()
    assert "config={}" in lines[0]
    frame = parse_loss_log(log_file)
    assert frame["epoch"].tolist() == [1, 2, 3, 4, 5, 6]
    assert frame["total"].tolist() == [b.total for b in report.history]
    assert report.to_frame()["l_self"].tolist() == frame["l_self"].tolist()



def test_runs_without_log_file_leave_shared_logger_alone(tmp_path):
    shared = setup_loss_logging(tmp_path / "loss.txt", header="config={}")
    handlers = list(shared.handlers)
    silent = setup_loss_logging(None)
    silent.info("epoch=1 | total=0")
    assert silent is not shared
    assert shared.handlers == handlers
    assert len((tmp_path / "loss.txt").read_text().splitlines()) == 1


# --- graph collections ------------------------------------------------------------------

def test_graph_list_loss_is_sum_of_graph_losses(small_train_config):
    graphs = [path_graph(4), complete_graph(3), erdos_renyi_graph(6, 0.5, seed=1)]
    xs = [features(g.node_count, seed=k) for k, g in enumerate(graphs)]
    config = small_train_config(4, layer_kind="gin")
    params = init_model_params(config).bind()

    per_graph = sum(model_loss(g, x, params, config, sample=False)[2].total for g, x in zip(graphs, xs))
    union, _ = disjoint_union(graphs)
    joint = model_loss(union, np.vstack(xs), params, config, sample=False)[2].total
    assert joint == pytest.approx(per_graph, rel=1e-12, abs=1e-9)


def test_graph_list_returns_one_stack_per_graph(small_train_config):
    graphs = [path_graph(4), complete_graph(3)]
    xs = [features(4), features(3, seed=1)]
    config = small_train_config(4, layer_kind="gin", max_epochs=2)
    _, stacks, _ = train_unsupervised(graphs, xs, config)
    assert [s.final.shape[0] for s in stacks] == [4, 3]


def test_graph_list_feature_mismatch(small_train_config):
    with pytest.raises(ShapeError):
        train_unsupervised([path_graph(4)], [features(5)], small_train_config(4))


def test_config_is_frozen(small_train_config):
    config = small_train_config(4)
    with pytest.raises(dataclasses.FrozenInstanceError):
        config.lambda_nei = 1.0
