import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest

import graph2graph.training as training
from config import get_config
from graph2graph.data import Dataset, gen_planted_clique, gen_two_class, max_clique_oracle, split
from graph2graph.errors import ConfigError, NumericalError
from graph2graph.graph import Graph
from graph2graph.model import ModelConfig, ModelParams
from graph2graph.tensor import Tensor
from graph2graph.training import (AdamState, TrainConfig, adam_step, baseline_metrics, batch_gradients,
                                  batch_loss, clip_global_norm, evaluate, prepare_examples,
                                  teacher_forced_loss, train, write_metrics_csv)


def tiny_model(width, **changes):
    settings = dict(edge_hidden=8, node_hidden=8, edge_embed=4, attn_hidden=8, head_hidden=8,
                    node_attn='fixed', edge_attn='fixed', seed=0)
    settings.update(changes)
    return ModelConfig(width=width, **settings)


@pytest.fixture
def corpus():
    return split(gen_planted_clique(40, (6, 8), (3, 4), 0.15, seed=0), seed=0)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        w = Tensor([1.0, -2.0], requires_grad=True)
        adam_step({'w': w}, {'w': np.array([0.3, -0.7])}, AdamState(), lr=0.01)
        assert np.allclose(w.values, [0.99, -1.99], atol=1e-6)

    def test_zero_gradient_leaves_parameters(self):
        w = Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState()
        adam_step({'w': w}, {'w': np.zeros(2)}, state, lr=0.01)
        assert np.array_equal(w.values, [1.0, -2.0])
        assert np.array_equal(state.m['w'], np.zeros(2))

    def test_non_finite_gradient(self):
        w = Tensor([1.0, -2.0], requires_grad=True)
        with pytest.raises(NumericalError):
            adam_step({'w': w}, {'w': np.array([np.nan, 0.0])}, AdamState(), lr=0.01)
        assert np.array_equal(w.values, [1.0, -2.0])

    def test_clip_global_norm(self):
        grads, norm = clip_global_norm({'a': np.array([3.0, 4.0])}, 1.0)
        assert norm == 5.0
        assert np.allclose(grads['a'], [0.6, 0.8])
        unchanged, _ = clip_global_norm({'a': np.array([0.3, 0.4])}, 1.0)
        assert np.array_equal(unchanged['a'], [0.3, 0.4])


class TestTrainConfig:
    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(task='coloring')
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ConfigError):
            TrainConfig(mask='some_pairs')

    def test_zero_learning_rate_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger='graph2graph.training'):
            TrainConfig(learning_rate=0.0)
        assert 'learning rate is 0' in caplog.text

    def test_task_presets(self):
        clique = TrainConfig.from_settings(get_config(task='max_clique'))
        assert (clique.mask, clique.mask_output) == ('input_edges_only', True)
        auto = TrainConfig.from_settings(get_config(task='autoencoder'))
        assert (auto.task, auto.mask, auto.mask_output) == ('autoencoder', 'all_pairs', False)


class TestExamples:
    def test_canonical_target_inside_input(self, corpus):
        for e in prepare_examples(corpus.pairs(), corpus.width):
            assert e.canon_target.edges <= e.canon_input.edges
            assert e.x.width == e.y.width == corpus.width
            assert e.source.relabel(e.order) == e.canon_input

    def test_empty_mask_gives_no_loss(self):
        examples = prepare_examples([(Graph(4), Graph(4))], 4)
        p = ModelParams(tiny_model(4))
        assert batch_loss(p, examples, TrainConfig()) is None

    def test_sharded_gradients_match(self, corpus):
        examples = prepare_examples(corpus.pairs()[:7], corpus.width)
        p = ModelParams(tiny_model(corpus.width))
        loss1, grads1 = batch_gradients(p, examples, TrainConfig(workers=1))
        with ThreadPoolExecutor(max_workers=3) as pool:
            loss3, grads3 = batch_gradients(p, examples, TrainConfig(workers=3), pool)
        assert abs(loss1 - loss3) < 1e-12
        assert grads1.keys() == grads3.keys()
        for name in grads1:
            assert np.allclose(grads1[name], grads3[name], atol=1e-12)


class TestTrain:
    def test_history_and_best_epoch(self, corpus):
        tcfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=3)
        result = train(corpus, tcfg, tiny_model(corpus.width))
        assert [s.epoch for s in result.history] == [1, 2, 3]
        assert result.best_epoch in (1, 2, 3)
        assert all(s.validation is not None for s in result.history)
        assert result.history[0].validation.count == corpus.counts()['validation']

    def test_loss_decreases(self, corpus):
        tcfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=10)
        result = train(corpus, tcfg, tiny_model(corpus.width))
        assert result.history[-1].train_loss < result.history[0].train_loss

    def test_zero_learning_rate_keeps_initial_parameters(self, corpus):
        cfg = tiny_model(corpus.width)
        result = train(corpus, TrainConfig(learning_rate=0.0, batch_size=8, epochs=2), cfg)
        initial = ModelParams(cfg).copy_values()
        trained = result.params.copy_values()
        assert all(np.array_equal(initial[k], trained[k]) for k in initial)

    def test_same_seed_same_parameters(self, corpus):
        tcfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=2)
        a = train(corpus, tcfg, tiny_model(corpus.width)).params.copy_values()
        b = train(corpus, tcfg, tiny_model(corpus.width)).params.copy_values()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_memorizes_a_single_pair(self, clique_graph):
        ds = Dataset('one', [clique_graph], [max_clique_oracle(clique_graph)])
        tcfg = TrainConfig(learning_rate=0.01, batch_size=1, epochs=400, mask_output=True)
        result = train(ds, tcfg, tiny_model(ds.width))
        assert min(s.train_loss for s in result.history) < 1e-2
        metrics = evaluate(result.params, result.train_examples, tcfg, split='train')
        assert metrics.accuracy == 1.0
        assert metrics.any_clique_accuracy == 1.0

    def test_aborted_epochs(self, corpus, monkeypatch, caplog):
        def failing(*args, **kwargs):
            raise NumericalError("non-finite gradient for test")

        monkeypatch.setattr(training, 'batch_gradients', failing)
        with caplog.at_level(logging.ERROR, logger='graph2graph.training'):
            result = train(corpus, TrainConfig(batch_size=8, epochs=2), tiny_model(corpus.width))
        assert all(s.aborted for s in result.history)
        assert all(math.isnan(s.train_loss) for s in result.history)
        assert result.best_epoch is None
        assert 'aborted' in caplog.text

    def test_autoencoder_task(self):
        ds = split(gen_two_class(12, (5, 6), (3, 4), 0.3, seed=1), seed=1)
        tcfg = TrainConfig(task='autoencoder', mask='all_pairs', batch_size=4, epochs=1)
        result = train(ds, tcfg, tiny_model(ds.width, encoder='forward_only', node_attn='final',
                                            edge_attn='off'))
        assert all(e.target == e.source for e in result.train_examples)
        metrics = evaluate(result.params, result.train_examples, tcfg)
        assert metrics.any_clique_accuracy is None


class TestEvaluation:
    def test_repeatable(self, corpus):
        tcfg = TrainConfig(mask_output=True)
        p = ModelParams(tiny_model(corpus.width))
        examples = prepare_examples(corpus.pairs(corpus.split_indices('test')), corpus.width)
        assert evaluate(p, examples, tcfg).row() == evaluate(p, examples, tcfg).row()
        loss = teacher_forced_loss(p, examples, tcfg)
        assert loss > 0.0

    def test_metric_ranges(self, corpus):
        tcfg = TrainConfig(mask_output=True)
        p = ModelParams(tiny_model(corpus.width))
        m = evaluate(p, prepare_examples(corpus.pairs(), corpus.width), tcfg)
        for value in (m.accuracy, m.edge_iou, m.any_clique_accuracy):
            assert 0.0 <= value <= 1.0

    def test_whole_input_baseline(self):
        ds = gen_planted_clique(6, (5, 6), (3, 3), 0.0, seed=0)
        m = baseline_metrics(prepare_examples(ds.pairs(), ds.width))
        assert m.split == 'test-whole-input'
        assert m.accuracy == 1.0
        assert m.edge_iou == 1.0

    def test_metrics_csv(self, corpus, tmp_path):
        result = train(corpus, TrainConfig(learning_rate=0.01, batch_size=8, epochs=2), tiny_model(corpus.width))
        path = tmp_path / 'metrics.csv'
        write_metrics_csv(path, result.history)
        frame = pd.read_csv(path)
        assert list(frame['epoch']) == [1, 1, 2, 2]
        assert list(frame['split']) == ['train', 'validation'] * 2
        assert list(frame.columns[:6]) == ['epoch', 'split', 'count', 'loss', 'accuracy', 'edge_iou']
        assert {'grad_norm', 'aborted', 'any_clique_accuracy'} <= set(frame.columns)
        assert 'seconds' not in frame.columns
        train_rows = frame[frame['split'] == 'train']
        assert list(train_rows['loss']) == pytest.approx([s.train_loss for s in result.history])
        assert train_rows['accuracy'].between(0.0, 1.0).all()
        assert (frame['count'] == [24, 8, 24, 8]).all()

    def test_metrics_between_scored_epochs(self, corpus, tmp_path):
        tcfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=3, eval_every=2)
        result = train(corpus, tcfg, tiny_model(corpus.width))
        frame = write_metrics_csv(tmp_path / 'metrics.csv', result.history)
        assert list(zip(frame['epoch'], frame['split'])) == [
            (1, 'train'), (2, 'train'), (2, 'validation'), (3, 'train'), (3, 'validation')]
        assert math.isnan(frame['accuracy'][0])
        assert not math.isnan(frame['loss'][0])
