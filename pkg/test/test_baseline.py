import numpy as np
import pytest

from graph2graph.baseline import (MlpBaseline, MlpBaselineConfig, baseline_loss, evaluate_mlp,
                                  mean_baseline_loss, predict_mlp, train_mlp_baseline)
from graph2graph.data import gen_planted_clique, split
from graph2graph.errors import ConfigError, DataError
from graph2graph.tensor import grad_check_many
from graph2graph.training import TrainConfig, prepare_examples

TOL = 1e-4


@pytest.fixture
def examples():
    ds = split(gen_planted_clique(24, (5, 7), (3, 4), 0.2, seed=4), seed=4)
    return prepare_examples(ds.pairs(), ds.width), ds.width


class TestMlpBaseline:
    def test_forward_fills_lower_triangle_only(self, examples):
        ex, width = examples
        model = MlpBaseline(MlpBaselineConfig(width, hidden=6, layers=1))
        probs = model.forward(ex[:3]).values
        L = width - 1
        assert probs.shape == (3, L, L)
        assert np.all(probs[:, ~model.lower] == 0.0)
        assert np.all((probs[:, model.lower] > 0.0) & (probs[:, model.lower] < 1.0))

    def test_features_are_the_canonical_lower_triangle(self, examples):
        ex, width = examples
        model = MlpBaseline(MlpBaselineConfig(width, hidden=4, layers=1))
        feats = model.features(ex[:2])
        assert feats.shape == (2, width * (width - 1) // 2)
        assert feats[0].sum() == len(ex[0].canon_input.edges)

    def test_gradients(self, examples):
        ex, width = examples
        model = MlpBaseline(MlpBaselineConfig(width, hidden=3, layers=1, seed=2))
        tcfg = TrainConfig(mask='all_pairs')
        tensors = list(model.parameters().values())
        assert grad_check_many(lambda: baseline_loss(model, ex[:2], tcfg), tensors, eps=1e-5, floor=1e-6) < TOL

    def test_training_lowers_the_loss(self, examples):
        ex, width = examples
        tcfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=20)
        cfg = MlpBaselineConfig(width, hidden=16, layers=1)
        before = mean_baseline_loss(MlpBaseline(cfg), ex, tcfg)
        after = mean_baseline_loss(train_mlp_baseline(ex, ex, tcfg, cfg), ex, tcfg)
        assert after < before

    def test_same_seed_same_weights(self, examples):
        ex, width = examples
        tcfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=2)
        cfg = MlpBaselineConfig(width, hidden=8, layers=1, seed=5)
        a = train_mlp_baseline(ex, ex[:6], tcfg, cfg).copy_values()
        b = train_mlp_baseline(ex, ex[:6], tcfg, cfg).copy_values()
        assert all(np.array_equal(a[name], b[name]) for name in a)

    def test_masked_predictions_stay_inside_the_input(self, examples):
        ex, width = examples
        tcfg = TrainConfig(threshold=0.0, mask_output=True)
        preds = predict_mlp(MlpBaseline(MlpBaselineConfig(width, hidden=4, layers=1)), ex, tcfg)
        assert [p.n for p in preds] == [e.n for e in ex]
        assert all(p.edges == e.canon_input.edges for p, e in zip(preds, ex))

    def test_evaluate(self, examples):
        ex, width = examples
        tcfg = TrainConfig(mask_output=True)
        model = MlpBaseline(MlpBaselineConfig(width, hidden=4, layers=1))
        m = evaluate_mlp(model, ex, tcfg, split='test')
        assert m.count == len(ex)
        for value in (m.accuracy, m.edge_iou, m.any_clique_accuracy):
            assert 0.0 <= value <= 1.0
        assert m.loss == pytest.approx(mean_baseline_loss(model, ex, tcfg))
        assert evaluate_mlp(model, [], tcfg).count == 0

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            MlpBaselineConfig(1)
        with pytest.raises(ConfigError):
            MlpBaselineConfig(5, hidden=0)
        with pytest.raises(DataError):
            train_mlp_baseline([], [], TrainConfig(), MlpBaselineConfig(5))

    def test_from_settings(self):
        cfg = MlpBaselineConfig.from_settings({'hidden': 12, 'layers': 3, 'unused': 1}, 9, seed=7)
        assert (cfg.width, cfg.hidden, cfg.layers, cfg.seed) == (9, 12, 3, 7)
