import math

import numpy as np
import pytest

from graph2graph.errors import GraphError, LossError
from graph2graph.graph import Graph, to_sequence
from graph2graph.losses import (EdgeMask, FocalConfig, any_clique_accuracy, cross_entropy_sum, edge_iou,
                                exact_accuracy, focal_loss, is_maximum_clique, make_mask, mean_edge_iou)
from graph2graph.tensor import Tape, Tensor, backward


def _full_mask(shape):
    return EdgeMask(np.tril(np.ones(shape[1:], dtype=bool))[None].repeat(shape[0], axis=0), 'all_pairs')


class TestFocalLoss:
    def test_half_probability(self):
        y = to_sequence(Graph.build(2, [(0, 1)]), 2)
        loss = focal_loss(Tensor([[[0.5]]]), [y], _full_mask((1, 1, 1)), FocalConfig(gamma=2.0))
        assert abs(loss.item() - 0.25 * math.log(2.0)) < 1e-12

    def test_gamma_zero_is_cross_entropy(self, rng):
        g = Graph.build(5, [(0, 1), (2, 3), (1, 4), (0, 4)])
        y = [to_sequence(g, 5)]
        probs = Tensor(rng.uniform(0.05, 0.95, size=(1, 4, 4)))
        mask = _full_mask((1, 4, 4))
        focal = focal_loss(probs, y, mask, FocalConfig(gamma=0.0)).item()
        assert abs(focal - cross_entropy_sum(probs, y, mask)) < 1e-10

    def test_confident_correct_prediction_costs_nothing(self):
        y = to_sequence(Graph.build(2, [(0, 1)]), 2)
        loss = focal_loss(Tensor([[[1.0]]]), [y], _full_mask((1, 1, 1)))
        assert 0.0 <= loss.item() < 1e-20

    def test_strictly_decreasing_in_gamma(self, rng):
        y = [to_sequence(Graph.build(4, [(0, 1), (2, 3)]), 4)]
        probs = Tensor(rng.uniform(0.05, 0.95, size=(1, 3, 3)))
        mask = _full_mask((1, 3, 3))
        values = [focal_loss(probs, y, mask, FocalConfig(gamma)).item() for gamma in (0.0, 1.0, 2.0, 5.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_near_certain_targets_cost_almost_nothing(self):
        y = [to_sequence(Graph.build(4, [(0, 1), (2, 3)]), 4)]
        dense = y[0].dense().astype(np.float64)[None]
        probs = Tensor(np.where(dense > 0, 1.0 - 1e-9, 1e-9))
        mask = _full_mask((1, 3, 3))
        for gamma in (0.0, 1.0, 2.0, 5.0):
            assert 0.0 <= focal_loss(probs, y, mask, FocalConfig(gamma)).item() < 1e-8

    def test_empty_mask(self):
        y = [to_sequence(Graph(3), 3)]
        with pytest.raises(LossError):
            focal_loss(Tensor(np.full((1, 2, 2), 0.5)), y, make_mask(y, 'input_edges_only'))

    def test_shape_mismatch(self):
        y = [to_sequence(Graph.build(3, [(0, 1)]), 3)]
        with pytest.raises(LossError):
            focal_loss(Tensor(np.full((1, 3, 3), 0.5)), y, _full_mask((1, 2, 2)))

    def test_negative_gamma(self):
        with pytest.raises(LossError):
            FocalConfig(gamma=-1.0)

    def test_graph_mean_reduction(self):
        y = [to_sequence(Graph.build(2, [(0, 1)]), 2)] * 2
        probs = Tensor(np.full((2, 1, 1), 0.5))
        mask = _full_mask((2, 1, 1))
        total = focal_loss(probs, y, mask).item()
        assert abs(focal_loss(probs, y, mask, reduction='graph_mean').item() - total / 2) < 1e-15

    def test_no_gradient_outside_mask(self, rng):
        g = Graph.build(4, [(0, 1), (1, 2)])
        x = [to_sequence(g, 4)]
        y = [to_sequence(Graph.build(4, [(0, 1)]), 4)]
        mask = make_mask(x, 'input_edges_only')
        probs = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, 3)), requires_grad=True)
        with Tape() as tape:
            loss = focal_loss(probs, y, mask)
        grad = backward(loss, tape)[id(probs)]
        assert np.all(grad[~mask.positions] == 0.0)
        assert np.all(grad[mask.positions] != 0.0)


class TestMasks:
    def test_input_edges_only(self, clique_graph):
        x = [to_sequence(clique_graph, 8)]
        mask = make_mask(x, 'input_edges_only')
        assert len(mask) == len(clique_graph.edges)
        assert np.array_equal(mask.positions[0], x[0].dense() > 0)

    def test_all_pairs_skips_padding_rows(self):
        x = [to_sequence(Graph.build(3, [(0, 1)]), 5)]
        mask = make_mask(x, 'all_pairs', node_counts=[3])
        assert len(mask) == 3
        assert not mask.positions[0, 2:].any()

    def test_unknown_mode(self):
        with pytest.raises(LossError):
            make_mask([to_sequence(Graph(2), 2)], 'some_pairs')


class TestMetrics:
    def test_edge_iou_examples(self):
        k4 = Graph.build(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
        k3 = Graph.build(4, [(0, 1), (0, 2), (1, 2)])
        other = Graph.build(4, [(3, 0)])
        assert edge_iou(k3, k4) == 0.5
        assert edge_iou(k4, k4) == 1.0
        assert edge_iou(Graph.build(4, [(1, 3)]), other) == 0.0
        assert edge_iou(Graph(4), Graph(4)) == 1.0
        assert edge_iou(k3, k4) == edge_iou(k4, k3)

    def test_edge_iou_node_mismatch(self):
        with pytest.raises(GraphError):
            edge_iou(Graph(3), Graph(4))

    def test_exact_accuracy(self):
        a, b = Graph.build(3, [(0, 1)]), Graph.build(3, [(1, 2)])
        assert exact_accuracy([a, a, b, b], [a, a, b, a]) == 0.75
        assert mean_edge_iou([a, b], [a, a]) == 0.5
        with pytest.raises(LossError):
            exact_accuracy([a], [a, b])

    def test_any_clique_accuracy_accepts_other_maximum_cliques(self):
        g = Graph.build(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
        first = Graph.build(6, [(0, 1), (1, 2), (0, 2)])
        second = Graph.build(6, [(3, 4), (4, 5), (3, 5)])
        assert exact_accuracy([second], [first]) == 0.0
        assert any_clique_accuracy([second], [g], [first]) == 1.0

    def test_is_maximum_clique(self):
        g = Graph.build(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
        assert is_maximum_clique(Graph.build(4, [(0, 1), (1, 2), (0, 2)]), g, 3)
        assert not is_maximum_clique(Graph.build(4, [(2, 3)]), g, 3)
        assert not is_maximum_clique(Graph.build(4, [(0, 3), (0, 1), (1, 3)]), g, 3)
