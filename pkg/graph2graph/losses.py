from dataclasses import dataclass

import numpy as np

from .errors import GraphError, LossError
from .graph import AdjVecSeq
from .tensor import Tensor, clip, log, mul, pow, sum

MASK_MODES = ('input_edges_only', 'all_pairs')
PT_EPS = 1e-12


@dataclass
class EdgeMask:
    """Positions (i-1, k-1) of the dense layout that enter the loss, per graph"""
    positions: np.ndarray
    mode: str

    def __len__(self):
        return int(self.positions.sum())


@dataclass
class FocalConfig:
    gamma: float = 2.0

    def __post_init__(self):
        if self.gamma < 0:
            raise LossError(f"focal gamma must be >= 0, got {self.gamma}")


def _dense(seqs):
    if isinstance(seqs, AdjVecSeq):
        seqs = [seqs]
    return np.stack([s.dense() for s in seqs]).astype(np.float64) if seqs else np.zeros((0, 0, 0))


def make_mask(inputs, mode, node_counts=None):
    """
    input_edges_only: every position where the input has an edge.
    all_pairs: every position k <= i of rows belonging to real nodes (i < n).
    """
    if mode not in MASK_MODES:
        raise LossError(f"mask mode must be one of {MASK_MODES}, got {mode!r}")
    X = _dense(inputs)
    if mode == 'input_edges_only':
        return EdgeMask(X > 0, mode)
    B, L = X.shape[0], X.shape[1]
    if node_counts is None:
        node_counts = [s.width for s in ([inputs] if isinstance(inputs, AdjVecSeq) else inputs)]
    positions = np.zeros((B, L, L), dtype=bool)
    for b, n in enumerate(node_counts):
        rows = max(min(int(n), L + 1) - 1, 0)
        positions[b, :rows, :] = np.tril(np.ones((rows, L), dtype=bool))
    return EdgeMask(positions, mode)


def focal_loss(probs, target, mask, cfg=None, reduction='sum'):
    """
    Focal loss summed over the masked positions:
    l = -(1 - pt)^gamma * log(pt), pt = o for a target edge, 1 - o otherwise.
    ``reduction='graph_mean'`` divides the sum by the number of graphs.
    """
    cfg = cfg or FocalConfig()
    if hasattr(probs, 'probs'):
        probs = probs.probs
    if not isinstance(probs, Tensor):
        probs = Tensor(probs)
    y = _dense(target)
    m = np.asarray(mask.positions, dtype=np.float64)
    if probs.shape != y.shape or m.shape != y.shape:
        raise LossError(f"shape mismatch: probs {probs.shape}, target {y.shape}, mask {m.shape}")
    if not m.any():
        raise LossError("empty edge mask, nothing to supervise")

    pt = mul(probs, 2.0 * y - 1.0) + (1.0 - y)
    pt = clip(pt, PT_EPS, 1.0 - PT_EPS)
    per_edge = pow(1.0 - pt, cfg.gamma) * (-log(pt))
    total = sum(per_edge * m)
    if reduction == 'graph_mean':
        return total * (1.0 / y.shape[0])
    if reduction != 'sum':
        raise LossError(f"unknown reduction {reduction!r}")
    return total


def cross_entropy_sum(probs, target, mask):
    """Plain binary cross-entropy over the mask, computed directly in numpy"""
    o = probs.values if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    y = _dense(target)
    m = np.asarray(mask.positions, dtype=bool)
    o = np.clip(o, PT_EPS, 1.0 - PT_EPS)
    terms = np.where(y > 0, np.log(o), np.log1p(-o))
    return float(-terms[m].sum())


def edge_iou(pred, truth):
    if pred.n != truth.n:
        raise GraphError(f"node counts differ: {pred.n} vs {truth.n}")
    union = pred.edges | truth.edges
    if not union:
        return 1.0
    return len(pred.edges & truth.edges) / len(union)


def exact_accuracy(preds, truths):
    if len(preds) != len(truths):
        raise LossError(f"{len(preds)} predictions for {len(truths)} targets")
    if not preds:
        return 0.0
    return float(np.mean([p.edges == t.edges for p, t in zip(preds, truths)]))


def mean_edge_iou(preds, truths):
    if len(preds) != len(truths):
        raise LossError(f"{len(preds)} predictions for {len(truths)} targets")
    if not preds:
        return 0.0
    return float(np.mean([edge_iou(p, t) for p, t in zip(preds, truths)]))


def is_maximum_clique(pred, g, size):
    """True when pred's edges form a clique of the given size inside g"""
    if not pred.edges <= g.edges:
        return False
    if size <= 1:
        return not pred.edges
    nodes = {v for e in pred.edges for v in e}
    return len(nodes) == size and len(pred.edges) == size * (size - 1) // 2


def any_clique_accuracy(preds, inputs, truths):
    """Fraction of predictions that are some maximum clique of their input"""
    if not (len(preds) == len(inputs) == len(truths)):
        raise LossError("predictions, inputs and targets must be aligned")
    if not preds:
        return 0.0
    hits = 0
    for p, g, t in zip(preds, inputs, truths):
        nodes = {v for e in t.edges for v in e}
        hits += is_maximum_clique(p, g, max(len(nodes), 1))
    return hits / len(preds)
