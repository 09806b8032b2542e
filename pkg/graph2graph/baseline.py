"""
Flat MLP baseline for graph-to-graph prediction: the padded lower triangle of
the canonical input adjacency matrix goes in, one edge probability per
position comes out. Trained with the same focal loss, loss mask and optimizer
as the sequence model so the two are scored on equal terms.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .cells import MlpHead
from .errors import ConfigError, DataError, LossError, NumericalError
from .graph import AdjVecSeq, from_sequence
from .losses import FocalConfig, any_clique_accuracy, exact_accuracy, focal_loss, make_mask, mean_edge_iou
from .tensor import Tape, backward, reshape
from .training import AdamState, EpisodeMetrics, adam_step, clip_global_norm

logger = logging.getLogger(__name__)


@dataclass
class MlpBaselineConfig:
    width: int
    hidden: int = 128
    layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.width < 2:
            raise ConfigError(f"the MLP baseline needs width >= 2, got {self.width}")
        if self.hidden < 1 or self.layers < 0:
            raise ConfigError(f"invalid MLP baseline shape: hidden={self.hidden}, layers={self.layers}")

    @classmethod
    def from_settings(cls, section, width, seed=0):
        known = {k: v for k, v in section.items() if k in cls.__dataclass_fields__}
        known.update(width=int(width), seed=int(seed))
        return cls(**known)


class MlpBaseline:
    def __init__(self, config):
        self.config = config
        L = config.width - 1
        self.lower = np.tril(np.ones((L, L), dtype=bool))
        positions = int(self.lower.sum())
        rows, cols = np.nonzero(self.lower)
        # maps the flat output onto the (L, L) layout the losses read
        self.scatter = np.zeros((positions, L * L))
        self.scatter[np.arange(positions), rows * L + cols] = 1.0
        rng = np.random.default_rng(config.seed)
        dims = [positions] + [config.hidden] * config.layers + [positions]
        self.head = MlpHead(dims, rng, 'mlp_baseline')

    def parameters(self):
        return self.head.parameters()

    def param_count(self):
        return int(np.sum([t.values.size for t in self.parameters().values()]))

    def copy_values(self):
        return {name: t.values.copy() for name, t in self.parameters().items()}

    def load_values(self, values):
        for name, t in self.parameters().items():
            t.values[...] = values[name]

    def features(self, examples):
        return np.array([e.x.dense()[self.lower] for e in examples], dtype=np.float64)

    def forward(self, examples):
        """(B, L, L) edge probabilities, zero above the diagonal"""
        L = self.config.width - 1
        flat = self.head.forward(self.features(examples)) @ self.scatter
        return reshape(flat, (len(examples), L, L))


def baseline_loss(model, examples, tcfg):
    """Mean per-graph focal loss, None when the batch has nothing to supervise"""
    mask = make_mask([e.x for e in examples], tcfg.mask, [e.n for e in examples])
    if len(mask) == 0:
        return None
    return focal_loss(model.forward(examples), [e.y for e in examples], mask, FocalConfig(tcfg.gamma),
                      reduction='graph_mean')


def mean_baseline_loss(model, examples, tcfg):
    if not examples:
        return None
    total = 0.0
    for start in range(0, len(examples), tcfg.batch_size):
        chunk = examples[start:start + tcfg.batch_size]
        loss = baseline_loss(model, chunk, tcfg)
        total += 0.0 if loss is None else loss.item() * len(chunk)
    return total / len(examples)


def train_mlp_baseline(train_ex, val_ex, tcfg, config):
    """Adam on the focal loss; keeps the epoch with the best validation loss"""
    if not train_ex:
        raise DataError("empty training split")
    model = MlpBaseline(config)
    named = model.parameters()
    names = {id(t): name for name, t in named.items()}
    rng = np.random.default_rng(tcfg.seed)
    state = AdamState()
    best = (np.inf, None)
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(train_ex))
        for start in range(0, len(order), tcfg.batch_size):
            batch = [train_ex[i] for i in order[start:start + tcfg.batch_size]]
            with Tape() as tape:
                loss = baseline_loss(model, batch, tcfg)
            if loss is None:
                continue
            grads = backward(loss, tape, populate=False)
            grads, _ = clip_global_norm({names[k]: g for k, g in grads.items() if k in names}, tcfg.clip_norm)
            try:
                adam_step(named, grads, state, tcfg.learning_rate)
            except (NumericalError, LossError) as e:
                logger.error("MLP baseline epoch %d aborted: %s", epoch, e)
                break
        score = mean_baseline_loss(model, val_ex or train_ex, tcfg)
        if score is not None and score < best[0]:
            best = (score, model.copy_values())
    if best[1] is not None:
        model.load_values(best[1])
    return model


def predict_mlp(model, examples, tcfg):
    """Thresholded predictions in canonical labels, one Graph per example"""
    preds = []
    for start in range(0, len(examples), tcfg.batch_size):
        chunk = examples[start:start + tcfg.batch_size]
        bits = (model.forward(chunk).values > tcfg.threshold) & model.lower
        for b, e in enumerate(chunk):
            if tcfg.mask_output:
                bits[b] &= e.x.dense() > 0
            vectors = [bits[b, i - 1, :i].astype(np.int8) for i in range(1, e.n)]
            preds.append(from_sequence(AdjVecSeq(vectors, e.n)))
    return preds


def evaluate_mlp(model, examples, tcfg, split='test'):
    if not examples:
        return EpisodeMetrics(split, 0, None, 0.0, 0.0)
    preds = predict_mlp(model, examples, tcfg)
    truths = [e.canon_target for e in examples]
    metrics = EpisodeMetrics(split, len(examples), mean_baseline_loss(model, examples, tcfg),
                             exact_accuracy(preds, truths), mean_edge_iou(preds, truths))
    if tcfg.task == 'max_clique':
        metrics.any_clique_accuracy = any_clique_accuracy(preds, [e.canon_input for e in examples], truths)
    return metrics
