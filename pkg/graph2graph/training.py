import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, LossError, NumericalError
from .graph import canonical_permutation, from_sequence, to_sequence
from .losses import (FocalConfig, MASK_MODES, any_clique_accuracy, exact_accuracy, focal_loss,
                     make_mask, mean_edge_iou)
from .model import ModelConfig, ModelParams, decode_teacher_forced, encode, generate
from .tensor import Tape, backward

logger = logging.getLogger(__name__)

TASKS = ('max_clique', 'autoencoder')


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 64
    epochs: int = 100
    gamma: float = 2.0
    seed: int = 0
    task: str = 'max_clique'
    threshold: float = 0.5
    clip_norm: float = 5.0
    workers: int = 1
    mask: str = 'input_edges_only'
    mask_output: bool = False
    eval_every: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.learning_rate == 0:
            logger.warning("learning rate is 0, parameters will not change")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.mask not in MASK_MODES:
            raise ConfigError(f"mask must be one of {MASK_MODES}, got {self.mask!r}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.gamma < 0:
            raise ConfigError(f"focal gamma must be >= 0, got {self.gamma}")

    @classmethod
    def from_settings(cls, cfg):
        train = {k: v for k, v in cfg['train'].items() if k in cls.__dataclass_fields__}
        return cls(seed=int(cfg['seed']), task=cfg['task'], **train)


class AdamState:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.step = 0


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place to the tensors of ``params``"""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.values)
        if name not in state.m:
            state.m[name] = np.zeros_like(t.values)
            state.v[name] = np.zeros_like(t.values)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        t.values -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


def clip_global_norm(grads, max_norm):
    norm = float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()])))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


@dataclass
class Example:
    """One (input, target) pair relabeled by the input's canonical order"""
    source: object
    target: object
    order: list
    canon_input: object
    canon_target: object
    x: object
    y: object

    @property
    def n(self):
        return self.canon_input.n


def prepare_examples(pairs, width):
    examples = []
    for g, t in pairs:
        if g.n != t.n:
            raise DataError(f"input has {g.n} nodes but target has {t.n}")
        order = canonical_permutation(g)
        cx, cy = g.relabel(order), t.relabel(order)
        examples.append(Example(g, t, order, cx, cy, to_sequence(cx, width), to_sequence(cy, width)))
    return examples


def batch_loss(params, examples, tcfg):
    """Summed focal loss of a batch under teacher forcing, None when nothing is supervised"""
    xs = [e.x for e in examples]
    mask = make_mask(xs, tcfg.mask, [e.n for e in examples])
    if len(mask) == 0:
        return None
    enc = encode(xs, params)
    dec = decode_teacher_forced(enc, [e.y for e in examples], params, tcfg.threshold)
    return focal_loss(dec, [e.y for e in examples], mask, FocalConfig(tcfg.gamma))


def _shard_gradients(params, shard, tcfg):
    names = {id(t): name for name, t in params.parameters().items()}
    with Tape() as tape:
        loss = batch_loss(params, shard, tcfg)
    if loss is None:
        return 0.0, {}
    grads = backward(loss, tape, populate=False)
    return loss.item(), {names[key]: g for key, g in grads.items() if key in names}


def batch_gradients(params, examples, tcfg, executor=None):
    """
    Mean per-graph loss and its gradients. Shards are reduced in a fixed order
    so a run is reproducible for a given worker count.
    """
    if executor is None or tcfg.workers == 1 or len(examples) == 1:
        results = [_shard_gradients(params, examples, tcfg)]
    else:
        shards = [s for s in np.array_split(np.arange(len(examples)), tcfg.workers) if len(s)]
        futures = [executor.submit(_shard_gradients, params, [examples[i] for i in s], tcfg) for s in shards]
        results = [f.result() for f in futures]
    total = 0.0
    grads = {}
    for loss, shard_grads in results:
        total += loss
        for name, g in shard_grads.items():
            grads[name] = grads[name] + g if name in grads else g
    scale = 1.0 / len(examples)
    return total * scale, {name: g * scale for name, g in grads.items()}


@dataclass
class EpisodeMetrics:
    split: str
    count: int
    loss: Optional[float]
    accuracy: float
    edge_iou: float
    any_clique_accuracy: Optional[float] = None

    def row(self):
        return asdict(self)


@dataclass
class EpochSummary:
    epoch: int
    train_loss: float
    grad_norm: float
    seconds: float
    aborted: bool = False
    train: Optional[EpisodeMetrics] = None
    validation: Optional[EpisodeMetrics] = None

    def rows(self):
        """Long format: one row per split scored this epoch"""
        return [dict({'epoch': self.epoch}, **m.row(), grad_norm=self.grad_norm, aborted=self.aborted)
                for m in (self.train, self.validation) if m is not None]


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    best_epoch: Optional[int]
    train_examples: list = field(repr=False, default_factory=list)


def teacher_forced_loss(params, examples, tcfg):
    """Mean per-graph focal loss without recording a tape"""
    if not examples:
        return None
    total = 0.0
    for start in range(0, len(examples), tcfg.batch_size):
        loss = batch_loss(params, examples[start:start + tcfg.batch_size], tcfg)
        total += 0.0 if loss is None else loss.item()
    return total / len(examples)


def predict_examples(params, examples, tcfg, batch_size=None):
    """Free-running predictions in canonical labels, one Graph per example"""
    preds = []
    batch_size = batch_size or tcfg.batch_size
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        enc = encode([e.x for e in chunk], params)
        mask = [e.x for e in chunk] if tcfg.mask_output else None
        dec = generate(enc, [e.n for e in chunk], params, tcfg.threshold, mask=mask)
        preds.extend(from_sequence(s) for s in dec.hard)
    return preds


def evaluate(params, examples, tcfg, split='test', loss=None):
    """Free-running scores; ``loss`` replaces the teacher-forced loss when already known"""
    if not examples:
        return EpisodeMetrics(split, 0, loss, 0.0, 0.0)
    preds = predict_examples(params, examples, tcfg)
    truths = [e.canon_target for e in examples]
    if loss is None:
        loss = teacher_forced_loss(params, examples, tcfg)
    metrics = EpisodeMetrics(split, len(examples), loss,
                             exact_accuracy(preds, truths), mean_edge_iou(preds, truths))
    if tcfg.task == 'max_clique':
        metrics.any_clique_accuracy = any_clique_accuracy(preds, [e.canon_input for e in examples], truths)
    return metrics


def baseline_metrics(examples, split='test'):
    """Scores of predicting the whole input graph as the output"""
    inputs = [e.canon_input for e in examples]
    truths = [e.canon_target for e in examples]
    return EpisodeMetrics(f"{split}-whole-input", len(examples), None,
                          exact_accuracy(inputs, truths), mean_edge_iou(inputs, truths))


def train(ds, tcfg, model_cfg=None, on_epoch=None):
    """Teacher-forced Adam training; returns the parameters of the best validation epoch"""
    train_idx = ds.split_indices('train') if ds.splits else list(range(len(ds)))
    if not train_idx:
        raise DataError("empty training split")
    val_idx = ds.splits.get('validation', []) if ds.splits else []
    model_cfg = model_cfg or ModelConfig(width=ds.width, seed=tcfg.seed)
    if model_cfg.width < ds.width:
        raise ConfigError(f"model width {model_cfg.width} is smaller than dataset width {ds.width}")

    params = ModelParams(model_cfg)
    named = params.parameters()
    autoencode = tcfg.task == 'autoencoder'
    train_ex = prepare_examples(ds.pairs(train_idx, autoencode), model_cfg.width)
    val_ex = prepare_examples(ds.pairs(val_idx, autoencode), model_cfg.width)
    logger.info("training on %d graphs (%d validation), %d parameters",
                len(train_ex), len(val_ex), params.param_count())

    rng = np.random.default_rng(tcfg.seed)
    state = AdamState()
    history = []
    best = (np.inf, None, None)
    executor = ThreadPoolExecutor(max_workers=tcfg.workers) if tcfg.workers > 1 else None
    try:
        for epoch in range(1, tcfg.epochs + 1):
            started = time.time()
            order = rng.permutation(len(train_ex))
            losses, norms, aborted = [], [], False
            for start in range(0, len(order), tcfg.batch_size):
                batch = [train_ex[i] for i in order[start:start + tcfg.batch_size]]
                try:
                    loss, grads = batch_gradients(params, batch, tcfg, executor)
                    grads, norm = clip_global_norm(grads, tcfg.clip_norm)
                    adam_step(named, grads, state, tcfg.learning_rate)
                except (NumericalError, LossError) as e:
                    logger.error("epoch %d aborted at batch %d: %s", epoch, start // tcfg.batch_size, e)
                    aborted = True
                    break
                losses.append(loss * len(batch))
                norms.append(norm)

            train_loss = float(np.sum(losses)) / len(train_ex) if losses else float('nan')
            summary = EpochSummary(epoch, train_loss,
                                   float(np.max(norms)) if norms else 0.0, time.time() - started, aborted)
            scored = epoch % tcfg.eval_every == 0 or epoch == tcfg.epochs
            if scored and not aborted:
                summary.train = evaluate(params, train_ex, tcfg, split='train', loss=train_loss)
            else:
                summary.train = EpisodeMetrics('train', len(train_ex), train_loss, None, None)
            if val_ex and scored:
                summary.validation = evaluate(params, val_ex, tcfg, split='validation')
                score = summary.validation.loss
            else:
                score = summary.train_loss if not val_ex else np.inf
            if not aborted and score < best[0]:
                best = (score, epoch, params.copy_values())
            history.append(summary)
            logger.debug("epoch %d of %d loss %.6f", epoch, tcfg.epochs, summary.train_loss)
            if on_epoch is not None:
                on_epoch(summary)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if best[2] is not None:
        params.load_values(best[2])
    return TrainResult(params, history, best[1], train_ex)


def write_metrics_csv(path, rows):
    """Writes dict rows, EpisodeMetrics, or EpochSummary expanded to one row per split"""
    records = []
    for r in rows:
        if isinstance(r, dict):
            records.append(r)
        elif isinstance(r, EpochSummary):
            records.extend(r.rows())
        else:
            records.append(r.row())
    frame = pd.DataFrame(records)
    frame.to_csv(path, index=False, float_format='%.10g')
    return frame
