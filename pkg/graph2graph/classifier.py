"""
Graph classification on exported features with few labels: an MLP head on
frozen latents, trained on seeded random subsets of the training split.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .cells import Linear
from .data import limited_label_subsets
from .errors import DataError
from .tensor import Tape, backward, log, softmax_lastdim, sum, tanh
from .training import AdamState, adam_step

logger = logging.getLogger(__name__)

FEATURE_PREFIX = 'f'


class ClassifierHead:
    """tanh MLP with a softmax output over classes"""

    def __init__(self, input_dim, n_classes, hidden=64, layers=2, seed=0):
        rng = np.random.default_rng(seed)
        dims = [input_dim] + [hidden] * layers + [n_classes]
        self.layers = [Linear(a, b, rng, f"clf.{k}") for k, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]
        self.n_classes = n_classes

    def parameters(self):
        params = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def logits(self, x):
        for layer in self.layers[:-1]:
            x = tanh(layer(x))
        return self.layers[-1](x)

    def predict_proba(self, x):
        return softmax_lastdim(self.logits(x)).values

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=-1)


def cross_entropy(head, x, y):
    """Mean softmax cross-entropy of integer labels y"""
    probs = softmax_lastdim(head.logits(x))
    onehot = np.eye(head.n_classes)[y]
    return sum(log(probs) * onehot) * (-1.0 / len(y))


def accuracy(head, x, y):
    if len(y) == 0:
        return 0.0
    return float(np.mean(head.predict(x) == y))


@dataclass
class ClassifierRun:
    best_epoch: int
    val_accuracy: float
    test_accuracy: float


def train_classifier(x_train, y_train, x_val, y_val, x_test, y_test, n_classes, settings, seed):
    """Adam on minibatches; keeps the epoch with the best validation accuracy"""
    head = ClassifierHead(x_train.shape[1], n_classes, settings['hidden'], settings['layers'], seed)
    named = head.parameters()
    names = {id(t): name for name, t in named.items()}
    rng = np.random.default_rng(seed)
    state = AdamState()
    best = ClassifierRun(0, -1.0, 0.0)
    for epoch in range(1, settings['epochs'] + 1):
        order = rng.permutation(len(y_train))
        for start in range(0, len(order), settings['batch_size']):
            idx = order[start:start + settings['batch_size']]
            with Tape() as tape:
                loss = cross_entropy(head, x_train[idx], y_train[idx])
            grads = backward(loss, tape, populate=False)
            adam_step(named, {names[k]: g for k, g in grads.items()}, state, settings['learning_rate'])
        val = accuracy(head, x_val, y_val) if len(y_val) else accuracy(head, x_train, y_train)
        if val > best.val_accuracy:
            best = ClassifierRun(epoch, val, accuracy(head, x_test, y_test))
    return best


def feature_columns(frame):
    cols = [c for c in frame.columns if c.startswith(FEATURE_PREFIX) and c[len(FEATURE_PREFIX):].isdigit()]
    if not cols:
        raise DataError("no feature columns in the latent table")
    return cols


def _split_arrays(frame, cols, split, classes):
    part = frame[frame['split'] == split]
    labels = np.array([classes.index(int(v)) for v in part['label']], dtype=np.int64)
    return part[cols].to_numpy(dtype=np.float64), labels


def limited_label_study(frame, settings, seed):
    """
    One row per (fraction, repeat) with kind='repeat', then one kind='summary'
    row per fraction with mean and standard deviation of test accuracy and the
    majority-class baseline.
    """
    frame = frame[frame['label'].notna()].reset_index(drop=True)
    if frame.empty:
        raise DataError("latent table has no labeled rows")
    cols = feature_columns(frame)
    classes = sorted(int(v) for v in frame['label'].unique())
    x_train, y_train = _split_arrays(frame, cols, 'train', classes)
    x_val, y_val = _split_arrays(frame, cols, 'validation', classes)
    x_test, y_test = _split_arrays(frame, cols, 'test', classes)
    if len(y_train) == 0 or len(y_test) == 0:
        raise DataError("latent table needs labeled train and test rows")

    rows = []
    subsets = limited_label_subsets(range(len(y_train)), settings['fractions'], settings['repeats'], seed)
    for subset in subsets:
        idx = np.array(subset.indices, dtype=np.int64)
        labels = y_train[idx]
        present = np.unique(labels)
        majority = int(np.bincount(labels, minlength=len(classes)).argmax())
        majority_acc = float(np.mean(y_test == majority))
        row = {'kind': 'repeat', 'fraction': subset.fraction, 'repeat': subset.repeat,
               'seed': '-'.join(str(s) for s in subset.seed), 'size': len(idx),
               'classes_seen': len(present), 'degenerate': bool(len(present) < 2),
               'best_epoch': 0, 'test_accuracy': majority_acc, 'test_accuracy_std': None,
               'majority_accuracy': majority_acc, 'beats_majority': None}
        if len(present) >= 2:
            init_seed = int(np.random.SeedSequence(subset.seed).generate_state(1)[0])
            run = train_classifier(x_train[idx], labels, x_val, y_val, x_test, y_test,
                                   len(classes), settings, init_seed)
            row.update(best_epoch=run.best_epoch, test_accuracy=run.test_accuracy)
        else:
            logger.info("fraction %.4f repeat %d saw one class, recorded as degenerate",
                        subset.fraction, subset.repeat)
        row['beats_majority'] = bool(row['test_accuracy'] > majority_acc)
        rows.append(row)

    repeats = pd.DataFrame(rows)
    summary = []
    for fraction, group in repeats.groupby('fraction', sort=True):
        summary.append({'kind': 'summary', 'fraction': fraction, 'repeat': None, 'seed': None,
                        'size': int(group['size'].iloc[0]), 'classes_seen': None,
                        'degenerate': int(group['degenerate'].sum()), 'best_epoch': None,
                        'test_accuracy': float(group['test_accuracy'].mean()),
                        'test_accuracy_std': float(group['test_accuracy'].std(ddof=0)),
                        'majority_accuracy': float(group['majority_accuracy'].mean()),
                        'beats_majority': int(group['beats_majority'].sum())})
    return pd.concat([repeats, pd.DataFrame(summary)], ignore_index=True)
