import logging
from abc import ABC, abstractmethod

import numpy as np

from .errors import ModelError, ShapeError
from .tensor import (Tensor, as_tensor, clip, reshape, sigmoid, softmax_lastdim,
                     stack, sum, tanh, zeros)

logger = logging.getLogger(__name__)

# Edge probabilities are kept strictly inside (0, 1)
PROB_EPS = 1e-12


def init_uniform(rng, shape, fan_in, name):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class GruCell:
    """Gated recurrent unit, reset gate applied before the candidate matmul"""

    def __init__(self, input_dim, hidden_dim, rng, name='gru'):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.name = name
        H = hidden_dim
        self.W = init_uniform(rng, (input_dim, 3 * H), input_dim, f"{name}.W")
        self.U_zr = init_uniform(rng, (H, 2 * H), H, f"{name}.U_zr")
        self.U_h = init_uniform(rng, (H, H), H, f"{name}.U_h")
        self.b = init_uniform(rng, (3 * H,), H, f"{name}.b")

    def parameters(self):
        return {t.name: t for t in (self.W, self.U_zr, self.U_h, self.b)}

    def step(self, x, h):
        x, h = as_tensor(x), as_tensor(h)
        if x.shape[-1] != self.input_dim:
            raise ShapeError('gru_step', x.shape, (self.input_dim,), detail=f"{self.name} input")
        if h.shape[-1] != self.hidden_dim:
            raise ShapeError('gru_step', h.shape, (self.hidden_dim,), detail=f"{self.name} hidden")
        H = self.hidden_dim
        gx = x @ self.W + self.b
        gh = h @ self.U_zr
        z = sigmoid(gx[..., :H] + gh[..., :H])
        r = sigmoid(gx[..., H:2 * H] + gh[..., H:])
        candidate = tanh(gx[..., 2 * H:] + (r * h) @ self.U_h)
        return (1.0 - z) * h + z * candidate


def gru_step(cell, x, h):
    return cell.step(x, h)


class Linear:
    def __init__(self, input_dim, output_dim, rng, name='linear'):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.W = init_uniform(rng, (input_dim, output_dim), input_dim, f"{name}.W")
        self.b = init_uniform(rng, (output_dim,), input_dim, f"{name}.b")

    def parameters(self):
        return {self.W.name: self.W, self.b.name: self.b}

    def __call__(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.input_dim:
            raise ShapeError('linear', x.shape, (self.input_dim,))
        return x @ self.W + self.b


class MlpHead:
    """tanh hidden layers, sigmoid output"""

    def __init__(self, dims, rng, name='head'):
        if len(dims) < 2:
            raise ModelError(f"MLP head needs at least input and output dims, got {dims}")
        self.dims = list(dims)
        self.layers = [Linear(a, b, rng, f"{name}.{k}") for k, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def parameters(self):
        params = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def logits(self, x):
        for layer in self.layers[:-1]:
            x = tanh(layer(x))
        return self.layers[-1](x)

    def forward(self, x):
        return clip(sigmoid(self.logits(x)), PROB_EPS, 1.0 - PROB_EPS)


def mlp_forward(head, x):
    return head.forward(x)


class AttentionNet(ABC):
    """Base interface for node / edge context selection"""

    mode = None

    def parameters(self):
        return {}

    def prepare(self, keys):
        """Per-decode precomputation over the keys, passed back to context()"""
        return None

    @abstractmethod
    def context(self, query, keys, position=None, key_bias=None, prepared=None):
        """Return (context, weights) for a query over keys of shape (..., N, key_dim)"""
        pass

    @staticmethod
    def _context_shape(query, keys):
        lead = np.broadcast_shapes(query.shape[:-1], keys.shape[:-2])
        return tuple(lead) + (keys.shape[-1],)


class LearnedAttention(AttentionNet):
    """
    alpha_j = softmax_j(phi(query, key_j)), context = sum_j alpha_j key_j.
    phi: [query; key] -> hidden (tanh) -> scalar, with the concatenation
    realised as two matmuls so keys are projected once.
    """

    mode = 'learned'

    def __init__(self, query_dim, key_dim, hidden_dim, rng, name='attn'):
        self.query_dim = query_dim
        self.key_dim = key_dim
        fan_in = query_dim + key_dim
        self.Wq = init_uniform(rng, (query_dim, hidden_dim), fan_in, f"{name}.Wq")
        self.Wk = init_uniform(rng, (key_dim, hidden_dim), fan_in, f"{name}.Wk")
        self.b = init_uniform(rng, (hidden_dim,), fan_in, f"{name}.b")
        self.v = init_uniform(rng, (hidden_dim, 1), hidden_dim, f"{name}.v")

    def parameters(self):
        return {t.name: t for t in (self.Wq, self.Wk, self.b, self.v)}

    def prepare(self, keys):
        if keys.shape[-1] != self.key_dim:
            raise ShapeError('attention_context', keys.shape, (self.key_dim,), detail='keys')
        return keys @ self.Wk + self.b

    def scores(self, query, projected_keys):
        q = query @ self.Wq
        q = reshape(q, q.shape[:-1] + (1, q.shape[-1]))
        hidden = tanh(q + projected_keys)
        s = hidden @ self.v
        return reshape(s, s.shape[:-1])

    def context(self, query, keys, position=None, key_bias=None, prepared=None):
        if query.shape[-1] != self.query_dim:
            raise ShapeError('attention_context', query.shape, (self.query_dim,), detail='query')
        if prepared is None:
            prepared = self.prepare(keys)
        s = self.scores(query, prepared)
        if key_bias is not None:
            s = s + key_bias
        alpha = softmax_lastdim(s)
        weighted = reshape(alpha, alpha.shape + (1,)) * keys
        return sum(weighted, axis=-2), alpha


class FixedAttention(AttentionNet):
    """alpha_{i,j} = 1 iff i = j: decoder step i reads encoder position i"""

    mode = 'fixed'

    def __init__(self):
        self.clamped = 0

    def context(self, query, keys, position=None, key_bias=None, prepared=None):
        if position is None:
            raise ModelError("fixed attention needs the decoder position")
        n_keys = keys.shape[-2]
        index = position
        if position > n_keys:
            index = n_keys
            self.clamped += 1
            logger.warning("fixed attention position %d beyond %d encoder states, clamped", position, n_keys)
        weights = np.zeros(n_keys)
        weights[index - 1] = 1.0
        return keys[..., index - 1, :], weights


class FinalStateAttention(AttentionNet):
    """Every context is the final encoder state (compressed autoencoder mode)"""

    mode = 'final'

    def context(self, query, keys, position=None, key_bias=None, prepared=None):
        n_keys = keys.shape[-2]
        weights = np.zeros(n_keys)
        weights[-1] = 1.0
        return keys[..., n_keys - 1, :], weights


class NoAttention(AttentionNet):
    """Context replaced with zeros (ablation)"""

    mode = 'off'

    def context(self, query, keys, position=None, key_bias=None, prepared=None):
        return zeros(self._context_shape(query, keys)), np.zeros(keys.shape[-2])


ATTENTION_MODES = ('learned', 'fixed', 'final', 'off')


def make_attention(mode, query_dim, key_dim, hidden_dim, rng, name):
    if mode == 'learned':
        return LearnedAttention(query_dim, key_dim, hidden_dim, rng, name)
    elif mode == 'fixed':
        return FixedAttention()
    elif mode == 'final':
        return FinalStateAttention()
    elif mode == 'off':
        return NoAttention()
    raise ModelError(f"unknown attention mode {mode!r}, expected one of {ATTENTION_MODES}")


def attention_context(query, keys, net, position=None, key_bias=None, prepared=None):
    query = as_tensor(query)
    if isinstance(keys, (list, tuple)):
        if not keys:
            raise ModelError("attention needs at least one key")
        keys = stack(keys, axis=-2)
    keys = as_tensor(keys)
    if keys.ndim < 2 or keys.shape[-2] == 0:
        raise ModelError("attention needs at least one key")
    return net.context(query, keys, position=position, key_bias=key_bias, prepared=prepared)
