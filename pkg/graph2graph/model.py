"""
Graph2Graph encoder / decoder.

Every batch is laid out densely: a graph padded to ``width`` nodes has
L = width - 1 adjacency vectors, stored as a (B, L, L) array D with
D[b, i-1, k-1] = X_{i,k} for k <= i. Row-wise recurrences (edge encoder,
down encoder, teacher-forced edge decoder) run all rows in parallel and
freeze a row's state once its vector is exhausted.
"""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .cells import (ATTENTION_MODES, GruCell, Linear, MlpHead, attention_context,
                    init_uniform, make_attention)
from .errors import CheckpointError, ConfigError, ModelError
from .graph import AdjVecSeq, Graph, canonical_order, canonical_permutation, from_sequence, to_sequence
from .tensor import Tensor, concat, reshape, stack, zeros

logger = logging.getLogger(__name__)

ENCODER_MODES = ('bidirectional', 'forward_only')
EDGE_KEY_MODES = ('row', 'all')
MASKED_SCORE = -1e30

CHECKPOINT_MAGIC = b'G2GCKPT\x00'
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    width: int
    edge_hidden: int = 32
    node_hidden: int = 64
    edge_embed: int = 8
    attn_hidden: int = 64
    head_hidden: int = 32
    encoder: str = 'bidirectional'
    node_attn: str = 'learned'
    edge_attn: str = 'learned'
    edge_keys: str = 'row'
    seed: int = 0

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError(f"model width must be >= 1, got {self.width}")
        for key in ('edge_hidden', 'node_hidden', 'edge_embed', 'attn_hidden', 'head_hidden'):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.encoder not in ENCODER_MODES:
            raise ConfigError(f"encoder must be one of {ENCODER_MODES}, got {self.encoder!r}")
        if self.node_attn not in ATTENTION_MODES:
            raise ConfigError(f"node_attn must be one of {ATTENTION_MODES}, got {self.node_attn!r}")
        if self.edge_attn not in ('learned', 'fixed', 'off'):
            raise ConfigError(f"edge_attn must be learned, fixed or off, got {self.edge_attn!r}")
        if self.edge_keys not in EDGE_KEY_MODES:
            raise ConfigError(f"edge_keys must be one of {EDGE_KEY_MODES}, got {self.edge_keys!r}")

    @property
    def decoder_dim(self):
        return self.node_hidden * (2 if self.encoder == 'bidirectional' else 1)

    @classmethod
    def from_settings(cls, model_section, width, seed=0):
        known = {k: v for k, v in model_section.items() if k in cls.__dataclass_fields__}
        known.update(width=int(width), seed=int(seed))
        return cls(**known)

    def to_dict(self):
        return asdict(self)


class ModelParams:
    """All learnable state of one model, addressable by parameter name"""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        He, Hn, E = config.edge_hidden, config.node_hidden, config.edge_embed
        D = config.decoder_dim

        self.enc_edge = GruCell(1, He, rng, 'enc_edge')
        self.enc_node_fwd = GruCell(He, Hn, rng, 'enc_node_fwd')
        self.enc_node_rev = GruCell(He, Hn, rng, 'enc_node_rev') if config.encoder == 'bidirectional' else None
        self.down = GruCell(1, He, rng, 'down')
        self.dec_node = GruCell(He + D, D, rng, 'dec_node')
        self.dec_edge = GruCell(E + He, D, rng, 'dec_edge')
        self.embed = Linear(1, E, rng, 'edge_embed')
        self.head = MlpHead([D, config.head_hidden, 1], rng, 'edge_head')
        self.node_attn = make_attention(config.node_attn, D, D, config.attn_hidden, rng, 'node_attn')
        self.edge_attn = make_attention(config.edge_attn, D, He, config.attn_hidden, rng, 'edge_attn')
        self.sos_node = init_uniform(rng, (He,), He, 'sos_node')
        self.sos_edge = init_uniform(rng, (E,), E, 'sos_edge')

    def parameters(self):
        params = {}
        for part in (self.enc_edge, self.enc_node_fwd, self.enc_node_rev, self.down, self.dec_node,
                     self.dec_edge, self.embed, self.head, self.node_attn, self.edge_attn):
            if part is not None:
                params.update(part.parameters())
        params[self.sos_node.name] = self.sos_node
        params[self.sos_edge.name] = self.sos_edge
        return params

    def param_count(self):
        return int(np.sum([t.values.size for t in self.parameters().values()]))

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    def copy_values(self):
        return {name: t.values.copy() for name, t in self.parameters().items()}

    def load_values(self, values):
        params = self.parameters()
        if set(values) != set(params):
            missing = sorted(set(params) - set(values))
            extra = sorted(set(values) - set(params))
            raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, t in params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointError(f"{name}: stored shape {arr.shape} differs from {t.shape}")
            t.values[...] = arr


@dataclass
class EncoderOutput:
    edge_states: Tensor        # (B, L, L, He): state after entry k of row i
    node_states: Tensor        # (B, L, D)
    final_state: Tensor        # (B, D)
    forward_final: Tensor      # (B, Hn)
    mode: str
    width: int

    @property
    def batch(self):
        return self.final_state.shape[0]


@dataclass
class DecodeOutput:
    probs: object              # Tensor (teacher forced) or ndarray (free running), (B, L, L)
    hard: list                 # AdjVecSeq per graph
    widths: list

    def prob_values(self):
        return self.probs.values if isinstance(self.probs, Tensor) else self.probs

    def prob_vectors(self, b):
        values = self.prob_values()
        return [values[b, i - 1, :i].copy() for i in range(1, self.widths[b])]


def lower_mask(L):
    """(L, L) indicator of positions k <= i"""
    return np.tril(np.ones((L, L)))


def batch_dense(seqs, width):
    if isinstance(seqs, AdjVecSeq):
        seqs = [seqs]
    for s in seqs:
        if s.width != width:
            raise ModelError(f"sequence width {s.width} does not match model width {width}")
    L = width - 1
    out = np.zeros((len(seqs), L, L))
    for b, s in enumerate(seqs):
        out[b] = s.dense()
    return out


def _run_rows(cell, dense):
    """Row-parallel recurrence over the entries of every adjacency vector"""
    B, L, _ = dense.shape
    rows = np.arange(L)
    h = zeros((B, L, cell.hidden_dim))
    states = []
    for k in range(L):
        live = (rows >= k).astype(np.float64)[:, None]
        h_new = cell.step(dense[:, :, k:k + 1], h)
        h = h_new * live + h * (1.0 - live)
        states.append(h)
    return stack(states, axis=2), h


def encode(s, p, mode=None):
    cfg = p.config
    mode = mode or cfg.encoder
    if mode != cfg.encoder:
        raise ModelError(f"parameters were built for a {cfg.encoder} encoder, not {mode}")
    dense = batch_dense(s, cfg.width)
    B, L = dense.shape[0], cfg.width - 1
    D, He, Hn = cfg.decoder_dim, cfg.edge_hidden, cfg.node_hidden
    if L == 0:
        return EncoderOutput(zeros((B, 0, 0, He)), zeros((B, 0, D)), zeros((B, D)), zeros((B, Hn)), mode, cfg.width)

    edge_states, summary = _run_rows(p.enc_edge, dense)

    h = zeros((B, Hn))
    forward = []
    for i in range(L):
        h = p.enc_node_fwd.step(summary[:, i, :], h)
        forward.append(h)

    if mode == 'bidirectional':
        reverse = [None] * L
        h = zeros((B, Hn))
        for i in reversed(range(L)):
            h = p.enc_node_rev.step(summary[:, i, :], h)
            reverse[i] = h
        node = [concat([f, r], axis=-1) for f, r in zip(forward, reverse)]
    else:
        node = forward

    return EncoderOutput(edge_states, stack(node, axis=1), node[-1], forward[-1], mode, cfg.width)


def _edge_keys(enc, cfg):
    """Keys and additive score bias for the edge attention of every row at once"""
    L = cfg.width - 1
    if cfg.edge_keys == 'all' and cfg.edge_attn == 'learned':
        B, He = enc.batch, cfg.edge_hidden
        keys = reshape(enc.edge_states, (B, 1, L * L, He))
        bias = np.where(lower_mask(L).reshape(-1) > 0, 0.0, MASKED_SCORE)
        return keys, bias
    return enc.edge_states, np.where(lower_mask(L) > 0, 0.0, MASKED_SCORE)


def _row_keys(enc, cfg, i):
    """Keys and score bias for the edge attention of row i alone"""
    L = cfg.width - 1
    if cfg.edge_keys == 'all' and cfg.edge_attn == 'learned':
        B, He = enc.batch, cfg.edge_hidden
        keys = reshape(enc.edge_states, (B, L * L, He))
        bias = np.where(lower_mask(L).reshape(-1) > 0, 0.0, MASKED_SCORE)
        return keys, bias
    bias = np.where(np.arange(L) < i, 0.0, MASKED_SCORE)
    return enc.edge_states[:, i - 1, :, :], bias


def decode_teacher_forced(enc, target, p, threshold=0.5):
    cfg = p.config
    if enc is None or enc.node_states is None:
        raise ModelError("decoding needs encoder states")
    Y = batch_dense(target, cfg.width)
    B, L = Y.shape[0], cfg.width - 1
    if B != enc.batch:
        raise ModelError(f"target batch of {B} does not match encoder batch of {enc.batch}")
    He, E = cfg.edge_hidden, cfg.edge_embed
    if L == 0:
        return DecodeOutput(zeros((B, 0, 0)), [AdjVecSeq([], cfg.width) for _ in range(B)],
                            [cfg.width] * B)

    _, down = _run_rows(p.down, Y)
    sos_node = p.sos_node + np.zeros((B, He))
    node_keys = enc.node_states
    prepared = p.node_attn.prepare(node_keys)
    s = enc.final_state
    node_states = []
    for i in range(1, L + 1):
        prev = sos_node if i == 1 else down[:, i - 2, :]
        ctx, _ = attention_context(s, node_keys, p.node_attn, position=i, prepared=prepared)
        s = p.dec_node.step(concat([prev, ctx], axis=-1), s)
        node_states.append(s)
    S = stack(node_states, axis=1)

    keys, bias = _edge_keys(enc, cfg)
    prepared = p.edge_attn.prepare(keys)
    sos_edge = p.sos_edge + np.zeros((B, L, E))
    rows = np.arange(L)
    t = S
    probs = []
    for k in range(1, L + 1):
        emb = sos_edge if k == 1 else p.embed(Y[:, :, k - 2:k - 1])
        ctx, _ = attention_context(t, keys, p.edge_attn, position=k, key_bias=bias, prepared=prepared)
        t_new = p.dec_edge.step(concat([emb, ctx], axis=-1), t)
        probs.append(reshape(p.head.forward(t_new), (B, L)))
        live = (rows >= k - 1).astype(np.float64)[:, None]
        t = t_new * live + t * (1.0 - live)
    P = stack(probs, axis=-1)

    valid = lower_mask(L)
    bits = (P.values > threshold) & (valid > 0)
    hard = [AdjVecSeq.from_dense(bits[b].astype(np.int8), cfg.width) for b in range(B)]
    return DecodeOutput(P, hard, [cfg.width] * B)


def generate(enc, m, p, threshold=0.5, mask=None):
    """
    Free-running decode: every thresholded bit is fed back as the next edge
    input and the finished row feeds the down encoder for the next node.
    ``mask`` (AdjVecSeq or list) forces bits outside it to 0.
    """
    cfg = p.config
    B, L = enc.batch, cfg.width - 1
    counts = [int(m)] * B if np.isscalar(m) else [int(x) for x in m]
    if len(counts) != B:
        raise ModelError(f"{len(counts)} node counts for a batch of {B}")
    if max(counts, default=0) > cfg.width:
        raise ModelError(f"requested {max(counts)} nodes exceeds model width {cfg.width}")
    allowed = batch_dense(mask, cfg.width) > 0 if mask is not None else None
    He, E = cfg.edge_hidden, cfg.edge_embed

    hard = np.zeros((B, L, L))
    probs = np.zeros((B, L, L))
    node_keys = enc.node_states
    prepared_node = p.node_attn.prepare(node_keys) if L else None
    sos_node = p.sos_node + np.zeros((B, He))
    sos_edge = p.sos_edge + np.zeros((B, E))
    s = enc.final_state
    for i in range(1, max(counts, default=1)):
        if i == 1:
            prev = sos_node
        else:
            prev = zeros((B, He))
            for k in range(i - 1):
                prev = p.down.step(hard[:, i - 2, k:k + 1], prev)
        ctx, _ = attention_context(s, node_keys, p.node_attn, position=i, prepared=prepared_node)
        s = p.dec_node.step(concat([prev, ctx], axis=-1), s)

        keys, bias = _row_keys(enc, cfg, i)
        prepared = p.edge_attn.prepare(keys)
        t = s
        for k in range(1, i + 1):
            emb = sos_edge if k == 1 else p.embed(hard[:, i - 1, k - 2:k - 1])
            ctx, _ = attention_context(t, keys, p.edge_attn, position=k, key_bias=bias, prepared=prepared)
            t = p.dec_edge.step(concat([emb, ctx], axis=-1), t)
            o = p.head.forward(t).values[:, 0]
            bit = o > threshold
            if allowed is not None:
                bit &= allowed[:, i - 1, k - 1]
            probs[:, i - 1, k - 1] = o
            hard[:, i - 1, k - 1] = bit

    out = []
    for b, n in enumerate(counts):
        vectors = [hard[b, i - 1, :i].astype(np.int8) for i in range(1, n)]
        out.append(AdjVecSeq(vectors, n))
    return DecodeOutput(probs, out, counts)


def encode_latent(g, p):
    if p.config.encoder != 'forward_only':
        raise ModelError("latents are defined for autoencoder (forward_only) parameters")
    enc = encode(to_sequence(canonical_order(g), p.config.width), p)
    return enc.forward_final.values[0].copy()


@dataclass
class Prediction:
    graph: Graph
    probabilities: dict
    canonical_input: Graph
    canonical_output: Graph
    order: list


def run_model(g_in, p, threshold=0.5, mask_input=False):
    """Canonicalize, encode, decode and map the result back to g_in's node labels"""
    order = canonical_permutation(g_in)
    canon = g_in.relabel(order)
    seq = to_sequence(canon, p.config.width)
    enc = encode(seq, p)
    dec = generate(enc, canon.n, p, threshold=threshold, mask=seq if mask_input else None)
    out = from_sequence(dec.hard[0])

    probs = {}
    for i, vec in enumerate(dec.prob_vectors(0), start=1):
        for k, value in enumerate(vec, start=1):
            a, b = order[i], order[i - k]
            probs[(max(a, b), min(a, b))] = float(value)
    edges = [(order[i], order[j]) for i, j in out.edges]
    return Prediction(Graph.build(g_in.n, edges, g_in.label), probs, canon, out, order)


def _digest(config, arrays):
    h = hashlib.sha256(json.dumps(config, sort_keys=True).encode('utf-8'))
    for name in sorted(arrays):
        h.update(name.encode('utf-8'))
        h.update(np.ascontiguousarray(arrays[name], dtype='<f8').tobytes())
    return h.hexdigest()


def save_checkpoint(path, p, extra=None):
    """
    Layout: magic, u32 version, u64 header length, JSON header, then every
    tensor as raw little-endian doubles in header order.
    """
    arrays = p.copy_values()
    config = p.config.to_dict()
    header = {
        'config': config,
        'tensors': [{'name': name, 'shape': list(a.shape)} for name, a in arrays.items()],
        'digest': _digest(config, arrays),
        'extra': extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<IQ', CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype='<f8').tobytes())
    logger.debug("saved %d tensors to %s", len(arrays), path)


def read_checkpoint_header(path):
    with open(path, 'rb') as f:
        return _read_header(f, path)


def _read_header(f, path):
    if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a graph2graph checkpoint")
    raw = f.read(struct.calcsize('<IQ'))
    if len(raw) != struct.calcsize('<IQ'):
        raise CheckpointError(f"{path}: truncated header")
    version, length = struct.unpack('<IQ', raw)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        return json.loads(f.read(length).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e


def load_checkpoint(path):
    with open(path, 'rb') as f:
        header = _read_header(f, path)
        arrays = {}
        for entry in header['tensors']:
            shape = tuple(entry['shape'])
            count = int(np.prod(shape, dtype=np.int64))
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError(f"{path}: truncated data for {entry['name']}")
            arrays[entry['name']] = np.frombuffer(raw, dtype='<f8').reshape(shape).astype(np.float64)
    if _digest(header['config'], arrays) != header['digest']:
        raise CheckpointError(f"{path}: digest mismatch, file is corrupt or was modified")
    try:
        config = ModelConfig(**header['config'])
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"{path}: invalid model config: {e}") from e
    params = ModelParams(config)
    params.load_values(arrays)
    return params, header.get('extra', {})
