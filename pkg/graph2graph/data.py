"""
Datasets: TU benchmark import/export, synthetic planted-clique corpora, the
exact maximum-clique oracle, node-count filters and seeded splits.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np
import pandas as pd

from .errors import DataError, GraphError
from .graph import Graph, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

MAX_ORACLE_NODES = 64
MIN_CLIQUE = 3
SPLIT_NAMES = ('train', 'validation', 'test')


@dataclass
class Dataset:
    name: str
    inputs: list
    targets: Optional[list] = None
    width: int = 0
    splits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        observed = max((g.n for g in self.inputs), default=1)
        if self.width < observed:
            self.width = max(observed, 1)
        if self.targets is not None and len(self.targets) != len(self.inputs):
            raise DataError(f"{len(self.targets)} targets for {len(self.inputs)} inputs")

    def __len__(self):
        return len(self.inputs)

    def pairs(self, indices=None, autoencode=False):
        """(input, target) pairs; graphs without targets are paired with themselves"""
        idx = range(len(self.inputs)) if indices is None else indices
        targets = self.inputs if autoencode or self.targets is None else self.targets
        return [(self.inputs[i], targets[i]) for i in idx]

    def split_indices(self, name):
        if name not in self.splits:
            raise DataError(f"dataset {self.name!r} has no {name!r} split")
        return list(self.splits[name])

    def counts(self):
        return {name: len(self.splits.get(name, [])) for name in SPLIT_NAMES}


def maximal_cliques(g):
    """Maximal cliques by pivoting Bron-Kerbosch, each as a sorted node tuple"""
    if g.n > MAX_ORACLE_NODES:
        raise DataError(f"clique oracle is limited to {MAX_ORACLE_NODES} nodes, got {g.n}")
    if g.n == 0:
        return []
    return [tuple(sorted(c)) for c in nx.find_cliques(g.to_networkx())]


def maximum_cliques(g):
    """Every maximum clique of g as a sorted node tuple, in lexicographic order"""
    cliques = maximal_cliques(g)
    if not cliques:
        return []
    size = max(len(c) for c in cliques)
    return sorted(c for c in cliques if len(c) == size)


def clique_number(g):
    cliques = maximum_cliques(g)
    return len(cliques[0]) if cliques else 0


def max_clique_oracle(g):
    """Maximum clique of g as a subgraph on the same node set; ties go to the smallest node tuple"""
    cliques = maximum_cliques(g)
    if not cliques:
        return Graph(g.n, frozenset(), g.label)
    best = cliques[0]
    edges = [(a, b) for x, a in enumerate(best) for b in best[x + 1:]]
    return Graph.build(g.n, edges, g.label)


def _check_ranges(n_range, clique_range, edge_prob, count):
    n_min, n_max = n_range
    c_min, c_max = clique_range
    if count < 0:
        raise DataError(f"count must be >= 0, got {count}")
    if not 1 <= n_min <= n_max:
        raise DataError(f"invalid node range {n_range}")
    if c_min < MIN_CLIQUE:
        raise DataError(f"cliques smaller than {MIN_CLIQUE} are excluded, got clique_min={c_min}")
    if not c_min <= c_max <= n_min:
        raise DataError(f"clique range {clique_range} must satisfy clique_min <= clique_max <= n_min={n_min}")
    if not 0.0 <= edge_prob <= 1.0:
        raise DataError(f"edge probability must lie in [0, 1], got {edge_prob}")


def _random_graph(rng, n, edge_prob):
    return list(nx.gnp_random_graph(n, edge_prob, seed=rng).edges())


def _plant(rng, n, size):
    members = sorted(int(v) for v in rng.choice(n, size=size, replace=False))
    return [(a, b) for x, a in enumerate(members) for b in members[x + 1:]]


def gen_planted_clique(count, n_range, clique_range, edge_prob, seed, name='planted-clique'):
    """Erdos-Renyi background plus one planted clique; targets come from the oracle"""
    _check_ranges(n_range, clique_range, edge_prob, count)
    rng = np.random.default_rng(seed)
    inputs, targets = [], []
    for _ in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        size = int(rng.integers(clique_range[0], clique_range[1] + 1))
        g = Graph.build(n, _random_graph(rng, n, edge_prob) + _plant(rng, n, size))
        inputs.append(g)
        targets.append(max_clique_oracle(g))
    meta = {'kind': 'max-clique', 'seed': seed, 'n_range': list(n_range),
            'clique_range': list(clique_range), 'edge_prob': edge_prob}
    return Dataset(name, inputs, targets, meta=meta)


def gen_two_class(count, n_range, clique_range, edge_prob, seed, name='two-class'):
    """Label 1: background with a planted clique, label 0: background only"""
    _check_ranges(n_range, clique_range, edge_prob, count)
    rng = np.random.default_rng(seed)
    labels = rng.permutation([i % 2 for i in range(count)])
    graphs = []
    for label in labels:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        edges = _random_graph(rng, n, edge_prob)
        if label == 1:
            size = int(rng.integers(clique_range[0], clique_range[1] + 1))
            edges += _plant(rng, n, size)
        graphs.append(Graph.build(n, edges, int(label)))
    meta = {'kind': 'two-class', 'seed': seed, 'n_range': list(n_range),
            'clique_range': list(clique_range), 'edge_prob': edge_prob}
    return Dataset(name, graphs, None, meta=meta)


def filter_by_nodes(graphs, max_nodes=None):
    if max_nodes is None:
        return list(graphs)
    kept = [g for g in graphs if g.n <= max_nodes]
    logger.info("node cap %d kept %d of %d graphs", max_nodes, len(kept), len(graphs))
    return kept


def build_clique_pairs(graphs, name, max_nodes=None):
    """Pair each graph with its maximum clique, dropping graphs whose clique is below MIN_CLIQUE"""
    inputs, targets = [], []
    dropped = 0
    for g in filter_by_nodes(graphs, max_nodes):
        target = max_clique_oracle(g)
        if len(target.edges) < MIN_CLIQUE * (MIN_CLIQUE - 1) // 2:
            dropped += 1
            continue
        inputs.append(g)
        targets.append(target)
    if dropped:
        logger.info("dropped %d graphs with maximum clique below %d", dropped, MIN_CLIQUE)
    meta = {'kind': 'max-clique', 'max_nodes': max_nodes, 'dropped_small_clique': dropped}
    return Dataset(name, inputs, targets, meta=meta)


def _read_table(path, columns):
    try:
        frame = pd.read_csv(path, header=None, names=columns, skipinitialspace=True, dtype=np.int64)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns, dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    return frame


def _tu_name(directory, name):
    if name:
        return name
    found = sorted(f[:-len('_A.txt')] for f in os.listdir(directory) if f.endswith('_A.txt'))
    if len(found) != 1:
        raise DataError(f"cannot infer the TU dataset name in {directory}, pass it explicitly")
    return found[0]


def parse_tu(directory, name=None):
    """
    Read DS_A.txt (1-indexed node pairs), DS_graph_indicator.txt (graph id per
    node) and the optional DS_graph_labels.txt.
    """
    name = _tu_name(directory, name)
    paths = {kind: os.path.join(directory, f"{name}_{kind}.txt") for kind in ('A', 'graph_indicator', 'graph_labels')}
    for kind in ('A', 'graph_indicator'):
        if not os.path.exists(paths[kind]):
            raise DataError(f"missing TU file {paths[kind]}")

    indicator = _read_table(paths['graph_indicator'], ['graph'])['graph'].to_numpy()
    if len(indicator) == 0:
        return Dataset(name, [], None, meta={'kind': 'tu', 'source': directory})
    n_graphs = int(indicator.max())
    sizes = np.bincount(indicator, minlength=n_graphs + 1)[1:]
    offsets = np.concatenate([[0], np.cumsum(sizes)])[:-1]

    edges = [set() for _ in range(n_graphs)]
    pairs = _read_table(paths['A'], ['u', 'v'])
    for u, v in zip(pairs['u'].to_numpy(), pairs['v'].to_numpy()):
        if not (1 <= u <= len(indicator) and 1 <= v <= len(indicator)):
            raise DataError(f"edge ({u}, {v}) references a node outside {paths['graph_indicator']}")
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise DataError(f"edge ({u}, {v}) joins graphs {gu} and {gv}")
        if u == v:
            continue
        base = offsets[gu - 1]
        a, b = int(u - 1 - base), int(v - 1 - base)
        edges[gu - 1].add((max(a, b), min(a, b)))

    labels = [None] * n_graphs
    if os.path.exists(paths['graph_labels']):
        raw = _read_table(paths['graph_labels'], ['label'])['label'].to_numpy()
        if len(raw) != n_graphs:
            raise DataError(f"{len(raw)} graph labels for {n_graphs} graphs")
        labels = [int(x) for x in raw]

    try:
        graphs = [Graph(int(sizes[k]), frozenset(edges[k]), labels[k]) for k in range(n_graphs)]
    except GraphError as e:
        raise DataError(f"{directory}: {e}") from e
    logger.info("parsed %d graphs from %s", len(graphs), directory)
    return Dataset(name, graphs, None, meta={'kind': 'tu', 'source': directory})


def write_tu(directory, name, graphs):
    os.makedirs(directory, exist_ok=True)
    indicator, rows = [], []
    offset = 0
    for k, g in enumerate(graphs, start=1):
        indicator.extend([k] * g.n)
        for i, j in g.edge_list():
            rows.append((offset + i + 1, offset + j + 1))
            rows.append((offset + j + 1, offset + i + 1))
        offset += g.n
    rows.sort()
    with open(os.path.join(directory, f"{name}_A.txt"), 'w', encoding='utf-8') as f:
        f.writelines(f"{u}, {v}\n" for u, v in rows)
    with open(os.path.join(directory, f"{name}_graph_indicator.txt"), 'w', encoding='utf-8') as f:
        f.writelines(f"{k}\n" for k in indicator)
    if graphs and all(g.label is not None for g in graphs):
        with open(os.path.join(directory, f"{name}_graph_labels.txt"), 'w', encoding='utf-8') as f:
            f.writelines(f"{g.label}\n" for g in graphs)


def split_counts(total, fractions):
    """Floor of each share, then the leftover graphs go to the largest remainders"""
    raw = [f * total for f in fractions]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:total - np.sum(counts, dtype=int)]:
        counts[k] += 1
    return counts


def split(ds, fractions=(0.6, 0.2, 0.2), seed=0):
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    if len(fractions) != len(SPLIT_NAMES) or any(f < 0 for f in fractions):
        raise DataError(f"expected three non-negative split fractions, got {fractions}")
    if abs(np.sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(ds))
    splits, start = {}, 0
    for name, count in zip(SPLIT_NAMES, split_counts(len(ds), fractions)):
        splits[name] = [int(i) for i in order[start:start + count]]
        start += count
    ds.splits = splits
    ds.meta['split_seed'] = seed
    ds.meta['split_fractions'] = list(fractions)
    return ds


@dataclass
class LabelSubset:
    fraction: float
    repeat: int
    seed: list
    indices: list


def limited_label_subsets(train_indices, fractions, repeats, seed):
    train_indices = list(train_indices)
    subsets = []
    for fi, fraction in enumerate(fractions):
        if not 0.0 < fraction <= 1.0:
            raise DataError(f"label fractions must lie in (0, 1], got {fraction}")
        size = max(1, int(np.floor(fraction * len(train_indices) + 0.5)))
        for r in range(repeats):
            entropy = [int(seed), fi, r]
            if fraction == 1.0:
                chosen = sorted(train_indices)
            else:
                rng = np.random.default_rng(np.random.SeedSequence(entropy))
                chosen = sorted(int(x) for x in rng.choice(train_indices, size=size, replace=False))
            subsets.append(LabelSubset(float(fraction), r, entropy, chosen))
    return subsets


def file_digest(path):
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(directory, ds):
    os.makedirs(directory, exist_ok=True)
    write_jsonl(os.path.join(directory, 'inputs.jsonl'), ds.inputs)
    files = ['inputs.jsonl']
    if ds.targets is not None:
        write_jsonl(os.path.join(directory, 'targets.jsonl'), ds.targets)
        files.append('targets.jsonl')
    manifest = {
        'name': ds.name,
        'width': ds.width,
        'count': len(ds),
        'splits': ds.splits,
        'meta': ds.meta,
        'files': {f: file_digest(os.path.join(directory, f)) for f in files},
    }
    path = os.path.join(directory, 'manifest.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def load_dataset(directory):
    path = os.path.join(directory, 'manifest.json')
    if not os.path.exists(path):
        raise DataError(f"no dataset manifest at {path}")
    with open(path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    inputs = read_jsonl(os.path.join(directory, 'inputs.jsonl'))
    targets = None
    if os.path.exists(os.path.join(directory, 'targets.jsonl')):
        targets = read_jsonl(os.path.join(directory, 'targets.jsonl'))
    ds = Dataset(manifest.get('name', os.path.basename(directory)), inputs, targets,
                 width=int(manifest.get('width', 0)), splits=manifest.get('splits', {}),
                 meta=manifest.get('meta', {}))
    if len(ds) != manifest.get('count', len(ds)):
        raise DataError(f"{directory}: manifest lists {manifest['count']} graphs, found {len(ds)}")
    return ds
