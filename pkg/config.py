import copy

import yaml

from graph2graph.errors import ConfigError

config = {
    'seed': 0,
    'task': 'max_clique',  # Options: max_clique, autoencoder
    'model': {
        'edge_hidden': 32,
        'node_hidden': 64,
        'edge_embed': 8,
        'attn_hidden': 64,
        'head_hidden': 32,
        'encoder': 'bidirectional',  # Options: bidirectional, forward_only
        'node_attn': 'learned',  # Options: learned, fixed, final, off
        'edge_attn': 'learned',  # Options: learned, fixed, off
        'edge_keys': 'row',  # Options: row, all
    },
    'train': {
        'learning_rate': 0.003,
        'batch_size': 64,
        'epochs': 100,
        'gamma': 2.0,
        'threshold': 0.5,
        'clip_norm': 5.0,
        'workers': 1,
        'mask': 'input_edges_only',  # Options: input_edges_only, all_pairs
        'mask_output': False,
        'eval_every': 1,
    },
    'baseline': {  # flat MLP scored beside the model by `eval`
        'hidden': 128,
        'layers': 2,
    },
    'classifier': {
        'hidden': 64,
        'layers': 2,
        'batch_size': 32,
        'epochs': 100,
        'learning_rate': 0.003,
        'fractions': [0.001, 0.0025, 0.005, 0.01, 0.05, 0.1, 1.0],
        'repeats': 10,
    },
    'data': {
        'count': 2000,
        'n_min': 8,
        'n_max': 14,
        'clique_min': 4,
        'clique_max': 6,
        'edge_prob': 0.15,
        'max_nodes': None,
        'split': [0.6, 0.2, 0.2],
    },
}

TASK_PRESETS = {
    'max_clique': {
        'model': {'encoder': 'bidirectional', 'node_attn': 'fixed', 'edge_attn': 'fixed'},
        'train': {'mask': 'input_edges_only', 'mask_output': True},
    },
    'autoencoder': {
        'model': {'encoder': 'forward_only', 'node_attn': 'final', 'edge_attn': 'off', 'node_hidden': 128},
        'train': {'mask': 'all_pairs', 'mask_output': False},
    },
}


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def normalize_task(task):
    name = str(task).replace('-', '_')
    if name not in TASK_PRESETS:
        raise ConfigError(f"unknown task {task!r}, expected one of {sorted(TASK_PRESETS)}")
    return name


def get_config(path=None, overrides=None, task=None):
    """Defaults, then the task preset, then a YAML/JSON file, then an override dict"""
    layers = [_load(path) if path else None, overrides]
    task = task or next((layer['task'] for layer in reversed(layers) if layer and 'task' in layer), config['task'])
    cfg = apply_task_preset(config, task)
    for layer in layers:
        if not layer:
            continue
        unknown = sorted(set(layer) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}")
        _merge(cfg, layer)
    cfg['task'] = normalize_task(task)
    return cfg


def _load(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            loaded = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return loaded


def apply_task_preset(cfg, task=None):
    task = normalize_task(task or cfg['task'])
    out = _merge(copy.deepcopy(cfg), TASK_PRESETS[task])
    out['task'] = task
    return out
