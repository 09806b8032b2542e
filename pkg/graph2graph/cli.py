import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from config import get_config, normalize_task

from .baseline import MlpBaselineConfig, evaluate_mlp, train_mlp_baseline
from .classifier import limited_label_study
from .data import (build_clique_pairs, file_digest, filter_by_nodes, gen_planted_clique, gen_two_class,
                   load_dataset, parse_tu, save_dataset, split, Dataset)
from .errors import ConfigError, DataError, G2GError, ModelError
from .graph import read_jsonl
from .model import (ModelConfig, encode, load_checkpoint, read_checkpoint_header, run_model,
                    save_checkpoint)
from .training import (TrainConfig, baseline_metrics, evaluate, prepare_examples, train,
                       write_metrics_csv)

logger = logging.getLogger(__name__)

LATENT_BATCH = 256


def build_parser():
    parser = argparse.ArgumentParser(prog='run.py', description='Graph2Graph experiments')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--config', default=None, help='YAML or JSON config file')
    parser.add_argument('--out-dir', default='.')
    parser.add_argument('--verbose', action='store_true')
    parser.add_argument('--from-manifest', default=None, help='rerun the command recorded in a manifest')
    sub = parser.add_subparsers(dest='verb')

    gen = sub.add_parser('gen-data', help='generate or import a dataset')
    gen.add_argument('--kind', choices=['max-clique', 'two-class'], default='max-clique')
    gen.add_argument('--count', type=int)
    gen.add_argument('--n-min', type=int)
    gen.add_argument('--n-max', type=int)
    gen.add_argument('--clique-min', type=int)
    gen.add_argument('--clique-max', type=int)
    gen.add_argument('--edge-prob', type=float)
    gen.add_argument('--from-tu', default=None, help='TU benchmark directory')
    gen.add_argument('--name', default=None)
    gen.add_argument('--max-nodes', type=int, default=None)

    tr = sub.add_parser('train', help='train a model')
    tr.add_argument('--data', required=True)
    tr.add_argument('--task', choices=['max-clique', 'autoencoder'], default=None)
    tr.add_argument('--ablate', action='append', choices=['node-attn', 'edge-attn'], default=[])
    tr.add_argument('--epochs', type=int)
    tr.add_argument('--lr', type=float)
    tr.add_argument('--batch-size', type=int)
    tr.add_argument('--workers', type=int)

    ev = sub.add_parser('eval', help='evaluate a checkpoint on a split')
    ev.add_argument('--data', required=True)
    ev.add_argument('--checkpoint', required=True)
    ev.add_argument('--split', default='test')

    enc = sub.add_parser('encode', help='export graph features')
    enc.add_argument('--data', required=True)
    enc.add_argument('--checkpoint', default=None)
    enc.add_argument('--features', choices=['latent', 'adjacency'], default='latent')

    clf = sub.add_parser('classify-limited', help='limited-label classification on features')
    clf.add_argument('--latents', required=True)
    clf.add_argument('--fractions', type=float, nargs='+')
    clf.add_argument('--repeats', type=int)

    pr = sub.add_parser('predict', help='predict one graph')
    pr.add_argument('--checkpoint', required=True)
    pr.add_argument('--graph', required=True, help='JSON-lines graph file')
    pr.add_argument('--index', type=int, default=0)
    pr.add_argument('--threshold', type=float, default=None)
    pr.add_argument('--mask-input', action='store_true')
    return parser


def _overrides(args):
    out = {}
    if args.seed is not None:
        out['seed'] = args.seed
    return out


def _set(section, key, value, overrides):
    if value is not None:
        overrides.setdefault(section, {})[key] = value


def write_manifest(out_dir, verb, argv, cfg, inputs, outputs):
    manifest = {
        'verb': verb,
        'argv': list(argv),
        'seed': cfg['seed'],
        'config': cfg,
        'inputs': {path: file_digest(path) for path in inputs if os.path.isfile(path)},
        'outputs': sorted(os.path.basename(p) for p in outputs),
    }
    path = os.path.join(out_dir, f"{verb}_manifest.json")
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def cmd_gen_data(args, cfg):
    data = cfg['data']
    n_range = (data['n_min'], data['n_max'])
    clique_range = (data['clique_min'], data['clique_max'])
    if args.from_tu:
        parsed = parse_tu(args.from_tu, args.name)
        if args.kind == 'max-clique':
            ds = build_clique_pairs(parsed.inputs, parsed.name, data['max_nodes'])
        else:
            ds = Dataset(parsed.name, filter_by_nodes(parsed.inputs, data['max_nodes']), None,
                         meta=dict(parsed.meta, max_nodes=data['max_nodes']))
    elif args.kind == 'max-clique':
        ds = gen_planted_clique(data['count'], n_range, clique_range, data['edge_prob'], cfg['seed'])
    else:
        ds = gen_two_class(data['count'], n_range, clique_range, data['edge_prob'], cfg['seed'])
    if len(ds) == 0:
        raise DataError("no graphs left to write")
    split(ds, tuple(data['split']), cfg['seed'])
    path = save_dataset(args.out_dir, ds)

    print(f"Dataset {ds.name}: {len(ds)} graphs, width {ds.width}")
    for name, count in ds.counts().items():
        print(f"  {name:<12} {count}")
    outputs = [path, os.path.join(args.out_dir, 'inputs.jsonl')]
    if ds.targets is not None:
        outputs.append(os.path.join(args.out_dir, 'targets.jsonl'))
    return [args.from_tu] if args.from_tu else [], outputs


def _model_config(cfg, width):
    return ModelConfig.from_settings(cfg['model'], width, cfg['seed'])


def cmd_train(args, cfg):
    ds = load_dataset(args.data)
    if cfg['task'] == 'max_clique' and ds.targets is None:
        raise ConfigError(f"dataset {ds.name!r} has no targets, it cannot train the max-clique task")
    tcfg = TrainConfig.from_settings(cfg)
    model_cfg = _model_config(cfg, ds.width)

    print(f"Training {cfg['task']} on {ds.name} (width {ds.width})")
    print(f"Encoder: {model_cfg.encoder}, node attention: {model_cfg.node_attn}, "
          f"edge attention: {model_cfg.edge_attn}")

    def report(summary):
        line = f"  epoch {summary.epoch:>4}  train {summary.train_loss:.6f}"
        if summary.validation is not None:
            v = summary.validation
            line += f"  val {v.loss:.6f}  acc {v.accuracy:.4f}  iou {v.edge_iou:.4f}"
        if summary.aborted:
            line += "  [aborted]"
        print(line)

    result = train(ds, tcfg, model_cfg, on_epoch=report)
    ckpt = os.path.join(args.out_dir, 'checkpoint.g2g')
    extra = {'task': cfg['task'], 'train': cfg['train'], 'dataset': ds.name, 'ablate': sorted(args.ablate),
             'best_epoch': result.best_epoch}
    save_checkpoint(ckpt, result.params, extra)
    metrics = os.path.join(args.out_dir, 'metrics.csv')
    write_metrics_csv(metrics, result.history)
    print(f"Best epoch: {result.best_epoch}")
    print(f"Checkpoint: {ckpt}")
    return [os.path.join(args.data, 'manifest.json')], [ckpt, metrics]


def _train_config_from_checkpoint(header, cfg):
    extra = header.get('extra', {})
    settings = dict(cfg)
    settings['task'] = extra.get('task', cfg['task'])
    settings['train'] = dict(cfg['train'], **extra.get('train', {}))
    return TrainConfig.from_settings(settings)


def _mlp_rows(ds, examples, tcfg, cfg, width, split_name):
    train_idx = ds.splits.get('train', [])
    if not train_idx:
        logger.warning("no training split, skipping the MLP baseline")
        return []
    train_ex = prepare_examples(ds.pairs(train_idx), width)
    val_ex = prepare_examples(ds.pairs(ds.splits.get('validation', [])), width)
    mlp_cfg = MlpBaselineConfig.from_settings(cfg['baseline'], width, cfg['seed'])
    mlp = train_mlp_baseline(train_ex, val_ex, tcfg, mlp_cfg)
    logger.info("MLP baseline trained, %d parameters", mlp.param_count())
    return [dict(evaluate_mlp(mlp, examples, tcfg, split=split_name).row(), model='mlp')]


def cmd_eval(args, cfg):
    ds = load_dataset(args.data)
    params, _ = load_checkpoint(args.checkpoint)
    tcfg = _train_config_from_checkpoint(read_checkpoint_header(args.checkpoint), cfg)
    autoencode = tcfg.task == 'autoencoder'
    examples = prepare_examples(ds.pairs(ds.split_indices(args.split), autoencode), params.config.width)

    rows = [dict(evaluate(params, examples, tcfg, split=args.split).row(), model='graph2graph')]
    if tcfg.task == 'max_clique':
        rows.append(dict(baseline_metrics(examples, args.split).row(), model='whole-input'))
        rows.extend(_mlp_rows(ds, examples, tcfg, cfg, params.config.width, args.split))
    frame = pd.DataFrame(rows)[['model', 'split', 'count', 'loss', 'accuracy', 'edge_iou', 'any_clique_accuracy']]
    path = os.path.join(args.out_dir, 'eval.csv')
    frame.to_csv(path, index=False, float_format='%.10g')
    print(frame.to_markdown(index=False, floatfmt='.4f'))
    return [args.checkpoint, os.path.join(args.data, 'manifest.json')], [path]


def _split_names(ds):
    names = [''] * len(ds)
    for name, indices in ds.splits.items():
        for i in indices:
            names[i] = name
    return names


def latent_matrix(ds, params):
    if params.config.encoder != 'forward_only':
        raise ModelError("latents need an autoencoder (forward_only) checkpoint")
    examples = prepare_examples(ds.pairs(), params.config.width)
    rows = []
    for start in range(0, len(examples), LATENT_BATCH):
        chunk = examples[start:start + LATENT_BATCH]
        rows.append(encode([e.x for e in chunk], params).forward_final.values)
    return np.concatenate(rows) if rows else np.zeros((0, params.config.node_hidden))


def adjacency_matrix(ds):
    """Flattened lower triangle of each canonical adjacency matrix"""
    examples = prepare_examples(ds.pairs(), ds.width)
    L = ds.width - 1
    lower = np.tril(np.ones((L, L), dtype=bool))
    return np.array([e.x.dense()[lower] for e in examples], dtype=np.float64).reshape(len(examples), -1)


def feature_frame(ds, features):
    """One row per graph: id, split, label, then the feature columns f0, f1, ..."""
    frame = pd.DataFrame(features, columns=[f"f{k}" for k in range(features.shape[1])])
    frame.insert(0, 'label', [g.label for g in ds.inputs])
    frame.insert(0, 'split', _split_names(ds))
    frame.insert(0, 'graph_id', range(len(ds)))
    return frame


def cmd_encode(args, cfg):
    ds = load_dataset(args.data)
    inputs = [os.path.join(args.data, 'manifest.json')]
    if args.features == 'latent':
        if not args.checkpoint:
            raise ConfigError("--features latent needs --checkpoint")
        params, _ = load_checkpoint(args.checkpoint)
        features = latent_matrix(ds, params)
        inputs.append(args.checkpoint)
    else:
        features = adjacency_matrix(ds)

    frame = feature_frame(ds, features)
    path = os.path.join(args.out_dir, 'latents.csv')
    frame.to_csv(path, index=False, float_format='%.17g')
    print(f"Wrote {len(frame)} rows with {features.shape[1]} {args.features} features to {path}")
    return inputs, [path]


def cmd_classify_limited(args, cfg):
    frame = pd.read_csv(args.latents)
    results = limited_label_study(frame, cfg['classifier'], cfg['seed'])
    path = os.path.join(args.out_dir, 'limited_labels.csv')
    results.to_csv(path, index=False, float_format='%.10g')
    summary = results[results['kind'] == 'summary'][
        ['fraction', 'size', 'test_accuracy', 'test_accuracy_std', 'majority_accuracy', 'beats_majority', 'degenerate']]
    print(summary.to_markdown(index=False, floatfmt='.4f'))
    return [args.latents], [path]


def cmd_predict(args, cfg):
    graphs = read_jsonl(args.graph)
    if not 0 <= args.index < len(graphs):
        raise DataError(f"graph index {args.index} outside 0..{len(graphs) - 1}")
    g = graphs[args.index]
    params, extra = load_checkpoint(args.checkpoint)
    threshold = args.threshold if args.threshold is not None else extra.get('train', {}).get('threshold', 0.5)
    pred = run_model(g, params, threshold=threshold, mask_input=args.mask_input)

    out = {
        'input': g.to_dict(),
        'predicted': pred.graph.to_dict(),
        'threshold': threshold,
        'mask_input': args.mask_input,
        'canonical_order': pred.order,
        'canonical_input': pred.canonical_input.to_dict(),
        'canonical_output': pred.canonical_output.to_dict(),
        'probabilities': [{'i': i, 'j': j, 'p': p} for (i, j), p in sorted(pred.probabilities.items())],
    }
    path = os.path.join(args.out_dir, 'prediction.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write('\n')
    print(f"Predicted {len(pred.graph.edges)} edges on {g.n} nodes, written to {path}")
    return [args.checkpoint, args.graph], [path]


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'eval': cmd_eval,
    'encode': cmd_encode,
    'classify-limited': cmd_classify_limited,
    'predict': cmd_predict,
}


def resolve_config(args):
    overrides = _overrides(args)
    task = None
    if args.verb == 'gen-data':
        for key in ('count', 'n_min', 'n_max', 'clique_min', 'clique_max', 'edge_prob', 'max_nodes'):
            _set('data', key, getattr(args, key), overrides)
    elif args.verb == 'train':
        task = normalize_task(args.task) if args.task else None
        _set('train', 'epochs', args.epochs, overrides)
        _set('train', 'learning_rate', args.lr, overrides)
        _set('train', 'batch_size', args.batch_size, overrides)
        _set('train', 'workers', args.workers, overrides)
    elif args.verb == 'classify-limited':
        _set('classifier', 'fractions', args.fractions, overrides)
        _set('classifier', 'repeats', args.repeats, overrides)
    cfg = get_config(args.config, overrides, task)
    if args.verb == 'train':
        if 'node-attn' in args.ablate:
            cfg['model']['node_attn'] = 'off'
        if 'edge-attn' in args.ablate:
            cfg['model']['edge_attn'] = 'off'
    return cfg


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')

    if args.from_manifest:
        try:
            with open(args.from_manifest, 'r', encoding='utf-8') as f:
                recorded = json.load(f)['argv']
        except (OSError, KeyError, json.JSONDecodeError) as e:
            print(f"error: cannot rerun from {args.from_manifest}: {e}")
            return 2
        return main(recorded)
    if args.verb is None:
        parser.print_help()
        return 2

    try:
        cfg = resolve_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        inputs, outputs = COMMANDS[args.verb](args, cfg)
        write_manifest(args.out_dir, args.verb, argv, cfg, inputs, outputs)
    except G2GError as e:
        print(f"error: {e}")
        return 2
    return 0
