#!/usr/bin/env python3
"""
Ablation Evaluation Script
Trains the full model and its attention ablations under identical seeds on one
planted-clique corpus and compares test metrics with the whole-input and flat MLP
baselines.
"""

import os
import sys
import time

import pandas as pd

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import get_config
from graph2graph.baseline import MlpBaselineConfig, evaluate_mlp, train_mlp_baseline
from graph2graph.data import gen_planted_clique, split
from graph2graph.model import ModelConfig
from graph2graph.training import TrainConfig, baseline_metrics, evaluate, prepare_examples, train


ABLATIONS = [
    ('full', {}),
    ('w/o NodeAttn', {'node_attn': 'off'}),
    ('w/o EdgeAttn', {'edge_attn': 'off'}),
]


class AblationEvaluator:
    """Trains each attention configuration on the same data and seeds"""

    def __init__(self, count=2000, epochs=100, seed=0, workers=1):
        self.cfg = get_config(overrides={'seed': seed, 'data': {'count': count},
                                         'train': {'epochs': epochs, 'workers': workers}},
                              task='max_clique')
        data = self.cfg['data']
        self.dataset = gen_planted_clique(count, (data['n_min'], data['n_max']),
                                          (data['clique_min'], data['clique_max']), data['edge_prob'], seed)
        split(self.dataset, tuple(data['split']), seed)

    def run_configuration(self, name, changes):
        print(f"\nTraining {name}...")
        settings = dict(self.cfg['model'], **changes)
        model_cfg = ModelConfig.from_settings(settings, self.dataset.width, self.cfg['seed'])
        tcfg = TrainConfig.from_settings(self.cfg)
        started = time.time()
        result = train(self.dataset, tcfg, model_cfg)
        test = prepare_examples(self.dataset.pairs(self.dataset.split_indices('test')), model_cfg.width)
        metrics = evaluate(result.params, test, tcfg, split='test')
        row = {
            'configuration': name,
            'node_attn': model_cfg.node_attn,
            'edge_attn': model_cfg.edge_attn,
            'parameters': result.params.param_count(),
            'best_epoch': result.best_epoch,
            'test_loss': metrics.loss,
            'accuracy': metrics.accuracy,
            'edge_iou': metrics.edge_iou,
            'any_clique_accuracy': metrics.any_clique_accuracy,
            'train_time_sec': time.time() - started,
        }
        print(f"  accuracy {row['accuracy']:.4f}  edge IoU {row['edge_iou']:.4f}  "
              f"({row['train_time_sec']:.1f}s)")
        return row

    def evaluate_all(self):
        results = [self.run_configuration(name, changes) for name, changes in ABLATIONS]
        test = prepare_examples(self.dataset.pairs(self.dataset.split_indices('test')), self.dataset.width)
        base = baseline_metrics(test)
        results.append({'configuration': 'whole input', 'node_attn': '-', 'edge_attn': '-', 'parameters': 0,
                        'best_epoch': None, 'test_loss': None, 'accuracy': base.accuracy,
                        'edge_iou': base.edge_iou, 'any_clique_accuracy': None, 'train_time_sec': 0.0})
        results.append(self.run_mlp_baseline(test))
        return results

    def run_mlp_baseline(self, test):
        print("\nTraining flat MLP...")
        ds, width = self.dataset, self.dataset.width
        tcfg = TrainConfig.from_settings(self.cfg)
        started = time.time()
        train_ex = prepare_examples(ds.pairs(ds.split_indices('train')), width)
        val_ex = prepare_examples(ds.pairs(ds.split_indices('validation')), width)
        mlp = train_mlp_baseline(train_ex, val_ex, tcfg,
                                 MlpBaselineConfig.from_settings(self.cfg['baseline'], width, self.cfg['seed']))
        metrics = evaluate_mlp(mlp, test, tcfg)
        return {'configuration': 'flat MLP', 'node_attn': '-', 'edge_attn': '-',
                'parameters': mlp.param_count(), 'best_epoch': None, 'test_loss': metrics.loss,
                'accuracy': metrics.accuracy, 'edge_iou': metrics.edge_iou,
                'any_clique_accuracy': metrics.any_clique_accuracy, 'train_time_sec': time.time() - started}

    def print_comparison_table(self, results):
        print(f"\n{'='*100}")
        print("ABLATION COMPARISON TABLE")
        print(f"{'='*100}\n")
        print(f"{'Configuration':<16} {'NodeAttn':<10} {'EdgeAttn':<10} {'Params':<10} "
              f"{'Accuracy':<10} {'Edge IoU':<10} {'AnyMC':<10} {'Time(s)':<10}")
        print(f"{'-'*100}")
        for r in results:
            any_mc = r['any_clique_accuracy']
            print(f"{r['configuration']:<16} "
                  f"{r['node_attn']:<10} "
                  f"{r['edge_attn']:<10} "
                  f"{r['parameters']:<10} "
                  f"{r['accuracy']:<10.4f} "
                  f"{r['edge_iou']:<10.4f} "
                  f"{'-' if any_mc is None else f'{any_mc:.4f}':<10} "
                  f"{r['train_time_sec']:<10.1f}")
        print(f"\n{'='*100}\n")

        models = [r for r in results if r['configuration'] not in ('whole input', 'flat MLP')]
        best_acc = max(models, key=lambda x: x['accuracy'])
        best_iou = max(models, key=lambda x: x['edge_iou'])
        print(f"Best accuracy:  {best_acc['configuration']} ({best_acc['accuracy']:.4f})")
        print(f"Best edge IoU:  {best_iou['configuration']} ({best_iou['edge_iou']:.4f})")


def main():
    print("\n" + "="*100)
    print(" " * 35 + "GRAPH2GRAPH ABLATION EVALUATOR")
    print("="*100)

    count, epochs = 2000, 100
    if len(sys.argv) > 1:
        try:
            count = int(sys.argv[1])
        except ValueError:
            print(f"Invalid graph count: {sys.argv[1]}")
            return
    if len(sys.argv) > 2:
        try:
            epochs = int(sys.argv[2])
        except ValueError:
            print(f"Invalid epoch count: {sys.argv[2]}")
            return
    out_path = sys.argv[3] if len(sys.argv) > 3 else 'ablations.csv'

    print(f"\nGraphs: {count}, epochs: {epochs}")
    evaluator = AblationEvaluator(count=count, epochs=epochs)
    results = evaluator.evaluate_all()
    evaluator.print_comparison_table(results)

    frame = pd.DataFrame(results).drop(columns=['train_time_sec'])
    frame.to_csv(out_path, index=False, float_format='%.10g')
    print(f"\nResults written to {out_path}")


if __name__ == "__main__":
    main()
