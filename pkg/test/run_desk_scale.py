#!/usr/bin/env python3
"""
Desk-scale acceptance runs: max-clique learning on the planted-clique corpus,
autoencoder reconstruction with latent export, and the limited-label study on
a two-class corpus. Each run prints its numbers and a pass/fail verdict.

Usage: python test/run_desk_scale.py [count] [epochs]
"""

import os
import sys
import time

import numpy as np

# Add parent directory to path to import graph2graph and config
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import get_config
from graph2graph.baseline import MlpBaselineConfig, evaluate_mlp, train_mlp_baseline
from graph2graph.classifier import limited_label_study
from graph2graph.cli import feature_frame, latent_matrix
from graph2graph.data import gen_planted_clique, gen_two_class, split
from graph2graph.model import ModelConfig
from graph2graph.training import TrainConfig, baseline_metrics, evaluate, prepare_examples, train

MC_IOU_TARGET = 0.80
AE_IOU_TARGET = 0.75
LATENT_DIM = 128
BEATS_MAJORITY_TARGET = 8


class DeskScaleRunner:
    def __init__(self, count=2000, epochs=100, seed=0):
        self.count = count
        self.epochs = epochs
        self.seed = seed
        self.verdicts = []

    def _setup(self, task):
        cfg = get_config(overrides={'seed': self.seed, 'train': {'epochs': self.epochs}}, task=task)
        data = cfg['data']
        return cfg, data, (data['n_min'], data['n_max']), (data['clique_min'], data['clique_max'])

    def _train(self, cfg, ds):
        model_cfg = ModelConfig.from_settings(cfg['model'], ds.width, cfg['seed'])
        tcfg = TrainConfig.from_settings(cfg)
        started = time.time()
        result = train(ds, tcfg, model_cfg,
                       on_epoch=lambda s: print(f"    epoch {s.epoch:>4}  loss {s.train_loss:.6f}"))
        print(f"  trained in {time.time() - started:.1f}s, best epoch {result.best_epoch}")
        return result, tcfg

    def record(self, name, passed, detail):
        self.verdicts.append((name, passed, detail))
        print(f"  [{'PASS' if passed else 'FAIL'}] {detail}")

    def run_max_clique(self):
        print(f"\n{'='*80}\nMAX-CLIQUE LEARNING ({self.count} graphs)\n{'='*80}")
        cfg, data, n_range, c_range = self._setup('max_clique')
        ds = split(gen_planted_clique(self.count, n_range, c_range, data['edge_prob'], self.seed),
                   tuple(data['split']), self.seed)
        result, tcfg = self._train(cfg, ds)
        test = prepare_examples(ds.pairs(ds.split_indices('test')), ds.width)
        model = evaluate(result.params, test, tcfg)
        base = baseline_metrics(test)
        train_ex = prepare_examples(ds.pairs(ds.split_indices('train')), ds.width)
        val_ex = prepare_examples(ds.pairs(ds.split_indices('validation')), ds.width)
        mlp = train_mlp_baseline(train_ex, val_ex, tcfg,
                                 MlpBaselineConfig.from_settings(cfg['baseline'], ds.width, cfg['seed']))
        flat = evaluate_mlp(mlp, test, tcfg)
        print(f"  model:       accuracy {model.accuracy:.4f}  edge IoU {model.edge_iou:.4f}  "
              f"any-clique {model.any_clique_accuracy:.4f}")
        print(f"  whole input: accuracy {base.accuracy:.4f}  edge IoU {base.edge_iou:.4f}")
        print(f"  flat MLP:    accuracy {flat.accuracy:.4f}  edge IoU {flat.edge_iou:.4f}  "
              f"any-clique {flat.any_clique_accuracy:.4f}")
        self.record('max-clique', model.edge_iou >= MC_IOU_TARGET and model.accuracy > base.accuracy,
                    f"edge IoU {model.edge_iou:.4f} (>= {MC_IOU_TARGET}), "
                    f"accuracy {model.accuracy:.4f} vs baseline {base.accuracy:.4f}")

    def run_autoencoder(self):
        print(f"\n{'='*80}\nAUTOENCODER RECONSTRUCTION ({self.count} graphs)\n{'='*80}")
        cfg, data, n_range, c_range = self._setup('autoencoder')
        ds = split(gen_planted_clique(self.count, n_range, c_range, data['edge_prob'], self.seed),
                   tuple(data['split']), self.seed)
        result, tcfg = self._train(cfg, ds)
        test = prepare_examples(ds.pairs(ds.split_indices('test'), autoencode=True), ds.width)
        metrics = evaluate(result.params, test, tcfg)
        latents = latent_matrix(ds, result.params)
        print(f"  reconstruction: accuracy {metrics.accuracy:.4f}  edge IoU {metrics.edge_iou:.4f}")
        print(f"  latent matrix: {latents.shape}")
        self.record('autoencoder', metrics.edge_iou >= AE_IOU_TARGET and latents.shape[1] == LATENT_DIM,
                    f"edge IoU {metrics.edge_iou:.4f} (>= {AE_IOU_TARGET}), {latents.shape[1]} latent columns")

    def run_limited_labels(self):
        print(f"\n{'='*80}\nLIMITED-LABEL CLASSIFICATION ({self.count} graphs)\n{'='*80}")
        cfg, data, n_range, c_range = self._setup('autoencoder')
        ds = split(gen_two_class(self.count, n_range, c_range, data['edge_prob'], self.seed),
                   tuple(data['split']), self.seed)
        result, _ = self._train(cfg, ds)
        latents = latent_matrix(ds, result.params)
        frame = feature_frame(ds, latents)

        settings = dict(cfg['classifier'], fractions=[0.05], repeats=10)
        study = limited_label_study(frame, settings, self.seed)
        repeats = study[study['kind'] == 'repeat']
        wins = int(repeats['beats_majority'].sum())
        print(f"  5% fraction: mean accuracy {repeats['test_accuracy'].mean():.4f} "
              f"(std {np.std(repeats['test_accuracy']):.4f}), majority {repeats['majority_accuracy'].mean():.4f}")
        self.record('limited-labels', wins >= BEATS_MAJORITY_TARGET,
                    f"beats majority in {wins} of {len(repeats)} repeats (>= {BEATS_MAJORITY_TARGET})")

    def print_summary(self):
        print(f"\n{'='*80}\nSUMMARY\n{'='*80}")
        print(f"{'Run':<18} {'Result':<8} Detail")
        print(f"{'-'*80}")
        for name, passed, detail in self.verdicts:
            print(f"{name:<18} {'PASS' if passed else 'FAIL':<8} {detail}")
        return all(passed for _, passed, _ in self.verdicts)


if __name__ == "__main__":
    count = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 100
    runner = DeskScaleRunner(count=count, epochs=epochs)
    runner.run_max_clique()
    runner.run_autoencoder()
    runner.run_limited_labels()
    sys.exit(0 if runner.print_summary() else 1)
