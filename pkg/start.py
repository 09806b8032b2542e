#!/usr/bin/env python3

import os
import signal
import subprocess
import sys


class PipelineDemo:
    """gen-data -> train -> encode -> classify-limited, each step a run.py subprocess"""

    def __init__(self, out_dir='pipeline', seed=0, count=2000, epochs=100):
        self.out_dir = out_dir
        self.seed = seed
        self.count = count
        self.epochs = epochs
        self.current = None

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)

    def run_step(self, name, args):
        cmd = [sys.executable, 'run.py', '--seed', str(self.seed)] + args
        print(f"\n[{name}] {' '.join(cmd[1:])}")
        self.current = subprocess.Popen(cmd)
        code = self.current.wait()
        self.current = None
        if code != 0:
            print(f"{name} failed with exit status {code}")
            return False
        return True

    def cleanup(self):
        if self.current is not None:
            try:
                self.current.terminate()
                self.current.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.current.kill()

    def signal_handler(self, signum, frame):
        print("\nStopping pipeline...")
        self.cleanup()
        sys.exit(1)

    def run(self):
        signal.signal(signal.SIGINT, self.signal_handler)
        signal.signal(signal.SIGTERM, self.signal_handler)

        print("Starting Graph2Graph pipeline")
        print("=" * 40)
        steps = [
            ('gen-data', ['--out-dir', self.path('data'), 'gen-data', '--kind', 'two-class',
                          '--count', str(self.count)]),
            ('train', ['--out-dir', self.path('autoencoder'), 'train', '--data', self.path('data'),
                       '--task', 'autoencoder', '--epochs', str(self.epochs)]),
            ('encode', ['--out-dir', self.path('latents'), 'encode', '--data', self.path('data'),
                        '--checkpoint', self.path('autoencoder', 'checkpoint.g2g')]),
            ('classify-limited', ['--out-dir', self.path('classification'), 'classify-limited',
                                  '--latents', self.path('latents', 'latents.csv')]),
        ]
        for name, args in steps:
            if not self.run_step(name, args):
                return 1

        print("\nPipeline finished")
        print("=" * 40)
        print(f"Results: {self.path('classification', 'limited_labels.csv')}")
        return 0


if __name__ == "__main__":
    out_dir = sys.argv[1] if len(sys.argv) > 1 else 'pipeline'
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 100
    demo = PipelineDemo(out_dir=out_dir, epochs=epochs)
    sys.exit(demo.run())
