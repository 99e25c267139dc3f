"""Reference run for the clean-image DIP sanity check.

Fits the medium generator (T=1000, lr=0.01) to 10 images drawn from the
40-image pool (bundled CIFAR-10 samples plus mirrors) and prints per-image MSE of the first and last trace samples and
the SSIM of the final sample to its target. The mean SSIM printed here
is the value frozen into the acceptance suite.

    python notebooks/dip_reference_run.py
"""

import tempfile
import time

import numpy as np

from dipdefense import GeneratorConfig, run_dip_trace, ssim
from dipdefense.harness import DatasetConfig, export_cifar10_samples, load_dataset


def main():
    with tempfile.TemporaryDirectory() as tmp:
        export_cifar10_samples(tmp, mirrored=True)
        items = load_dataset(DatasetConfig(directory=tmp, sample_count=10, sample_seed=0))
    cfg = GeneratorConfig.medium(max_iterations=1000, learning_rate=0.01)
    scores = []
    for item in items:
        t0 = time.time()
        trace = run_dip_trace(item.image, cfg)
        s = ssim(trace.images[-1], item.image)
        scores.append(s)
        print(f"{item.image_id}: mse {trace.mse[0]:.5f} -> {trace.mse[-1]:.5f}  ssim {s:.4f}  ({time.time() - t0:.1f}s)")
    print(f"mean SSIM(final, target) = {np.mean(scores):.6f}  min = {np.min(scores):.6f}")


if __name__ == "__main__":
    main()
