#!/usr/bin/env python3
"""Regenerate the frozen multiscale-SSIM oracle values in tests/test_metrics.py.

Uses tensorflow's independent implementation on the same seeded image pairs
the tests construct.  Only needed when the seeded pairs or the metric
conventions change; tensorflow is not a package dependency.
"""

import numpy as np


def noise_pair_256(seed=123):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(256, 256, 3)).astype(np.uint8)
    b = np.clip(a.astype(np.float64) + rng.normal(0.0, 20.0, a.shape), 0, 255)
    return a, b.astype(np.uint8)


def smooth_pair_256(seed=7):
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(256, 256, 3)).astype(np.float64)
    smooth = gaussian_filter(base, sigma=(6, 6, 0))
    smooth = 255 * (smooth - smooth.min()) / (smooth.max() - smooth.min())
    a = smooth.astype(np.uint8)
    b = np.clip(smooth + rng.normal(0, 10, smooth.shape), 0, 255).astype(np.uint8)
    return a, b


def main():
    import tensorflow as tf

    for name, (a, b) in (("MSSSIM_ORACLE_NOISE_SEED123", noise_pair_256(123)),
                         ("MSSSIM_ORACLE_SMOOTH_SEED7", smooth_pair_256(7))):
        value = float(tf.image.ssim_multiscale(
            tf.constant(a[None].astype(np.float64)),
            tf.constant(b[None].astype(np.float64)),
            max_val=255.0, filter_size=11, filter_sigma=1.5,
            k1=0.01, k2=0.03).numpy()[0])
        print(f"{name} = {value!r}")


if __name__ == "__main__":
    main()
