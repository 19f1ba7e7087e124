"""Compare the numba kernels with their numpy fallbacks on 640x480 inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Numba timings exclude the first (compiling) call.
"""
import argparse
import timeit

import numpy as np

from segdense import _kernels as K
from segdense.data import annulus_mask


def inputs(seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, (480, 640)).astype(np.float64)
    ring = annulus_mask(480, 640, 320, 240, 50, 130)
    noisy = ring ^ (rng.random((480, 640)) < 0.02)
    other = (rng.random((480, 640)) < 0.5).astype(np.uint8)
    return image, noisy, other


def cases(image, noisy, other):
    return {
        "bilinear 640x480->224x224": (K.bilinear_resize_numpy, K.bilinear_resize_numba, (image, 224, 224)),
        "nearest 224x224->640x480": (K.nearest_resize_numpy, K.nearest_resize_numba,
                                     (noisy[:224, :224].astype(np.uint8), 480, 640)),
        "label4 noisy annulus": (K.label4_numpy, K.label4_numba, (noisy,)),
        "fill border holes": (K.fill_border_holes_numpy, K.fill_border_holes_numba, (noisy,)),
        "xor count": (K.xor_count_numpy, K.xor_count_numba, (noisy.astype(np.uint8), other)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn, a) in cases(*inputs()).items():
        nb_fn(*a)  # compile
        t_np = min(timeit.repeat(lambda: np_fn(*a), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb_fn(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
