#!/usr/bin/env python3
"""Report conv3d_fast vs conv3d_ref wall time (not asserted in CI)."""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from meshseg.engine import FeatureMap, conv3d_fast, conv3d_ref  # noqa: E402
from meshseg.model import CONV3D, LayerSpec  # noqa: E402


def bench(fn, fm, layer, wb, repeats=3):
    fn(fm, layer, wb)  # warm the compiled kernel
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(fm, layer, wb)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    extent = int(sys.argv[1]) if len(sys.argv) > 1 else 96
    channels, dilation = 5, 16
    x = rng.standard_normal((channels, extent, extent, extent)).astype(np.float32)
    w = rng.standard_normal((channels, channels, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(channels).astype(np.float32)
    layer = LayerSpec(CONV3D, channels, channels, kernel=(3, 3, 3),
                      dilation=(dilation,) * 3, padding=(dilation,) * 3)
    fm = FeatureMap(x)
    t_ref = bench(conv3d_ref, fm, layer, (w, b))
    t_fast = bench(conv3d_fast, fm, layer, (w, b))
    print(f"{extent}^3 x {channels}ch, dilation {dilation}:")
    print(f"  conv3d_ref  {t_ref:8.3f} s")
    print(f"  conv3d_fast {t_fast:8.3f} s  ({t_ref / t_fast:.1f}x)")


if __name__ == "__main__":
    main()
