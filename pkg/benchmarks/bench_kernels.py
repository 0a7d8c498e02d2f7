"""Compare the compiled Cython kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each case first checks that
the two backends agree, then reports the best-of-``repeat`` wall time.
The dense-conv rows sweep the reduction width ``Cin * k`` that decides the
dispatch threshold in ``uniphynet.kernels``.
"""
import argparse
import timeit

import numpy as np

from uniphynet import dsp
from uniphynet.kernels import GEMM_MIN_REDUCTION, backend_module


def _cases(rng, batch):
    sos = np.ascontiguousarray(dsp.preset_filters("eeg_default", 256)[1].sections)
    x = rng.standard_normal((batch * 4, 2560))
    zi = np.zeros((sos.shape[0], x.shape[0], 2))
    yield "sosfilt 4-section, 2560 samples", "sosfilt", (sos, x, zi)
    for cin, k, length in [(4, 3, 2560), (4, 9, 2560), (16, 3, 640), (32, 3, 320), (64, 3, 160), (64, 9, 160)]:
        x = rng.standard_normal((batch, cin, length)).astype(np.float32)
        w = rng.standard_normal((cin, cin, k)).astype(np.float32)
        gout = rng.standard_normal((batch, cin, length)).astype(np.float32)
        tag = f"Cin*k={cin * k:<3d}"
        yield f"conv fwd {tag} ({cin}x{k}, L={length})", "conv1d_forward", (x, w, 1, k // 2, k // 2)
        yield f"conv bwd {tag} ({cin}x{k}, L={length})", "conv1d_backward", (x, w, gout, 1, k // 2, k // 2)
    x = rng.standard_normal((batch, 64, 320)).astype(np.float32)
    w = rng.standard_normal((64, 1, 3)).astype(np.float32)
    gout = rng.standard_normal((batch, 64, 160)).astype(np.float32)
    yield "depthwise fwd 64ch k3 s2", "depthwise_forward", (x, w, 2, 0, 1)
    yield "depthwise bwd 64ch k3 s2", "depthwise_backward", (x, w, gout, 2, 0, 1)


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    fast, slow = backend_module("cython"), backend_module("python")
    rng = np.random.default_rng(0)
    print(f"dense conv dispatch: numpy GEMM when Cin*k >= {GEMM_MIN_REDUCTION}, else compiled loop")
    print(f"{'case':44s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, fn, fargs in _cases(rng, args.batch):
        def call(mod):
            # sosfilt updates its state argument in place, so give each call a fresh copy
            a = (*fargs[:2], fargs[2].copy()) if fn == "sosfilt" else fargs
            return getattr(mod, fn)(*a)

        diff = _max_diff(call(fast), call(slow))
        t_fast = min(timeit.repeat(lambda: call(fast), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: call(slow), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:44s} {t_fast:10.2f} {t_slow:10.2f} {t_slow / t_fast:8.2f} {diff:11.2e}")


if __name__ == "__main__":
    main()
