"""Finite-difference gradient suite over the layer set and the tiny network.

Every case builds a module in float64, moves all of its parameters to a random
generic point and probes ``sum(W * module(x))`` for a fixed random ``W``.
Dropout is excluded: its mask is resampled per call, so it is not a
deterministic function of the parameters.
"""
from __future__ import annotations

import time

import numpy as np

from . import model as M
from .dataset import Modality
from .nn import functional as F
from .nn.gradcheck import grad_check_resampled
from .nn.layers import BatchNorm1d, BiGRU, Conv1d, Linear
from .nn.rng import RngStream
from .nn.tensor import Tensor, precision

LAYER_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3
NETWORK_COORDS = 3  # probed coordinates per parameter tensor of the full network


def _leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _perturb(module, rng):
    for p in module.parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.5
        if p.ndim == 1 and np.all(p.data == 0):
            p.data[...] = 0.1
    return module


def _module_case(build, in_shape, output=lambda out: out):
    def case(rng):
        module = _perturb(build(), rng.split("params"))
        module.train()
        x = _leaf(rng.standard_normal(in_shape))
        probe = {}

        def loss():
            out = output(module(x))
            if "w" not in probe:
                probe["w"] = rng.split("probe").standard_normal(out.shape)
            return (out * probe["w"]).sum()

        return loss, [x, *module.parameters()]

    return case


def _fusion_case(rng):
    module = _perturb(M.SelfAttentionFusion(6), rng.split("params"))
    a, b = _leaf(rng.standard_normal((2, 4, 5))), _leaf(rng.standard_normal((2, 2, 5)))
    w = rng.split("probe").standard_normal((2, 6, 5))
    return (lambda: (module([a, b]) * w).sum()), [a, b, *module.parameters()]


def _network_case(rng):
    cfg = M.NetConfig((M.tiny_modality(Modality.EEG),), dropout=0.0)
    net = M.build_model(cfg, int(rng.integers(1 << 30)))
    net.train()
    m = cfg.modalities[0]
    x = Tensor(rng.standard_normal((2, m.in_channels, m.window_length)))
    targets = rng.integers(0, cfg.num_classes, 2)
    return (lambda: F.softmax_cross_entropy(net(x), targets)), net.parameters()


LAYER_SUITE = {
    "Conv1d": _module_case(lambda: Conv1d(3, 4, 5, stride=2, padding="same"), (2, 3, 12)),
    "Conv1d_depthwise": _module_case(lambda: Conv1d(3, 3, 3, padding="same", groups=3, bias=False), (2, 3, 9)),
    "BatchNorm1d": _module_case(lambda: BatchNorm1d(3), (4, 3, 5)),
    "Linear": _module_case(lambda: Linear(5, 3), (4, 5)),
    "BiGRU": _module_case(lambda: BiGRU(3, 2), (2, 5, 3), output=lambda out: out[0]),
    "ParallelConvBlock": _module_case(lambda: M.ParallelConvBlock(2, 4, (3, 9)), (3, 2, 12)),
    "SeparableConv": _module_case(lambda: M.SeparableConv(4, 3, 2), (2, 4, 10)),
    "ChannelAttention": _module_case(lambda: M.ChannelAttention(4, 2), (2, 4, 8)),
    "TemporalAttention": _module_case(lambda: M.TemporalAttention(), (2, 4, 9)),
    "CBAM": _module_case(lambda: M.CBAM(4, 2), (2, 4, 8)),
    "ResidualBlock": _module_case(lambda: M.ResidualBlock(4, "ResNetCBAM", 2), (3, 4, 16)),
    "ResidualBlock_DSC": _module_case(lambda: M.ResidualBlock(4, "DSC+CBAM", 2), (3, 4, 16)),
    "SelfAttentionFusion": _fusion_case,
    "Head": _module_case(lambda: M.Head(4, 3, True, 2, 0.0), (2, 4, 6)),
}


def run_suite(seeds=range(5), network=True, progress=None):
    """Worst relative error per case over ``seeds``.

    Returns ``{name: (error, tolerance, seconds)}``; the ``"network"`` entry is
    the tiny unimodal EEG model probed on a random coordinate sample.
    """
    cases = dict(LAYER_SUITE)
    if network:
        cases["network"] = _network_case
    results = {}
    with precision("f64"):
        for name, make in cases.items():
            t0 = time.perf_counter()
            coords = NETWORK_COORDS if name == "network" else None
            worst = max(grad_check_resampled(make, RngStream(seed).split("gradsuite", name), coords=coords)
                        for seed in seeds)
            tol = NETWORK_TOLERANCE if name == "network" else LAYER_TOLERANCE
            results[name] = (worst, tol, time.perf_counter() - t0)
            if progress is not None:
                progress(name, *results[name])
    return results


def passed(results):
    return all(err < tol for err, tol, _ in results.values())
