"""Training-fold augmentation: Gaussian noise, spline time warp and amplitude scaling."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .dataset import ConfigError, LabeledDataset, TrainingFold
from .nn.rng import RngStream

log = logging.getLogger(__name__)

NOISE, WARP, SCALE = 0, 1, 2
OPERATORS = ("noise", "warp", "scale")
MAX_WARP_ATTEMPTS = 20


class ProvenanceError(TypeError):
    pass


@dataclass(frozen=True)
class AugmentPolicy:
    noise_sigma_rel: float = 0.02
    max_warp: float = 0.10
    warp_knots: int = 4
    scale_low: float = 0.8
    scale_high: float = 1.2
    copies_per_window: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma_rel < 0:
            raise ConfigError("noise_sigma_rel must be >= 0")
        if not 0 <= self.max_warp < 0.5:
            raise ConfigError("max_warp must lie in [0, 0.5)")
        if self.warp_knots < 1:
            raise ConfigError("warp_knots must be >= 1")
        if not 0 < self.scale_low <= self.scale_high:
            raise ConfigError("need 0 < scale_low <= scale_high")
        if self.copies_per_window < 0:
            raise ConfigError("copies_per_window must be >= 0")


def _require_preprocessed(w):
    if not w.preprocessed:
        raise ValueError("augmentation expects preprocessed windows")


# array operators; the last axis is time ---------------------------------------

def noise_array(x, sigma_rel, rng):
    if sigma_rel < 0:
        raise ConfigError("sigma_rel must be >= 0")
    sd = x.std(axis=-1, keepdims=True)
    return x + rng.standard_normal(x.shape) * (sigma_rel * sd)


def warp_map(n, max_warp, knots, rng):
    """Strictly increasing sample map through (0, 0) and (n-1, n-1), or None after repeated failures."""
    if knots < 1:
        raise ConfigError("knots must be >= 1")
    grid = np.arange(n, dtype=np.float64)
    if max_warp == 0:
        return grid  # the spline through undisplaced knots is the identity; skip rounding noise
    xs = np.linspace(0.0, n - 1.0, knots + 2)
    for _ in range(MAX_WARP_ATTEMPTS):
        ys = xs.copy()
        ys[1:-1] += rng.uniform(-1.0, 1.0, knots) * max_warp * n
        tau = CubicSpline(xs, ys)(grid)
        if np.all(np.diff(tau) > 0):
            return tau
    return None


def warp_array(x, max_warp, knots, rng):
    tau = warp_map(x.shape[-1], max_warp, knots, rng)
    if tau is None:
        log.warning("no monotone warp in %d attempts; window left unchanged", MAX_WARP_ATTEMPTS)
        return x.copy()
    grid = np.arange(x.shape[-1], dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    out = np.stack([np.interp(tau, grid, row) for row in flat])
    return out.reshape(x.shape)


def scale_array(x, low, high, rng, factor=None):
    if factor is None:
        factor = rng.uniform(low, high)
    return x * factor


# window operators ------------------------------------------------------------

def add_gaussian_noise(w, sigma_rel, rng):
    _require_preprocessed(w)
    return w.with_data(noise_array(w.data, sigma_rel, rng))


def time_warp(w, max_warp, knots, rng):
    _require_preprocessed(w)
    return w.with_data(warp_array(w.data, max_warp, knots, rng))


def amplitude_scale(w, rng, low=0.8, high=1.2, factor=None):
    _require_preprocessed(w)
    return w.with_data(scale_array(w.data, low, high, rng, factor))


def apply_operator(op, x, policy, rng):
    if op == NOISE:
        return noise_array(x, policy.noise_sigma_rel, rng)
    if op == WARP:
        return warp_array(x, policy.max_warp, policy.warp_knots, rng)
    return scale_array(x, policy.scale_low, policy.scale_high, rng)


@dataclass(frozen=True)
class AugmentedFold:
    dataset: LabeledDataset
    operator: np.ndarray  # -1 for originals, else index into OPERATORS
    source: np.ndarray  # position of the original window in the full dataset


def augment_training_fold(train, policy, rng=None):
    """Originals plus ``copies_per_window`` copies, each made by one uniformly chosen operator.

    Window ``i`` draws from ``rng.split(i)`` with ``i`` its position in the full
    dataset, so results do not depend on ordering or scheduling. All modalities
    of a window replay the same stream, so a copy gets the same relative warp
    and scale in every modality.
    """
    if not isinstance(train, TrainingFold):
        raise ProvenanceError("augmentation only accepts a TrainingFold from FoldPlan.training_fold")
    ds = train.dataset
    if not ds.preprocessed:
        raise ValueError("augmentation expects preprocessed windows")
    rng = rng if rng is not None else RngStream(policy.seed)
    copies = policy.copies_per_window
    n = len(ds)
    order = np.repeat(np.arange(n), copies + 1)
    ops = np.full(n * (copies + 1), -1, dtype=np.int64)
    data = {m: np.empty((len(order),) + a.shape[1:], dtype=a.dtype) for m, a in ds.data.items()}
    for i in range(n):
        wrng = rng.split(int(train.indices[i]))
        base = i * (copies + 1)
        for m, a in ds.data.items():
            data[m][base] = a[i]
        for j in range(copies):
            op = int(wrng.split(j, "op").integers(3))
            ops[base + 1 + j] = op
            for m, a in ds.data.items():
                draw = wrng.split(j, "draw")
                if op == NOISE:
                    draw = draw.split(m.value)
                data[m][base + 1 + j] = apply_operator(op, a[i], policy, draw)
    out = LabeledDataset(data, ds.ratings[order], ds.subjects[order], ds.trials[order], ds.offsets[order],
                         ds.label_scheme, True, ds.seconds)
    return AugmentedFold(out, ops, train.indices[order])
