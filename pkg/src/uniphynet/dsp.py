"""Butterworth and notch IIR design, zero-phase filtering and per-window z-scoring."""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import Modality


class DesignError(ValueError):
    pass


class LengthError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class FilterKind(str, enum.Enum):
    LOWPASS = "lowpass"
    BANDPASS = "bandpass"
    NOTCH = "notch"


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    sample_rate_hz: float
    cutoffs_hz: tuple
    order: int | None = None
    notch_q: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        cut = tuple(float(c) for c in np.atleast_1d(self.cutoffs_hz))
        object.__setattr__(self, "cutoffs_hz", cut)
        nyq = self.sample_rate_hz / 2
        if any(c <= 0 for c in cut):
            raise DesignError(f"cutoffs must be positive, got {cut}")
        if any(c >= nyq for c in cut):
            raise DesignError(f"cutoff {max(cut)} Hz is not below Nyquist ({nyq} Hz)")
        want = 2 if self.kind is FilterKind.BANDPASS else 1
        if len(cut) != want:
            raise DesignError(f"{self.kind.value} takes {want} cutoff(s), got {len(cut)}")
        if self.kind is FilterKind.BANDPASS and not cut[0] < cut[1]:
            raise DesignError(f"band-pass needs low < high, got {cut}")
        if self.kind is FilterKind.NOTCH:
            if self.notch_q is None or self.notch_q <= 0:
                raise DesignError("notch needs a positive Q")
        elif self.order is None or int(self.order) < 1:
            raise DesignError(f"{self.kind.value} needs a positive order")


@dataclass(frozen=True, eq=False)
class BiquadCascade:
    """Second-order sections, rows ``[b0, b1, b2, 1, a1, a2]``."""

    sections: np.ndarray

    def __post_init__(self):
        sos = np.array(self.sections, dtype=np.float64).reshape(-1, 6)
        if not np.allclose(sos[:, 3], 1.0):
            raise DesignError("sections must be normalized so a0 = 1")
        for i, (a1, a2) in enumerate(sos[:, 4:6]):
            if np.max(np.abs(np.roots([1.0, a1, a2]))) >= 1.0:
                raise DesignError(f"section {i} is unstable")
        sos.flags.writeable = False
        object.__setattr__(self, "sections", sos)

    @property
    def n_sections(self):
        return self.sections.shape[0]

    def response(self, freqs_hz, sample_rate_hz):
        """Complex frequency response evaluated on the unit circle."""
        z1 = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / sample_rate_hz)
        h = np.ones_like(z1)
        for b0, b1, b2, _, a1, a2 in self.sections:
            h *= (b0 + b1 * z1 + b2 * z1 * z1) / (1.0 + a1 * z1 + a2 * z1 * z1)
        return h

    def steady_state(self):
        """Per-section initial state for a unit step input already at rest."""
        zi = np.zeros((self.n_sections, 2))
        scale = 1.0
        for i, (b0, b1, b2, _, a1, a2) in enumerate(self.sections):
            gain = (b0 + b1 + b2) / (1.0 + a1 + a2)
            z2 = b2 - a2 * gain
            zi[i] = scale * (b1 - a1 * gain + z2), scale * z2
            scale *= gain
        return zi


def _prototype_poles(n):
    k = np.arange(1, n + 1)
    return np.exp(1j * np.pi * (2 * k + n - 1) / (2 * n))


def _bilinear(s, fs):
    return (2 * fs + s) / (2 * fs - s)


def _pole_section(poles):
    """Denominator [1, a1, a2] of one or two z-plane poles (a conjugate pair or reals)."""
    a = np.real(np.poly(poles))
    return np.concatenate([a, np.zeros(3 - len(a))])


def _pair_up(poles):
    """Split a conjugate-closed pole set into groups of at most two for real sections."""
    upper = sorted((p for p in poles if p.imag > 1e-12), key=lambda p: abs(p))
    real = sorted((p.real for p in poles if abs(p.imag) <= 1e-12))
    groups = [[p, np.conj(p)] for p in upper]
    groups += [real[i:i + 2] for i in range(0, len(real), 2)]
    return groups


def _butter_lowpass(order, fc, fs):
    warped = 2 * fs * np.tan(np.pi * fc / fs)
    groups = _pair_up(_bilinear(warped * _prototype_poles(order), fs))
    sos = []
    for g in groups:
        a = _pole_section(g)
        b = np.array([1.0, 2.0, 1.0]) if len(g) == 2 else np.array([1.0, 1.0, 0.0])
        b *= a.sum() / b.sum()  # unit gain at DC
        sos.append(np.concatenate([b, a]))
    return np.array(sos)


def _butter_bandpass(order, lo, hi, fs):
    w1, w2 = (2 * fs * np.tan(np.pi * f / fs) for f in (lo, hi))
    w0, bw = np.sqrt(w1 * w2), w2 - w1
    poles = []
    for p in _prototype_poles(order):
        disc = np.sqrt((p * bw) ** 2 - 4 * w0 ** 2 + 0j)
        poles += [(p * bw + disc) / 2, (p * bw - disc) / 2]
    groups = _pair_up(_bilinear(np.array(poles), fs))
    # bilinear maps j*w0 exactly onto the digital centre frequency, where the gain is 1
    zc = np.exp(-2j * np.arctan(w0 / (2 * fs)))
    sos = []
    for g in groups:
        a = _pole_section(g)
        b = np.array([1.0, 0.0, -1.0])
        b *= abs(np.polyval(a[::-1], zc)) / abs(np.polyval(b[::-1], zc))
        sos.append(np.concatenate([b, a]))
    sos = np.array(sos)
    h = BiquadCascade(sos).response(fs * np.arctan(w0 / (2 * fs)) / np.pi, fs)
    if np.real(h) < 0:
        sos[0, :3] *= -1
    return sos


def _notch(f0, q, fs):
    w0 = 2 * np.pi * f0 / fs
    g = 1.0 / (1.0 + np.tan(w0 / q / 2))
    b = g * np.array([1.0, -2 * np.cos(w0), 1.0])
    a = np.array([1.0, -2 * g * np.cos(w0), 2 * g - 1])
    return np.concatenate([b, a])[None, :]


@functools.lru_cache(maxsize=64)
def design_filter(spec):
    """Butterworth low/band-pass via prewarped bilinear transform, or a second-order notch."""
    fs = spec.sample_rate_hz
    if spec.kind is FilterKind.LOWPASS:
        sos = _butter_lowpass(int(spec.order), spec.cutoffs_hz[0], fs)
    elif spec.kind is FilterKind.BANDPASS:
        sos = _butter_bandpass(int(spec.order), *spec.cutoffs_hz, fs)
    else:
        sos = _notch(spec.cutoffs_hz[0], spec.notch_q, fs)
    return BiquadCascade(sos)


def padlen(cascade):
    return 6 * cascade.n_sections


def _forward_backward(sos, zi, x):
    y = kernels.sosfilt(sos, x, zi[:, None, :] * x[None, :, :1])
    y = kernels.sosfilt(sos, y[:, ::-1], zi[:, None, :] * y[None, :, -1:])
    return y[:, ::-1]


def filtfilt(cascade, x):
    """Zero-phase filtering along the last axis of a 1D or 2D signal.

    Edges are extended by odd reflection and the filter starts from its
    steady state. The result is the mean of the forward-first and
    backward-first passes, which makes it exactly time-reversal symmetric.
    """
    x = np.asarray(x, dtype=np.float64)
    one_d = x.ndim == 1
    rows = np.atleast_2d(x).reshape(-1, x.shape[-1])
    n, pad = rows.shape[1], padlen(cascade)
    if n <= pad:
        raise LengthError(f"signal of {n} samples is too short; need more than {pad}")
    left = 2 * rows[:, :1] - rows[:, pad:0:-1]
    right = 2 * rows[:, -1:] - rows[:, -2:-pad - 2:-1]
    ext = np.concatenate([left, rows, right], axis=1)
    sos, zi = cascade.sections, cascade.steady_state()
    y = 0.5 * (_forward_backward(sos, zi, ext) + _forward_backward(sos, zi, ext[:, ::-1])[:, ::-1])
    y = y[:, pad:pad + n]
    return y[0] if one_d else y.reshape(x.shape)


def zscore_array(x):
    """Per-row zero mean and unit population std; rows with std < 1e-8 become zeros."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    ok = sd >= 1e-8
    return np.where(ok, (x - mu) / np.where(ok, sd, 1.0), 0.0)


def zscore(w):
    return w.with_data(zscore_array(w.data))


def _bp(lo, hi, order):
    return ("bandpass", (lo, hi), order, None)


PRESETS = {
    "eeg_default": (("notch", (60.0,), None, 30.0), _bp(0.5, 40.0, 4)),
    "eeg_lp20": (("lowpass", (20.0,), 4, None),),
    "ecg_default": (_bp(0.5, 40.0, 4),),
    "eda_default": (_bp(0.05, 3.0, 2),),
}

DEFAULT_PRESET = {Modality.EEG: "eeg_default", Modality.ECG: "ecg_default", Modality.EDA: "eda_default"}


def preset_filters(name, sample_rate_hz):
    if name not in PRESETS:
        raise KeyError(f"unknown filter preset {name!r}; choose from {sorted(PRESETS)}")
    return [design_filter(FilterSpec(kind, sample_rate_hz, cut, order, q)) for kind, cut, order, q in PRESETS[name]]


def preprocess_array(x, modality, preset=None):
    """Filter then z-score an array whose last axis is time."""
    modality = Modality.parse(modality)
    y = np.asarray(x, dtype=np.float64)
    for cascade in preset_filters(preset or DEFAULT_PRESET[modality], modality.sample_rate_hz):
        y = filtfilt(cascade, y)
    return zscore_array(y)


def preprocess(w, preset=None):
    """Apply the modality's filter chain and z-score; marks the window preprocessed."""
    if w.preprocessed:
        raise StateError("window is already preprocessed")
    return w.with_data(preprocess_array(w.data, w.modality, preset), preprocessed=True)


def preprocess_dataset(ds, presets=None):
    """Preprocess every modality of a ``LabeledDataset``; ``presets`` maps modality to preset name."""
    if ds.preprocessed:
        raise StateError("dataset is already preprocessed")
    presets = {Modality.parse(k): v for k, v in (presets or {}).items()}
    data = {m: preprocess_array(a, m, presets.get(m)) for m, a in ds.data.items()}
    return ds.with_data(data, preprocessed=True)
