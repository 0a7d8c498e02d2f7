"""Recordings, windows, label grouping, fold plans and a synthetic stand-in dataset.

On-disk layout (one directory per subject and trial)::

    <root>/<subject_id>/<trial_id>/{eeg.csv, ecg.csv, eda.csv, labels.csv}

Signal CSVs carry a ``ch1,...,chN`` header and one row per sample; ``labels.csv``
has header ``offset_s,rating`` with offsets in multiples of 10 s.
"""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .nn.rng import RngStream

log = logging.getLogger(__name__)

WINDOW_SECONDS = 10


class Modality(str, enum.Enum):
    EEG = "EEG"
    ECG = "ECG"
    EDA = "EDA"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown modality {value!r}") from None

    @property
    def sample_rate_hz(self):
        return MODALITY_FORMAT[self][0]

    @property
    def channels(self):
        return MODALITY_FORMAT[self][1]

    @property
    def filename(self):
        return f"{self.value.lower()}.csv"


# (sample rate, channel count) of the CL-Drive recordings
MODALITY_FORMAT = {Modality.EEG: (256, 4), Modality.ECG: (512, 3), Modality.EDA: (128, 3)}


class LabelScheme(str, enum.Enum):
    BINARY = "binary"
    TERNARY = "ternary"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown label scheme {value!r}") from None

    @property
    def num_classes(self):
        return 2 if self is LabelScheme.BINARY else 3


class DataError(ValueError):
    """Base class for dataset problems."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    pass


class SegmentError(DataError):
    pass


class ConfigError(DataError):
    pass


@dataclass(frozen=True)
class Recording:
    subject_id: int
    trial_id: int
    modality: Modality
    sample_rate_hz: int
    samples: np.ndarray  # (channels, total_samples)
    ratings: tuple  # ((offset_s, rating), ...) ordered by offset

    def __post_init__(self):
        rate, channels = MODALITY_FORMAT[self.modality]
        if self.sample_rate_hz != rate:
            raise SchemaError(f"{self.modality.value} expects {rate} Hz, got {self.sample_rate_hz}")
        if self.samples.ndim != 2 or self.samples.shape[0] != channels:
            raise SchemaError(f"{self.modality.value} expects {channels} channels, got {self.samples.shape[0]}")
        for offset, rating in self.ratings:
            _check_rating(rating)
            if offset % WINDOW_SECONDS:
                raise ValidationError(f"rating offset {offset} s is not a multiple of {WINDOW_SECONDS}")

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def duration_s(self):
        return self.samples.shape[1] / self.sample_rate_hz


@dataclass(frozen=True)
class Window:
    data: np.ndarray  # (channels, seconds * sample_rate_hz)
    rating: int
    subject_id: int
    trial_id: int
    modality: Modality
    offset_s: int = 0
    preprocessed: bool = False
    seconds: float = WINDOW_SECONDS

    def __post_init__(self):
        _check_rating(self.rating)
        width = round(self.seconds * self.modality.sample_rate_hz)
        if self.data.ndim != 2 or self.data.shape[1] != width:
            raise SchemaError(f"window width {self.data.shape} != {width} samples")

    @property
    def key(self):
        return (self.subject_id, self.trial_id, self.offset_s)

    def with_data(self, data, **changes):
        return replace(self, data=data, **changes)


def _check_rating(rating):
    if not 1 <= int(rating) <= 9:
        raise ValidationError(f"rating {rating} outside 1..9")


def map_label(rating, scheme):
    """Group a 1..9 rating into a 0-based class index."""
    scheme = LabelScheme.parse(scheme)
    _check_rating(rating)
    if scheme is LabelScheme.BINARY:
        return 0 if rating <= 4 else 1
    return (int(rating) - 1) // 3


# rating ranges per class, used when sampling synthetic ratings
CLASS_RATINGS = {
    LabelScheme.BINARY: ((1, 2, 3, 4), (5, 6, 7, 8, 9)),
    LabelScheme.TERNARY: ((1, 2, 3), (4, 5, 6), (7, 8, 9)),
}


# ingestion ------------------------------------------------------------------

def _read_signal_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        expected = [f"ch{i + 1}" for i in range(len(header))]
        if [h.strip() for h in header] != expected:
            raise ParseError(f"{path}:1: header must be ch1,...,chN, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(header)).T.copy()


def _read_labels_csv(path):
    ratings = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["offset_s", "rating"]:
            raise ParseError(f"{path}:1: header must be offset_s,rating")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                offset, rating = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not 1 <= rating <= 9:
                raise ValidationError(f"{path}:{lineno}: rating {rating} outside 1..9")
            ratings.append((offset, rating))
    return tuple(sorted(ratings))


def load_recording(path, expected, labels_path=None, subject_id=None, trial_id=None, sample_rate_hz=None):
    """Read one modality CSV plus its labels into a validated ``Recording``.

    Subject and trial ids default to the parent directory names of ``path``.
    """
    path = Path(path)
    modality = Modality.parse(expected)
    labels_path = Path(labels_path) if labels_path else path.parent / "labels.csv"
    samples = _read_signal_csv(path)
    if samples.shape[0] != modality.channels:
        raise SchemaError(f"{path}: {modality.value} needs {modality.channels} channels, file has {samples.shape[0]}")
    if sample_rate_hz is not None and sample_rate_hz != modality.sample_rate_hz:
        raise SchemaError(f"{path}: {modality.value} is sampled at {modality.sample_rate_hz} Hz, not {sample_rate_hz}")
    if subject_id is None:
        subject_id = int(path.parent.parent.name)
    if trial_id is None:
        trial_id = int(path.parent.name)
    return Recording(int(subject_id), int(trial_id), modality, modality.sample_rate_hz,
                     samples, _read_labels_csv(labels_path))


def segment(rec):
    """One 10 s window per rating, starting at the rating offset."""
    width = WINDOW_SECONDS * rec.sample_rate_hz
    windows = []
    for offset, rating in rec.ratings:
        start = offset * rec.sample_rate_hz
        if start + width > rec.samples.shape[1]:
            raise SegmentError(
                f"rating at offset {offset} s needs data up to {offset + WINDOW_SECONDS} s "
                f"but the recording lasts {rec.duration_s:g} s")
        windows.append(Window(rec.samples[:, start:start + width].copy(), rating, rec.subject_id,
                              rec.trial_id, rec.modality, offset))
    return windows


# labeled datasets -------------------------------------------------------------

def _frozen(a):
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Windows stacked per modality and aligned by (subject, trial, offset)."""

    data: dict  # Modality -> (N, C, L) array
    ratings: np.ndarray
    subjects: np.ndarray
    trials: np.ndarray
    offsets: np.ndarray
    label_scheme: LabelScheme
    preprocessed: bool = False
    seconds: float = WINDOW_SECONDS
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.ratings)
        for m, arr in self.data.items():
            if arr.shape[0] != n:
                raise SchemaError(f"{m.value} has {arr.shape[0]} windows, expected {n}")
        object.__setattr__(self, "data", {Modality.parse(m): _frozen(a) for m, a in self.data.items()})
        for name in ("ratings", "subjects", "trials", "offsets"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))
        object.__setattr__(self, "label_scheme", LabelScheme.parse(self.label_scheme))
        labels = np.array([map_label(r, self.label_scheme) for r in self.ratings], dtype=np.int64)
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self):
        return len(self.ratings)

    @property
    def modalities(self):
        return tuple(self.data)

    @property
    def num_classes(self):
        return self.label_scheme.num_classes

    def keys(self):
        return list(zip(self.subjects.tolist(), self.trials.tolist(), self.offsets.tolist()))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset({m: a[idx] for m, a in self.data.items()}, self.ratings[idx], self.subjects[idx],
                              self.trials[idx], self.offsets[idx], self.label_scheme, self.preprocessed,
                              self.seconds)

    def with_scheme(self, scheme):
        return replace(self, label_scheme=LabelScheme.parse(scheme))

    def with_data(self, data, preprocessed=None):
        return replace(self, data=data, preprocessed=self.preprocessed if preprocessed is None else preprocessed)

    def select_modalities(self, modalities):
        mods = [Modality.parse(m) for m in modalities]
        missing = [m.value for m in mods if m not in self.data]
        if missing:
            raise ConfigError(f"dataset has no {missing} data")
        return replace(self, data={m: self.data[m] for m in mods})

    def window(self, i, modality):
        m = Modality.parse(modality)
        return Window(np.array(self.data[m][i]), int(self.ratings[i]), int(self.subjects[i]), int(self.trials[i]),
                      m, int(self.offsets[i]), self.preprocessed, self.seconds)

    def windows(self, modality):
        return [self.window(i, modality) for i in range(len(self))]

    @classmethod
    def from_windows(cls, windows_by_modality, scheme):
        """Align per-modality windows by key; tuples missing any modality are dropped."""
        mods = [Modality.parse(m) for m in windows_by_modality]
        index = {m: {w.key: w for w in windows_by_modality[m]} for m in mods}
        common = set.intersection(*(set(ix) for ix in index.values())) if mods else set()
        dropped = sum(len(ix) for ix in index.values()) - len(common) * len(mods)
        if dropped:
            log.info("dropped %d windows without a counterpart in every modality", dropped)
        keys = sorted(common)
        for k in keys:
            ratings = {index[m][k].rating for m in mods}
            if len(ratings) != 1:
                raise ValidationError(f"windows at {k} disagree on rating: {sorted(ratings)}")
        if not keys:
            raise DataError("no aligned windows")
        first = index[mods[0]]
        flags = {index[m][k].preprocessed for m in mods for k in keys}
        if len(flags) != 1:
            raise ValidationError("cannot mix preprocessed and raw windows")
        return cls(
            {m: np.stack([index[m][k].data for k in keys]) for m in mods},
            [first[k].rating for k in keys],
            [k[0] for k in keys], [k[1] for k in keys], [k[2] for k in keys],
            scheme, flags.pop(), first[keys[0]].seconds,
        )


def load_dataset(root, modalities=("EEG",), scheme="binary"):
    """Walk ``<root>/<subject>/<trial>/`` and build an aligned dataset."""
    root = Path(root)
    mods = [Modality.parse(m) for m in modalities]
    per_mod = {m: [] for m in mods}
    trial_dirs = sorted(p for p in root.glob("*/*") if p.is_dir())
    if not trial_dirs:
        raise DataError(f"{root}: no <subject>/<trial> directories")
    for trial_dir in trial_dirs:
        for m in mods:
            f = trial_dir / m.filename
            if not f.exists():
                log.info("%s missing, skipping", f)
                continue
            per_mod[m].extend(segment(load_recording(f, m)))
    return LabeledDataset.from_windows(per_mod, scheme)


def write_dataset(ds, root):
    """Write ``ds`` in the CSV layout; windows of a trial are laid end to end."""
    root = Path(root)
    written = []
    for subj, trial in sorted(set(zip(ds.subjects.tolist(), ds.trials.tolist()))):
        idx = np.flatnonzero((ds.subjects == subj) & (ds.trials == trial))
        idx = idx[np.argsort(ds.offsets[idx])]
        offsets = ds.offsets[idx]
        step = round(ds.seconds) if ds.seconds >= 1 else 1
        if np.any(offsets != np.arange(len(idx)) * WINDOW_SECONDS) or step != WINDOW_SECONDS:
            raise DataError("write_dataset needs contiguous 10 s windows starting at offset 0")
        d = root / str(subj) / str(trial)
        d.mkdir(parents=True, exist_ok=True)
        for m, arr in ds.data.items():
            signal = np.concatenate(list(arr[idx]), axis=1)
            path = d / m.filename
            header = ",".join(f"ch{i + 1}" for i in range(signal.shape[0]))
            np.savetxt(path, signal.T, delimiter=",", header=header, comments="", fmt="%.9g")
            written.append(path)
        with open(d / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["offset_s", "rating"])
            w.writerows(zip(offsets.tolist(), ds.ratings[idx].tolist()))
        written.append(d / "labels.csv")
    return written


def save_cache(ds, path):
    """Store ``ds`` as a single ``.npz`` file (no pickling)."""
    arrays = {f"data_{m.value}": a for m, a in ds.data.items()}
    np.savez(path, ratings=ds.ratings, subjects=ds.subjects, trials=ds.trials, offsets=ds.offsets,
             meta=np.array([ds.label_scheme.value, str(int(ds.preprocessed)), repr(float(ds.seconds))]), **arrays)
    return Path(path)


def load_cache(path):
    with np.load(path, allow_pickle=False) as z:
        scheme, preprocessed, seconds = z["meta"].tolist()
        data = {Modality.parse(k[len("data_"):]): z[k] for k in z.files if k.startswith("data_")}
        return LabeledDataset(data, z["ratings"], z["subjects"], z["trials"], z["offsets"], scheme,
                              bool(int(preprocessed)), float(seconds))


# synthetic data ---------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    subjects: int = 6
    trials: int = 3
    classes: int = 2
    modalities: tuple = (Modality.EEG,)
    windows_per_trial: int = 18
    seconds: float = WINDOW_SECONDS
    signal_hz: float = 10.0

    def __post_init__(self):
        if self.classes not in (2, 3):
            raise ConfigError(f"synthetic classes must be 2 or 3, got {self.classes}")
        if self.subjects < 1 or self.trials < 1 or self.windows_per_trial < 1:
            raise ConfigError("subjects, trials and windows_per_trial must be positive")
        object.__setattr__(self, "modalities", tuple(Modality.parse(m) for m in self.modalities))


def pink_noise(rng, shape):
    """Unit-std noise with a 1/f power spectrum along the last axis."""
    n = shape[-1]
    spec = rng.standard_normal(shape[:-1] + (n // 2 + 1,)) + 1j * rng.standard_normal(shape[:-1] + (n // 2 + 1,))
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    spec = spec / np.sqrt(f)
    spec[..., 0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    return x / x.std(axis=-1, keepdims=True)


def class_amplitude(c):
    return 0.4 * (c + 1)


def generate_synthetic(spec, seed):
    """Band-power-separable stand-in for CL-Drive windows.

    Each channel is unit-std pink noise plus a ``signal_hz`` sinusoid of
    amplitude ``0.4 * (class + 1)`` and random phase, all scaled by a
    per-subject gain drawn from U(0.9, 1.1).
    """
    scheme = LabelScheme.BINARY if spec.classes == 2 else LabelScheme.TERNARY
    root = RngStream(seed)
    data = {m: [] for m in spec.modalities}
    ratings, subjects, trials, offsets = [], [], [], []
    for s in range(spec.subjects):
        srng = root.split("subject", s)
        gain = srng.split("gain").uniform(0.9, 1.1)
        for t in range(spec.trials):
            trng = srng.split("trial", t)
            reps = -(-spec.windows_per_trial // spec.classes)
            classes = np.tile(np.arange(spec.classes), reps)[:spec.windows_per_trial]
            classes = trng.split("classes").permutation(classes)
            for w, c in enumerate(classes):
                wrng = trng.split("window", w)
                ratings.append(int(wrng.split("rating").choice(CLASS_RATINGS[scheme][c])))
                subjects.append(s)
                trials.append(t)
                offsets.append(w * WINDOW_SECONDS)
                for m in spec.modalities:
                    mrng = wrng.split(m.value)
                    n = round(spec.seconds * m.sample_rate_hz)
                    tt = np.arange(n) / m.sample_rate_hz
                    phase = mrng.uniform(0, 2 * np.pi, size=(m.channels, 1))
                    sig = pink_noise(mrng, (m.channels, n))
                    sig += class_amplitude(c) * np.sin(2 * np.pi * spec.signal_hz * tt[None, :] + phase)
                    data[m].append(gain * sig)
    return LabeledDataset({m: np.stack(v) for m, v in data.items()}, ratings, subjects, trials, offsets,
                          scheme, False, spec.seconds)


# folds ----------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    protocol: str  # "kfold" or "loso"
    assignments: np.ndarray  # window index -> fold index
    seed: int
    k: int = 0
    fold_subjects: tuple = ()  # LOSO: held-out subject of each fold

    @property
    def n_folds(self):
        return int(self.assignments.max()) + 1 if self.assignments.size else 0

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def training_fold(self, ds, fold):
        idx = self.train_indices(fold)
        return TrainingFold(ds.subset(idx), _frozen(idx), fold)

    def test_set(self, ds, fold):
        return ds.subset(self.test_indices(fold))


@dataclass(frozen=True)
class TrainingFold:
    """Training partition of one fold; the only input augmentation accepts."""

    dataset: LabeledDataset
    indices: np.ndarray  # positions in the full dataset
    fold: int

    def __len__(self):
        return len(self.dataset)

    def split_validation(self, fraction, rng):
        """Hold out ``fraction`` of the windows (at least one) as a plain validation set."""
        n = len(self)
        n_val = max(1, int(round(fraction * n))) if fraction > 0 else 0
        if n_val >= n:
            raise ConfigError(f"validation fraction {fraction} leaves no training windows")
        perm = rng.permutation(n)
        keep, val = np.sort(perm[n_val:]), np.sort(perm[:n_val])
        return (TrainingFold(self.dataset.subset(keep), _frozen(self.indices[keep]), self.fold),
                self.dataset.subset(val))


def make_folds(ds, protocol="kfold", seed=0, k=10):
    """Partition window indices into folds.

    ``kfold``: seeded shuffle split into ``k`` near-equal folds.
    ``loso``: one fold per subject, ordered by subject id.
    """
    n = len(ds)
    if n == 0:
        raise ConfigError("cannot fold an empty dataset")
    protocol = str(protocol).lower()
    if protocol in ("kfold", "kfold10"):
        if not 2 <= k <= n:
            raise ConfigError(f"k={k} folds impossible for {n} windows")
        perm = RngStream(seed).split("folds").permutation(n)
        assignments = np.empty(n, dtype=np.int64)
        for f, chunk in enumerate(np.array_split(perm, k)):
            assignments[chunk] = f
        return FoldPlan("kfold", _frozen(assignments), seed, k)
    if protocol == "loso":
        subjects = np.unique(ds.subjects)
        if len(subjects) < 2:
            raise ConfigError("LOSO needs at least 2 subjects")
        assignments = np.searchsorted(subjects, ds.subjects).astype(np.int64)
        return FoldPlan("loso", _frozen(assignments), seed, len(subjects), tuple(int(s) for s in subjects))
    raise ConfigError(f"unknown protocol {protocol!r}")
