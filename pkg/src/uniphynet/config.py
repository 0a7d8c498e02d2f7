"""Experiment configuration: a TOML file with [dataset] [dsp] [augment] [model] [train] [eval] sections.

Example::

    [dataset]
    source = "synthetic"      # or a directory in the CSV layout, or a .npz cache
    modalities = ["EEG"]
    labels = "binary"
    subjects = 6
    seconds = 2.5

    [model]
    tiny = true

    [train]
    epochs = 30
    lr = 0.003

    [eval]
    protocol = "loso"
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .augment import AugmentPolicy
from .dataset import WINDOW_SECONDS, ConfigError, LabelScheme, Modality, SynthSpec
from .dsp import DEFAULT_PRESET, PRESETS
from .model import BlockKind, ModalityConfig, NetConfig, tiny_modality
from .train import TrainConfig

SECTIONS = ("dataset", "dsp", "augment", "model", "train", "eval")
PROTOCOLS = ("kfold10", "loso")
MODALITY_KEYS = tuple(f.name for f in fields(ModalityConfig) if f.name not in ("modality", "in_channels",
                                                                                   "sample_rate_hz"))
NET_KEYS = ("dropout", "use_gru", "block_kind", "fusion")
ABLATIONS = ("no-gru", "no-aug", "dsc", "dsc-cbam", "kernels:<list>")


@dataclass(frozen=True)
class DatasetSection:
    source: str = "synthetic"
    modalities: tuple = ("EEG",)
    labels: str = "binary"
    subjects: int = 6
    trials: int = 3
    windows_per_trial: int = 18
    seconds: float = WINDOW_SECONDS
    signal_hz: float = 10.0
    seed: int = 0

    @property
    def synthetic(self):
        return self.source == "synthetic"

    def synth_spec(self):
        return SynthSpec(self.subjects, self.trials, LabelScheme.parse(self.labels).num_classes,
                         tuple(self.modalities), self.windows_per_trial, self.seconds, self.signal_hz)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection
    presets: dict
    augment: AugmentPolicy | None
    net: NetConfig
    train: TrainConfig
    protocol: str = "kfold10"
    seed: int = 0
    jobs: int = 1
    out: str = "runs/default"
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def window_s(self):
        return self.net.modalities[0].window_s

    def to_dict(self):
        """Resolved configuration, suitable for a manifest."""
        return {
            "dataset": asdict(self.dataset),
            "dsp": {m.value: p for m, p in self.presets.items()},
            "augment": asdict(self.augment) if self.augment is not None else None,
            "model": self.net.to_dict(),
            "train": asdict(self.train),
            "eval": {"protocol": self.protocol, "seed": self.seed, "jobs": self.jobs, "out": self.out},
        }


def _check_keys(section, table, allowed):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}] unknown keys {unknown}; allowed: {sorted(allowed)}")


def _dataclass_kwargs(section, table, cls, skip=()):
    allowed = [f.name for f in fields(cls) if f.name not in skip]
    _check_keys(section, table, allowed)
    return dict(table)


def _build(cls, section, kwargs):
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {exc}") from None
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"[{section}] invalid value: {exc}") from None


def _modalities(value):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        mods = tuple(Modality.parse(v.strip() if isinstance(v, str) else v).value for v in value)
    except (ValueError, KeyError, AttributeError) as exc:
        raise ConfigError(f"[dataset] modalities: {exc}") from None
    if not mods or len(set(mods)) != len(mods):
        raise ConfigError("[dataset] modalities must be a non-empty list without repeats")
    return mods


def _net(model, dataset, num_classes):
    model = dict(model)
    per_mod = {k: model.pop(k) for k in list(model) if k in {m.value for m in Modality}}
    tiny = model.pop("tiny", False)
    _check_keys("model", model, NET_KEYS + MODALITY_KEYS + ("fewer_blocks",))
    shared = {k: model.pop(k) for k in list(model) if k not in NET_KEYS}
    if "kernels" in shared:
        shared["kernels"] = tuple(shared["kernels"])
    unknown_mods = sorted(set(per_mod) - set(dataset.modalities))
    if unknown_mods:
        raise ConfigError(f"[model] sections for modalities {unknown_mods} not listed in [dataset]")
    default_window = dataset.seconds if dataset.synthetic else WINDOW_SECONDS
    mods = []
    multi = len(dataset.modalities) > 1
    for name in dataset.modalities:
        m = Modality.parse(name)
        over = {**shared, **per_mod.get(name, {})}
        _check_keys(f"model.{name}", over, MODALITY_KEYS + ("fewer_blocks",))
        over.setdefault("window_s", default_window)
        if "kernels" in over:
            over["kernels"] = tuple(over["kernels"])
        if tiny:
            mods.append(_build(lambda **kw: tiny_modality(m, **kw), f"model.{name}", over))
        else:
            if "fewer_blocks" in over:
                raise ConfigError("[model] fewer_blocks only applies with tiny = true")
            mods.append(_build(lambda **kw: ModalityConfig.default(m, multi, **kw), f"model.{name}", over))
    return _build(NetConfig, "model", dict(modalities=tuple(mods), num_classes=num_classes, **model))


def build_config(raw, overrides=None):
    """Validate a parsed TOML mapping (plus CLI ``overrides``) into an ``ExperimentConfig``."""
    raw = copy.deepcopy(raw)
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    _check_keys("top level", raw, SECTIONS)
    for name in SECTIONS:
        raw.setdefault(name, {})
        if not isinstance(raw[name], dict):
            raise ConfigError(f"[{name}] must be a table")
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if value is not None:
            raw[section][name] = value

    ds_kw = _dataclass_kwargs("dataset", raw["dataset"], DatasetSection)
    if "modalities" in ds_kw:
        ds_kw["modalities"] = _modalities(ds_kw["modalities"])
    dataset = _build(DatasetSection, "dataset", ds_kw)
    try:
        scheme = LabelScheme.parse(dataset.labels)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"[dataset] labels: {exc}") from None
    if not dataset.synthetic and not Path(dataset.source).exists():
        raise ConfigError(f"[dataset] source {dataset.source!r} does not exist")
    if dataset.synthetic:
        _build(lambda: dataset.synth_spec(), "dataset", {})

    dsp = dict(raw["dsp"])
    _check_keys("dsp", dsp, [m.value for m in Modality])
    presets = {}
    for name in dataset.modalities:
        m = Modality.parse(name)
        preset = dsp.get(name, DEFAULT_PRESET[m])
        if preset not in PRESETS:
            raise ConfigError(f"[dsp] unknown preset {preset!r} for {name}; choose from {sorted(PRESETS)}")
        presets[m] = preset
    extra = sorted(set(dsp) - set(dataset.modalities))
    if extra:
        raise ConfigError(f"[dsp] presets given for modalities {extra} not listed in [dataset]")

    aug = dict(raw["augment"])
    enabled = aug.pop("enabled", True)
    policy = _build(AugmentPolicy, "augment", _dataclass_kwargs("augment", aug, AugmentPolicy)) if enabled else None

    net = _net(raw["model"], dataset, scheme.num_classes)
    train = _build(TrainConfig, "train", _dataclass_kwargs("train", raw["train"], TrainConfig))

    ev = dict(raw["eval"])
    _check_keys("eval", ev, ("protocol", "seed", "jobs", "out"))
    protocol = ev.get("protocol", "kfold10")
    if protocol not in PROTOCOLS:
        raise ConfigError(f"[eval] protocol must be one of {PROTOCOLS}, got {protocol!r}")
    seed, jobs = ev.get("seed", 0), ev.get("jobs", 1)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("[eval] seed must be a non-negative integer")
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("[eval] jobs must be a positive integer")
    return ExperimentConfig(dataset, presets, policy, net, train, protocol, seed, jobs,
                            str(ev.get("out", "runs/default")), raw)


def load_raw(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path=None, overrides=None):
    return build_config(load_raw(path) if path is not None else {}, overrides)


def ablation_overrides(preset):
    """Raw-config edits for an ablation preset name."""
    if preset == "no-gru":
        return {"model": {"use_gru": False}}
    if preset == "no-aug":
        return {"augment": {"enabled": False}}
    if preset == "dsc":
        return {"model": {"block_kind": BlockKind.DSC.value}}
    if preset == "dsc-cbam":
        return {"model": {"block_kind": BlockKind.DSC_CBAM.value}}
    if preset.startswith("kernels:"):
        try:
            kernels = [int(k) for k in preset[len("kernels:"):].split(",") if k.strip()]
        except ValueError:
            raise ConfigError(f"bad kernel list in {preset!r}") from None
        if not kernels:
            raise ConfigError(f"empty kernel list in {preset!r}")
        return {"model": {"kernels": kernels}}
    raise ConfigError(f"unknown ablation preset {preset!r}; choose from {ABLATIONS}")


def apply_ablation(raw, preset):
    """Copy of ``raw`` with the preset's edits merged in (per-modality kernel overrides are replaced too)."""
    raw = copy.deepcopy(raw)
    for section, edits in ablation_overrides(preset).items():
        table = raw.setdefault(section, {})
        table.update(edits)
        if "kernels" in edits:
            for value in table.values():
                if isinstance(value, dict):
                    value.pop("kernels", None)
    return raw
