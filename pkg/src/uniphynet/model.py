"""UniPhyNet: parallel multi-kernel convolutions, residual CBAM blocks, a BiGRU head
and attention fusion of per-modality trunks."""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import ConfigError, Modality
from .nn import checkpoint
from .nn import functional as F
from .nn.layers import BatchNorm1d, BiGRU, Conv1d, Dropout, Linear, Module, ModuleList
from .nn.rng import RngStream
from .nn.tensor import ShapeError, Tensor, concat, get_dtype


class BlockKind(str, enum.Enum):
    RESNET_CBAM = "ResNetCBAM"
    RESNET_PLAIN = "ResNetPlain"
    DSC = "DSC"
    DSC_CBAM = "DSC+CBAM"

    @property
    def separable(self):
        return self in (BlockKind.DSC, BlockKind.DSC_CBAM)

    @property
    def attention(self):
        return self in (BlockKind.RESNET_CBAM, BlockKind.DSC_CBAM)


class Fusion(str, enum.Enum):
    NONE = "none"
    SELF_ATTENTION = "self_attention"


# kernels and residual block counts per modality
MODALITY_DEFAULTS = {
    Modality.EEG: ((3, 9), 8),
    Modality.ECG: ((5, 11), 9),
    Modality.EDA: ((13,), 7),
}
TEMPORAL_KERNEL = 7


@dataclass(frozen=True)
class ModalityConfig:
    modality: Modality
    in_channels: int
    sample_rate_hz: int
    kernels: tuple
    resnet_blocks: int
    feature_maps: int = 64
    gru_hidden: int = 64
    cbam_reduction: int = 8
    gru_on_raw: bool = False
    window_s: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality.parse(self.modality))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        if not self.kernels or min(self.kernels) < 1:
            raise ConfigError("kernels must be a non-empty list of positive sizes")
        if self.feature_maps % len(self.kernels):
            raise ConfigError(f"feature_maps {self.feature_maps} not divisible by {len(self.kernels)} branches")
        if self.feature_maps % self.cbam_reduction:
            raise ConfigError(f"feature_maps {self.feature_maps} not divisible by reduction {self.cbam_reduction}")
        if self.resnet_blocks < 0 or self.window_length % (1 << self.resnet_blocks):
            raise ConfigError(f"2^{self.resnet_blocks} does not divide window length {self.window_length}")
        if self.in_channels < 1 or self.gru_hidden < 1:
            raise ConfigError("in_channels and gru_hidden must be positive")

    @property
    def window_length(self):
        return round(self.window_s * self.sample_rate_hz)

    @property
    def out_length(self):
        return self.window_length >> self.resnet_blocks

    @classmethod
    def default(cls, modality, multimodal=False, **overrides):
        m = Modality.parse(modality)
        kernels, blocks = MODALITY_DEFAULTS[m]
        base = dict(modality=m, in_channels=m.channels, sample_rate_hz=m.sample_rate_hz, kernels=kernels,
                    resnet_blocks=blocks, feature_maps=32 if multimodal else 64)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class NetConfig:
    modalities: tuple
    num_classes: int = 2
    dropout: float = 0.25
    fusion: Fusion = None
    use_gru: bool = True
    block_kind: BlockKind = BlockKind.RESNET_CBAM

    def __post_init__(self):
        mods = tuple(m if isinstance(m, ModalityConfig) else ModalityConfig(**m) for m in self.modalities)
        object.__setattr__(self, "modalities", mods)
        object.__setattr__(self, "block_kind", BlockKind(self.block_kind))
        fusion = self.fusion
        if fusion is None:
            fusion = Fusion.NONE if len(mods) == 1 else Fusion.SELF_ATTENTION
        object.__setattr__(self, "fusion", Fusion(fusion))
        if not mods:
            raise ConfigError("at least one modality is required")
        if len({m.modality for m in mods}) != len(mods):
            raise ConfigError("each modality may appear once")
        if self.num_classes not in (2, 3):
            raise ConfigError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if (self.fusion is Fusion.NONE) != (len(mods) == 1):
            raise ConfigError("fusion must be none exactly when there is a single modality")
        if len({m.out_length for m in mods}) != 1:
            raise ConfigError(f"trunk output lengths differ: {[m.out_length for m in mods]}")
        if len(mods) > 1 and any(m.gru_on_raw for m in mods):
            raise ConfigError("gru_on_raw is only defined for unimodal networks")
        if len(mods) > 1 and len({m.gru_hidden for m in mods}) != 1:
            raise ConfigError("multimodal trunks must share gru_hidden")
        if self.block_kind.attention and mods[0].out_length < TEMPORAL_KERNEL:
            raise ConfigError(f"temporal attention needs length >= {TEMPORAL_KERNEL}, got {mods[0].out_length}")

    @classmethod
    def default(cls, modalities=("EEG",), num_classes=2, **kw):
        mods = [Modality.parse(m) for m in modalities]
        multi = len(mods) > 1
        return cls(tuple(ModalityConfig.default(m, multi) for m in mods), num_classes, **kw)

    @property
    def multimodal(self):
        return len(self.modalities) > 1

    @property
    def fused_width(self):
        return sum(m.feature_maps for m in self.modalities)

    def to_dict(self):
        d = asdict(self)
        d["fusion"] = self.fusion.value
        d["block_kind"] = self.block_kind.value
        for m in d["modalities"]:
            m["modality"] = m["modality"].value
            m["kernels"] = list(m["kernels"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["modalities"] = tuple(ModalityConfig(**m) for m in d["modalities"])
        return cls(**d)


# layers ---------------------------------------------------------------------

class ConvBranch(Module):
    def __init__(self, cin, cout, k):
        self.conv = Conv1d(cin, cout, k, padding="same", bias=False)
        self.bn = BatchNorm1d(cout)

    def forward(self, x):
        return F.silu(self.bn(self.conv(x)))


class ParallelConvBlock(Module):
    """One conv-BN-SiLU branch per kernel size, concatenated to ``feature_maps`` channels."""

    def __init__(self, cin, feature_maps, kernels):
        if feature_maps % len(kernels):
            raise ConfigError(f"feature_maps {feature_maps} not divisible by {len(kernels)} branches")
        width = feature_maps // len(kernels)
        self.branches = ModuleList([ConvBranch(cin, width, k) for k in kernels])

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        return outs[0] if len(outs) == 1 else concat(outs, axis=1)


class SeparableConv(Module):
    """Depthwise conv followed by a pointwise 1x1 conv."""

    def __init__(self, channels, k, stride, bias=True):
        self.depthwise = Conv1d(channels, channels, k, stride, padding="same", bias=False, groups=channels)
        self.pointwise = Conv1d(channels, channels, 1, bias=bias)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class ChannelAttention(Module):
    def __init__(self, channels, reduction):
        if channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction)
        self.fc2 = Linear(channels // reduction, channels)
        self.last_weights = None

    def mlp(self, v):
        return self.fc2(F.relu(self.fc1(v)))

    def forward(self, y):
        a = F.sigmoid(self.mlp(F.global_avg_time(y)) + self.mlp(F.global_max_time(y)))
        self.last_weights = a.data
        return F.scale_channels(y, a)


class TemporalAttention(Module):
    def __init__(self, kernel=TEMPORAL_KERNEL):
        self.kernel = kernel
        self.conv = Conv1d(2, 1, kernel, padding=kernel // 2, bias=False)
        self.last_weights = None

    def forward(self, y):
        if y.shape[2] < self.kernel:
            raise ConfigError(f"temporal attention needs length >= {self.kernel}, got {y.shape[2]}")
        pooled = concat([F.avg_over_channels(y), F.max_over_channels(y)], axis=1)
        s = F.sigmoid(self.conv(pooled))
        self.last_weights = s.data
        return F.scale_time(y, s)


class CBAM(Module):
    def __init__(self, channels, reduction):
        self.channel = ChannelAttention(channels, reduction)
        self.temporal = TemporalAttention()

    def forward(self, y):
        return self.temporal(self.channel(y))


class ResidualBlock(Module):
    """Pre-activation residual block that halves the length, optionally followed by CBAM."""

    def __init__(self, channels, kind=BlockKind.RESNET_CBAM, reduction=8):
        self.kind = BlockKind(kind)
        self.bn1 = BatchNorm1d(channels)
        self.bn2 = BatchNorm1d(channels)
        if self.kind.separable:
            self.conv1 = SeparableConv(channels, 3, 2, bias=False)
            self.conv2 = SeparableConv(channels, 3, 1)
        else:
            self.conv1 = Conv1d(channels, channels, 3, stride=2, padding="same", bias=False)
            self.conv2 = Conv1d(channels, channels, 3, padding="same")
        self.shortcut = Conv1d(channels, channels, 1, stride=2, padding=0)
        self.cbam = CBAM(channels, reduction) if self.kind.attention else None

    def residual(self, x):
        h = self.conv1(F.relu(self.bn1(x)))
        return self.conv2(F.relu(self.bn2(h)))

    def forward(self, x):
        if x.shape[2] % 2:
            raise ShapeError(f"residual block needs an even length, got {x.shape[2]}")
        y = self.shortcut(x) + self.residual(x)
        return self.cbam(y) if self.cbam is not None else y


class Trunk(Module):
    def __init__(self, cfg, kind):
        self.cfg = cfg
        self.stem = ParallelConvBlock(cfg.in_channels, cfg.feature_maps, cfg.kernels)
        self.blocks = ModuleList([ResidualBlock(cfg.feature_maps, kind, cfg.cbam_reduction)
                                  for _ in range(cfg.resnet_blocks)])

    def forward(self, x):
        if x.ndim != 3 or x.shape[1:] != (self.cfg.in_channels, self.cfg.window_length):
            raise ShapeError(f"{self.cfg.modality.value} trunk expects (B, {self.cfg.in_channels}, "
                             f"{self.cfg.window_length}), got {x.shape}")
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        assert h.shape[2] == self.cfg.out_length, (h.shape, self.cfg.out_length)
        return h


class SelfAttentionFusion(Module):
    """Single-head scaled dot-product attention over time tokens, with a residual path."""

    def __init__(self, width):
        self.width = width
        self.query = Linear(width, width)
        # a key bias adds the same q.b to a whole score row, which softmax cancels
        self.key = Linear(width, width, bias=False)
        self.value = Linear(width, width)
        self.out = Linear(width, width)
        self.last_weights = None

    def forward(self, seqs):
        lengths = {s.shape[2] for s in seqs}
        if len(lengths) != 1:
            raise ShapeError(f"cannot fuse sequences of lengths {sorted(lengths)}")
        x = concat(seqs, axis=1) if len(seqs) > 1 else seqs[0]
        tokens = x.transpose(0, 2, 1)  # (B, L, D)
        q, k, v = self.query(tokens), self.key(tokens), self.value(tokens)
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.width))
        attn = F.softmax(scores, axis=-1)
        self.last_weights = attn.data
        fused = tokens + self.out(attn @ v)
        return fused.transpose(0, 2, 1)


class Head(Module):
    def __init__(self, width, num_classes, use_gru, hidden, dropout, rng=None, gru_input=None):
        self.use_gru = use_gru
        self.gru = BiGRU(gru_input or width, hidden) if use_gru else None
        self.dropout = Dropout(dropout, rng)
        self.fc = Linear(width + (2 * hidden if use_gru else 0), num_classes)

    def forward(self, seq, gru_source=None):
        parts = [F.global_avg_time(seq)]
        if self.gru is not None:
            src = seq if gru_source is None else gru_source
            _, final = self.gru(src.transpose(0, 2, 1))
            parts.append(final)
        u = concat(parts, axis=1) if len(parts) > 1 else parts[0]
        return self.fc(self.dropout(u))


class UniPhyNet(Module):
    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.trunks = ModuleList([Trunk(m, config.block_kind) for m in config.modalities])
        self.fusion = SelfAttentionFusion(config.fused_width) if config.multimodal else None
        first = config.modalities[0]
        gru_input = first.in_channels if first.gru_on_raw else None
        self.head = Head(config.fused_width, config.num_classes, config.use_gru, first.gru_hidden,
                         config.dropout, RngStream(seed).split("dropout"), gru_input)

    @property
    def modalities(self):
        return tuple(m.modality for m in self.config.modalities)

    def _inputs(self, batch):
        if isinstance(batch, dict):
            batch = {Modality.parse(k): v for k, v in batch.items()}
            missing = [m.value for m in self.modalities if m not in batch]
            if missing:
                raise ShapeError(f"batch lacks {missing}")
            xs = [batch[m] for m in self.modalities]
        elif len(self.modalities) == 1:
            xs = [batch]
        else:
            raise ShapeError("multimodal models take a dict of modality -> array")
        return [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=get_dtype())) for x in xs]

    def forward(self, batch):
        xs = self._inputs(batch)
        seqs = [trunk(x) for trunk, x in zip(self.trunks, xs)]
        if self.fusion is not None:
            return self.head(self.fusion(seqs))
        raw = xs[0] if self.config.modalities[0].gru_on_raw else None
        return self.head(seqs[0], raw)

    def describe(self):
        """Human-readable layer graph: one line per parameter with its shape."""
        lines = [f"UniPhyNet {self.config.block_kind.value} fusion={self.config.fusion.value} "
                 f"gru={self.config.use_gru} classes={self.config.num_classes}"]
        lines += [f"  {name} {tuple(p.shape)}" for name, p in self.named_parameters()]
        return "\n".join(lines)

    def num_parameters(self):
        return sum(int(np.prod(p.shape)) for p in self.parameters())

    def save(self, path):
        path = Path(path)
        checkpoint.save(path, self.state_dict())
        sidecar = {"config": self.config.to_dict(), "seed": self.seed}
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2))
        return path


def sidecar_path(path):
    return Path(path).with_suffix(Path(path).suffix + ".json")


def build_model(config, seed=0):
    """Construct and deterministically initialize a network."""
    model = UniPhyNet(config, seed)
    model.reset_parameters(RngStream(seed).split("init"))
    return model


def forward(model, batch):
    return model(batch)


def load_model(path):
    meta = json.loads(sidecar_path(path).read_text())
    model = UniPhyNet(NetConfig.from_dict(meta["config"]), meta.get("seed", 0))
    model.load_state_dict(checkpoint.load(path))
    for m in model.modules():
        if isinstance(m, BatchNorm1d):
            m.steps = max(m.steps, 1)
    return model


def tiny_modality(modality, feature_maps=16, fewer_blocks=4, window_s=2.5, **kw):
    """Reduced desk-scale configuration.

    Dropping the same number of blocks from every modality keeps the trunk
    output lengths equal (40 steps for 2.5 s windows), so tiny trunks still fuse.
    """
    m = Modality.parse(modality)
    kernels, blocks = MODALITY_DEFAULTS[m]
    kernels = tuple(kw.pop("kernels", kernels))
    kw.setdefault("gru_hidden", 16)
    kw.setdefault("cbam_reduction", 4)
    return ModalityConfig(m, m.channels, m.sample_rate_hz, kernels, blocks - fewer_blocks, feature_maps,
                          window_s=window_s, **kw)
