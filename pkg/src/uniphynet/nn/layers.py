"""Parameter containers on top of the functional ops."""
import logging

import numpy as np

from . import functional as F
from .tensor import Tensor, get_dtype

log = logging.getLogger(__name__)


class Parameter(Tensor):
    """Trainable tensor that remembers how it should be initialized."""

    __slots__ = ("init",)

    def __init__(self, shape, init=("zeros",), dtype=None):
        super().__init__(np.full(shape, 1.0 if init[0] == "ones" else 0.0), requires_grad=True, dtype=dtype)
        self.init = init


def xavier(fan_in, fan_out):
    return ("xavier", fan_in, fan_out)


def initialize(param, rng):
    kind = param.init[0]
    if kind == "zeros":
        param.data[...] = 0.0
    elif kind == "ones":
        param.data[...] = 1.0
    elif kind == "xavier":
        _, fan_in, fan_out = param.init
        a = np.sqrt(6.0 / (fan_in + fan_out))
        param.data[...] = rng.uniform(-a, a, size=param.shape)
    else:
        raise ValueError(f"unknown initializer {kind!r}")


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def reset_parameters(self, rng):
        """Initialize every parameter from its own named split of ``rng``."""
        for name, p in self.named_parameters():
            initialize(p, rng.split(name))
        for m in self.modules():
            if isinstance(m, BatchNorm1d):
                m.reset_running_stats()

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]
        for name, b in buffers.items():
            b[...] = state[name]


class ModuleList(Module):
    def __init__(self, modules):
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
        self._n = len(modules)

    def __iter__(self):
        return (getattr(self, str(i)) for i in range(self._n))

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        return getattr(self, str(i))


class Conv1d(Module):
    def __init__(self, cin, cout, k, stride=1, padding="same", bias=True, groups=1):
        self.stride, self.padding, self.groups = stride, padding, groups
        cin_g = cin // groups
        self.weight = Parameter((cout, cin_g, k), xavier(cin_g * k, cout * k // groups))
        if bias:
            self.bias = Parameter((cout,))
        else:
            self.bias = None

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm1d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter((channels,), ("ones",))
        self.beta = Parameter((channels,))
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=get_dtype()),
            "running_var": np.ones(channels, dtype=get_dtype()),
        }
        self.steps = 0

    def reset_running_stats(self):
        self._buffers["running_mean"][...] = 0.0
        self._buffers["running_var"][...] = 1.0
        self.steps = 0

    def forward(self, x):
        if self.training:
            self.steps += 1
        elif self.steps == 0 and not getattr(self, "_warned", False):
            log.warning("batchnorm evaluated before any training step; using initial running stats")
            self._warned = True
        return F.batchnorm1d(x, self.gamma, self.beta, self._buffers["running_mean"],
                             self._buffers["running_var"], self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, n_in, n_out, bias=True):
        self.weight = Parameter((n_out, n_in), xavier(n_in, n_out))
        self.bias = Parameter((n_out,)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class GRUDirection(Module):
    def __init__(self, n_in, hidden):
        self.w_x = Parameter((3 * hidden, n_in), xavier(n_in, hidden))
        self.w_h = Parameter((3 * hidden, hidden), xavier(hidden, hidden))
        self.bias = Parameter((3 * hidden,))

    def params(self):
        return self.w_x, self.w_h, self.bias


class BiGRU(Module):
    """Returns (outputs (B, L, 2H), final (B, 2H))."""

    def __init__(self, n_in, hidden):
        self.hidden = hidden
        self.fwd = GRUDirection(n_in, hidden)
        self.bwd = GRUDirection(n_in, hidden)

    def forward(self, x):
        outs = F.bigru(x, self.fwd.params(), self.bwd.params())
        return outs, F.bigru_final(outs)


class Dropout(Module):
    def __init__(self, p, rng=None):
        self.p = p
        self.rng = rng

    def forward(self, x):
        if self.rng is None:
            return x if not self.training or self.p == 0 else _missing_rng()
        return F.dropout(x, self.p, self.rng, self.training)


def _missing_rng():
    raise RuntimeError("Dropout in training mode needs an rng stream")
