"""Network building blocks on top of the autodiff engine.

A Module tracks parameters (requires_grad Tensors) and persistent buffers
(plain ndarrays, e.g. batch-norm running statistics) by attribute
registration, so checkpointing can walk the tree with stable hierarchical
names. Train/eval behaviour is threaded explicitly through forward(...,
training=...) rather than held as hidden module state.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DataError, DimensionError
from .tensor import Tensor, conv2d, conv_transpose2d, elu, lstm_sequence


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, mod in self._modules.items():
            yield from mod.named_buffers(prefix + name + ".")

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def load_state(self, params: dict, buffers: dict):
        """Copy values in by name; every name must resolve."""
        own_p = dict(self.named_parameters())
        own_b = dict(self.named_buffers())
        for name, arr in params.items():
            if name not in own_p:
                raise DataError(f"unknown parameter in state: {name}")
            if own_p[name].data.shape != arr.shape:
                raise DimensionError(
                    f"parameter {name}: stored shape {arr.shape} != "
                    f"model shape {own_p[name].data.shape}")
            own_p[name].data = arr.astype(np.float64).copy()
        for name, arr in buffers.items():
            if name not in own_b:
                raise DataError(f"unknown buffer in state: {name}")
            np.copyto(own_b[name], arr)

    def state_arrays(self):
        """(params, buffers) as fresh name->ndarray dicts."""
        params = {n: p.data.copy() for n, p in self.named_parameters()}
        buffers = {n: b.copy() for n, b in self.named_buffers()}
        return params, buffers


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride, padding, rng):
        super().__init__()
        kh, kw = kernel
        self.stride = stride
        self.padding = padding
        fan_in, fan_out = cin * kh * kw, cout * kh * kw
        self.weight = Tensor(glorot_uniform(rng, (cout, cin, kh, kw), fan_in, fan_out),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride, padding, rng):
        super().__init__()
        kh, kw = kernel
        self.stride = stride
        self.padding = padding
        fan_in, fan_out = cin * kh * kw, cout * kh * kw
        self.weight = Tensor(glorot_uniform(rng, (cin, cout, kh, kw), fan_in, fan_out),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x):
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics (biased variance) and,
    unless update_stats is False, folds them into the running averages with
    the configured momentum. Eval mode normalizes with the running stats.
    """

    def __init__(self, channels, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x, training: bool, update_stats=None):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(
                f"batch_norm expects (N,{self.channels},H,W), got {x.shape}")
        c = self.channels
        gamma = T.reshape(self.gamma, (1, c, 1, 1))
        beta = T.reshape(self.beta, (1, c, 1, 1))
        if training:
            n, _, h, w = x.shape
            if n * h * w < 2:
                raise DataError(
                    "batch_norm train mode needs >= 2 elements per channel")
            mu = T.tensor_mean(x, axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = T.tensor_mean(centered * centered, axis=(0, 2, 3), keepdims=True)
            xhat = centered / T.sqrt(var + self.eps)
            if update_stats is None or update_stats:
                m = self.momentum
                self.running_mean *= 1.0 - m
                self.running_mean += m * mu.data.reshape(c)
                self.running_var *= 1.0 - m
                self.running_var += m * var.data.reshape(c)
        else:
            rm = self.running_mean.reshape(1, c, 1, 1)
            rv = self.running_var.reshape(1, c, 1, 1)
            xhat = (x - rm) / np.sqrt(rv + self.eps)
        return gamma * xhat + beta


class ConvBNELU(Module):
    """Convolution -> batch norm -> ELU, the encoder/fusion block unit."""

    def __init__(self, cin, cout, kernel, stride, padding, rng):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, stride, padding, rng)
        self.bn = BatchNorm2d(cout)

    def forward(self, x, training: bool, update_stats=None):
        return elu(self.bn.forward(self.conv.forward(x), training, update_stats))


class Linear(Module):
    def __init__(self, fin, fout, rng):
        super().__init__()
        self.weight = Tensor(glorot_uniform(rng, (fout, fin), fin, fout),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True)

    def forward(self, x):
        return T.matmul(x, T.transpose(self.weight, (1, 0))) + self.bias


class LSTMLayer(Module):
    """One LSTM layer; weights follow the stacked (i, f, g, o) layout.

    Input weights are fan-in scaled so wide inputs do not saturate the
    gates at initialization; recurrent weights use 1/sqrt(H) and the
    forget-gate bias starts at +1 so early training does not dump cell
    state.
    """

    def __init__(self, input_size, hidden, rng):
        super().__init__()
        self.hidden = hidden
        k_in = np.sqrt(3.0 / input_size)
        k = 1.0 / np.sqrt(hidden)
        self.w_ih = Tensor(rng.uniform(-k_in, k_in, (4 * hidden, input_size)),
                           requires_grad=True)
        self.w_hh = Tensor(rng.uniform(-k, k, (4 * hidden, hidden)),
                           requires_grad=True)
        b_ih = rng.uniform(-k, k, 4 * hidden)
        b_ih[hidden:2 * hidden] += 1.0
        self.b_ih = Tensor(b_ih, requires_grad=True)
        self.b_hh = Tensor(rng.uniform(-k, k, 4 * hidden), requires_grad=True)

    def forward(self, x):
        return lstm_sequence(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class LSTMStack(Module):
    def __init__(self, input_size, hidden, layers, rng):
        super().__init__()
        sizes = [input_size] + [hidden] * layers
        self.layers = ModuleList(
            [LSTMLayer(sizes[i], hidden, rng) for i in range(layers)])

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x
