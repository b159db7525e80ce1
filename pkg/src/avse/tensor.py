"""Dense float64 tensors with reverse-mode automatic differentiation.

The operator set is exactly what the enhancement network needs: broadcast
elementwise arithmetic, matmul over the trailing two axes, shape ops,
stabilized softmax, ELU/sigmoid/tanh, 2-D convolution and its transpose,
non-overlapping max pooling, adaptive average pooling, and an LSTM
recurrence composed from the primitives.

Every op records its parent tensors and a vector-Jacobian closure on the
output node; the node links form the executed-op graph. ``backward()`` on a
scalar replays that graph once in reverse topological order, accumulating
gradients into the leaves that were created with ``requires_grad=True``.
A graph can be replayed only once; re-running backward without a fresh
forward pass raises GraphError. Every op output is checked for NaN/Inf and
raises NumericError naming the op instead of propagating silently.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, GraphError, NumericError

# Module-level switch; tests may disable to measure raw speed.
CHECK_FINITE = True


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backward()."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor literal")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"
        self._released = False

    # -- construction -----------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        self must be a scalar produced through recorded ops. The recorded
        graph is consumed: a second backward without re-running the forward
        pass raises GraphError.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._released:
            raise GraphError(
                "graph already consumed by a previous backward; re-run forward")

        topo = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:  # leaf
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            if node._released:
                raise GraphError(
                    "graph already consumed by a previous backward; re-run forward")
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
            node._released = True
            node._vjp = None
            node._parents = ()

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _toposort(root: Tensor):
    """Iterative post-order DFS; graphs are deep (BPTT), recursion won't do."""
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return topo


def _from_op(data: np.ndarray, parents, vjp, op: str) -> Tensor:
    """Create an op-output node. All ops funnel through here so the
    finite check and recording policy live in one place."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in output of op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._released = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _from_op(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _from_op(out, (a, b), vjp, "div")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _from_op(out, (a,), vjp, "sqrt")


# -- matmul ------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape}[-1] != {b.shape}[-2]")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _from_op(out, (a, b), vjp, "matmul")


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _from_op(out, (a,), vjp, "reshape")


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _from_op(out, (a,), vjp, "transpose")


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(out, tuple(tensors), vjp, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range on axis {axis} "
            f"of shape {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index].copy()
    in_shape = a.shape

    def vjp(g):
        buf = np.zeros(in_shape)
        buf[index] = g
        return (buf,)

    return _from_op(out, (a,), vjp, "narrow")


# -- reductions ----------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def vjp(g):
        if not keepdims:
            expand = list(in_shape)
            for ax in axes:
                expand[ax] = 1
            g = g.reshape(expand)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _from_op(out, (a,), vjp, "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def vjp(g):
        if not keepdims:
            expand = list(in_shape)
            for ax in axes:
                expand[ax] = 1
            g = g.reshape(expand)
        return (np.broadcast_to(g / count, in_shape).copy(),)

    return _from_op(out, (a,), vjp, "mean")


# -- activations ----------------------------------------------------------------


def elu(a) -> Tensor:
    """ELU with alpha = 1: x for x >= 0, exp(x) - 1 below."""
    a = _as_tensor(a)
    neg = np.minimum(a.data, 0.0)
    out = np.where(a.data >= 0.0, a.data, np.expm1(neg))
    deriv = np.where(a.data >= 0.0, 1.0, np.exp(neg))

    def vjp(g):
        return (g * deriv,)

    return _from_op(out, (a,), vjp, "elu")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    z = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _from_op(out, (a,), vjp, "sigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _from_op(out, (a,), vjp, "tanh")


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtraction stabilized softmax along one axis."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, (a,), vjp, "softmax")


# -- convolution ----------------------------------------------------------------


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _window_patches(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N, Ho, Wo, C*kh*kw) patch matrix (copy)."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    # v: (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, C, kh, kw)
    n, c, ho, wo = v.shape[:4]
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * kh * kw)


def _scatter_patches(pg: np.ndarray, in_shape, kh, kw, sh, sw, ph, pw) -> np.ndarray:
    """Adjoint of _window_patches: (N,Ho,Wo,C*kh*kw) -> (N,C,H,W)."""
    n, c, h, w = in_shape
    ho, wo = pg.shape[1], pg.shape[2]
    pg = pg.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    buf = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += pg[:, :, :, :, i, j]
    return buf[:, :, ph:ph + h, pw:pw + w]


def _check_conv_args(x, k, stride, padding, op):
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"{op} expects 4-D input/kernel, got {x.shape}, {k.shape}")
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1:
        raise DimensionError(f"{op} strides must be >= 1, got {stride}")
    if ph < 0 or pw < 0:
        raise DimensionError(f"{op} padding must be >= 0, got {padding}")
    return sh, sw, ph, pw


def conv2d(x, kernel, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw).

    Output extents: H' = floor((H + 2ph - kh)/sh) + 1, same for W'.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    sh, sw, ph, pw = _check_conv_args(x, kernel, stride, padding, "conv2d")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 1 has {cin}, kernel axis 1 has {kcin}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} does not fit padded input "
            f"{h + 2 * ph}x{w + 2 * pw} (axes 2,3)")
    patches = _window_patches(_pad_hw(x.data, ph, pw), kh, kw, sh, sw)
    ho, wo = patches.shape[1], patches.shape[2]
    kmat = kernel.data.reshape(cout, cin * kh * kw)
    out = patches.reshape(n * ho * wo, -1) @ kmat.T
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(
                f"conv2d bias shape {bias.shape} != ({cout},) (axis 0)")
        out = out + bias.data.reshape(1, cout, 1, 1)
        parents.append(bias)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gk = (gmat.T @ patches.reshape(n * ho * wo, -1)).reshape(kernel.shape)
        pg = (gmat @ kmat).reshape(n, ho, wo, cin * kh * kw)
        gx = _scatter_patches(pg, x.shape, kh, kw, sh, sw, ph, pw)
        if bias is not None:
            return gx, gk, g.sum(axis=(0, 2, 3))
        return gx, gk

    return _from_op(out, tuple(parents), vjp, "conv2d")


def conv_transpose2d(x, kernel, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Transposed convolution: the adjoint of conv2d's input map.

    Input (N,Cin,H,W), kernel (Cin,Cout,kh,kw); output extents
    H' = (H-1)*sh - 2ph + kh. conv_transpose2d(g, k) equals the gradient of
    sum(conv2d(x, k') * g) w.r.t. x when k' views the same kernel as
    (Cout',Cin',kh,kw) = (Cin,Cout,kh,kw).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    sh, sw, ph, pw = _check_conv_args(x, kernel, stride, padding, "conv_transpose2d")
    n, cin, h, w = x.shape
    kcin, cout, kh, kw = kernel.shape
    if kcin != cin:
        raise DimensionError(
            f"conv_transpose2d channel mismatch: input axis 1 has {cin}, "
            f"kernel axis 0 has {kcin}")
    ho = (h - 1) * sh - 2 * ph + kh
    wo = (w - 1) * sw - 2 * pw + kw
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"conv_transpose2d output extents {ho}x{wo} invalid (axes 2,3)")
    kmat = kernel.data.reshape(cin, cout * kh * kw)
    xmat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, cin)
    pg = (xmat @ kmat).reshape(n, h, w, cout * kh * kw)
    out = _scatter_patches(pg, (n, cout, ho, wo), kh, kw, sh, sw, ph, pw)
    parents = [x, kernel]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(
                f"conv_transpose2d bias shape {bias.shape} != ({cout},) (axis 0)")
        out = out + bias.data.reshape(1, cout, 1, 1)
        parents.append(bias)

    def vjp(g):
        gpatches = _window_patches(_pad_hw(g, ph, pw), kh, kw, sh, sw)
        gflat = gpatches.reshape(n * h * w, cout * kh * kw)
        gx = (gflat @ kmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        gk = (xmat.T @ gflat).reshape(kernel.shape)
        if bias is not None:
            return gx, gk, g.sum(axis=(0, 2, 3))
        return gx, gk

    return _from_op(out, tuple(parents), vjp, "conv_transpose2d")


# -- pooling ----------------------------------------------------------------


def max_pool2d(x, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride == kernel); extents must divide."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    k = kernel
    if h % k or w % k:
        raise DimensionError(
            f"max_pool2d extents {h}x{w} not divisible by kernel {k} (axes 2,3)")
    ho, wo = h // k, w // k
    windows = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        buf = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        buf = buf.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (buf.reshape(n, c, h, w),)

    return _from_op(out, (x,), vjp, "max_pool2d")


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic averaging matrix mapping n_in samples onto n_out bins."""
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        lo = (o * n_in) // n_out
        hi = -(-((o + 1) * n_in) // n_out)  # ceil
        m[o, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x, out_hw) -> Tensor:
    """Average-pool (N,C,H,W) onto an arbitrary (H', W') grid.

    Output bin i averages input[floor(i*In/Out) : ceil((i+1)*In/Out)]; for
    Out > In this replicates samples, so the op can also upsample.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool2d expects 4-D input, got {x.shape}")
    oh, ow = out_hw
    ah = _pool_matrix(x.shape[2], oh)
    aw = _pool_matrix(x.shape[3], ow)
    t = np.einsum("oh,nchw->ncow", ah, x.data)
    out = np.einsum("pw,ncow->ncop", aw, t)

    def vjp(g):
        back = np.einsum("pw,ncop->ncow", aw, g)
        return (np.einsum("oh,ncow->nchw", ah, back),)

    return _from_op(out, (x,), vjp, "adaptive_avg_pool2d")


# -- LSTM ----------------------------------------------------------------


def lstm_sequence(x, w_ih, w_hh, b_ih, b_hh, h0=None, c0=None) -> Tensor:
    """Single-layer LSTM over (T,N,F); returns the full hidden sequence (T,N,H).

    Gate order in the stacked weights is (input, forget, cell, output);
    input/forget/output gates are sigmoid, the cell candidate is tanh. Built
    from the primitive ops, so backpropagation through time comes from the
    recorded graph.
    """
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"lstm_sequence expects (T,N,F) input, got {x.shape}")
    t_steps, n, f = x.shape
    if t_steps < 1:
        raise DimensionError("lstm_sequence requires T >= 1")
    w_ih, w_hh = _as_tensor(w_ih), _as_tensor(w_hh)
    b_ih, b_hh = _as_tensor(b_ih), _as_tensor(b_hh)
    hidden = w_hh.shape[1]
    if w_ih.shape != (4 * hidden, f):
        raise DimensionError(
            f"w_ih shape {w_ih.shape} incompatible with input features {f} "
            f"and hidden {hidden}")
    if w_hh.shape != (4 * hidden, hidden) or b_ih.shape != (4 * hidden,) \
            or b_hh.shape != (4 * hidden,):
        raise DimensionError("LSTM parameter shapes are inconsistent")

    w_ih_t = transpose(w_ih, (1, 0))
    w_hh_t = transpose(w_hh, (1, 0))
    bias = add(b_ih, b_hh)
    h = h0 if h0 is not None else Tensor(np.zeros((n, hidden)))
    c = c0 if c0 is not None else Tensor(np.zeros((n, hidden)))

    outputs = []
    for t in range(t_steps):
        xt = reshape(narrow(x, 0, t, 1), (n, f))
        z = add(add(matmul(xt, w_ih_t), matmul(h, w_hh_t)), bias)
        i_gate = sigmoid(narrow(z, 1, 0, hidden))
        f_gate = sigmoid(narrow(z, 1, hidden, hidden))
        g_cell = tanh(narrow(z, 1, 2 * hidden, hidden))
        o_gate = sigmoid(narrow(z, 1, 3 * hidden, hidden))
        c = add(mul(f_gate, c), mul(i_gate, g_cell))
        h = mul(o_gate, tanh(c))
        outputs.append(reshape(h, (1, n, hidden)))
    return concat(outputs, axis=0)
