"""Minimal reverse-mode autodiff engine on dense float64 arrays.

Every operation records a backward rule on its output node; calling
:func:`backward` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients on the requiring leaves.
All heavy lifting is plain numpy; there is no implicit broadcasting
beyond the one documented case (a per-sample per-channel [N,C,1,1]
factor against an [N,C,H,W] map).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InvalidArgumentError, PgmParseError

__all__ = [
    "Tensor",
    "tensor",
    "backward",
    "conv2d",
    "adaptive_avg_pool",
    "avg_pool_same",
    "bilinear_upsample",
    "elementwise",
    "activation",
    "norm_affine",
    "reduce_sum",
    "reduce_mean",
    "scale",
    "sgd_step",
    "SGD",
    "save_tensor",
    "load_tensor",
    "uniform_conv_init",
]


class Tensor:
    """Dense float64 value grid with an optional tape node.

    ``grad`` is populated (and accumulated into) by :func:`backward` for
    leaf tensors with ``requires_grad=True``. Interior nodes carry their
    parents and a backward rule instead.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise InvalidArgumentError(
                f"item() requires a single-element tensor, got shape {self.data.shape}"
            )
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False):
    """Wrap array-like data in a leaf Tensor."""
    return Tensor(data, requires_grad=requires_grad)


def _node(data, parents, backward_fn):
    """Build an interior node; the tape edge is dropped when no parent needs grad."""
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)


def _topo_order(root):
    # Iterative DFS: graphs can be a few hundred nodes deep.
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requiring leaf.

    Repeated calls keep accumulating; callers reset grads between steps.
    """
    if loss.data.size != 1:
        raise InvalidArgumentError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        else:
            node.grad = g.copy() if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# convolution


def _check_4d(x, name):
    if x.data.ndim != 4:
        raise InvalidArgumentError(f"{name} must be 4-d, got shape {x.data.shape}")


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 2-d cross-correlation with integer stride and zero padding.

    ``x`` is [N,Cin,H,W], ``weight`` is [Cout,Cin/groups,kh,kw], ``bias``
    is [Cout] or None. Output spatial size is floor((H+2p-kh)/stride)+1.
    """
    _check_4d(x, "conv2d input")
    _check_4d(weight, "conv2d weight")
    n, cin, h, w = x.data.shape
    cout, cin_g, kh, kw = weight.data.shape
    if stride < 1 or padding < 0 or kh < 1 or kw < 1:
        raise InvalidArgumentError(
            f"conv2d needs stride >= 1, padding >= 0, kernel >= 1; got "
            f"stride={stride} padding={padding} kernel=({kh},{kw})"
        )
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise InvalidArgumentError(
            f"channel counts in={cin} out={cout} not divisible by groups={groups}"
        )
    if cin_g != cin // groups:
        raise InvalidArgumentError(
            f"weight shape {weight.data.shape} incompatible with input shape "
            f"{x.data.shape} and groups={groups}"
        )
    if bias is not None and bias.data.shape != (cout,):
        raise InvalidArgumentError(
            f"bias shape {bias.data.shape} does not match out channels {cout}"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if hp < kh or wp < kw:
        raise InvalidArgumentError(
            f"kernel ({kh},{kw}) larger than padded input ({hp},{wp})"
        )

    xp = x.data
    if padding:
        xp = np.zeros((n, cin, hp, wp))
        xp[:, :, padding : padding + h, padding : padding + w] = x.data

    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, cin, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )

    cg, cog = cin // groups, cout // groups
    out = np.empty((n, cout, ho, wo))
    for g in range(groups):
        pg = patches[:, g * cg : (g + 1) * cg]
        wg = weight.data[g * cog : (g + 1) * cog]
        # (cog, n, ho, wo) <- contract channel and kernel axes
        og = np.tensordot(wg, pg, axes=([1, 2, 3], [1, 2, 3]))
        out[:, g * cog : (g + 1) * cog] = np.moveaxis(og, 0, 1)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(grad):
        gw = np.empty_like(weight.data)
        gxp = np.zeros((n, cin, hp, wp))
        for g in range(groups):
            go = grad[:, g * cog : (g + 1) * cog]
            pg = patches[:, g * cg : (g + 1) * cg]
            wg = weight.data[g * cog : (g + 1) * cog]
            gw[g * cog : (g + 1) * cog] = np.tensordot(
                go, pg, axes=([0, 2, 3], [0, 4, 5])
            )
            # (n, cg, kh, kw, ho, wo) <- accumulate all kernel taps at once
            contrib = np.tensordot(go, wg, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
            gx_slice = gxp[:, g * cg : (g + 1) * cg]
            for i in range(kh):
                for j in range(kw):
                    gx_slice[:, :, i : i + stride * ho : stride,
                             j : j + stride * wo : stride] += contrib[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, grad.sum(axis=(0, 2, 3))

    return _node(out, parents, bwd)


# ---------------------------------------------------------------------------
# pooling


def _partition(size, grid):
    cuts = [(i * size) // grid for i in range(grid + 1)]
    return list(zip(cuts[:-1], cuts[1:]))


def adaptive_avg_pool(x, grid):
    """Mean over a grid x grid floor-partition of the spatial extent.

    Patches tile the input exactly; when grid exceeds the extent, the
    empty cells of the partition produce 0.
    """
    _check_4d(x, "adaptive_avg_pool input")
    if grid < 1:
        raise InvalidArgumentError(f"grid must be >= 1, got {grid}")
    n, c, h, w = x.data.shape
    rows, cols = _partition(h, grid), _partition(w, grid)
    row_lens = np.array([r1 - r0 for r0, r1 in rows])
    col_lens = np.array([c1 - c0 for c0, c1 in cols])
    areas = row_lens[:, None] * col_lens[None, :]
    safe_areas = np.maximum(areas, 1)

    if h % grid == 0 and w % grid == 0:
        out = x.data.reshape(n, c, grid, h // grid, grid, w // grid).mean(
            axis=(3, 5)
        )
    elif grid <= h and grid <= w:
        sums = np.add.reduceat(x.data, [r0 for r0, _ in rows], axis=2)
        sums = np.add.reduceat(sums, [c0 for c0, _ in cols], axis=3)
        out = sums / areas
    else:
        out = np.zeros((n, c, grid, grid))
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                if r1 > r0 and c1 > c0:
                    out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def bwd(grad):
        # empty patches repeat zero times, so their (undefined) share drops out
        spread = np.repeat(grad / safe_areas, row_lens, axis=2)
        return (np.repeat(spread, col_lens, axis=3),)

    return _node(out, (x,), bwd)


def _shifted_window_sum(a, r):
    # Sum of the (2r+1)^2 window; out-of-bounds neighbours contribute 0.
    h, w = a.shape[-2], a.shape[-1]
    padded = np.zeros(a.shape[:-2] + (h + 2 * r, w + 2 * r))
    padded[..., r : r + h, r : r + w] = a
    total = np.zeros_like(a)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            total += padded[..., r + dy : r + dy + h, r + dx : r + dx + w]
    return total


def _window_counts(h, w, r):
    edge = lambda size: np.minimum(np.arange(size) + r, size - 1) - np.maximum(
        np.arange(size) - r, 0
    ) + 1
    return edge(h)[:, None] * edge(w)[None, :]


def avg_pool_same(x, kernel):
    """Same-size mean pooling; borders average in-bounds entries only."""
    _check_4d(x, "avg_pool_same input")
    if kernel < 1 or kernel % 2 == 0:
        raise InvalidArgumentError(f"kernel must be odd and >= 1, got {kernel}")
    r = kernel // 2
    h, w = x.data.shape[-2:]
    counts = _window_counts(h, w, r)
    out = _shifted_window_sum(x.data, r) / counts

    def bwd(grad):
        # window membership is symmetric, so the adjoint is the same box sum
        return (_shifted_window_sum(grad / counts, r),)

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# interpolation


def _axis_matrix(n_in, n_out):
    # sparse-in-spirit interpolation matrix: each output row mixes at
    # most two input samples (align-corners convention)
    mat = np.zeros((n_out, n_in))
    if n_out == 1:
        coords = np.zeros(1)
    else:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        coords = np.clip(coords, 0.0, n_in - 1)
    lo = np.floor(coords).astype(np.intp)
    frac = coords - lo
    hi = np.minimum(lo + 1, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_upsample(x, out_h, out_w):
    """Align-corners bilinear resampling to (out_h, out_w).

    Separable: one interpolation matrix per axis, applied as matmuls.
    """
    _check_4d(x, "bilinear_upsample input")
    n, c, h, w = x.data.shape
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"output size must be positive, got ({out_h},{out_w})")
    if out_h < h or out_w < w:
        raise InvalidArgumentError(
            f"only upsampling supported: ({h},{w}) -> ({out_h},{out_w})"
        )
    wy = _axis_matrix(h, out_h)
    wx = _axis_matrix(w, out_w)
    out = np.matmul(np.matmul(wy, x.data), wx.T)

    def bwd(grad):
        return (np.matmul(np.matmul(wy.T, grad), wx),)

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# pointwise


_ELEMENTWISE_OPS = ("mul", "add", "sub", "abs-diff")


def elementwise(a, b, op):
    """Pointwise op between equal shapes, or an [N,C,1,1] factor against [N,C,H,W].

    Gradients for the factor case are sum-reduced over the broadcast dims.
    """
    if op not in _ELEMENTWISE_OPS:
        raise InvalidArgumentError(f"unknown elementwise op {op!r}")
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        reduce_b = False
    elif (
        len(sa) == 4
        and len(sb) == 4
        and sb[:2] == sa[:2]
        and sb[2] == sb[3] == 1
    ):
        reduce_b = True
    else:
        raise InvalidArgumentError(f"incompatible elementwise shapes {sa} and {sb}")

    def shrink(g):
        return g.sum(axis=(2, 3), keepdims=True) if reduce_b else g

    if op == "mul":
        out = a.data * b.data
        bwd = lambda g: (g * b.data, shrink(g * a.data))
    elif op == "add":
        out = a.data + b.data
        bwd = lambda g: (g, shrink(g))
    elif op == "sub":
        out = a.data - b.data
        bwd = lambda g: (g, shrink(-g))
    else:  # abs-diff, subgradient 0 at ties
        sign = np.sign(a.data - b.data)
        out = np.abs(a.data - b.data)
        bwd = lambda g: (g * sign, shrink(-g * sign))

    return _node(out, (a, b), bwd)


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def activation(x, kind):
    """relu, sigmoid, or per-pixel softmax across the channel axis."""
    if kind == "relu":
        out = np.maximum(x.data, 0.0)
        mask = x.data > 0
        return _node(out, (x,), lambda g: (g * mask,))
    if kind == "sigmoid":
        out = _sigmoid(x.data)
        return _node(out, (x,), lambda g: (g * out * (1.0 - out),))
    if kind == "softmax-channels":
        if x.data.ndim < 2 or x.data.shape[1] < 1:
            raise InvalidArgumentError(
                f"softmax-channels needs a channel axis, got shape {x.data.shape}"
            )
        shifted = x.data - x.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)

        def bwd(grad):
            dot = (grad * out).sum(axis=1, keepdims=True)
            return (out * (grad - dot),)

        return _node(out, (x,), bwd)
    raise InvalidArgumentError(f"unknown activation kind {kind!r}")


def norm_affine(x, gamma, beta, eps=1e-5, training=True,
                running_mean=None, running_var=None, momentum=0.1):
    """Per-channel standardization over N*H*W, then a learned scale/shift.

    Training mode uses batch statistics and, when running buffers are
    supplied, folds them in with the given momentum; eval mode reads the
    running buffers instead.
    """
    _check_4d(x, "norm_affine input")
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise InvalidArgumentError(
            f"gamma/beta shapes {gamma.data.shape}/{beta.data.shape} do not match "
            f"{c} channels"
        )
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise InvalidArgumentError("eval mode requires running statistics")
        mu, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(grad):
        dgamma = (grad * xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * gamma.data[None, :, None, None]
        if training:
            mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
            mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = inv_std[None, :, None, None] * (dxhat - mean_d - xhat * mean_dx)
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# reductions and scalar arithmetic


def reduce_sum(x):
    out = np.asarray(x.data.sum())
    return _node(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape) * 1.0,))


def reduce_mean(x):
    size = x.data.size
    out = np.asarray(x.data.mean())
    return _node(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape) / size,))


def scale(x, factor):
    factor = float(factor)
    return _node(x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# optimization


def sgd_step(params, grads, velocities, lr, momentum=0.9, weight_decay=0.0001):
    """One classic momentum update, in place on the parameter arrays.

    velocity <- momentum * velocity + grad + weight_decay * param
    param    <- param - lr * velocity
    """
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")
    for p, g, v in zip(params, grads, velocities):
        if g.shape != p.shape or v.shape != p.shape:
            raise InvalidArgumentError(
                f"param/grad/velocity shape mismatch: {p.shape} vs {g.shape} vs {v.shape}"
            )
        v *= momentum
        v += g
        v += weight_decay * p
        p -= lr * v


class SGD:
    """Momentum SGD over named Tensors; missing grads act as zeros."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0001):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        sgd_step([p.data for p in self.params], grads, self.velocities, lr,
                 momentum=self.momentum, weight_decay=self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"PSEGTNSR"


def save_tensor(path, array):
    """Write one array: magic, uint32 rank, uint32 dims (LE), float64 row-major."""
    arr = np.ascontiguousarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def load_tensor(path):
    """Read an array written by :func:`save_tensor`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise PgmParseError(f"bad tensor magic in {path}", 0)
    off = len(_MAGIC)
    if len(blob) < off + 4:
        raise PgmParseError(f"truncated tensor header in {path}", len(blob))
    (rank,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) < off + 4 * rank:
        raise PgmParseError(f"truncated dims in {path}", len(blob))
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(blob) != off + 8 * count:
        raise PgmParseError(
            f"tensor payload size mismatch in {path}: expected {8 * count} bytes",
            off,
        )
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
    return values.reshape(dims).astype(np.float64)


def uniform_conv_init(rng, shape):
    """Zero-mean uniform init scaled by 1/sqrt(fan_in) for conv weights."""
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
