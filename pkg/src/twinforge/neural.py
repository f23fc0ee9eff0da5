"""Plain feed-forward networks on numpy: ReLU hidden layers, linear output.

Everything is float64 and explicit: forward passes keep a trace of
pre-activations so the backward pass can replay them exactly, parameter
updates are plain gradient steps, and snapshots use a fixed little-endian
binary layout so a (seed, config) pair reproduces identical bytes anywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NumericError",
    "Network",
    "GradientSet",
    "init_network",
    "forward",
    "forward_trace",
    "backward",
    "backward_from_trace",
    "param_step",
    "param_count",
    "grad_check",
    "clone_network",
    "save_network",
    "load_network",
]

_MAGIC = b"TWNF"
_VERSION = 1


class NumericError(ArithmeticError):
    """A gradient or target stopped being finite; the offending update is refused."""


@dataclass
class Network:
    """Weights/biases per layer. weights[i] has shape (dims[i], dims[i+1])."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class GradientSet:
    """Parameter gradients with the same shapes as the owning network."""

    d_weights: list[np.ndarray] = field(repr=False)
    d_biases: list[np.ndarray] = field(repr=False)


def init_network(layer_dims, seed: int) -> Network:
    """Build a network with scaled-uniform weights and zero biases.

    Weights for a (fan_in, fan_out) layer are drawn uniformly from
    [-b, b] with b = sqrt(6 / (fan_in + fan_out)); the draw order is fixed
    so the same (dims, seed) always yields the same parameters.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise ValueError(f"layer dims must all be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(dims, weights, biases)


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network. ``x`` is one input vector or a (batch, dim) array;
    the output matches (vector in, vector out)."""
    return forward_trace(net, x)[0]


def forward_trace(net: Network, x):
    """Forward pass that also returns the post-activation of every layer,
    as needed to replay the pass backwards. The trace is a list whose first
    entry is the (2-D) input and whose last entry is the linear output."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != net.layer_dims[0]:
        raise ValueError(
            f"input shape {x.shape} incompatible with input dim {net.layer_dims[0]}"
        )
    trace = [a]
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
        trace.append(a)
    return (a[0] if single else a), trace


def backward(net: Network, x, output_grad) -> GradientSet:
    """Exact gradients of sum(output * output_grad) w.r.t. every parameter.

    ``output_grad`` must have the same shape as forward(net, x); for a batch
    the contributions of the rows are summed.
    """
    _, trace = forward_trace(net, x)
    return backward_from_trace(net, trace, output_grad)


def backward_from_trace(net: Network, trace, output_grad) -> GradientSet:
    """Backward pass reusing the activations recorded by :func:`forward_trace`."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace[-1].shape:
        raise ValueError(
            f"output_grad shape {np.shape(output_grad)} does not match "
            f"output shape {trace[-1].shape}"
        )
    d_weights = [None] * net.n_layers
    d_biases = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        a_in = trace[i]
        # downstream of hidden layers the ReLU gate kills gradients where the
        # activation was clipped; trace[i+1] > 0 identifies the open gates
        if i < net.n_layers - 1:
            g = g * (trace[i + 1] > 0.0)
        d_weights[i] = a_in.T @ g
        d_biases[i] = g.sum(axis=0)
        if i > 0:
            g = g @ net.weights[i].T
    return GradientSet(d_weights, d_biases)


def param_step(net: Network, grads: GradientSet, lr: float, direction: str = "descend"):
    """In-place gradient step over all parameters.

    direction="descend" takes theta -= lr * grad, "ascend" adds. Refuses to
    apply a step containing non-finite gradients (raises NumericError,
    network untouched).
    """
    if direction == "descend":
        sign = -1.0
    elif direction == "ascend":
        sign = 1.0
    else:
        raise ValueError(f"direction must be 'ascend' or 'descend', got {direction!r}")
    if len(grads.d_weights) != net.n_layers or len(grads.d_biases) != net.n_layers:
        raise ValueError("gradient set does not match network topology")
    for w, b, dw, db in zip(net.weights, net.biases, grads.d_weights, grads.d_biases):
        if dw.shape != w.shape or db.shape != b.shape:
            raise ValueError("gradient set does not match network topology")
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericError("non-finite gradient, step refused")
    for w, b, dw, db in zip(net.weights, net.biases, grads.d_weights, grads.d_biases):
        w += sign * lr * dw
        b += sign * lr * db


def param_count(net: Network) -> int:
    """Total number of scalar parameters."""
    return sum(w.size for w in net.weights) + sum(b.size for b in net.biases)


def grad_check(
    net: Network,
    x,
    loss,
    loss_grad,
    h: float = 1e-5,
    sample_size: int = 200,
    rng: np.random.Generator | None = None,
    analytic: GradientSet | None = None,
) -> float:
    """Worst relative disagreement between backprop and central differences.

    ``loss`` maps the network output to a scalar and ``loss_grad`` gives its
    exact derivative w.r.t. the output. Up to ``sample_size`` parameters are
    probed (all of them for small nets). ``analytic`` substitutes a
    precomputed gradient set, which lets tests feed in a corrupted gradient
    as a negative control.
    """
    if analytic is None:
        analytic = backward(net, x, loss_grad(forward(net, x)))
    arrays = list(zip(net.weights, analytic.d_weights)) + list(
        zip(net.biases, analytic.d_biases)
    )
    coords = [
        (ai, idx)
        for ai, (arr, _) in enumerate(arrays)
        for idx in np.ndindex(arr.shape)
    ]
    if len(coords) > sample_size:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=sample_size, replace=False)
        coords = [coords[i] for i in picks]
    worst = 0.0
    for ai, idx in coords:
        arr, grad_arr = arrays[ai]
        orig = arr[idx]
        arr[idx] = orig + h
        lo_hi = loss(forward(net, x))
        arr[idx] = orig - h
        lo_lo = loss(forward(net, x))
        arr[idx] = orig
        numeric = (lo_hi - lo_lo) / (2.0 * h)
        a = grad_arr[idx]
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst


def clone_network(net: Network) -> Network:
    """Deep copy (fresh parameter arrays)."""
    return Network(
        net.layer_dims,
        [w.copy() for w in net.weights],
        [b.copy() for b in net.biases],
    )


def save_network(net: Network, path):
    """Write a versioned binary snapshot.

    Layout (all little-endian): magic b"TWNF", uint16 version, uint16 number
    of dims, uint32 dims, then per layer the weight matrix (row-major, rows =
    input index) and bias vector as float64.
    """
    parts = [_MAGIC, struct.pack("<HH", _VERSION, len(net.layer_dims))]
    parts.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_network(path) -> Network:
    """Read a snapshot written by :func:`save_network`."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"not a network snapshot (bad magic {blob[:4]!r})")
    version, n_dims = struct.unpack_from("<HH", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    dims = struct.unpack_from(f"<{n_dims}I", blob, 8)
    off = 8 + 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(blob):
        raise ValueError("snapshot has trailing or missing bytes")
    return Network(tuple(int(d) for d in dims), weights, biases)
