"""Reverse-mode automatic differentiation over dense `float64` arrays.

Operations on :class:`Tensor` objects are recorded on the innermost active :class:`Tape`.
Recording only happens while a tape is active and at least one input requires a gradient,
so the same model code serves for training (inside ``with Tape() as tape:``) and for
plain inference (outside of any tape).

>>> w = Tensor([[1.0], [2.0]], requires_grad=True)
>>> with Tape() as tape:
...     loss = sum_all(matmul(Tensor([[3.0, 4.0]]), w))
>>> tape.gradient(loss, [w])[0]
array([[3.],
       [4.]])

Only scalar-to-tensor and equal-shape broadcasting are supported by the elementwise
operations. Row-wise bias additions are handled by :func:`linear`, and arrays of
constants are broadcast explicitly by the caller.
"""
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from .errors import ContractViolation, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "linear",
    "layer_norm",
    "softmax_last",
    "gelu",
    "tanh",
    "slice_last_timestep",
    "reshape",
    "swapaxes",
    "sum_all",
    "mean_all",
    "custom_node",
]

ArrayLike = Union[np.ndarray, float, Sequence]
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# each thread records on its own stack of open tapes
_LOCAL = threading.local()


def _active_tapes() -> List["Tape"]:
    if not hasattr(_LOCAL, "tapes"):
        _LOCAL.tapes = []
    return _LOCAL.tapes


class Tensor:
    """A dense real array that can take part in differentiation.

    Parameters
    ----------
    values : array_like
        The values, converted to a `float64` array (copied).

    requires_grad : bool, default False
        Whether gradients with respect to this tensor are tracked.
    """

    __slots__ = ("values", "requires_grad", "node", "_tape")

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        self.values: np.ndarray = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.item())

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    kind: str
    inputs: Tuple[Optional[int], ...]
    vjp: Optional[VJP]
    shape: Tuple[int, ...]


class Tape:
    """Ordered record of the operations needed to compute gradients.

    Nodes are appended as operations execute, so every node's inputs precede it.
    Use the tape as a context manager to make it the active tape.
    """

    def __init__(self):
        self.nodes: List[_Node] = []

    def __enter__(self) -> "Tape":
        _active_tapes().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _active_tapes().remove(self)

    def __len__(self):
        return len(self.nodes)

    def watch(self, tensor: Tensor) -> int:
        """Register `tensor` as a leaf of this tape and return its node id."""
        self.nodes.append(_Node("leaf", (), None, tensor.shape))
        tensor.node = len(self.nodes) - 1
        tensor._tape = self
        tensor.requires_grad = True
        return tensor.node

    def _append(
        self, kind: str, inputs: Tuple[Optional[int], ...], vjp: VJP, shape
    ) -> int:
        self.nodes.append(_Node(kind, inputs, vjp, shape))
        return len(self.nodes) - 1

    def backward(self, loss: Tensor) -> Dict[int, Tensor]:
        """Compute the gradient of the scalar `loss` with respect to every node.

        Parameters
        ----------
        loss : Tensor
            A scalar tensor recorded on this tape.

        Returns
        -------
        dict
            Maps every node id of the tape to the gradient of `loss` with respect to that
            node. Nodes that do not influence the loss receive zero tensors.
        """
        if loss.size != 1:
            raise ContractViolation(
                f"backward() needs a scalar loss, got a tensor of shape {loss.shape}."
            )
        if loss._tape is not self or loss.node is None:
            raise ContractViolation("The loss was not recorded on this tape.")

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss.node] = np.ones(loss.shape)

        for idx in range(loss.node, -1, -1):
            node, grad = self.nodes[idx], grads[idx]
            if grad is None or node.vjp is None:
                continue
            for input_idx, input_grad in zip(node.inputs, node.vjp(grad)):
                if input_idx is None or input_grad is None:
                    continue
                previous = grads[input_idx]
                grads[input_idx] = (
                    input_grad if previous is None else previous + input_grad
                )

        return {
            idx: Tensor(grad if grad is not None else np.zeros(node.shape))
            for idx, (node, grad) in enumerate(zip(self.nodes, grads))
        }

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> List[np.ndarray]:
        """Gradients of `loss` with respect to `sources`, in the same order.

        Sources that were never used while this tape was active get zero arrays.
        """
        by_node = self.backward(loss)
        return [
            by_node[source.node].values
            if source._tape is self and source.node is not None
            else np.zeros(source.shape)
            for source in sources
        ]


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(kind: str, values: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = False
    out.node = None
    out._tape = None

    tapes = _active_tapes()
    tape = tapes[-1] if tapes else None
    if tape is None or not any(t.requires_grad for t in inputs):
        return out

    input_ids = []
    for t in inputs:
        if not t.requires_grad:
            input_ids.append(None)
            continue
        if t._tape is not tape:
            tape.watch(t)
        input_ids.append(t.node)

    out.requires_grad = True
    out.node = tape._append(kind, tuple(input_ids), vjp, values.shape)
    out._tape = tape
    return out


def _check_elementwise(kind: str, a: Tensor, b: Tensor):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(
            f"{kind}: incompatible shapes {a.shape} and {b.shape}. "
            f"Only equal shapes or a scalar operand are supported."
        )


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise sum."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    return _record(
        "add",
        a.values + b.values,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    """Elementwise difference."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    return _record(
        "sub",
        a.values - b.values,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    a_values, b_values = a.values, b.values
    return _record(
        "mul",
        a_values * b_values,
        (a, b),
        lambda g: (
            _reduce_to(g * b_values, a.shape),
            _reduce_to(g * a_values, b.shape),
        ),
    )


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    return _record("scale", x.values * factor, (x,), lambda g: (g * factor,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return _record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian error linear unit, ``0.5 * x * (1 + erf(x / sqrt(2)))``."""
    v = x.values
    cdf = 0.5 * (1.0 + erf(v / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi)
    return _record("gelu", v * cdf, (x,), lambda g: (g * (cdf + v * pdf),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    `a` may carry leading batch axes. `b` is either a plain matrix shared across the
    batch or has the same leading axes as `a`.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs at least two-dimensional operands, got shapes {a.shape} and {b.shape}."
        )
    if a.shape[-1] != b.shape[-2] or (b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}.")

    a_values, b_values = a.values, b.values

    def vjp(g):
        grad_a = g @ np.swapaxes(b_values, -1, -2)
        if b_values.ndim == 2:
            grad_b = (
                a_values.reshape(-1, a_values.shape[-1]).T
                @ g.reshape(-1, g.shape[-1])
            )
        else:
            grad_b = np.swapaxes(a_values, -1, -2) @ g
        return grad_a, grad_b

    return _record("matmul", a_values @ b_values, (a, b), vjp)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` applied along the last axis.

    Parameters
    ----------
    x : Tensor
        Array of shape `(..., d_in)`.

    weight : Tensor
        Matrix of shape `(d_in, d_out)`.

    bias : Tensor, optional
        Vector of shape `(d_out,)`, added to every row.
    """
    if weight.ndim != 2 or x.ndim < 1 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input of shape {x.shape} does not fit weight of shape {weight.shape}."
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear: bias of shape {bias.shape} does not fit weight of shape {weight.shape}."
        )

    x_values, w_values = x.values, weight.values
    out = x_values @ w_values
    if bias is not None:
        out = out + bias.values

    def vjp(g):
        flat_g = g.reshape(-1, g.shape[-1])
        grad_x = g @ w_values.T
        grad_w = x_values.reshape(-1, x_values.shape[-1]).T @ flat_g
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, flat_g.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("linear", out, inputs, vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine `gain` and `bias`.

    Computes ``(x - mean) / sqrt(var + eps) * gain + bias`` with the population variance.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"layer_norm: cannot normalize over an empty axis, shape {x.shape}.")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must have shape ({d},)."
        )

    centered = x.values - x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    gain_values = gain.values

    def vjp(g):
        g_normalized = g * gain_values
        grad_x = inv_std * (
            g_normalized
            - g_normalized.mean(axis=-1, keepdims=True)
            - normalized * (g_normalized * normalized).mean(axis=-1, keepdims=True)
        )
        grad_gain = (g * normalized).reshape(-1, d).sum(axis=0)
        grad_bias = g.reshape(-1, d).sum(axis=0)
        return grad_x, grad_gain, grad_bias

    return _record(
        "layer_norm", normalized * gain_values + bias.values, (x, gain, bias), vjp
    )


def softmax_last(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by subtracting the row maximum."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_last: empty last axis, shape {x.shape}.")
    exp = np.exp(x.values - x.values.max(axis=-1, keepdims=True))
    y = exp / exp.sum(axis=-1, keepdims=True)
    return _record(
        "softmax",
        y,
        (x,),
        lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),),
    )


def slice_last_timestep(x: Tensor) -> Tensor:
    """Return the last row of an `(..., L, d)` tensor as an `(..., d)` tensor."""
    if x.ndim < 2:
        raise DimensionError(
            f"slice_last_timestep needs a tensor of shape (..., L, d), got {x.shape}."
        )
    shape = x.shape

    def vjp(g):
        grad = np.zeros(shape)
        grad[..., -1, :] = g
        return (grad,)

    return _record("slice_last", x.values[..., -1, :].copy(), (x,), vjp)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    try:
        values = x.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {original} into {shape}.")
    return _record("reshape", values, (x,), lambda g: (g.reshape(original),))


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    return _record(
        "swapaxes",
        np.swapaxes(x.values, axis1, axis2),
        (x,),
        lambda g: (np.swapaxes(g, axis1, axis2),),
    )


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    shape = x.shape
    return _record(
        "sum", np.asarray(x.values.sum()), (x,), lambda g: (np.full(shape, g.item()),)
    )


def mean_all(x: Tensor) -> Tensor:
    """Mean of all entries, as a scalar tensor."""
    shape, size = x.shape, x.size
    if size == 0:
        raise DimensionError("mean_all: cannot average an empty tensor.")
    return _record(
        "mean",
        np.asarray(x.values.mean()),
        (x,),
        lambda g: (np.full(shape, g.item() / size),),
    )


def custom_node(
    inputs: Sequence[Tensor],
    forward_fn: Callable[..., np.ndarray],
    jacobian_fn: Callable[..., Sequence[Optional[np.ndarray]]],
    batch_ndim: int = 0,
    shared_inputs: Sequence[int] = (),
    kind: str = "custom",
) -> Tensor:
    """Record an operation whose derivatives are computed outside of this module.

    Parameters
    ----------
    inputs : list of Tensor
        The operands.

    forward_fn : callable
        ``forward_fn(*input_arrays) -> output_array``. Must be deterministic.

    jacobian_fn : callable
        ``jacobian_fn(*input_arrays) -> list`` with one Jacobian (or `None` for operands
        that are not differentiated) per input. Only called during the backward pass.

        Without batch axes (`batch_ndim=0`) the Jacobian of an input has shape
        `output.shape + input.shape`. With `batch_ndim=k`, the first `k` axes of the
        output are independent batch axes: a batched input has shape `batch + in_tail`
        and its Jacobian has shape `batch + out_tail + in_tail`. Inputs listed in
        `shared_inputs` carry no batch axes; their Jacobian has shape
        `batch + out_tail + input.shape` and the contributions are summed over the batch.

    batch_ndim : int, default 0
        Number of leading batch axes of the output.

    shared_inputs : list of ints, optional
        Indices of the inputs that are shared across the batch.

    kind : str, default "custom"
        Label of the tape node.

    Returns
    -------
    Tensor
        The output of `forward_fn`.
    """
    arrays = [t.values for t in inputs]
    out = np.asarray(forward_fn(*arrays), dtype=np.float64)
    batch_shape = out.shape[:batch_ndim]
    out_tail = out.shape[batch_ndim:]
    out_size = int(np.prod(out_tail, dtype=int))

    for idx, t in enumerate(inputs):
        if idx not in shared_inputs and t.shape[:batch_ndim] != batch_shape:
            raise DimensionError(
                f"{kind}: input {idx} of shape {t.shape} lacks the batch axes {batch_shape}."
            )

    def vjp(g):
        jacobians = list(jacobian_fn(*arrays))
        if len(jacobians) != len(inputs):
            raise DimensionError(
                f"{kind}: expected {len(inputs)} Jacobians, got {len(jacobians)}."
            )
        grads: List[Optional[np.ndarray]] = []
        for idx, (t, jacobian) in enumerate(zip(inputs, jacobians)):
            if jacobian is None:
                grads.append(None)
                continue
            shared = idx in shared_inputs
            in_tail = t.shape if shared else t.shape[batch_ndim:]
            expected = batch_shape + out_tail + in_tail
            jacobian = np.asarray(jacobian, dtype=np.float64)
            if jacobian.shape != expected:
                raise DimensionError(
                    f"{kind}: Jacobian for input {idx} has shape {jacobian.shape}, "
                    f"expected {expected}."
                )
            in_size = int(np.prod(in_tail, dtype=int))
            grad = np.einsum(
                "...o,...oi->...i",
                g.reshape(batch_shape + (out_size,)),
                jacobian.reshape(batch_shape + (out_size, in_size)),
            )
            if shared:
                grad = grad.reshape(-1, in_size).sum(axis=0)
            grads.append(grad.reshape(t.shape))
        return grads

    return _record(kind, out, inputs, vjp)
