"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array plus an optional computation record. Training
runs in single precision; gradient-checking paths construct their leaves
with ``dtype=np.float64`` for headroom. The only implicit broadcast is a
length-n vector against the rows of an (m, n) matrix; every other shape
coercion must be explicit.

Gradient accumulation is additive: callers zero grads between steps.
``backward`` consumes the computation record, so a graph can be walked
exactly once.
"""

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_FLOATS = (np.float32, np.float64)


def _as_array(data, dtype):
    if dtype is not None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float32)
        return arr
    if isinstance(data, np.ndarray) and data.dtype in _FLOATS:
        return data
    return np.asarray(data, dtype=np.float32)


def _is_scalar(x):
    return isinstance(x, (int, float, np.integer, np.floating))


class Tensor:
    """One node of the computation record; immutable once produced by an op."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------------ basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    @staticmethod
    def _node(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        needs = any(p.requires_grad or p._backward is not None for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # --------------------------------------------------------------- broadcast

    def _binary(self, other, op_name):
        """Resolve the operand pair for a binary elementwise op.

        Returns (other_tensor, mode) where mode is one of
        'same', 'row_self' (self is the broadcast vector), 'row_other'.
        """
        if not isinstance(other, Tensor):
            raise TypeError(f"{op_name}: expected Tensor or scalar, got {type(other).__name__}")
        a, b = self.data.shape, other.data.shape
        if a == b:
            return other, "same"
        if len(a) == 2 and len(b) == 1 and a[1] == b[0]:
            return other, "row_other"
        if len(a) == 1 and len(b) == 2 and b[1] == a[0]:
            return other, "row_self"
        raise DimensionError(f"{op_name}: incompatible shapes {a} and {b}")

    # -------------------------------------------------------------- arithmetic

    def __add__(self, other):
        if _is_scalar(other):
            out_data = self.data + other

            def backward(g):
                self._accumulate(g)

            return Tensor._node(out_data, (self,), backward)
        other, mode = self._binary(other, "add")
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(g.sum(axis=0) if mode == "row_self" else g)
            other._accumulate(g.sum(axis=0) if mode == "row_other" else g)

        return Tensor._node(out_data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        if _is_scalar(other):
            return self + (-other)
        other, mode = self._binary(other, "sub")
        out_data = self.data - other.data

        def backward(g):
            self._accumulate(g.sum(axis=0) if mode == "row_self" else g)
            other._accumulate(-(g.sum(axis=0)) if mode == "row_other" else -g)

        return Tensor._node(out_data, (self, other), backward)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if _is_scalar(other):
            out_data = self.data * other

            def backward(g):
                self._accumulate(g * other)

            return Tensor._node(out_data, (self,), backward)
        other, mode = self._binary(other, "mul")
        out_data = self.data * other.data

        def backward(g):
            ga = g * other.data
            gb = g * self.data
            self._accumulate(ga.sum(axis=0) if mode == "row_self" else ga)
            other._accumulate(gb.sum(axis=0) if mode == "row_other" else gb)

        return Tensor._node(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        out_data = -self.data

        def backward(g):
            self._accumulate(-g)

        return Tensor._node(out_data, (self,), backward)

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            raise TypeError("matmul expects a Tensor")
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError(
                f"matmul requires 2-d operands, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul inner extents disagree: {self.data.shape} @ {other.data.shape}"
            )
        a, b = self, other
        out_data = a.data @ b.data

        def backward(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        return Tensor._node(out_data, (a, b), backward)

    # ------------------------------------------------------------- activations

    def tanh(self):
        y = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - y * y))

        return Tensor._node(y, (self,), backward)

    def sigmoid(self):
        z = np.exp(-np.abs(self.data))
        y = np.where(self.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

        def backward(g):
            self._accumulate(g * y * (1.0 - y))

        return Tensor._node(y, (self,), backward)

    def softplus(self):
        y = np.log1p(np.exp(-np.abs(self.data))) + np.maximum(self.data, 0.0)
        x = self.data

        def backward(g):
            z = np.exp(-np.abs(x))
            sig = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
            self._accumulate(g * sig)

        return Tensor._node(y, (self,), backward)

    def exp(self):
        y = np.exp(self.data)

        def backward(g):
            self._accumulate(g * y)

        return Tensor._node(y, (self,), backward)

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log requires strictly positive inputs")
        x = self.data

        def backward(g):
            self._accumulate(g / x)

        return Tensor._node(np.log(x), (self,), backward)

    def abs(self):
        """Elementwise absolute value; the kink at 0 takes subgradient 0."""
        x = self.data

        def backward(g):
            self._accumulate(g * np.sign(x))

        return Tensor._node(np.abs(x), (self,), backward)

    def max2(self, other):
        """Elementwise maximum of two tensors; ties route gradient to self."""
        other, mode = self._binary(other, "max2")
        if mode != "same":
            raise DimensionError(
                f"max2 requires identical shapes, got {self.data.shape} and {other.data.shape}"
            )
        mask = self.data >= other.data
        out_data = np.where(mask, self.data, other.data)

        def backward(g):
            self._accumulate(g * mask)
            other._accumulate(g * ~mask)

        return Tensor._node(out_data, (self, other), backward)

    # --------------------------------------------------------------- structure

    @property
    def T(self):
        if self.data.ndim != 2:
            raise DimensionError(f"transpose requires a 2-d tensor, got shape {self.data.shape}")
        out_data = self.data.T

        def backward(g):
            self._accumulate(g.T)

        return Tensor._node(out_data, (self,), backward)

    def concat_last(self, other):
        """Concatenate along the last axis; leading extents must agree."""
        if not isinstance(other, Tensor):
            raise TypeError("concat_last expects a Tensor")
        a, b = self.data, other.data
        if a.ndim != b.ndim or a.ndim not in (1, 2):
            raise DimensionError(f"concat_last: ranks disagree ({a.shape} vs {b.shape})")
        if a.ndim == 2 and a.shape[0] != b.shape[0]:
            raise DimensionError(f"concat_last: leading extents disagree ({a.shape} vs {b.shape})")
        split = a.shape[-1]
        out_data = np.concatenate([a, b], axis=-1)
        left = self

        def backward(g):
            if g.ndim == 1:
                left._accumulate(g[:split])
                other._accumulate(g[split:])
            else:
                left._accumulate(g[:, :split])
                other._accumulate(g[:, split:])

        return Tensor._node(out_data, (self, other), backward)

    def row(self, i):
        """A single row of a 2-d tensor, kept 2-d."""
        if self.data.ndim != 2:
            raise DimensionError(f"row requires a 2-d tensor, got shape {self.data.shape}")
        out_data = self.data[i : i + 1]

        def backward(g):
            buf = np.zeros_like(self.data)
            buf[i : i + 1] = g
            self._accumulate(buf)

        return Tensor._node(out_data, (self,), backward)

    def sum(self, axis=None):
        if axis is not None and axis >= self.data.ndim:
            raise DimensionError(f"sum: axis {axis} is out of range for shape {self.data.shape}")
        out_data = self.data.sum(axis=axis)
        shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, shape).copy())
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), shape).copy())

        return Tensor._node(np.asarray(out_data), (self,), backward)

    def mean(self, axis=None):
        if axis is not None and axis >= self.data.ndim:
            raise DimensionError(f"mean: axis {axis} is out of range for shape {self.data.shape}")
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    # ---------------------------------------------------------------- backward

    def backward(self):
        """Populate grads of every reachable requires_grad leaf.

        The loss must be scalar and must carry a computation record; the
        record is consumed, so a second call raises.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward is None:
            raise ContractError("backward on a detached tensor (no computation record)")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

        # consume the record: free closures and intermediate grads
        for node in topo:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node.grad = None


def concat_last(a, b):
    return a.concat_last(b)


def stack_rows(tensors):
    """Vertical concatenation of 2-d tensors with equal column extents."""
    if not tensors:
        raise ContractError("stack_rows requires at least one tensor")
    cols = {t.data.shape[-1] for t in tensors}
    if any(t.data.ndim != 2 for t in tensors) or len(cols) != 1:
        raise DimensionError(f"stack_rows: incompatible shapes {[t.data.shape for t in tensors]}")
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    parts = tuple(tensors)

    def backward(g):
        offset = 0
        for t in parts:
            k = t.data.shape[0]
            t._accumulate(g[offset : offset + k])
            offset += k

    return Tensor._node(out_data, parts, backward)


def max2(a, b):
    return a.max2(b)


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor leaf to a scalar Tensor. The check always runs in
    double precision regardless of the dtype of ``x``. NaN mismatches
    propagate into the returned value rather than raising.
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    out = f(leaf)
    out.backward()
    analytic = leaf.grad.reshape(-1).copy() if leaf.grad is not None else np.zeros(base.size)

    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        hi = float(f(Tensor(bumped.reshape(base.shape), dtype=np.float64)).data)
        bumped[i] = flat[i] - h
        lo = float(f(Tensor(bumped.reshape(base.shape), dtype=np.float64)).data)
        numeric[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
