"""
Dense tensor with tape-based reverse-mode differentiation

This module provides:
- Tensor: a float64 numpy array plus an optional gradient buffer and the
  closure that propagates gradients to its parents
- Parameter: a trainable Tensor with a freeze flag
- no_grad(): context manager that disables graph recording

The graph is built during the forward pass and released by backward(), so
each tape is differentiated exactly once.
"""

import contextlib

import numpy as np

from apps.core.exceptions import DimensionError, NonFiniteError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """
    Disable graph recording inside the block

    Usage:
        with no_grad():
            features = extractor(images)
    """
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


def check_finite(array, where):
    """Raise NonFiniteError if the array holds NaN or Inf"""
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"non-finite values produced by {where}", {"op": where})


class Tensor:
    """
    Dense n-dimensional float64 array with an optional gradient

    Attributes:
        data (np.ndarray): Values, always float64
        grad (np.ndarray | None): Accumulated gradient, same shape as data
        requires_grad (bool): Whether gradients flow into this tensor
        name (str | None): Optional label used by checkpoints and errors
    """

    __slots__ = ("data", "grad", "_requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if self.data.ndim == 0:
            self.data = self.data.reshape(())
        self.grad = None
        self._requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_op(cls, data, parents, backward, where):
        """
        Create the output of a differentiable operation

        Args:
            data (np.ndarray): Forward result
            parents (tuple[Tensor]): Inputs of the operation
            backward (callable): Maps the output gradient to one gradient
                (or None) per parent
            where (str): Operation name for error messages

        Returns:
            Tensor: Output tensor, recorded on the tape when any parent
            requires a gradient and recording is enabled
        """
        check_finite(data, where)
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out._requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- properties -----------------------------------------------------------

    @property
    def requires_grad(self):
        return self._requires_grad

    @requires_grad.setter
    def requires_grad(self, value):
        self._requires_grad = bool(value)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- reverse mode ---------------------------------------------------------

    def backward(self, gradient=None):
        """
        Propagate gradients from this tensor to every recorded ancestor

        Args:
            gradient (np.ndarray | None): Seed gradient; defaults to 1 for
                scalar tensors

        Raises:
            NumericError: If called on a non-scalar without a seed, or on a
                tensor that does not require gradients
            NonFiniteError: If any propagated gradient is NaN/Inf
        """
        if not self.requires_grad:
            raise NumericError("backward() on a tensor that does not require grad")

        if gradient is None:
            if self.data.size != 1:
                raise NumericError("backward() needs a seed gradient for non-scalars")
            gradient = np.ones_like(self.data)
        gradient = np.asarray(gradient, dtype=np.float64)
        if gradient.shape != self.shape:
            raise DimensionError(
                f"seed gradient shape {gradient.shape} does not match {self.shape}"
            )

        # Iterative topological sort, parents before children
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): gradient}
        for node in reversed(order):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                # Leaf: accumulate into the persistent buffer
                node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue
            parent_grads = node._backward(node_grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                check_finite(parent_grad, f"backward of {parent!r}")
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
            # One backward per tape
            node._parents = ()
            node._backward = None

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        from apps.autodiff import ops

        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from apps.autodiff import ops

        return ops.add(self, ops.scale(_lift(other), -1.0))

    def __rsub__(self, other):
        from apps.autodiff import ops

        return ops.add(_lift(other), ops.scale(self, -1.0))

    def __mul__(self, other):
        from apps.autodiff import ops

        if isinstance(other, (int, float, np.floating)):
            return ops.scale(self, float(other))
        return ops.multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from apps.autodiff import ops

        return ops.scale(self, -1.0)

    def sum(self):
        from apps.autodiff import ops

        return ops.total(self)

    def mean(self):
        from apps.autodiff import ops

        return ops.scale(ops.total(self), 1.0 / self.data.size)


def _lift(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class Parameter(Tensor):
    """
    Trainable tensor

    A frozen parameter is excluded from the tape (no gradient is computed
    for it) and ignored by optimizers, so its value stays bitwise fixed.

    Attributes:
        frozen (bool): Freeze flag
    """

    __slots__ = ("frozen",)

    def __init__(self, data, name=None, frozen=False):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = frozen

    @property
    def requires_grad(self):
        return not self.frozen

    @requires_grad.setter
    def requires_grad(self, value):
        self.frozen = not value

    def assign(self, values):
        """Overwrite the value in place (shape must match)"""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.data.shape:
            raise DimensionError(
                f"cannot assign shape {values.shape} to parameter {self.name} "
                f"of shape {self.data.shape}"
            )
        self.data = np.ascontiguousarray(values.copy())
