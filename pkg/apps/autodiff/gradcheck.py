"""
Finite-difference gradient checking

Compares the analytic gradient of a random scalar projection
sum(R * f(x)) with central differences, the check every differentiable
operation is tested against.
"""

import numpy as np

from apps.autodiff.tensor import Tensor, no_grad


def numerical_gradient(fn, arrays, index, projection, step=1e-5):
    """
    Central-difference gradient of sum(projection * fn(*arrays)) w.r.t. arrays[index]

    Args:
        fn (callable): Maps Tensors to a Tensor
        arrays (list[np.ndarray]): Inputs (not modified)
        index (int): Which input to differentiate
        projection (np.ndarray): Fixed random weights, shape of fn's output
        step (float): Difference step

    Returns:
        np.ndarray: Numerical gradient with the shape of arrays[index]
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    with no_grad():
        for position in np.ndindex(target.shape):
            original = target[position]
            target[position] = original + step
            upper = float((projection * fn(*[Tensor(a) for a in base]).data).sum())
            target[position] = original - step
            lower = float((projection * fn(*[Tensor(a) for a in base]).data).sum())
            target[position] = original
            grad[position] = (upper - lower) / (2 * step)
    return grad


def analytic_gradient(fn, arrays, index, projection):
    """Reverse-mode gradient of the same projection"""
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=(i == index)) for i, a in enumerate(arrays)]
    out = fn(*tensors)
    out.backward(np.asarray(projection, dtype=np.float64).reshape(out.shape))
    return tensors[index].grad if tensors[index].grad is not None else np.zeros_like(tensors[index].data)


def relative_error(analytic, numeric):
    """max |a - n| / max(1, max|n|, max|a|)"""
    scale = max(1.0, float(np.abs(numeric).max(initial=0.0)), float(np.abs(analytic).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def check_gradient(fn, arrays, index=0, rng=None, step=1e-5):
    """
    Relative error between analytic and numerical gradients

    Args:
        fn (callable): Differentiable function of Tensors
        arrays (list[np.ndarray]): Inputs
        index (int): Input to check
        rng (np.random.Generator | None): Source of the projection weights

    Returns:
        float: Relative error (pass threshold is 1e-4)
    """
    rng = rng or np.random.default_rng(0)
    with no_grad():
        out_shape = fn(*[Tensor(a) for a in arrays]).shape
    projection = rng.uniform(-1.0, 1.0, size=out_shape)
    analytic = analytic_gradient(fn, arrays, index, projection)
    numeric = numerical_gradient(fn, arrays, index, projection, step)
    return relative_error(analytic, numeric)
