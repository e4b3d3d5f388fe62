"""
Parameter update rules

sgd_step applies p <- p - lr * (grad + weight_decay * p) to every
non-frozen parameter and clears the gradients. Adam keeps per-parameter
moment estimates for the toy minimax networks.
"""

import numpy as np

from apps.core.exceptions import MissingGradientError


def sgd_step(params, lr, weight_decay=0.0):
    """
    One plain SGD update with L2 weight decay

    Args:
        params (list[Parameter]): Parameters to update
        lr (float): Learning rate
        weight_decay (float): L2 coefficient

    Raises:
        MissingGradientError: If a trainable parameter has no gradient

    Example:
        p = Parameter([1.0]); p.grad = np.array([1.0])
        sgd_step([p], lr=0.1)  # p.data == [0.9]
    """
    for param in params:
        if param.frozen:
            # Frozen parameters keep their value regardless of gradient
            param.grad = None
            continue
        if param.grad is None:
            raise MissingGradientError(
                f"parameter {param.name or '<unnamed>'} has no gradient",
                {"parameter": param.name},
            )
        param.data = param.data - lr * (param.grad + weight_decay * param.data)
        param.grad = None


class Adam:
    """
    Adam optimizer over a fixed parameter list

    Usage:
        optimizer = Adam(mapper.generator.parameters(), lr=1e-3)
        loss.backward()
        optimizer.step()

    Attributes:
        lr (float): Step size
        betas (tuple[float, float]): Moment decay rates
        eps (float): Denominator stabilizer
    """

    def __init__(self, params, lr=1e-3, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.steps = 0
        self._first = [np.zeros_like(p.data) for p in self.params]
        self._second = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        """Apply one update and clear gradients; frozen parameters are skipped"""
        self.steps += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1**self.steps
        correction2 = 1.0 - beta2**self.steps
        for index, param in enumerate(self.params):
            if param.frozen or param.grad is None:
                param.grad = None
                continue
            self._first[index] = beta1 * self._first[index] + (1 - beta1) * param.grad
            self._second[index] = beta2 * self._second[index] + (1 - beta2) * param.grad**2
            update = (self._first[index] / correction1) / (
                np.sqrt(self._second[index] / correction2) + self.eps
            )
            param.data = param.data - self.lr * update
            param.grad = None
