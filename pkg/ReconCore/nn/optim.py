"""L1 training loss and the Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import NonFiniteError


def l1_loss(pred, target):
    """
    Mean over the batch of the summed absolute difference.

    Returns:
        tuple: (loss, gradient with respect to ``pred``). The subgradient at an
        exact zero difference is 0.

    Raises:
        ValueError: If the shapes differ.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    batch = pred.shape[0]
    diff = pred - target
    return float(np.abs(diff).sum() / batch), np.sign(diff) / batch


@dataclass
class AdamState:
    """
    First and second moment estimates per tensor, plus the step count.

    Attributes:
        m (dict): Name → first moment.
        v (dict): Name → second moment.
        step (int): Number of updates applied so far.
    """

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, tensors):
        return cls(
            {name: np.zeros_like(t) for name, t in tensors.items()},
            {name: np.zeros_like(t) for name, t in tensors.items()},
        )


def adam_step(tensors, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update.

    Args:
        tensors (dict): Name → parameter array.
        grads (dict): Name → gradient, same keys and shapes.
        state (AdamState): Moments before the update.

    Returns:
        tuple: (new tensors, new AdamState); the inputs are left untouched.

    Raises:
        NonFiniteError: If a gradient holds NaN or infinity, naming the tensor.
        ValueError: If the gradient keys or shapes do not match the parameters.
    """
    if set(grads) != set(tensors):
        raise ValueError("gradients and parameters do not have the same tensors")
    for name, g in grads.items():
        if g.shape != tensors[name].shape:
            raise ValueError(f"gradient of {name} has shape {g.shape}, expected {tensors[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}", name=name)

    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    new_tensors, m, v = {}, {}, {}
    for name, p in tensors.items():
        g = grads[name]
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        new_tensors[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return new_tensors, AdamState(m, v, step)
