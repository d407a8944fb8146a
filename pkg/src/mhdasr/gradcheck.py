"""Finite-difference gradient verification.

Compares tape gradients against central differences computed from loss
re-evaluations, the standard independent oracle for reverse-mode
differentiation. Checks are meaningful at 64-bit precision only.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import ComputationTape, Tensor, backward

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


def finite_difference(loss_fn: Callable[[], Tensor], param: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar loss w.r.t. one tensor.

    Perturbs each element in place by +-step and re-evaluates the loss with
    no tape active, so only forward values are computed.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = loss_fn().item()
        flat[i] = orig - step
        f_minus = loss_fn().item()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(param.data.shape)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, 1).

    The unit floor makes small-magnitude entries compare absolutely and gives
    exactly zero when both gradients are exactly zero.
    """
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    named_params: Sequence[tuple[str, Tensor]],
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
) -> dict[str, float]:
    """Tape gradients vs. central differences for every named parameter.

    ``loss_fn`` must rebuild the loss from current parameter values on each
    call. Returns {name: max relative error}; raises nothing, callers decide
    pass/fail against ``tol`` (returned for convenience via .items()).
    """
    params = [p for _, p in named_params]
    for p in params:
        p.zero_grad()
    with ComputationTape() as tape:
        loss = loss_fn()
    backward(loss, tape, params=params)
    analytic = {name: np.array(p.grad, copy=True) for name, p in named_params}
    errors = {}
    for name, p in named_params:
        fd = finite_difference(loss_fn, p, step=step)
        errors[name] = relative_error(analytic[name], fd)
    return errors
