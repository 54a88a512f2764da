from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class DescentResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    # objective after every accepted step, starting with the initial point
    trace: list[float] = field(default_factory=list)


def descend(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    max_iters: int = 500,
    tol: float = 1e-8,
    step0: float = 1.0,
    max_backtracks: int = 60,
) -> DescentResult:
    """Monotone gradient descent with Barzilai-Borwein trial steps.

    Every accepted step satisfies the Armijo condition, so the objective
    never increases. Raises FloatingPointError if the objective at the
    starting point is not finite.
    """
    x = np.array(x0, dtype=float)
    f, grad = fun_grad(x)
    if not np.isfinite(f):
        raise FloatingPointError(f"objective is {f} at the starting point (step size {step0})")
    trace = [float(f)]
    step = step0
    prev_x = prev_g = None
    for it in range(max_iters):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) <= tol:
            return DescentResult(x, float(f), it, True, trace)
        if prev_x is not None:
            s = x - prev_x
            yv = grad - prev_g
            sy = float(s @ yv)
            if sy > 0:
                step = float(s @ s) / sy
        accepted = False
        for _ in range(max_backtracks):
            x_new = x - step * grad
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no decrease available at machine precision
            return DescentResult(x, float(f), it, bool(np.sqrt(gnorm2) <= 1e3 * tol), trace)
        prev_x, prev_g = x, grad
        x, f, grad = x_new, f_new, g_new
        trace.append(float(f))
    return DescentResult(x, float(f), max_iters, bool(np.sqrt(grad @ grad) <= tol), trace)
