"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: tuple[int, tuple] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries meaningful."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries_per_input: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``fn``'s reverse-mode gradient with central differences.

    ``fn`` takes no arguments and recomputes a scalar from the current
    contents of ``inputs`` (which are perturbed in place). All inputs must be
    float64. With ``max_entries_per_input`` a random subset of coordinates of
    each input is probed, which keeps large parameter tensors affordable.
    ``floor`` bounds the denominator of the relative error; deep composite
    losses carry more roundoff and need a larger one for zero-gradient entries.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 inputs, got {t.dtype}")
    for t in inputs:
        t.grad = None
    out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("function value is not finite at the check point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst_err, worst_at, n_checked = 0.0, None, 0
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries_per_input is not None and flat.size > max_entries_per_input:
            positions = rng.choice(flat.size, size=max_entries_per_input, replace=False)
        for pos in positions:
            original = flat[pos]
            with no_grad():
                flat[pos] = original + h
                plus = float(fn().data)
                flat[pos] = original - h
                minus = float(fn().data)
            flat[pos] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError("non-finite value during finite differencing")
            numeric = (plus - minus) / (2.0 * h)
            err = relative_error(float(analytic[k].reshape(-1)[pos]), numeric, floor)
            n_checked += 1
            if err > worst_err:
                worst_err = err
                worst_at = (k, np.unravel_index(pos, t.shape))
    return GradCheckReport(worst_err, n_checked, tolerance, worst_at)
