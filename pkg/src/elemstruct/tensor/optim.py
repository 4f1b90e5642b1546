"""Adam with bias correction, plus the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .nn import Parameter


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a named parameter set.

    Gradients are read, never cleared; call ``zero_grad`` on the model
    between steps.
    """

    def __init__(
        self,
        params: Mapping[str, Parameter] | Iterable[tuple[str, Parameter]],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: dict[str, Parameter] = dict(params.items() if isinstance(params, Mapping) else params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)
        for name, p in self.params.items():
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
        st = self.state
        st.step_count += 1
        t = st.step_count
        b1, b2 = st.beta1, st.beta2
        corr1 = 1.0 - b1**t
        corr2 = 1.0 - b2**t
        for name, p in self.params.items():
            g = p.grad
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / corr1) / (np.sqrt(v / corr2) + st.epsilon)
            p.data -= (st.learning_rate * update).astype(p.data.dtype, copy=False)


def step_decay_lr(
    base_lr: float,
    epoch: int,
    total_epochs: int,
    milestones: Sequence[float] = (0.8, 0.9),
    factor: float = 0.1,
) -> float:
    """Learning rate for ``epoch`` (0-based).

    ``milestones`` are fractions of ``total_epochs``; the rate is multiplied by
    ``factor`` once for every milestone already reached.
    """
    lr = base_lr
    for frac in milestones:
        if epoch >= int(round(frac * total_epochs)):
            lr *= factor
    return lr
