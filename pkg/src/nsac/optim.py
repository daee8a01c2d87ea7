"""AdamW with decoupled weight decay, operating in place on Tensor leaves."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class AdamW:
    """Standard Adam moments plus decoupled decay:

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """

    def __init__(
        self,
        params,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params: list[Tensor] = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for checkpointing."""
        out = {"adamw_step": np.array([self.step_count], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self._m, self._v)):
            out[f"adamw_m_{i}"] = m
            out[f"adamw_v_{i}"] = v
        return out

    def load_state_arrays(self, arrays) -> None:
        self.step_count = int(arrays["adamw_step"][0])
        for i in range(len(self.params)):
            self._m[i] = np.array(arrays[f"adamw_m_{i}"])
            self._v[i] = np.array(arrays[f"adamw_v_{i}"])
