"""Adam, Ornstein-Uhlenbeck exploration noise and soft target updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    size: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(params: np.ndarray, grads: np.ndarray, st: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``st`` and returns new params."""
    if params.shape != grads.shape or params.shape != st.m.shape:
        raise ValueError("parameter, gradient and moment lengths differ")
    st.step += 1
    st.m = st.beta1 * st.m + (1 - st.beta1) * grads
    st.v = st.beta2 * st.v + (1 - st.beta2) * grads * grads
    m_hat = st.m / (1 - st.beta1 ** st.step)
    v_hat = st.v / (1 - st.beta2 ** st.step)
    return params - st.lr * m_hat / (np.sqrt(v_hat) + st.eps)


class OUNoise:
    """Mean-reverting noise, x <- x - theta * x + sigma * N(0, 1) per step."""

    def __init__(self, size: int, theta: float = 0.1, sigma: float = 0.15, x0=None):
        self.size = size
        self.theta = theta
        self.sigma = sigma
        self.x0 = np.zeros(size) if x0 is None else np.array(x0, dtype=float)
        self.state = self.x0.copy()

    def reset(self):
        self.state = self.x0.copy()

    def step(self, rng: np.random.Generator) -> np.ndarray:
        self.state = (self.state - self.theta * self.state
                      + self.sigma * rng.standard_normal(self.size))
        return self.state.copy()


def ou_step(noise: OUNoise, rng: np.random.Generator) -> np.ndarray:
    return noise.step(rng)


def soft_update(online: np.ndarray, target: np.ndarray, eps: float) -> np.ndarray:
    if not 0 < eps <= 1:
        raise ValueError("soft update constant must lie in (0, 1]")
    if online.shape != target.shape:
        raise ValueError("online and target shapes differ")
    return eps * online + (1 - eps) * target
