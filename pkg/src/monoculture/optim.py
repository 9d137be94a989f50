from __future__ import annotations

import numpy as np


class Adam:
    """Adaptive-moment steps over a dict of arrays.

    ``step`` moves *along* the supplied direction when ``ascent`` is true
    (gradient ascent) and against it otherwise.
    """

    def __init__(self, lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8, ascent=False):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.sign = 1.0 if ascent else -1.0
        self.reset()

    def reset(self):
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] = params[k] + self.sign * self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
