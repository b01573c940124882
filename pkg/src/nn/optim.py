import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DivergenceError
from .tensor import Parameter

logger = logging.getLogger(__name__)


class Adam:
    """
    Adam with bias correction over a fixed, named parameter list.
    Parameters whose .grad is None are left untouched.
    """

    def __init__(self, named_params: Sequence[Tuple[str, Parameter]], lr: float,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params: List[Tuple[str, Parameter]] = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self, step_id: Optional[int] = None):
        # Check every gradient before touching any parameter
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise DivergenceError(f"Non-finite gradient for '{name}' at step {step_id}",
                                      step=step_id, parameter=name)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
