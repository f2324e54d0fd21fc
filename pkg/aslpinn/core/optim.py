"""
Adam optimizer over recorded leaves
"""
from typing import List, Sequence

import numpy as np

from aslpinn.core.autodiff import Node
from aslpinn.exceptions import UsageError


class Adam:
    """Adaptive-moment updates, one moment pair per leaf"""

    def __init__(self, nodes: Sequence[Node], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.nodes: List[Node] = list(nodes)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(node.data) for node in self.nodes]
        self.v = [np.zeros_like(node.data) for node in self.nodes]

    def step(self, grads: Sequence[np.ndarray]):
        if len(grads) != len(self.nodes):
            raise UsageError(f"Expected {len(self.nodes)} gradients, got {len(grads)}")
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for i, (node, g) in enumerate(zip(self.nodes, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            node.data = node.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
