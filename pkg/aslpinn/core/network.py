"""
PINN Network Module
1 -> 32 -> 32 -> 1 tanh MLP with the hard S(0) = 0 output transform, plus the
positive trainable physical parameters attached to it
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from aslpinn.core import autodiff as ad
from aslpinn.core.autodiff import Node
from aslpinn.exceptions import UsageError
from aslpinn.models.params import DEFAULT_TAU, HaemodynamicParams

logger = logging.getLogger(__name__)

LAYER_WIDTHS = (1, 32, 32, 1)
DEFAULT_T_NORM = 3600.0  # ms, last acquisition time


class Parameter:
    """
    Unconstrained trainable mapped to a positive physical value:
    physical = scale * exp(raw).
    """

    def __init__(self, name: str, scale: float, raw: float = 0.0, frozen: bool = False):
        if not scale > 0:
            raise UsageError(f"Parameter {name} needs a positive scale, got {scale}")
        self.name = name
        self.scale = float(scale)
        self.raw = ad.variable(np.asarray(raw, dtype=float), name=name)
        self.frozen = frozen

    @property
    def value(self) -> float:
        return float(self.scale * np.exp(self.raw.data))

    def node(self) -> Node:
        """Physical value on the record; a constant while frozen"""
        if self.frozen:
            return Node(self.value)
        return ad.scaled_exp(self.raw, self.scale)

    def __repr__(self):
        state = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name}={self.value:.6g}, {state})"


class TrainablePhysical:
    """cbf, at and t1b trainables; t1b may be shared with other instances"""

    def __init__(self, cbf_scale: float, at_scale: float = 900.0, t1b_scale: float = 1800.0,
                 shared_t1b: Optional[Parameter] = None, prefix: str = "",
                 tau: float = DEFAULT_TAU):
        self.cbf = Parameter(f"{prefix}cbf", cbf_scale)
        self.at = Parameter(f"{prefix}at", at_scale)
        self.t1b = shared_t1b if shared_t1b is not None else Parameter(f"{prefix}t1b", t1b_scale)
        self.tau = tau

    def parameters(self) -> List[Parameter]:
        return [self.cbf, self.at, self.t1b]

    def freeze(self, frozen: bool = True):
        for param in self.parameters():
            param.frozen = frozen

    def nodes(self) -> Tuple[Node, Node, Node]:
        return self.cbf.node(), self.at.node(), self.t1b.node()

    def snapshot(self) -> Dict[str, float]:
        return {"cbf": self.cbf.value, "at": self.at.value, "t1b": self.t1b.value}

    def to_params(self) -> HaemodynamicParams:
        return HaemodynamicParams(tau=self.tau, **self.snapshot())


class MlpPinn:
    """
    Fully connected tanh network N with the output transform
        s_hat(t) = S_norm * tanh(t / T_norm) * N(t / T_norm),
    which is exactly zero at t = 0.
    """

    def __init__(self, seed: Union[int, np.random.SeedSequence, None] = 0,
                 t_norm: float = DEFAULT_T_NORM, s_norm: float = 1.0, prefix: str = ""):
        if not t_norm > 0 or not s_norm > 0:
            raise UsageError("Normalization constants must be positive")
        self.t_norm = float(t_norm)
        self.s_norm = float(s_norm)
        rng = np.random.default_rng(seed)
        self.layers: List[Tuple[Node, Node]] = []
        for i, (fan_in, fan_out) in enumerate(zip(LAYER_WIDTHS[:-1], LAYER_WIDTHS[1:]), start=1):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.layers.append((
                ad.variable(weight, name=f"{prefix}W{i}"),
                ad.variable(np.zeros((1, fan_out)), name=f"{prefix}b{i}"),
            ))

    def parameters(self) -> List[Node]:
        return [node for layer in self.layers for node in layer]

    def set_weights(self, arrays: Sequence[np.ndarray]):
        """Overwrite weights and biases in parameters() order"""
        nodes = self.parameters()
        if len(arrays) != len(nodes):
            raise UsageError(f"Expected {len(nodes)} arrays, got {len(arrays)}")
        for node, array in zip(nodes, arrays):
            array = np.asarray(array, dtype=float)
            if array.shape != node.data.shape:
                raise UsageError(f"{node.name}: shape {array.shape} != {node.data.shape}")
            node.data = array.copy()

    # -- numpy fast path ------------------------------------------------
    def raw_output(self, t: Union[float, np.ndarray]) -> np.ndarray:
        """N(t / T_norm) as an (n, 1) array"""
        h = np.asarray(t, dtype=float).reshape(-1, 1) / self.t_norm
        for i, (weight, bias) in enumerate(self.layers):
            h = h @ weight.data + bias.data
            if i < len(self.layers) - 1:
                h = np.tanh(h)
        return h

    def forward(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """s_hat at time(s) t, ms"""
        times = np.asarray(t, dtype=float).reshape(-1, 1)
        values = (self.s_norm * np.tanh(times / self.t_norm) * self.raw_output(times)).reshape(-1)
        return float(values[0]) if np.ndim(t) == 0 else values

    # -- recorded path --------------------------------------------------
    def record_signal(self, times: np.ndarray) -> Node:
        """s_hat on the record, shape (n, 1)"""
        x = np.asarray(times, dtype=float).reshape(-1, 1) / self.t_norm
        h: Node = ad.as_node(x)
        for i, (weight, bias) in enumerate(self.layers):
            h = ad.affine(h, weight, bias)
            if i < len(self.layers) - 1:
                h = ad.tanh(h)
        return (self.s_norm * np.tanh(x)) * h

    def record_with_time_derivative(self, times: np.ndarray) -> Tuple[Node, Node]:
        """
        s_hat and d s_hat / dt on the record, both shape (n, 1).
        The tangent is carried forward layer by layer with recorded
        operations, so reverse mode differentiates through it.
        """
        x = np.asarray(times, dtype=float).reshape(-1, 1) / self.t_norm
        dx = np.full_like(x, 1.0 / self.t_norm)
        h: Node = ad.as_node(x)
        dh: Node = ad.as_node(dx)
        for i, (weight, bias) in enumerate(self.layers):
            h = ad.affine(h, weight, bias)
            dh = dh @ weight
            if i < len(self.layers) - 1:
                h = ad.tanh(h)
                dh = ad.tanh_tangent(h, dh)
        gate = np.tanh(x)
        dgate = (1.0 - gate * gate) / self.t_norm
        s_hat = (self.s_norm * gate) * h
        ds_dt = self.s_norm * ((dgate * h) + (gate * dh))
        return s_hat, ds_dt

    def grad_wrt_time(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """d s_hat / dt at time(s) t via the recorded tangent"""
        _, ds_dt = self.record_with_time_derivative(np.asarray(t, dtype=float))
        values = ds_dt.data.reshape(-1)
        return float(values[0]) if np.ndim(t) == 0 else values


def trainable_nodes(nets: Iterable[MlpPinn],
                    physicals: Iterable[TrainablePhysical],
                    include_frozen: bool = False) -> List[Node]:
    """Distinct trainable leaves of the given networks and physical parameters"""
    nodes: List[Node] = []
    seen = set()
    for net in nets:
        for node in net.parameters():
            if id(node) not in seen:
                seen.add(id(node))
                nodes.append(node)
    for physical in physicals:
        for param in physical.parameters():
            if (include_frozen or not param.frozen) and id(param.raw) not in seen:
                seen.add(id(param.raw))
                nodes.append(param.raw)
    return nodes


def grads_wrt_trainables(loss: Node, nets: Iterable[MlpPinn],
                         physicals: Iterable[TrainablePhysical]) -> Dict[str, np.ndarray]:
    """
    d loss / d theta for every unfrozen trainable, keyed by name.
    Frozen physical parameters are absent from the result.
    """
    nodes = trainable_nodes(nets, physicals)
    grads = ad.grad(loss, nodes, allow_unused=True)
    return {node.name: g for node, g in zip(nodes, grads)}
