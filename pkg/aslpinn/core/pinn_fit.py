"""
PINN Fitting Module
Composite loss L = L_ODE + gamma * L_data, collocation sampling and the
three-tier (forward, inverse, fine-tune) training loop shared by the baseline
PINN and the multi-branch SUPINN
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from aslpinn.config import TrainConfig
from aslpinn.core import autodiff as ad
from aslpinn.core.asl_model import recorded_smoothed_rhs
from aslpinn.core.autodiff import Node
from aslpinn.core.network import MlpPinn, TrainablePhysical, trainable_nodes
from aslpinn.core.optim import Adam
from aslpinn.exceptions import TrainingDivergedError, UsageError
from aslpinn.models.grid import PwiTimeSeries
from aslpinn.models.params import DEFAULT_TAU, AcquisitionSpec, SmoothingConfig
from aslpinn.models.results import FitResult

logger = logging.getLogger(__name__)

TIER_NAMES = ("forward", "inverse", "fine-tune")
CBF_FLOOR = 1e-9  # a.u./ms, scale used when a series has no positive sample


def collocation_times(spec: AcquisitionSpec, n_collocation: int) -> np.ndarray:
    """N_O uniformly spaced points over [0, last acquisition time], endpoints included"""
    return np.linspace(0.0, spec.t_max, n_collocation)


def ode_residual_loss(net: MlpPinn, physical: TrainablePhysical, collocation: np.ndarray,
                      smoothing: SmoothingConfig) -> Node:
    """Mean squared residual of the smoothed ODE at the collocation points, (a.u./ms)^2"""
    times = np.asarray(collocation, dtype=float).reshape(-1, 1)
    _, ds_dt = net.record_with_time_derivative(times)
    cbf, at, t1b = physical.nodes()
    rhs = recorded_smoothed_rhs(times, cbf, at, t1b, physical.tau, smoothing.sharpness_k)
    return ad.mean_square(ds_dt - rhs)


def data_loss(net: MlpPinn, series: PwiTimeSeries,
              weights: Optional[Sequence[float]] = None) -> Node:
    """
    (1/N_D) sum_i (w_i |S_hat(t_i) - S(t_i)|)^2 in squared signal units.
    The weight multiplies the residual inside the square.
    """
    values = series.values.reshape(-1, 1)
    if weights is None:
        w = np.ones_like(values)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1, 1)
        if w.shape != values.shape:
            raise UsageError(f"{w.size} weights for {values.size} samples")
        if np.any(w < 0) or np.any(w > 1):
            raise UsageError("Data weights must lie in [0, 1]")
    s_hat = net.record_signal(series.spec.times_array)
    return ad.mean_square((s_hat - values) * w)


@dataclass
class Branch:
    """One voxel's network, trainables and data inside a (multi-branch) fit"""

    net: MlpPinn
    physical: TrainablePhysical
    series: PwiTimeSeries
    weights: Optional[np.ndarray] = None

    def loss(self, collocation: np.ndarray, cfg: TrainConfig) -> Node:
        ode = ode_residual_loss(self.net, self.physical, collocation, cfg.smoothing)
        return ode + cfg.gamma * data_loss(self.net, self.series, self.weights)


def initial_cbf(series: PwiTimeSeries, t1b_init: float, tau: float = DEFAULT_TAU) -> float:
    """Peak-signal heuristic peak / (tau * exp(-t_peak / T1b))"""
    values = series.values
    i_peak = int(np.argmax(values))
    peak = float(values[i_peak])
    if peak <= 0:
        return CBF_FLOOR
    t_peak = float(series.spec.times[i_peak])
    return max(peak / (tau * np.exp(-t_peak / t1b_init)), CBF_FLOOR)


def make_branch(series: PwiTimeSeries, spec: AcquisitionSpec, cfg: TrainConfig,
                weights: Optional[np.ndarray] = None, shared_t1b=None,
                prefix: str = "") -> Branch:
    """Network and trainables initialized from the series and the config"""
    s_norm = series.peak if series.peak > 0 else 1.0
    net = MlpPinn(seed=cfg.seed, t_norm=spec.t_max, s_norm=s_norm, prefix=prefix)
    physical = TrainablePhysical(
        cbf_scale=initial_cbf(series, cfg.init_t1b),
        at_scale=cfg.init_at,
        t1b_scale=cfg.init_t1b,
        shared_t1b=shared_t1b,
        prefix=prefix,
    )
    return Branch(net=net, physical=physical, series=series, weights=weights)


def loss_scale(branches: Sequence[Branch], spec: AcquisitionSpec) -> float:
    """
    (T_norm / S_norm)^2 with a single S_norm for the whole fit, the largest
    branch peak. Multiplying the composite by it leaves optima and the
    ODE/data balance unchanged.
    """
    s_norm = max(branch.net.s_norm for branch in branches)
    return (spec.t_max / s_norm) ** 2


def train_branches(branches: List[Branch], spec: AcquisitionSpec, cfg: TrainConfig,
                   label: str = "pinn") -> np.ndarray:
    """
    Three-tier optimization of the summed branch losses.
    Tier 1 freezes the physical parameters and trains the networks only;
    tiers 2 and 3 train everything, tier 3 at the reduced rate.
    Returns the composite loss, sum over branches of L_ODE + gamma * L_data,
    recorded before every update; Adam descends it times loss_scale().
    """
    collocation = collocation_times(spec, cfg.n_collocation)
    scale = loss_scale(branches, spec)
    nets = [branch.net for branch in branches]
    physicals = [branch.physical for branch in branches]
    history = np.empty(cfg.horizon)
    iteration = 0

    for tier, (n_iter, lr) in enumerate(zip(cfg.tier_iterations, cfg.learning_rates)):
        for physical in physicals:
            physical.freeze(tier == 0)
        nodes = trainable_nodes(nets, physicals)
        optimizer = Adam(nodes, lr=lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                         eps=cfg.adam_eps)
        logger.debug(f"[{label}] tier {tier + 1} ({TIER_NAMES[tier]}): {n_iter} iterations, lr={lr}")

        for _ in range(n_iter):
            loss = branches[0].loss(collocation, cfg)
            for branch in branches[1:]:
                loss = loss + branch.loss(collocation, cfg)
            value = loss.item()
            if not np.isfinite(value):
                snapshot = {}
                for i, physical in enumerate(physicals):
                    snapshot.update({f"{k}[{i}]": v for k, v in physical.snapshot().items()})
                logger.error(f"[{label}] non-finite loss at iteration {iteration}: {snapshot}")
                raise TrainingDivergedError(iteration, snapshot)
            optimizer.step(ad.grad(loss * scale, nodes, allow_unused=True))
            history[iteration] = value
            iteration += 1
            if iteration % cfg.log_every == 0:
                logger.debug(f"[{label}] iteration {iteration}: loss={value:.6e}")

        estimates = ", ".join(
            f"cbf={p.cbf.value:.5g} at={p.at.value:.5g}" for p in physicals
        )
        logger.info(
            f"[{label}] tier {tier + 1} ({TIER_NAMES[tier]}) done at iteration {iteration}: "
            f"loss={history[iteration - 1]:.4e}, {estimates}, t1b={physicals[0].t1b.value:.5g}"
        )

    for physical in physicals:
        physical.freeze(False)
    return history


def branch_result(branch: Branch, spec: AcquisitionSpec, history: np.ndarray,
                  wall_time: float) -> FitResult:
    converged = bool(np.all(np.isfinite(history)) and history[-1] <= history[0])
    return FitResult(
        params=branch.physical.to_params(),
        loss_history=history,
        predicted_signal=branch.net.forward(spec.times_array),
        converged=converged,
        wall_time=wall_time,
    )


def fit_voxel_pinn(series: PwiTimeSeries, spec: AcquisitionSpec, cfg: TrainConfig = TrainConfig(),
                   weights: Optional[np.ndarray] = None) -> FitResult:
    """Baseline single-voxel PINN; deterministic for a fixed cfg.seed"""
    started = time.perf_counter()
    branch = make_branch(series, spec, cfg, weights=weights)
    history = train_branches([branch], spec, cfg, label="pinn")
    return branch_result(branch, spec, history, time.perf_counter() - started)
