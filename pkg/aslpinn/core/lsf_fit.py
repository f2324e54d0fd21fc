"""
Robust Least-Squares Module
Huber-weighted Levenberg-Marquardt fits of the closed-form signal with a
multistart over arrival times, the three-voxel averaging variant (LSF-multi)
and fixed-t1b ground-truth maps
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from aslpinn.config import LsfConfig
from aslpinn.core.asl_model import signal_curve
from aslpinn.exceptions import AslPinnError, ConfigurationError
from aslpinn.models.grid import PwiTimeSeries, VoxelGrid
from aslpinn.models.params import DEFAULT_TAU, AcquisitionSpec, HaemodynamicParams
from aslpinn.models.results import BranchSelection, FitResult

logger = logging.getLogger(__name__)

MAD_TO_SIGMA = 1.4826
LM_TAU = 1e-3  # initial damping relative to the largest curvature


@dataclass
class StartOutcome:
    """Result of one LM run from one starting point"""

    x: np.ndarray  # cbf, at, t1b
    cost: float
    history: List[float] = field(default_factory=list)
    decreased: bool = False


def jacobian(t: np.ndarray, cbf: float, at: float, t1b: float, tau: float) -> np.ndarray:
    """
    d signal / d (cbf, at, t1b), branch-wise from the closed form; at a branch
    boundary the derivative of the active (later) branch is used.
    """
    decay = np.exp(-t / t1b)
    rising = (t >= at) & (t < at + tau)
    plateau = t >= at + tau
    d_cbf = np.where(rising, (t - at) * decay, np.where(plateau, tau * decay, 0.0))
    d_at = np.where(rising, -cbf * decay, 0.0)
    d_t1b = cbf * d_cbf * t / (t1b * t1b)
    return np.column_stack([d_cbf, d_at, d_t1b])


def huber_weights(residuals: np.ndarray, delta: Optional[float]) -> np.ndarray:
    if delta is None:
        return np.ones_like(residuals)
    magnitude = np.abs(residuals)
    return np.where(magnitude <= delta, 1.0, delta / np.maximum(magnitude, 1e-300))


def huber_cost(residuals: np.ndarray, delta: Optional[float]) -> float:
    """sum rho(r): r^2/2 inside delta, delta |r| - delta^2/2 outside"""
    if delta is None:
        return float(0.5 * np.sum(residuals ** 2))
    magnitude = np.abs(residuals)
    inside = magnitude <= delta
    return float(np.sum(np.where(inside, 0.5 * residuals ** 2, delta * magnitude - 0.5 * delta ** 2)))


def robust_scale(residuals: np.ndarray) -> float:
    """Gaussian-consistent scale from the median absolute deviation"""
    median = np.median(residuals)
    return float(MAD_TO_SIGMA * np.median(np.abs(residuals - median)))


class _Problem:
    """Data and constraints shared by every start of one voxel fit"""

    def __init__(self, t: np.ndarray, y: np.ndarray, free: np.ndarray, cfg: LsfConfig,
                 tau: float):
        self.t = t
        self.y = y
        self.free = free
        self.cfg = cfg
        self.tau = tau
        self.lower = np.array([0.0, 1e-6, cfg.t1b_bounds[0]])
        self.upper = np.array([np.inf, float(t[-1]), cfg.t1b_bounds[1]])

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return signal_curve(self.t, x[0], x[1], x[2], self.tau) - self.y

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def levenberg_marquardt(self, x0: np.ndarray, delta: Optional[float]) -> StartOutcome:
        """
        LM with Nielsen damping updates on the iteratively reweighted
        (Huber) residuals; delta=None gives plain least squares.
        """
        x = self.project(np.array(x0, dtype=float))
        r = self.residuals(x)
        cost = huber_cost(r, delta)
        history = [cost]
        start_cost = cost
        mu: Optional[float] = None
        nu = 2.0
        tol = self.cfg.tolerance

        for _ in range(self.cfg.max_iterations):
            if cost == 0.0:
                break
            w = huber_weights(r, delta)
            jac = jacobian(self.t, x[0], x[1], x[2], self.tau)[:, self.free]
            hess = jac.T @ (w[:, None] * jac)
            grad = jac.T @ (w * r)
            if np.max(np.abs(grad)) <= 1e-15 * max(1.0, cost):
                break
            diag = np.diag(hess).copy()
            diag = np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300))
            if mu is None:
                mu = LM_TAU
            try:
                step = np.linalg.solve(hess + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2.0
                continue

            candidate = x.copy()
            candidate[self.free] += step
            candidate = self.project(candidate)
            actual_step = (candidate - x)[self.free]
            r_new = self.residuals(candidate)
            cost_new = huber_cost(r_new, delta)
            predicted = -(actual_step @ grad) - 0.5 * actual_step @ hess @ actual_step
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0

            if rho > 0:
                x, r, cost = candidate, r_new, cost_new
                history.append(cost)
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                if np.all(np.abs(actual_step) <= tol * (np.abs(x[self.free]) + tol)):
                    break
            else:
                mu *= nu
                nu *= 2.0
                if mu > 1e16:
                    break

        return StartOutcome(x=x, cost=cost, history=history,
                            decreased=cost < start_cost or start_cost == 0.0)


def _initial_cbf(t: np.ndarray, y: np.ndarray, at: float, t1b: float, tau: float) -> float:
    """Linear least-squares amplitude for fixed at and t1b, clipped at zero"""
    basis = signal_curve(t, 1.0, at, t1b, tau)
    norm = float(basis @ basis)
    return max(float(basis @ y) / norm, 0.0) if norm > 0 else 0.0


def multistart(series: PwiTimeSeries, cfg: LsfConfig, t1b_fixed: Optional[float] = None,
               tau: float = DEFAULT_TAU) -> Tuple[StartOutcome, List[StartOutcome]]:
    """
    Plain LM from every start fixes the Huber scale from the best residuals;
    robust LM from every plain solution then picks the lowest Huber cost.
    Returns the winner and all robust outcomes.
    """
    t = series.spec.times_array
    y = series.values
    t1b0 = t1b_fixed if t1b_fixed is not None else cfg.t1b_init
    free = np.array([0, 1]) if t1b_fixed is not None else np.array([0, 1, 2])
    problem = _Problem(t, y, free, cfg, tau)

    starts = [np.array([_initial_cbf(t, y, at, t1b0, tau), at, t1b0]) for at in cfg.at_grid]
    plain = [problem.levenberg_marquardt(x0, delta=None) for x0 in starts]
    best_plain = min(plain, key=lambda outcome: outcome.cost)
    scale = robust_scale(problem.residuals(best_plain.x))
    if best_plain.cost == 0.0 or scale == 0.0:
        return best_plain, plain

    delta = cfg.huber_k * scale
    robust = []
    for first in plain:
        outcome = problem.levenberg_marquardt(first.x, delta=delta)
        outcome.history = first.history + outcome.history
        outcome.decreased = outcome.decreased or first.decreased
        robust.append(outcome)
    return min(robust, key=lambda outcome: outcome.cost), robust


def fit_voxel_lsf(series: PwiTimeSeries, spec: Optional[AcquisitionSpec] = None,
                  cfg: LsfConfig = LsfConfig(), t1b_fixed: Optional[float] = None) -> FitResult:
    """
    Robust multistart LSF of one voxel. In fixed-t1b mode t1b_fixed is
    required and only cbf, at are estimated.
    """
    if cfg.mode == "fixed-t1b" and t1b_fixed is None:
        raise ConfigurationError("fixed-t1b mode needs t1b_fixed")
    if cfg.mode == "free-t1b" and t1b_fixed is not None:
        raise ConfigurationError("t1b_fixed is only valid in fixed-t1b mode")
    if t1b_fixed is not None and not t1b_fixed > 0:
        raise ConfigurationError(f"t1b_fixed must be positive, got {t1b_fixed}")
    spec = spec or series.spec
    started = time.perf_counter()
    best, _ = multistart(series, cfg, t1b_fixed=t1b_fixed)
    params = HaemodynamicParams(cbf=float(best.x[0]), at=float(best.x[1]), t1b=float(best.x[2]))
    if not best.decreased:
        logger.warning(f"LSF did not decrease the cost from any start (cost={best.cost:.4g})")
    return FitResult(
        params=params,
        loss_history=np.asarray(best.history),
        predicted_signal=signal_curve(spec.times_array, params.cbf, params.at, params.t1b,
                                      params.tau),
        converged=best.decreased,
        wall_time=time.perf_counter() - started,
    )


def fit_lsf_multi(grid: VoxelGrid, selection: BranchSelection,
                  cfg: LsfConfig = LsfConfig()) -> FitResult:
    """
    Free-t1b LSF of every selected voxel, then the arithmetic mean of each
    parameter, attributed to the target voxel
    """
    free_cfg = cfg.model_copy(update={"mode": "free-t1b"})
    started = time.perf_counter()
    fits: List[FitResult] = []
    for voxel in selection.voxels:
        try:
            fits.append(fit_voxel_lsf(grid.series(voxel), grid.spec, free_cfg))
        except AslPinnError as e:
            logger.warning(f"LSF-multi: voxel {voxel} failed: {e}")
    if not fits:
        logger.warning(f"LSF-multi: every voxel of {selection.voxels} failed")
        return FitResult(
            params=HaemodynamicParams(cbf=np.nan, at=np.nan, t1b=np.nan),
            loss_history=np.zeros(0),
            predicted_signal=np.full(grid.spec.n_points, np.nan),
            converged=False,
            wall_time=time.perf_counter() - started,
        )

    usable = [fit for fit in fits if fit.converged]
    converged = bool(usable)
    pool = usable or fits
    params = HaemodynamicParams(
        cbf=float(np.mean([fit.params.cbf for fit in pool])),
        at=float(np.mean([fit.params.at for fit in pool])),
        t1b=float(np.mean([fit.params.t1b for fit in pool])),
    )
    return FitResult(
        params=params,
        loss_history=fits[0].loss_history,
        predicted_signal=signal_curve(grid.spec.times_array, params.cbf, params.at, params.t1b,
                                      params.tau),
        converged=converged,
        wall_time=time.perf_counter() - started,
    )


def ground_truth_from_lsf(grid: VoxelGrid, t1b: float,
                          cfg: LsfConfig = LsfConfig()) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed-t1b LSF over the mask: cbf map, at map and per-voxel convergence flags"""
    if not t1b > 0:
        raise ConfigurationError(f"t1b must be positive, got {t1b}")
    fixed_cfg = cfg.model_copy(update={"mode": "fixed-t1b"})
    cbf_map = np.full(grid.mask.shape, np.nan)
    at_map = np.full(grid.mask.shape, np.nan)
    converged = np.zeros(grid.mask.shape, dtype=bool)
    for row, col in grid.masked_indices():
        result = fit_voxel_lsf(grid.series((row, col)), grid.spec, fixed_cfg, t1b_fixed=t1b)
        cbf_map[row, col] = result.params.cbf
        at_map[row, col] = result.params.at
        converged[row, col] = result.converged
    logger.info(f"LSF ground truth: {int(converged.sum())}/{grid.n_masked} voxels converged")
    return cbf_map, at_map, converged
