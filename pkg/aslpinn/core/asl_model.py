"""
ASL Signal Model Module
Closed-form single-compartment signal, its three-branch ODE, the tanh-smoothed
ODE used as the PINN residual, and an RK4 integration oracle
"""
import logging
from typing import Any, Callable, Union

import numpy as np

from aslpinn.core import autodiff as ad
from aslpinn.core.autodiff import Node
from aslpinn.exceptions import ConfigurationError, ParameterDomainError
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams, SmoothingConfig

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def check_params(params: HaemodynamicParams):
    """Raise ParameterDomainError unless the parameters are physical"""
    values = {"cbf": params.cbf, "at": params.at, "t1b": params.t1b, "tau": params.tau}
    if not all(np.isfinite(v) for v in values.values()):
        raise ParameterDomainError(f"Parameters must be finite: {values}")
    if params.cbf < 0:
        raise ParameterDomainError(f"cbf must be non-negative, got {params.cbf}")
    for name in ("at", "t1b", "tau"):
        if values[name] <= 0:
            raise ParameterDomainError(f"{name} must be positive, got {values[name]}")


def _check_times(t: ArrayLike) -> np.ndarray:
    times = np.asarray(t, dtype=float)
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ParameterDomainError("Sample times must be finite and non-negative")
    return times


def _unwrap(values: np.ndarray, t: ArrayLike) -> ArrayLike:
    return float(values) if np.ndim(t) == 0 else values


def signal_curve(t: np.ndarray, cbf: float, at: float, t1b: float, tau: float) -> np.ndarray:
    """Vectorized closed form without domain checks (fitter inner loops)"""
    decay = np.exp(-t / t1b)
    rising = cbf * (t - at) * decay
    plateau = cbf * tau * decay
    return np.where(t < at, 0.0, np.where(t < at + tau, rising, plateau))


def evaluate_signal(params: HaemodynamicParams, t: ArrayLike) -> ArrayLike:
    """
    PWI signal at time(s) t:
      0                              t < AT
      CBF (t - AT) exp(-t/T1b)       AT <= t < AT + tau
      CBF tau exp(-t/T1b)            AT + tau <= t
    """
    check_params(params)
    times = _check_times(t)
    return _unwrap(signal_curve(times, params.cbf, params.at, params.t1b, params.tau), t)


def evaluate_ode_rhs_exact(params: HaemodynamicParams, t: ArrayLike) -> ArrayLike:
    """
    Branch-wise dS/dt. Discontinuous at AT and AT + tau; at a boundary the
    later branch applies.
    """
    check_params(params)
    times = _check_times(t)
    cbf, at, t1b, tau = params.cbf, params.at, params.t1b, params.tau
    decay = np.exp(-times / t1b)
    rising = cbf * decay * (1.0 - (times - at) / t1b)
    falling = -cbf * decay * tau / t1b
    values = np.where(times < at, 0.0, np.where(times < at + tau, rising, falling))
    return _unwrap(values, t)


def smoothed_rhs(t: Any, cbf: Any, at: Any, t1b: Any, tau: float, k: float, xp: Any = np) -> Any:
    """
    g1(t) B2(t) + g2(t) B3(t) with sigma(x) = (1 + tanh(k x)) / 2,
    g1 = sigma(t - AT) sigma(AT + tau - t), g2 = sigma(t - AT - tau).

    xp supplies tanh and exp, so the same expression runs on numpy arrays and
    on recorded autodiff nodes.
    """
    def sigma(x):
        return 0.5 * (1.0 + xp.tanh(k * x))

    decay = xp.exp(-t / t1b) * cbf
    rising = decay * (1.0 - (t - at) / t1b)
    falling = -decay * (tau / t1b)
    gate_rising = sigma(t - at) * sigma(at + tau - t)
    gate_falling = sigma(t - at - tau)
    return gate_rising * rising + gate_falling * falling


def recorded_smoothed_rhs(t: np.ndarray, cbf: Any, at: Any, t1b: Any, tau: float, k: float) -> Node:
    """
    smoothed_rhs as a single recorded node. The partials in cbf, at and t1b
    are closed form, so the record holds one node instead of one per
    arithmetic step.
    """
    cbf, at, t1b = ad.as_node(cbf), ad.as_node(at), ad.as_node(t1b)
    c, a, t1 = cbf.data, at.data, t1b.data

    def sigma_and_slope(x):
        th = np.tanh(k * x)
        return 0.5 * (1.0 + th), 0.5 * k * (1.0 - th * th)

    s_on, ds_on = sigma_and_slope(t - a)
    s_off, ds_off = sigma_and_slope(a + tau - t)
    s_after, ds_after = sigma_and_slope(t - a - tau)
    gate = s_on * s_off
    decay = np.exp(-t / t1)
    rising = decay * (1.0 - (t - a) / t1)  # per unit cbf
    falling = -decay * (tau / t1)
    per_cbf = gate * rising + s_after * falling

    d_at = c * ((s_on * ds_off - ds_on * s_off) * rising + gate * decay / t1 - ds_after * falling)
    d_rising = decay * (t / t1 ** 2) * (1.0 - (t - a) / t1) + decay * (t - a) / t1 ** 2
    d_falling = -tau * decay * (t - t1) / t1 ** 3
    d_t1b = c * (gate * d_rising + s_after * d_falling)

    def backward(g):
        cbf._accumulate(g * per_cbf)
        at._accumulate(g * d_at)
        t1b._accumulate(g * d_t1b)

    return Node(c * per_cbf, (cbf, at, t1b), backward)


def evaluate_ode_rhs_smoothed(params: HaemodynamicParams, t: ArrayLike,
                              cfg: SmoothingConfig = SmoothingConfig()) -> ArrayLike:
    """Smooth blend of the ODE branches; tends to the exact form as k grows"""
    check_params(params)
    times = _check_times(t)
    values = smoothed_rhs(times, params.cbf, params.at, params.t1b, params.tau, cfg.sharpness_k)
    return _unwrap(np.asarray(values, dtype=float), t)


def rk4_integrate(f: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray,
                  sample_times: np.ndarray, step: float) -> np.ndarray:
    """
    Classical 4th-order Runge-Kutta from t=0, reporting y at each sample time.
    Steps are shortened where needed so every sample time is hit exactly.
    """
    y = np.array(y0, dtype=float)
    t = 0.0
    out = []
    for target in sample_times:
        while t < target:
            h = min(step, target - t)
            k1 = f(t, y)
            k2 = f(t + h / 2.0, y + h * k1 / 2.0)
            k3 = f(t + h / 2.0, y + h * k2 / 2.0)
            k4 = f(t + h, y + h * k3)
            y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            t = target if target - t <= step else t + h
        out.append(y.copy())
    return np.asarray(out)


def integrate_smoothed_ode(params: HaemodynamicParams, cfg: SmoothingConfig,
                           spec: AcquisitionSpec, step: float = 1.0) -> np.ndarray:
    """RK4 solution of the smoothed ODE from S(0) = 0 at the acquisition times"""
    if not step > 0:
        raise ConfigurationError(f"Integration step must be positive, got {step}")
    if step > spec.spacing:
        raise ConfigurationError(f"Integration step {step} exceeds sample spacing {spec.spacing}")
    check_params(params)

    def rhs(t: float, _y: np.ndarray) -> np.ndarray:
        return np.atleast_1d(
            smoothed_rhs(t, params.cbf, params.at, params.t1b, params.tau, cfg.sharpness_k)
        )

    series = rk4_integrate(rhs, np.zeros(1), spec.times_array, step)[:, 0]
    logger.debug(f"Integrated smoothed ODE with step {step} ms, peak {series.max():.4g}")
    return series
