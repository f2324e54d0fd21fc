"""
Unit tests for the robust multistart least-squares fitter
"""
import numpy as np
import pytest

from aslpinn.config import LsfConfig, PhantomConfig
from aslpinn.core import lsf_fit
from aslpinn.core.asl_model import evaluate_signal, signal_curve
from aslpinn.core.lsf_fit import (
    MAD_TO_SIGMA,
    fit_lsf_multi,
    fit_voxel_lsf,
    ground_truth_from_lsf,
    huber_cost,
    huber_weights,
    jacobian,
    multistart,
    robust_scale,
)
from aslpinn.core.phantom import generate_phantom
from aslpinn.exceptions import ConfigurationError, DatasetError
from aslpinn.models.grid import PwiTimeSeries, VoxelGrid
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams
from aslpinn.models.results import BranchSelection, FitResult

TRUTH = HaemodynamicParams(cbf=0.01, at=650.0, t1b=1800.0)


def _series(params=TRUTH, spec=None):
    spec = spec or AcquisitionSpec()
    return PwiTimeSeries(evaluate_signal(params, spec.times_array), spec)


def test_noiseless_free_t1b_recovery():
    """All three parameters are recovered from a clean series"""
    result = fit_voxel_lsf(_series())
    assert result.converged
    assert result.params.cbf == pytest.approx(TRUTH.cbf, rel=1e-3)
    assert result.params.at == pytest.approx(TRUTH.at, rel=1e-3)
    assert result.params.t1b == pytest.approx(TRUTH.t1b, rel=1e-2)
    np.testing.assert_allclose(result.predicted_signal, _series().values, rtol=1e-2, atol=1e-6)


def test_noiseless_fixed_t1b_recovery():
    """With t1b given only cbf and at are estimated"""
    cfg = LsfConfig(mode="fixed-t1b")
    result = fit_voxel_lsf(_series(), cfg=cfg, t1b_fixed=1800.0)
    assert result.params.t1b == 1800.0
    assert result.params.cbf == pytest.approx(TRUTH.cbf, rel=1e-3)
    assert result.params.at == pytest.approx(TRUTH.at, rel=1e-3)


def test_zero_series():
    """An all-zero series fits cbf = 0 and counts as converged"""
    spec = AcquisitionSpec()
    result = fit_voxel_lsf(PwiTimeSeries(np.zeros(spec.n_points), spec))
    assert result.params.cbf == 0.0
    assert result.converged
    assert np.all(result.predicted_signal == 0.0)


def test_mode_and_t1b_mismatch():
    """Fixed mode needs a positive t1b; free mode refuses one"""
    series = _series()
    with pytest.raises(ConfigurationError):
        fit_voxel_lsf(series, cfg=LsfConfig(mode="fixed-t1b"))
    with pytest.raises(ConfigurationError):
        fit_voxel_lsf(series, cfg=LsfConfig(mode="free-t1b"), t1b_fixed=1800.0)
    with pytest.raises(ConfigurationError):
        fit_voxel_lsf(series, cfg=LsfConfig(mode="fixed-t1b"), t1b_fixed=0.0)


def test_huber_weights_and_cost():
    """Unit weight inside delta, delta/|r| outside; cost is quadratic then linear"""
    r = np.array([-0.5, 0.0, 1.0, 4.0])
    np.testing.assert_allclose(huber_weights(r, 1.0), [1.0, 1.0, 1.0, 0.25])
    np.testing.assert_array_equal(huber_weights(r, None), np.ones(4))
    assert huber_cost(r, 1.0) == pytest.approx(0.125 + 0.0 + 0.5 + 3.5)
    assert huber_cost(r, None) == pytest.approx(0.5 * (0.25 + 1.0 + 16.0))


def test_robust_scale_ignores_outlier():
    """MAD scale of [1, 2, 3, 4, 100] is 1.4826"""
    assert robust_scale(np.array([1.0, 2.0, 3.0, 4.0, 100.0])) == pytest.approx(MAD_TO_SIGMA)


def test_jacobian_matches_finite_differences():
    """Analytic derivatives against central differences away from the kinks"""
    t = np.array([300.0, 900.0, 1200.0, 1800.0, 2700.0, 3600.0])
    x = np.array([0.012, 700.0, 1650.0])
    tau = 900.0
    jac = jacobian(t, *x, tau)
    assert jac.shape == (t.size, 3)
    for j, h in enumerate((1e-7, 1e-3, 1e-3)):
        up, down = x.copy(), x.copy()
        up[j] += h
        down[j] -= h
        fd = (signal_curve(t, *up, tau) - signal_curve(t, *down, tau)) / (2 * h)
        np.testing.assert_allclose(jac[:, j], fd, rtol=1e-5, atol=1e-10)


def test_outlier_has_bounded_influence():
    """One corrupted sample moves the robust fit less than a plain least-squares fit"""
    values = _series().values.copy()
    values[7] += 1.5
    series = PwiTimeSeries(values, AcquisitionSpec())
    robust = fit_voxel_lsf(series)
    plain = fit_voxel_lsf(series, cfg=LsfConfig(huber_k=1e6))
    robust_error = abs(robust.params.cbf - TRUTH.cbf) / TRUTH.cbf
    plain_error = abs(plain.params.cbf - TRUTH.cbf) / TRUTH.cbf
    assert robust_error < plain_error
    assert robust_error < 0.05


def test_multistart_winner_has_lowest_cost(noisy_phantom):
    """The reported solution is never worse than any start"""
    for index in noisy_phantom.masked_indices()[:5]:
        best, outcomes = multistart(noisy_phantom.series(index), LsfConfig())
        assert len(outcomes) == len(LsfConfig().at_grid)
        assert all(best.cost <= outcome.cost for outcome in outcomes)
        assert best.history[-1] == best.cost


def test_estimates_respect_bounds(noisy_phantom):
    """cbf >= 0, at inside the window, t1b inside its bounds"""
    cfg = LsfConfig()
    for index in noisy_phantom.masked_indices():
        params = fit_voxel_lsf(noisy_phantom.series(index), cfg=cfg).params
        assert params.cbf >= 0.0
        assert 0.0 < params.at <= noisy_phantom.spec.t_max
        assert cfg.t1b_bounds[0] <= params.t1b <= cfg.t1b_bounds[1]


def _row_grid(rows):
    spec = AcquisitionSpec()
    signal = np.asarray(rows, dtype=float).reshape(1, len(rows), spec.n_points)
    return VoxelGrid(mask=np.ones((1, len(rows)), dtype=bool), signal=signal, spec=spec)


def test_lsf_multi_identical_voxels():
    """Averaging three identical fits returns that fit"""
    values = _series().values
    grid = _row_grid([values, values, values])
    selection = BranchSelection(target=(0, 0), companions=[(0, 1), (0, 2)], seed=0)
    multi = fit_lsf_multi(grid, selection)
    single = fit_voxel_lsf(grid.series((0, 0)))
    assert multi.converged
    assert multi.params.cbf == pytest.approx(single.params.cbf, rel=1e-12)
    assert multi.params.at == pytest.approx(single.params.at, rel=1e-12)
    assert multi.params.t1b == pytest.approx(single.params.t1b, rel=1e-12)


def _stub_result(cbf, converged=True):
    return FitResult(
        params=HaemodynamicParams(cbf=cbf, at=600.0 * cbf, t1b=1800.0),
        loss_history=np.zeros(1),
        predicted_signal=np.zeros(12),
        converged=converged,
    )


def test_lsf_multi_arithmetic_mean(monkeypatch):
    """cbf estimates of 1, 2 and 3 average to 2"""
    grid = _row_grid([np.full(12, 1.0), np.full(12, 2.0), np.full(12, 3.0)])
    monkeypatch.setattr(lsf_fit, "fit_voxel_lsf",
                        lambda series, spec, cfg: _stub_result(float(series.values[0])))
    selection = BranchSelection(target=(0, 1), companions=[(0, 0), (0, 2)], seed=0)
    result = fit_lsf_multi(grid, selection)
    assert result.params.cbf == pytest.approx(2.0)
    assert result.params.at == pytest.approx(1200.0)
    assert result.converged


def test_lsf_multi_skips_non_converged(monkeypatch):
    """Only converged fits enter the mean"""
    grid = _row_grid([np.full(12, 1.0), np.full(12, 2.0), np.full(12, 6.0)])
    monkeypatch.setattr(
        lsf_fit, "fit_voxel_lsf",
        lambda series, spec, cfg: _stub_result(float(series.values[0]), converged=series.values[0] < 5),
    )
    selection = BranchSelection(target=(0, 0), companions=[(0, 1), (0, 2)], seed=0)
    assert fit_lsf_multi(grid, selection).params.cbf == pytest.approx(1.5)


def test_lsf_multi_all_failed(monkeypatch):
    """Every voxel failing yields NaN estimates flagged as not converged"""
    grid = _row_grid([np.ones(12), np.ones(12), np.ones(12)])

    def failing(series, spec, cfg):
        raise DatasetError("unusable series")

    monkeypatch.setattr(lsf_fit, "fit_voxel_lsf", failing)
    selection = BranchSelection(target=(0, 0), companions=[(0, 1), (0, 2)], seed=0)
    result = fit_lsf_multi(grid, selection)
    assert not result.converged
    assert np.isnan(result.params.cbf)
    assert result.predicted_signal.shape == (12,)


def test_ground_truth_with_matching_t1b():
    """Fixed-t1b fits of a clean phantom reproduce its maps"""
    grid = generate_phantom(PhantomConfig(width=3, height=3, seed=2))
    cbf_map, at_map, converged = ground_truth_from_lsf(grid, grid.ground_truth.t1b)
    assert converged.all()
    np.testing.assert_allclose(cbf_map, grid.ground_truth.cbf_map, rtol=1e-3)
    np.testing.assert_allclose(at_map, grid.ground_truth.at_map, rtol=1e-3)


def test_ground_truth_with_wrong_t1b_departs():
    """A wrong fixed t1b biases the cbf map"""
    grid = generate_phantom(PhantomConfig(width=3, height=3, seed=2))
    cbf_map, _, _ = ground_truth_from_lsf(grid, 0.5 * grid.ground_truth.t1b)
    assert np.max(np.abs(cbf_map - grid.ground_truth.cbf_map) / grid.ground_truth.cbf_map) > 0.05


def test_ground_truth_edge_cases():
    """Empty masks give empty maps; t1b must be positive"""
    spec = AcquisitionSpec()
    grid = VoxelGrid(mask=np.zeros((2, 3), dtype=bool), signal=np.zeros((2, 3, spec.n_points)), spec=spec)
    cbf_map, at_map, converged = ground_truth_from_lsf(grid, 1800.0)
    assert cbf_map.shape == (2, 3)
    assert np.all(np.isnan(cbf_map)) and np.all(np.isnan(at_map))
    assert not converged.any()
    with pytest.raises(ConfigurationError):
        ground_truth_from_lsf(grid, -1.0)
