"""
Unit tests for spatial weights, branch selection and the multi-branch fit
"""
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from aslpinn.config import PhantomConfig, TrainConfig
from aslpinn.core.asl_model import evaluate_signal
from aslpinn.core.network import Parameter, grads_wrt_trainables
from aslpinn.core.phantom import generate_phantom
from aslpinn.core.pinn_fit import collocation_times, make_branch
from aslpinn.core.supinn import (
    MIN_WEIGHT,
    branch_seed,
    compute_spatial_weights,
    fit_roi_supinn,
    fit_supinn,
    neighbourhood_std,
    scale_weights,
    select_branch_voxels,
)
from aslpinn.exceptions import DatasetError
from aslpinn.models.grid import PwiTimeSeries, VoxelGrid
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams
from aslpinn.models.results import BranchSelection


def _row_grid(rows, spec=None):
    """1 x n fully masked grid from a list of series"""
    spec = spec or AcquisitionSpec()
    signal = np.asarray(rows, dtype=float).reshape(1, len(rows), spec.n_points)
    return VoxelGrid(mask=np.ones((1, len(rows)), dtype=bool), signal=signal, spec=spec)


def test_neighbourhood_std_example():
    """Neighbours [2, 4, 4, 4, 5, 5, 7, 9] give a population std of 2, a raw weight of 0.5"""
    spec = AcquisitionSpec(n_points=1, spacing=300.0)
    signal = np.array([[2.0, 4.0, 4.0], [4.0, 100.0, 5.0], [5.0, 7.0, 9.0]]).reshape(3, 3, 1)
    grid = VoxelGrid(mask=np.ones((3, 3), dtype=bool), signal=signal, spec=spec)
    std = neighbourhood_std(grid, (1, 1))
    np.testing.assert_allclose(std, [2.0])
    assert 1.0 / std[0] == pytest.approx(0.5)


def test_scale_weights_bounds(rng):
    """max maps to 1, min to 0.1, order preserved"""
    raw = rng.uniform(0.2, 40.0, size=12)
    scaled = scale_weights(raw)
    assert scaled.max() == pytest.approx(1.0)
    assert scaled.min() == pytest.approx(MIN_WEIGHT)
    np.testing.assert_array_equal(np.argsort(scaled), np.argsort(raw))


def test_scale_weights_equal_raw():
    """Equal raw weights all become 1"""
    np.testing.assert_array_equal(scale_weights(np.full(5, 3.0)), np.ones(5))


def test_zero_std_gives_unit_weights():
    """Identical neighbours: floored std, equal raw weights, all ones"""
    series = np.linspace(0.0, 1.0, 12)
    grid = _row_grid([series, series, series])
    np.testing.assert_array_equal(compute_spatial_weights(grid, (0, 1)), np.ones(12))


def test_isolated_voxel_gets_unit_weights():
    """A voxel without in-mask neighbours is weighted uniformly"""
    spec = AcquisitionSpec()
    mask = np.zeros((3, 3), dtype=bool)
    mask[1, 1] = True
    signal = np.zeros((3, 3, spec.n_points))
    signal[1, 1] = np.arange(spec.n_points)
    grid = VoxelGrid(mask=mask, signal=signal, spec=spec)
    assert neighbourhood_std(grid, (1, 1)) is None
    np.testing.assert_array_equal(compute_spatial_weights(grid, (1, 1)), np.ones(spec.n_points))


def test_weights_outside_mask_rejected(small_phantom):
    """Weights are only defined for masked voxels"""
    with pytest.raises(DatasetError):
        compute_spatial_weights(small_phantom, (9, 9))


def test_weights_lie_in_range(noisy_phantom):
    """Every weight is in [0.1, 1] on a noisy grid"""
    for index in noisy_phantom.masked_indices():
        weights = compute_spatial_weights(noisy_phantom, index)
        assert weights.shape == (noisy_phantom.spec.n_points,)
        assert np.all(weights >= MIN_WEIGHT - 1e-12)
        assert np.all(weights <= 1.0 + 1e-12)


def test_selection_forced_when_mask_has_three_voxels():
    """Exactly three masked voxels: the companions are the other two"""
    grid = _row_grid([np.ones(12), np.ones(12) * 2, np.ones(12) * 3])
    selection = select_branch_voxels(grid, (0, 2), seed=5)
    assert selection.target == (0, 2)
    assert sorted(selection.companions) == [(0, 0), (0, 1)]


def test_selection_deterministic(small_phantom):
    """Same seed, same companions; companions are distinct and exclude the target"""
    first = select_branch_voxels(small_phantom, (1, 2), seed=42)
    second = select_branch_voxels(small_phantom, (1, 2), seed=42)
    assert first == second
    assert (1, 2) not in first.companions
    assert len(set(first.companions)) == 2


def test_selection_needs_enough_voxels():
    """Fewer masked voxels than branches is a dataset error"""
    grid = _row_grid([np.ones(12), np.ones(12)])
    with pytest.raises(DatasetError):
        select_branch_voxels(grid, (0, 0), seed=0)


def test_selection_target_must_be_masked(small_phantom):
    """Targets outside the mask are rejected"""
    with pytest.raises(DatasetError):
        select_branch_voxels(small_phantom, (4, 0), seed=0)


def test_selection_uniform_over_candidates(small_phantom):
    """Companions are drawn uniformly from the other masked voxels"""
    counts = Counter()
    n_draws = 3000
    for seed in range(n_draws):
        counts.update(select_branch_voxels(small_phantom, (0, 0), seed=seed).companions)
    candidates = [index for index in small_phantom.masked_indices() if index != (0, 0)]
    observed = [counts[index] for index in candidates]
    assert sum(observed) == 2 * n_draws
    assert chisquare(observed).pvalue > 0.001


def test_branch_seed_depends_on_voxel():
    """Derived seeds are reproducible and differ between voxels"""
    assert branch_seed(7, 3) == branch_seed(7, 3)
    assert branch_seed(7, 3) != branch_seed(7, 4)
    assert branch_seed(7, 3) != branch_seed(8, 3)


def test_invalid_selection_rejected(small_phantom, quick_train):
    """Duplicate voxels in a selection are a dataset error"""
    selection = BranchSelection(target=(0, 0), companions=[(0, 0), (1, 1)], seed=0)
    with pytest.raises(DatasetError):
        fit_supinn(small_phantom, selection, quick_train)


def test_identical_branches_stay_identical(quick_train):
    """Symmetric inputs give symmetric estimates"""
    params = HaemodynamicParams(cbf=0.01, at=700.0, t1b=1800.0)
    series = evaluate_signal(params, AcquisitionSpec().times_array)
    grid = _row_grid([series, series, series])
    selection = BranchSelection(target=(0, 0), companions=[(0, 1), (0, 2)], seed=0)
    result = fit_supinn(grid, selection, quick_train)
    cbfs = [branch.params.cbf for branch in result.branches]
    ats = [branch.params.at for branch in result.branches]
    np.testing.assert_allclose(cbfs, cbfs[0], rtol=1e-12)
    np.testing.assert_allclose(ats, ats[0], rtol=1e-12)
    assert all(branch.params.t1b == result.t1b for branch in result.branches)


def _branch_grads(companion_at):
    spec = AcquisitionSpec()
    cfg = TrainConfig()
    shared = Parameter("t1b", cfg.init_t1b)
    target = PwiTimeSeries(evaluate_signal(HaemodynamicParams(cbf=0.01, at=600.0, t1b=1800.0),
                                           spec.times_array), spec)
    other = PwiTimeSeries(evaluate_signal(HaemodynamicParams(cbf=0.01, at=companion_at, t1b=1800.0),
                                          spec.times_array), spec)
    branches = [make_branch(series, spec, cfg, shared_t1b=shared, prefix=f"branch{i}.")
                for i, series in enumerate([target, other])]
    collocation = collocation_times(spec, cfg.n_collocation)
    loss = branches[0].loss(collocation, cfg) + branches[1].loss(collocation, cfg)
    return grads_wrt_trainables(loss, [b.net for b in branches], [b.physical for b in branches])


def test_branches_couple_only_through_t1b():
    """Changing one branch's data moves the shared t1b gradient but not the other branch's"""
    first = _branch_grads(900.0)
    second = _branch_grads(1300.0)
    for name in ("branch0.cbf", "branch0.at", "branch0.W1", "branch0.b3"):
        np.testing.assert_allclose(first[name], second[name], rtol=1e-13, atol=0.0)
    assert first["t1b"] != pytest.approx(second["t1b"])
    assert "branch1.t1b" not in first


def test_supinn_result_shares_t1b(small_phantom, quick_train):
    """Every branch reports the single shared t1b; the target is branch 0"""
    selection = select_branch_voxels(small_phantom, (2, 1), seed=1)
    result = fit_supinn(small_phantom, selection, quick_train)
    assert len(result.branches) == 3
    assert result.target is result.branches[0]
    assert {branch.params.t1b for branch in result.branches} == {result.t1b}
    assert result.loss_history.size == quick_train.horizon


def test_fit_roi_supinn_deterministic(quick_train):
    """Two runs with the same seed give identical maps and t1b"""
    grid = generate_phantom(PhantomConfig(width=2, height=2, seed=4))
    first = fit_roi_supinn(grid, quick_train)
    second = fit_roi_supinn(grid, quick_train)
    assert set(first.results) == set(grid.masked_indices())
    np.testing.assert_array_equal(first.cbf_map, second.cbf_map)
    np.testing.assert_array_equal(first.at_map, second.at_map)
    assert first.t1b == second.t1b


def test_fit_roi_supinn_empty_mask(quick_train):
    """An empty mask yields an empty fit"""
    spec = AcquisitionSpec()
    grid = VoxelGrid(mask=np.zeros((2, 2), dtype=bool), signal=np.zeros((2, 2, spec.n_points)), spec=spec)
    roi = fit_roi_supinn(grid, quick_train)
    assert roi.results == {}
    assert roi.failures == {}
    assert roi.t1b is None


@pytest.mark.slow
def test_noiseless_supinn_recovers_every_branch():
    """Full schedule on a noiseless grid: shared t1b and each branch's cbf and at within 5%"""
    grid = generate_phantom(PhantomConfig(width=4, height=4, seed=0))
    selection = select_branch_voxels(grid, (1, 1), seed=0)
    result = fit_supinn(grid, selection, TrainConfig())
    assert result.t1b == pytest.approx(grid.ground_truth.t1b, rel=0.05)
    for voxel, branch in zip(selection.voxels, result.branches):
        truth = grid.ground_truth.params_at(voxel)
        assert branch.params.cbf == pytest.approx(truth.cbf, rel=0.05), voxel
        assert branch.params.at == pytest.approx(truth.at, rel=0.05), voxel


@pytest.mark.slow
def test_noiseless_identical_voxels_full_schedule():
    """Three copies of one noiseless voxel: every branch and the shared t1b within 5%"""
    params = HaemodynamicParams(cbf=0.01, at=700.0, t1b=1800.0)
    series = evaluate_signal(params, AcquisitionSpec().times_array)
    grid = _row_grid([series, series, series])
    selection = BranchSelection(target=(0, 0), companions=[(0, 1), (0, 2)], seed=0)
    result = fit_supinn(grid, selection, TrainConfig())
    assert result.t1b == pytest.approx(params.t1b, rel=0.05)
    for branch in result.branches:
        assert branch.params.cbf == pytest.approx(params.cbf, rel=0.05)
        assert branch.params.at == pytest.approx(params.at, rel=0.05)
