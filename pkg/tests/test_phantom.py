"""
Unit tests for the synthetic phantom generator
"""
import numpy as np
import pytest
from pydantic import ValidationError

from aslpinn.config import PhantomConfig
from aslpinn.core.asl_model import evaluate_signal
from aslpinn.core.phantom import generate_phantom, noise_std_of, roi_mask, scale_to_range
from aslpinn.exceptions import ConfigurationError
from aslpinn.models.grid import VoxelGrid
from aslpinn.models.params import AcquisitionSpec


def test_same_seed_same_grid():
    """Generation is a pure function of the config"""
    cfg = PhantomConfig(width=6, height=5, noise_std=0.1, seed=9)
    assert generate_phantom(cfg) == generate_phantom(cfg)
    assert generate_phantom(cfg) != generate_phantom(cfg.model_copy(update={"seed": 10}))


def test_noiseless_series_are_closed_form(small_phantom):
    """Without noise each series is exactly the closed form of its truth"""
    truth = small_phantom.ground_truth
    for index in small_phantom.masked_indices():
        expected = evaluate_signal(truth.params_at(index), small_phantom.spec.times_array)
        np.testing.assert_array_equal(small_phantom.series(index).values, expected)


def test_fields_span_their_ranges(small_phantom):
    """cbf and at maps are min-max scaled onto the configured ranges"""
    cfg = PhantomConfig()
    truth = small_phantom.ground_truth
    assert np.nanmin(truth.cbf_map) == pytest.approx(cfg.cbf_range[0])
    assert np.nanmax(truth.cbf_map) == pytest.approx(cfg.cbf_range[1])
    assert np.nanmin(truth.at_map) == pytest.approx(cfg.at_range[0])
    assert np.nanmax(truth.at_map) == pytest.approx(cfg.at_range[1])
    assert truth.t1b == cfg.t1b


def test_noise_level_relative_to_peak():
    """Residual std is noise_std times the grid-wide noiseless peak"""
    clean = generate_phantom(PhantomConfig(width=20, height=20, seed=5))
    noisy = generate_phantom(PhantomConfig(width=20, height=20, noise_std=0.1, seed=5))
    residual = noisy.signal[noisy.mask] - clean.signal[clean.mask]
    expected = 0.1 * clean.metadata["peak_signal"]
    assert residual.std() == pytest.approx(expected, rel=0.1)
    assert abs(residual.mean()) < 0.1 * expected
    assert noisy.ground_truth == clean.ground_truth


def test_ellipse_mask():
    """Corners fall outside the inscribed ellipse; unmasked voxels carry NaN"""
    mask = roi_mask(7, 9, "ellipse")
    assert mask[3, 4]
    assert not mask[0, 0] and not mask[6, 8]
    grid = generate_phantom(PhantomConfig(width=9, height=7, mask_shape="ellipse", seed=1))
    assert np.all(np.isnan(grid.signal[~grid.mask]))
    assert np.all(np.isnan(grid.ground_truth.cbf_map[~grid.mask]))
    assert roi_mask(1, 1, "ellipse").all()


def test_flat_field_maps_to_midpoint():
    """A constant field takes the middle of the range"""
    mask = np.ones((2, 2), dtype=bool)
    out = scale_to_range(np.full((2, 2), 3.0), mask, (400.0, 1400.0))
    np.testing.assert_array_equal(out, np.full((2, 2), 900.0))


def test_empty_grid_rejected():
    """Zero width or height is a configuration error"""
    with pytest.raises(ConfigurationError):
        generate_phantom(PhantomConfig(width=0, height=4))


def test_invalid_ranges_rejected():
    """Ranges must be positive and ordered"""
    with pytest.raises(ValidationError):
        PhantomConfig(cbf_range=(0.02, 0.01))
    with pytest.raises(ValidationError):
        PhantomConfig(at_range=(-1.0, 100.0))


def test_noise_std_recorded(noisy_phantom):
    """The generator's noise level travels in the metadata"""
    assert noise_std_of(noisy_phantom) == 0.2
    spec = AcquisitionSpec()
    foreign = VoxelGrid(mask=np.ones((1, 1), dtype=bool), signal=np.zeros((1, 1, spec.n_points)), spec=spec)
    assert noise_std_of(foreign) is None
