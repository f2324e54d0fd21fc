"""
Unit tests for dataset, map and results files
"""
import json

import numpy as np
import pytest

from aslpinn.core.dataset_io import (
    SCHEMA_VERSION,
    load_dataset,
    load_results,
    read_map_csv,
    save_dataset,
    save_results,
    write_map_csv,
)
from aslpinn.exceptions import DatasetError, DatasetParseError, SchemaVersionError
from aslpinn.models.grid import VoxelGrid
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams
from aslpinn.models.results import FitResult, RoiFit


def test_dataset_round_trip(tmp_path, noisy_phantom):
    """Save then load gives an equal grid, ground truth and metadata included"""
    path = save_dataset(noisy_phantom, tmp_path / "data" / "grid.json")
    assert load_dataset(path) == noisy_phantom


def test_single_voxel_round_trip(tmp_path):
    """A 1x1 grid without ground truth survives the trip"""
    spec = AcquisitionSpec(times=[250.0, 500.0, 1000.0], n_points=3, spacing=250.0)
    grid = VoxelGrid(mask=np.ones((1, 1), dtype=bool), signal=np.array([[[0.1, 0.25, 0.2]]]), spec=spec)
    loaded = load_dataset(save_dataset(grid, tmp_path / "one.json"))
    assert loaded == grid
    assert loaded.ground_truth is None


def test_unmasked_voxels_not_written(tmp_path):
    """Only masked series are stored"""
    spec = AcquisitionSpec()
    mask = np.array([[True, False], [False, True]])
    grid = VoxelGrid(mask=mask, signal=np.ones((2, 2, spec.n_points)), spec=spec)
    document = json.loads(save_dataset(grid, tmp_path / "d.json").read_text())
    assert document["mask"] == [1, 0, 0, 1]
    assert len(document["signal"]) == 2
    assert document["schema_version"] == SCHEMA_VERSION


def _write(tmp_path, document):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(document))
    return path


def _valid_document():
    return {
        "schema_version": 1,
        "times_ms": [300.0, 600.0],
        "width": 1,
        "height": 1,
        "mask": [1],
        "signal": [[0.0, 1.0]],
    }


def test_missing_times_rejected(tmp_path):
    """A document without times_ms names the field"""
    document = _valid_document()
    del document["times_ms"]
    with pytest.raises(DatasetParseError) as info:
        load_dataset(_write(tmp_path, document))
    assert info.value.field == "times_ms"


def test_schema_version_checked(tmp_path):
    """Unknown versions and missing versions are refused"""
    document = _valid_document()
    document["schema_version"] = 2
    with pytest.raises(SchemaVersionError):
        load_dataset(_write(tmp_path, document))
    del document["schema_version"]
    with pytest.raises(DatasetParseError):
        load_dataset(_write(tmp_path, document))


def test_signal_count_must_match_mask(tmp_path):
    """One series per masked voxel"""
    document = _valid_document()
    document["signal"] = [[0.0, 1.0], [0.0, 2.0]]
    with pytest.raises(DatasetParseError) as info:
        load_dataset(_write(tmp_path, document))
    assert info.value.field == "signal"


def test_unordered_times_rejected(tmp_path):
    """Times must increase"""
    document = _valid_document()
    document["times_ms"] = [600.0, 300.0]
    with pytest.raises(DatasetParseError):
        load_dataset(_write(tmp_path, document))


def test_unreadable_documents(tmp_path):
    """Missing files and broken JSON are dataset errors"""
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(DatasetParseError):
        load_dataset(broken)


def test_map_csv_round_trip(tmp_path, rng):
    """Header then rows; NaN written as nan and read back"""
    values = rng.uniform(size=(3, 4))
    values[0, 2] = np.nan
    path = write_map_csv(values, tmp_path / "cbf_map.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "4,3"
    assert "nan" in lines[1]
    np.testing.assert_array_equal(read_map_csv(path), values)


def test_map_csv_shape_checked(tmp_path):
    """Header and body must agree"""
    path = tmp_path / "map.csv"
    path.write_text("3,2\n1,2,3\n")
    with pytest.raises(DatasetParseError):
        read_map_csv(path)
    path.write_text("three,2\n")
    with pytest.raises(DatasetParseError):
        read_map_csv(path)


def _roi():
    roi = RoiFit(method="lsf", shape=(2, 2), t1b=1790.0)
    roi.results[(1, 0)] = FitResult(
        params=HaemodynamicParams(cbf=0.011, at=640.0, t1b=1790.0),
        loss_history=np.array([3.0, 2.0, 1.0, 0.5, 0.25]),
        predicted_signal=np.linspace(0.0, 1.0, 12),
        converged=True,
        wall_time=0.7,
    )
    roi.results[(0, 1)] = FitResult(
        params=HaemodynamicParams(cbf=0.0, at=1e-6, t1b=1800.0),
        loss_history=np.array([0.0]),
        predicted_signal=np.zeros(12),
        converged=False,
    )
    roi.failures[(1, 1)] = "DatasetError: unusable"
    return roi


def test_results_round_trip(tmp_path):
    """Estimates, flags, failures and subject t1b come back unchanged"""
    path = save_results(_roi(), tmp_path / "results.json", seed=3)
    loaded = load_results(path)
    original = _roi()
    assert loaded.method == "lsf"
    assert loaded.shape == (2, 2)
    assert loaded.t1b == 1790.0
    assert loaded.failures == original.failures
    for index, result in original.results.items():
        assert loaded.results[index].same_outcome(result)
    np.testing.assert_array_equal(loaded.cbf_map, original.cbf_map)


def test_results_file_is_reproducible(tmp_path):
    """Equal fits give byte-identical files; voxels are row-major"""
    first = save_results(_roi(), tmp_path / "a.json", seed=3).read_bytes()
    second = save_results(_roi(), tmp_path / "b.json", seed=3).read_bytes()
    assert first == second
    voxels = json.loads(first)["voxels"]
    assert [(v["row"], v["col"]) for v in voxels] == [(0, 1), (1, 0)]
    assert "wall_time" not in voxels[0]


def test_results_history_stride(tmp_path):
    """Loss histories are thinned by the stride"""
    path = save_results(_roi(), tmp_path / "r.json", seed=0, history_stride=2)
    loaded = load_results(path)
    np.testing.assert_array_equal(loaded.results[(1, 0)].loss_history, [3.0, 1.0, 0.25])


def test_results_schema_checked(tmp_path):
    """Results files carry the same schema version"""
    path = tmp_path / "r.json"
    path.write_text(json.dumps({"schema_version": 7, "method": "lsf", "shape": [1, 1]}))
    with pytest.raises(SchemaVersionError):
        load_results(path)
    path.write_text(json.dumps({"schema_version": 1, "shape": [1, 1]}))
    with pytest.raises(DatasetParseError):
        load_results(path)
