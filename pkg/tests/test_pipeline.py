import os

import pytest

from helpers import tiny_dataset
from vimocap import metrics
from vimocap import pipeline as P
from vimocap.config import config_from_dict
from vimocap.errors import StageError
from vimocap.optimizer import EnergyWeights, build_problem, refine

TINY = {
    "hidden": 4,
    "data": {"train_sequences": 2, "test_sequences": 1, "frames": 8, "kinds": ["reach", "squat"]},
    "schedule": {"epochs_1a": 1, "epochs_1b": 1, "epochs_2": 1, "epochs_3": 1, "seq_len": 8, "batch_size": 2,
                 "decay_epochs": 0},
}


def tiny(tmp_path, name, seed=3, **extra):
    return config_from_dict({**TINY, **extra}, seed=seed, out=str(tmp_path / name))


def test_report_is_byte_identical_for_same_seed(tmp_path):
    a = P.run_pipeline_detailed(tiny(tmp_path, "a"))
    b = P.run_pipeline_detailed(tiny(tmp_path, "b"))
    with open(a.artifacts["report"], "rb") as fa, open(b.artifacts["report"], "rb") as fb:
        assert fa.read() == fb.read()
    expected = {"config.json", "data", "calibration.json", "weights.bin", "training_log.json", "motions",
                "energy_trace.json", "report.json", "timing.json"}
    assert set(os.listdir(tmp_path / "a")) == expected
    assert os.listdir(tmp_path / "a" / "motions" / "refined") == ["seq_000.json"]
    assert a.throughput_fps > 0
    assert a.report is a.refined


def test_different_seed_changes_report(tmp_path):
    a = P.run_pipeline_detailed(tiny(tmp_path, "a", optimize=False))
    b = P.run_pipeline_detailed(tiny(tmp_path, "b", seed=4, optimize=False))
    assert a.refined is None and a.report is a.inference
    assert a.report.aggregate != b.report.aggregate


def test_reuses_dataset_and_weights(tmp_path):
    first = P.run_pipeline_detailed(tiny(tmp_path, "a", optimize=False))
    paths = {"dataset": str(tmp_path / "a" / "data"), "weights": first.artifacts["weights"]}
    again = P.run_pipeline_detailed(tiny(tmp_path, "b", optimize=False, paths=paths))
    assert again.report.aggregate == first.report.aggregate
    assert not os.path.exists(tmp_path / "b" / "training_log.json")


def test_stage_attribution(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not weights")
    with pytest.raises(StageError) as err:
        P.run_pipeline_detailed(tiny(tmp_path, "a", paths={"weights": str(bad)}))
    assert err.value.stage == "train"


def test_ground_truth_is_a_fixed_point(skeleton, rig):
    ds = tiny_dataset(skeleton, rig, n=1, frames=8)
    obs = ds.sequences[0]
    res = refine(build_problem(skeleton, obs.motion, obs, rig, EnergyWeights()))
    assert metrics.mpjpe(res.motion, obs.motion, skeleton) == pytest.approx(0.0, abs=1e-9)
