"""simulate → calibrate → train → infer → optimize → eval, with stage attribution.

Every stage is a plain function so the CLI subcommands and the ablation
runs can call them individually.  ``run_pipeline`` chains them, writes all
artifacts under ``config.out`` and returns the final metrics report.
Throughput goes to ``timing.json``; ``report.json`` holds only quantities
that are reproducible from (config, seed).
"""
import contextlib
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import textio
from .calibration import calibrate_two_frame, calibration_to_dict, load_calibration, save_calibration
from .errors import StageError
from .inference import infer_sequence, init_stack, load_weights, save_weights, train_multiphase
from .kinematics import default_skeleton, geodesic_distance, load_skeleton
from .metrics import evaluate
from .motionio import save_motion
from .optimizer import build_problem, refine
from .synth import CaptureRig, default_rig, load_dataset, save_dataset, simulate_dataset

TEST_SEED_OFFSET = 1_000_003


@contextlib.contextmanager
def stage(name):
    """Re-raise any failure as :class:`StageError` naming ``name``."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def build_skeleton(config):
    sk = load_skeleton(config.path("skeleton")) if config.path("skeleton") else default_skeleton()
    if config.imu_bones:
        sk = sk.with_imus(config.imu_bones)
    return sk


def build_rig(config):
    if config.path("rig"):
        return CaptureRig.from_dict(textio.load(config.path("rig")))
    r = config.rig
    return default_rig(r.n_cameras, r.radius, r.height, r.target_height, r.focal, r.size)


def simulate_stage(config, skeleton, rig):
    """(train, test) datasets; the test set shares the ground-truth calibration."""
    d = config.data
    if config.path("dataset"):
        root = config.path("dataset")
        return load_dataset(os.path.join(root, "train")), load_dataset(os.path.join(root, "test"))
    train = simulate_dataset(skeleton, rig, d.train_sequences, d.frames, d.fps, config.seed, d.noise, d.kinds)
    test = simulate_dataset(skeleton, rig, d.test_sequences, d.frames, d.fps, config.seed + TEST_SEED_OFFSET,
                            d.noise, d.kinds, calib=train.calibration)
    return train, test


def calibrate_stage(config, train):
    if config.path("calibration"):
        return load_calibration(config.path("calibration"))
    return calibrate_two_frame(train.calibration_observation)


def calibration_error_deg(estimate, truth):
    errs = [geodesic_distance(estimate.r_i2c, truth.r_i2c)]
    errs += [geodesic_distance(estimate.mounting(s), truth.mounting(s)) for s in truth.r_s2b if s in estimate.r_s2b]
    return float(np.degrees(max(errs)))


def train_stage(config, skeleton, train, progress=None):
    if config.path("weights"):
        return load_weights(config.path("weights")), None
    stack = init_stack(skeleton, config.hidden, config.seed, config.schedule.dropout, dataset=train)
    return train_multiphase(stack, train, config.schedule, config.seed, progress)


def infer_stage(stack, test):
    """Predicted motions and the measured throughput in frames per second."""
    preds, frames = [], 0
    t0 = time.perf_counter()
    for obs in test.sequences:
        preds.append(infer_sequence(stack, obs, test.rig))
        frames += len(obs)
    elapsed = time.perf_counter() - t0
    return preds, (frames / elapsed if elapsed > 0 else float("inf"))


def optimize_stage(config, skeleton, preds, test, weights=None):
    results = []
    for pred, obs in zip(preds, test.sequences):
        problem = build_problem(skeleton, pred, obs, test.rig, weights or config.energy_weights, config.window)
        results.append(refine(problem))
    return results


def evaluate_stage(skeleton, motions, test, label):
    names = [f"seq_{k:03d}" for k in range(len(test.sequences))]
    return evaluate(list(zip(names, motions, test.sequences)), skeleton, label)


@dataclass
class PipelineResult:
    report: object  # final MetricsReport
    inference: object
    refined: object = None
    calibration_error_deg: float = 0.0
    throughput_fps: float = 0.0
    artifacts: dict = field(default_factory=dict)


def run_pipeline_detailed(config, progress=None):
    out = config.out
    os.makedirs(out, exist_ok=True)
    art = {"config": os.path.join(out, "config.json")}
    textio.dump(config.to_dict(), art["config"])
    with stage("simulate"):
        skeleton = build_skeleton(config)
        rig = build_rig(config)
        train, test = simulate_stage(config, skeleton, rig)
        if not config.path("dataset"):
            save_dataset(train, os.path.join(out, "data", "train"))
            save_dataset(test, os.path.join(out, "data", "test"))
        art["data"] = os.path.join(out, "data")
    with stage("calibrate"):
        calib = calibrate_stage(config, train)
        art["calibration"] = os.path.join(out, "calibration.json")
        save_calibration(calib, art["calibration"])
        cal_err = calibration_error_deg(calib, train.calibration)
        train = train.recalibrated(calib)
        test = test.recalibrated(calib)
    with stage("train"):
        stack, log = train_stage(config, skeleton, train, progress)
        art["weights"] = os.path.join(out, "weights.bin")
        save_weights(stack, art["weights"])
        if log is not None:
            art["training_log"] = os.path.join(out, "training_log.json")
            textio.dump(log.to_dict(), art["training_log"])
    with stage("infer"):
        preds, fps = infer_stage(stack, test)
        mdir = os.path.join(out, "motions", "inferred")
        os.makedirs(mdir, exist_ok=True)
        for k, m in enumerate(preds):
            save_motion(m, os.path.join(mdir, f"seq_{k:03d}.json"), {"stage": "infer", "sequence": k})
    refined = None
    if config.optimize:
        with stage("optimize"):
            results = optimize_stage(config, skeleton, preds, test)
            refined = [r.motion for r in results]
            mdir = os.path.join(out, "motions", "refined")
            os.makedirs(mdir, exist_ok=True)
            for k, m in enumerate(refined):
                save_motion(m, os.path.join(mdir, f"seq_{k:03d}.json"), {"stage": "optimize", "sequence": k})
            art["energy_trace"] = os.path.join(out, "energy_trace.json")
            textio.dump({f"seq_{k:03d}": r.to_dict() for k, r in enumerate(results)}, art["energy_trace"])
    with stage("eval"):
        inf_report = evaluate_stage(skeleton, preds, test, "inference")
        ref_report = evaluate_stage(skeleton, refined, test, "refined") if refined is not None else None
        final = ref_report or inf_report
        doc = {
            "seed": config.seed,
            "calibration": {"max_error_deg": cal_err, "objective": calibration_to_dict(calib)["objective"]},
            "inference": inf_report.to_dict(),
            "refined": ref_report.to_dict() if ref_report else None,
            "final": final.aggregate,
        }
        art["report"] = os.path.join(out, "report.json")
        textio.dump(doc, art["report"])
        art["timing"] = os.path.join(out, "timing.json")
        textio.dump({"inference_fps": fps, "hidden_size": stack.hidden_size}, art["timing"])
    return PipelineResult(final, inf_report, ref_report, cal_err, fps, art)


def run_pipeline(config, progress=None):
    """Run every stage; returns the final :class:`MetricsReport`."""
    return run_pipeline_detailed(config, progress).report
