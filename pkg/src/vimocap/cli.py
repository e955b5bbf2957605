"""Command-line entry point: ``vimocap <subcommand> [--config PATH] [--seed N] [--out DIR] ...``.

Exit codes: 0 success, 1 usage error, 2 stage failure.
"""
import argparse
import glob
import os
import sys

from . import textio
from .errors import StageError

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, out_required=True):
    p.add_argument("--config", help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", required=out_required, help="output file or directory")


def _config(args, need_seed=True):
    from .config import PipelineConfig, load_config

    if args.config:
        return load_config(args.config, seed=args.seed, out=args.out)
    if args.seed is None:
        if need_seed:
            raise UsageError("either --config or --seed is required")
        return None
    return PipelineConfig(seed=args.seed, out=args.out or "run")


def _motion_files(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "seq_*.json")))
        if not files:
            raise UsageError(f"no seq_*.json motion files in {path}")
        return files
    return [path]


def _sequence_index(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    try:
        return int(stem.split("_")[-1])
    except ValueError:
        return 0


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    from .pipeline import build_rig, build_skeleton
    from .synth import save_dataset, simulate_dataset

    cfg = _config(args)
    with _stage("simulate"):
        sk, rig = build_skeleton(cfg), build_rig(cfg)
        d = cfg.data
        n = args.sequences if args.sequences is not None else d.train_sequences
        frames = args.frames if args.frames is not None else d.frames
        ds = simulate_dataset(sk, rig, n, frames, d.fps, cfg.seed, d.noise, d.kinds)
        save_dataset(ds, args.out)
    print(f"wrote {n} sequences to {args.out}")


def cmd_calibrate(args):
    from .calibration import calibrate_two_frame, observation_from_dict, save_calibration

    with _stage("calibrate"):
        src = args.observations
        doc = textio.load(os.path.join(src, "manifest.json") if os.path.isdir(src) else src)
        obs = observation_from_dict(doc.get("calibration_observation", doc))
        calib = calibrate_two_frame(obs)
        save_calibration(calib, args.out)
    print(f"objective {calib.objective:.3e} after {calib.sweeps} sweeps -> {args.out}")


def cmd_train(args):
    from .inference import init_stack, save_weights, train_multiphase
    from .pipeline import build_skeleton
    from .synth import load_dataset

    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    with _stage("train"):
        ds = load_dataset(args.dataset)
        if args.calibration:
            from .calibration import load_calibration

            ds = ds.recalibrated(load_calibration(args.calibration))
        sk = build_skeleton(cfg)
        stack = init_stack(sk, cfg.hidden, cfg.seed, cfg.schedule.dropout, dataset=ds)
        progress = (lambda p, e, v: print(f"phase {p} epoch {e}: {v:.6g}", flush=True)) if args.verbose else None
        stack, log = train_multiphase(stack, ds, cfg.schedule, cfg.seed, progress)
        save_weights(stack, os.path.join(args.out, "weights.bin"))
        textio.dump(log.to_dict(), os.path.join(args.out, "training_log.json"))
    print(f"weights -> {os.path.join(args.out, 'weights.bin')}")


def cmd_infer(args):
    from .inference import infer_sequence, load_weights
    from .motionio import save_motion
    from .synth import load_dataset

    os.makedirs(args.out, exist_ok=True)
    with _stage("infer"):
        stack = load_weights(args.weights)
        ds = load_dataset(args.dataset)
        if args.calibration:
            from .calibration import load_calibration

            ds = ds.recalibrated(load_calibration(args.calibration))
        for k, obs in enumerate(ds.sequences):
            m = infer_sequence(stack, obs, ds.rig)
            save_motion(m, os.path.join(args.out, f"seq_{k:03d}.json"), {"stage": "infer", "sequence": k})
    print(f"wrote {len(ds.sequences)} motions to {args.out}")


def cmd_optimize(args):
    from .kinematics import load_skeleton
    from .motionio import load_motion, save_motion
    from .optimizer import EnergyWeights, build_problem, refine
    from .synth import load_dataset

    files = _motion_files(args.motion)
    os.makedirs(args.out, exist_ok=True)
    with _stage("optimize"):
        ds = load_dataset(args.dataset)
        if args.calibration:
            from .calibration import load_calibration

            ds = ds.recalibrated(load_calibration(args.calibration))
        sk = load_skeleton(args.skeleton) if args.skeleton else ds.skeleton
        if args.imu_bones:
            sk = sk.with_imus(args.imu_bones.split(","))
        base = EnergyWeights()
        w = EnergyWeights(*(getattr(args, n) if getattr(args, n) is not None else getattr(base, n)
                            for n in ("w3d", "w2d", "acc", "ori")))
        traces = {}
        for path in files:
            k = _sequence_index(path)
            if not 0 <= k < len(ds.sequences):
                raise UsageError(f"{path}: sequence {k} not in dataset")
            res = refine(build_problem(sk, load_motion(path), ds.sequences[k], ds.rig, w, args.window))
            name = os.path.basename(path)
            save_motion(res.motion, os.path.join(args.out, name), {"stage": "optimize", "sequence": k})
            traces[name] = res.to_dict()
        textio.dump(traces, os.path.join(args.out, "energy_trace.json"))
    print(f"refined {len(files)} motions -> {args.out}")


def cmd_eval(args):
    from .metrics import evaluate
    from .motionio import load_motion
    from .synth import load_dataset

    files = _motion_files(args.pred)
    with _stage("eval"):
        ds = load_dataset(args.dataset)
        if args.calibration:
            from .calibration import load_calibration

            ds = ds.recalibrated(load_calibration(args.calibration))
        triples = []
        for path in files:
            k = _sequence_index(path)
            triples.append((os.path.basename(path), load_motion(path), ds.sequences[k]))
        report = evaluate(triples, ds.skeleton, args.label)
        textio.dump(report.to_dict(), args.out)
    agg = report.aggregate
    print(f"MPJPE {agg['mpjpe_global']:.2f} mm (root-aligned {agg['mpjpe_root_aligned']:.2f} mm), "
          f"PCK@0.2 {agg['pck']['0.2']:.1f}%, accel error {agg['accel_error']:.3f} m/s^2 -> {args.out}")


def cmd_export(args):
    from .kinematics import load_skeleton
    from .motionio import export_motion, load_motion

    with _stage("export"):
        motion = load_motion(args.motion)
        names = load_skeleton(args.skeleton).joint_names if args.skeleton else None
        export_motion(motion, args.out, names)
    print(f"exported {len(motion)} frames -> {args.out}")


def cmd_pipeline(args):
    from .pipeline import run_pipeline_detailed

    cfg = _config(args)
    progress = (lambda p, e, v: print(f"phase {p} epoch {e}: {v:.6g}", flush=True)) if args.verbose else None
    res = run_pipeline_detailed(cfg, progress)
    agg = res.report.aggregate
    print(f"root-aligned MPJPE: inference {res.inference.aggregate['mpjpe_root_aligned']:.2f} mm"
          + (f", refined {res.refined.aggregate['mpjpe_root_aligned']:.2f} mm" if res.refined else ""))
    print(f"PCK@0.2 {agg['pck']['0.2']:.1f}%  PCK@0.3 {agg['pck']['0.3']:.1f}%  "
          f"accel error {agg['accel_error']:.3f} m/s^2  throughput {res.throughput_fps:.1f} fps")
    print(f"report -> {res.artifacts['report']}")


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, (StageError, UsageError)):
            return False
        raise StageError(self.name, exc) from exc


def build_parser():
    parser = _Parser(prog="vimocap", description="Visual-inertial motion capture on a synthetic rig.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    _common(p)
    p.add_argument("--sequences", type=int)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="two-frame IMU/camera calibration")
    _common(p)
    p.add_argument("--observations", required=True, help="observation JSON or dataset directory")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="multi-phase tracker training")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run the tracker stack over a dataset")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("optimize", help="LM refinement of inferred motions")
    _common(p)
    p.add_argument("--motion", required=True, help="motion file or directory of seq_*.json")
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration")
    p.add_argument("--skeleton")
    p.add_argument("--imu-bones", dest="imu_bones", help="comma-separated input IMU bones")
    p.add_argument("--window", type=int, default=0)
    for name in ("w3d", "w2d", "acc", "ori"):
        p.add_argument(f"--{name}", type=float, help=f"override energy weight {name}")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="metrics report for predicted motions")
    _common(p)
    p.add_argument("--pred", required=True, help="motion file or directory of seq_*.json")
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration")
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a motion as per-frame rotation matrices")
    _common(p)
    p.add_argument("--motion", required=True)
    p.add_argument("--skeleton")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("pipeline", help="simulate, calibrate, train, infer, optimize and evaluate")
    _common(p, out_required=False)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
