"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes match a desk-scale training sequence: 240 frames, 19 joints, 4 views.
Every kernel is checked for agreement before it is timed.
"""
import argparse
import importlib
import timeit

import numpy as np

from vimocap import _kernels_py as py
from vimocap.kinematics import default_skeleton, random_rotations


def cases(rng):
    sk = default_skeleton()
    T, J = 240, sk.n_joints
    R = random_rotations(T * J, rng).reshape(T, J, 3, 3)
    parents = np.asarray(sk.parents, dtype=np.intp)
    offsets = np.asarray(sk.offsets, dtype=np.float64)
    pts = rng.normal(0.0, 0.5, (T * J, 3)) + [0.0, 0.0, 3.0]
    cam_r = random_rotations(1, rng)[0]
    return {
        "gram_schmidt": (rng.normal(size=(T * J, 6)),),
        "euler_xyz_to_matrix": (rng.uniform(-np.pi, np.pi, (T * J, 3)),),
        "forward_kinematics": (parents, offsets, R, rng.normal(size=(T, 3))),
        "project_points": (pts, cam_r, np.array([0.0, 0.0, 3.0]), 1000.0, 1000.0, 500.0, 500.0),
        "second_difference": (rng.normal(size=(T, 18, 3)), 1.0 / 30.0),
    }


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12, equal_nan=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()
    try:
        fast = importlib.import_module("vimocap._fastkernels")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, argv in cases(rng).items():
        f_py, f_cy = getattr(py, name), getattr(fast, name)
        if not agree(f_py(*argv), f_cy(*argv)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: f_py(*argv), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: f_cy(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_py:>12.3f}{t_cy:>12.3f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
