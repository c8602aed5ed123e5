"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Inputs mimic one training batch (CIOU over ~200 positive anchors), one
scene's decode (NMS over ~300 candidates) and a test-set match (~1500
detections against ~300 ground-truth boxes). Results are also checked for
agreement, so the script doubles as a smoke test of the build.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from splesp import _kernels


def random_boxes(rng, n, size=384.0):
    c = rng.uniform(0, size, (n, 2))
    wh = rng.uniform(8, 48, (n, 2))
    return np.hstack([c - wh / 2, c + wh / 2])


def cases(rng):
    gt = random_boxes(rng, 200)
    pred = gt + rng.normal(0, 4, gt.shape)
    pred[:, 2:] = np.maximum(pred[:, 2:], pred[:, :2] + 1)
    cand = random_boxes(rng, 300, 96.0)
    scores = rng.uniform(0, 1, 300)
    n_scenes = 150
    gt_per = rng.integers(1, 4, n_scenes)
    gt_start = np.zeros(n_scenes + 1, dtype=np.int64)
    gt_start[1:] = np.cumsum(gt_per)
    gt_flat = random_boxes(rng, int(gt_start[-1]))
    det_scene = np.sort(rng.integers(0, n_scenes, 1500)).astype(np.int64)
    det = gt_flat[gt_start[det_scene]] + rng.normal(0, 6, (1500, 4))
    det[:, 2:] = np.maximum(det[:, 2:], det[:, :2] + 1)
    return {
        "ciou_with_grad": lambda k: k.ciou_with_grad(gt, pred),
        "nms": lambda k: k.nms(cand, scores, 0.5),
        "greedy_match": lambda k: k.greedy_match(det, det_scene, gt_flat, gt_start, 0.5),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a), np.asarray(b), rtol=1e-12, atol=1e-12)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args(argv)
    compiled = _kernels.compiled_backend
    if compiled is None:
        print("compiled backend not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    all_agree = True
    print(f"{'kernel':16s} {'numpy [us]':>12s} {'compiled [us]':>14s} {'speedup':>8s}  agree")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels.python_backend), number=args.repeat, repeat=3)) / args.repeat
        if compiled is None:
            print(f"{name:16s} {t_py * 1e6:12.1f} {'-':>14s} {'-':>8s}  -")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled), number=args.repeat, repeat=3)) / args.repeat
        agree = _same(fn(_kernels.python_backend), fn(compiled))
        all_agree = all_agree and agree
        print(f"{name:16s} {t_py * 1e6:12.1f} {t_c * 1e6:14.1f} {t_py / t_c:7.1f}x  {agree}")
    return 0 if all_agree else 1


if __name__ == "__main__":
    raise SystemExit(main())
