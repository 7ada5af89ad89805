"""Closed-form vs direct Jacobian determinant on random coefficient families.

    python3 scripts/det_study.py --families 4 --seeds 4
"""

import argparse
import time
from dataclasses import dataclass, field

import numpy as np

from wentzell.corpus import random_field_set
from wentzell.runs import det_levels


@dataclass
class DetStudy:
    families: int = 8
    seeds: int = 8
    points: int = 16
    T: float = 0.1
    dts: list = field(default_factory=lambda: [1e-4, 5e-5])
    amp_noise: float = 0.8
    amp_drift: float = 0.5


def run(cfg: DetStudy):
    per_dt = [[] for _ in cfg.dts]
    for k in range(cfg.families):
        fs = random_field_set(100 + k, d=2, d1=2, d2=1, amp_noise=cfg.amp_noise, amp_drift=cfg.amp_drift)
        pts = np.random.default_rng(k).uniform(-1, 1, (cfg.points, 2))
        errs = det_levels(fs, [1000 * k + s for s in range(cfg.seeds)], cfg.T, cfg.dts, pts)
        for acc, e in zip(per_dt, errs):
            acc.append(e)
    return [np.concatenate(e) for e in per_dt]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--families", type=int, default=DetStudy.families)
    ap.add_argument("--seeds", type=int, default=DetStudy.seeds)
    ap.add_argument("--T", type=float, default=DetStudy.T)
    args = ap.parse_args()
    cfg = DetStudy(families=args.families, seeds=args.seeds, T=args.T)
    t0 = time.perf_counter()
    errs = run(cfg)
    for dt, e in zip(cfg.dts, errs):
        print(f"dt={dt:.1e}  median {np.median(e):.3e}  max {e.max():.3e}")
    med = [np.median(e) for e in errs]
    print("median ratios:", [f"{a / b:.3f}" for a, b in zip(med[:-1], med[1:])], f"({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
