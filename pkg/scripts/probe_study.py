"""Ensemble sup-to-norm ratios of a probe scenario, level by level.

    python3 scripts/probe_study.py scenarios/kolmogorov_probe.scn --seeds 0,1,2,3
"""

import argparse
from dataclasses import dataclass, field

import numpy as np

from wentzell.runs import probe_rows
from wentzell.scenario import load_scenario


@dataclass
class ProbeStudy:
    scenario: str
    seeds: list = field(default_factory=list)


def run(cfg: ProbeStudy) -> np.ndarray:
    """``(seeds, levels)`` array of the largest ratio over multi-indices."""
    sc = load_scenario(cfg.scenario)
    table = []
    for seed in cfg.seeds or sc.seeds:
        best: dict = {}
        for lv, *_, ratio in probe_rows(sc, seed):
            best[lv] = max(best.get(lv, 0.0), ratio)
        table.append([best[k] for k in sorted(best)])
    return np.array(table)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario")
    ap.add_argument("--seeds", default="")
    args = ap.parse_args()
    table = run(ProbeStudy(args.scenario, [int(s) for s in args.seeds.split(",") if s]))
    ens = table.max(axis=0)
    print("ensemble max by level:", "  ".join(f"{v:.4g}" for v in ens))
    print("successive factors:", "  ".join(f"{b / a:.3f}" for a, b in zip(ens[:-1], ens[1:])))


if __name__ == "__main__":
    main()
