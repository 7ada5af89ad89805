"""Direct vs reduced solver gap over the refinement levels of a scenario.

    python3 scripts/twin_study.py scenarios/twin_kolmogorov.scn --seeds 1,2
"""

import argparse
from dataclasses import dataclass, field

from wentzell.runs import twin_gaps
from wentzell.scenario import load_scenario


@dataclass
class TwinStudy:
    scenario: str
    seeds: list = field(default_factory=list)  # empty: the scenario's own list


def run(cfg: TwinStudy):
    sc = load_scenario(cfg.scenario)
    out = {}
    for seed in cfg.seeds or sc.seeds:
        out[seed] = [(r["h"], r["dt"], r["gaps"][-1]) for r in twin_gaps(sc, seed)]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario")
    ap.add_argument("--seeds", default="")
    args = ap.parse_args()
    cfg = TwinStudy(args.scenario, [int(s) for s in args.seeds.split(",") if s])
    for seed, rows in run(cfg).items():
        gaps = [g for *_, g in rows]
        mono = all(a > b for a, b in zip(gaps[:-1], gaps[1:]))
        print(f"seed {seed}: " + "  ".join(f"h={h:.4g} dt={dt:.2g} gap={g:.3e}" for h, dt, g in rows), "decreasing" if mono else "NOT decreasing")


if __name__ == "__main__":
    main()
