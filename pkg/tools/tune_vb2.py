#!/usr/bin/env python3
"""PP-error curve with constant-target cells (step 0 -> v, hold)."""

import sys
sys.path.insert(0, "src")

from ctsim.scenario import Scenario
from ctsim.runner import simulate
from ctsim.kernel import derive_seed

SPEEDS = [14, 18, 22, 26, 30, 34]
PPS = [400, 500, 600, 700, 800, 900, 1000, 1100, 1200, 1300, 1400, 1500]


def cell(pp_ms, speed, seed, gain_v, tick, kd=0.1, duration_s=24.0):
    scn = Scenario(
        mode="leader_follower", schedule=f"steps 0:{speed}",
        topology="solo1", duration_s=duration_s, gp_ms=600.0, gd_ms=20.0,
        lpp_ms=pp_ms, fpp_ms=pp_ms, seed=seed,
        gain_v=gain_v, encoder_tick_cm=tick, kd=kd)
    report, _ = simulate(scn)
    return report.nodes[0].pid_err_pct


def curve(gain_v, tick, kd=0.1, seeds=range(5)):
    out = {}
    for pp in PPS:
        errs = []
        for v in SPEEDS:
            for s in seeds:
                errs.append(cell(pp, v, derive_seed(100, pp, v, s) % (2**31),
                                 gain_v, tick, kd))
        out[pp] = sum(errs) / len(errs)
    return out


def main():
    for gain_v in (0.6, 0.8, 1.0):
        for tick in (0.3, 0.6, 1.0):
            c = curve(gain_v, tick)
            best = min(c, key=c.get)
            ok = 500 <= best <= 700 and c[best] < c[400] and c[best] < c[1500]
            row = " ".join(f"{pp}:{e:5.2f}" for pp, e in c.items())
            print(f"gain={gain_v} tick={tick} best={best} ok={ok}\n  {row}", flush=True)


if __name__ == "__main__":
    main()
