#!/usr/bin/env python3
"""Tuning harness: PP-vs-error curve for a single device (triangle target),
scanned over plant gain and encoder tick. Frozen defaults come from here."""

import sys
sys.path.insert(0, "src")

from ctsim.scenario import Scenario
from ctsim.runner import simulate
from ctsim.kernel import derive_seed


def vb_cell(pp_ms: float, seed: int, gain_v: float, tick: float,
            duration_s: float = 24.0) -> float:
    scn = Scenario(
        mode="leader_follower", schedule="triangle 14:34",
        topology="solo1", duration_s=duration_s, gp_ms=600.0, gd_ms=20.0,
        lpp_ms=pp_ms, fpp_ms=pp_ms, seed=seed,
        gain_v=gain_v, encoder_tick_cm=tick)
    report, _ = simulate(scn)
    return report.nodes[0].pid_err_pct


def curve(gain_v: float, tick: float, seeds=range(5), pps=None):
    pps = pps or [400, 500, 600, 700, 800, 900, 1000, 1100, 1200, 1300, 1400, 1500]
    out = {}
    for pp in pps:
        errs = [vb_cell(pp, derive_seed(100, pp, s) % (2**31), gain_v, tick)
                for s in seeds]
        out[pp] = sum(errs) / len(errs)
    return out


def main():
    for gain_v in (0.5, 0.6, 0.8):
        for tick in (0.3, 0.6, 1.0):
            c = curve(gain_v, tick)
            best = min(c, key=c.get)
            ok = 500 <= best <= 700 and c[best] < c[400] and c[best] < c[1500]
            row = " ".join(f"{pp}:{e:5.2f}" for pp, e in c.items())
            print(f"gain={gain_v} tick={tick} best={best} ok={ok}\n  {row}")


if __name__ == "__main__":
    main()
