"""Sweep random latency triples through the simulator and check that
the scheduler settles on the predicted pool size.

For each (t_d, t_s, t_c) the run lasts long enough for the pool to
grow from one slot and then hold. Prints one row per triple with the
predicted size, the interval where the pool first reached it, and
whether it stayed there for the rest of the run.
"""

import argparse
import random
import sys

from gateflow.scheduler import optimal_slots
from gateflow.simulator import SimConfig, run_sim


def converge_point(counts, target):
    """First interval index from which every count equals target."""
    for k in range(len(counts)):
        if all(c == target for c in counts[k:]):
            return k
    return None


def run_triple(t_d, t_s, t_c, rate):
    target = optimal_slots(t_d, t_s, t_c)
    duration = (t_d + t_s + t_c) * (target + 6) + 15 * t_d
    trace = run_sim(SimConfig(
        t_d_ms=t_d,
        t_s_ms=t_s,
        commit_fixed_ms=t_c,
        arrival=((0, rate),),
        duration_ms=duration,
        tick_ms=1,
    ))
    counts = [c for _, c in trace.interval_slots]
    return target, counts, converge_point(counts, target)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--triples", type=int, default=20)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--rate", type=int, default=5000, help="rows/sec")
    parser.add_argument("--t-d", type=int, help="run one triple instead")
    parser.add_argument("--t-s", type=int, default=50)
    parser.add_argument("--t-c", type=int, default=150)
    args = parser.parse_args(argv)

    if args.t_d is not None:
        cases = [(args.t_d, args.t_s, args.t_c)]
    else:
        rng = random.Random(args.seed)
        cases = [
            (rng.randrange(20, 201), rng.randrange(0, 301), rng.randrange(0, 801))
            for _ in range(args.triples)
        ]

    print(f"{'t_d':>5} {'t_s':>5} {'t_c':>5} {'size':>4} {'reached@':>9} held")
    failures = 0
    for t_d, t_s, t_c in cases:
        target, counts, at = run_triple(t_d, t_s, t_c, args.rate)
        held = at is not None
        if not held:
            failures += 1
        print(f"{t_d:>5} {t_s:>5} {t_c:>5} {target:>4} "
              f"{at if held else '-':>9} {'yes' if held else 'NO'}")
    if failures:
        print(f"\n{failures} of {len(cases)} triples failed to settle",
              file=sys.stderr)
        return 1
    print(f"\nall {len(cases)} triples settled on the predicted size")
    return 0


if __name__ == "__main__":
    sys.exit(main())
