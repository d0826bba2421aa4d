"""Measure what keeping warm slots ahead of the data saves per batch.

Runs each begin-latency value under both strategies: connect-on-demand
(every batch eats the full connection setup) and the gated pool (a
standby slot has already connected and holds the stream open). The gap
between the two mean batch latencies should track the setup cost.
"""

import argparse
import sys

from gateflow.simulator import SimConfig, compare_strategies


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--t-s", type=int, nargs="+", default=[0, 10, 50, 200],
        metavar="MS", help="begin latencies to compare",
    )
    parser.add_argument("--t-d", type=int, default=100)
    parser.add_argument("--t-c", type=int, default=20)
    parser.add_argument("--rate", type=int, default=2000)
    parser.add_argument("--duration-ms", type=int, default=8000)
    args = parser.parse_args(argv)

    print(f"{'t_s ms':>7} {'on-demand us':>13} {'gated us':>10} "
          f"{'saved us':>9} {'batches':>8}")
    for t_s in args.t_s:
        cmp = compare_strategies(SimConfig(
            t_d_ms=args.t_d,
            t_s_ms=t_s,
            commit_fixed_ms=args.t_c,
            arrival=((0, args.rate),),
            duration_ms=args.duration_ms,
        ))
        print(f"{t_s:>7} {cmp.naive_mean_us:>13.0f} {cmp.gate_mean_us:>10.0f} "
              f"{cmp.saved_us:>9.0f} {cmp.gate_batches:>8}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
