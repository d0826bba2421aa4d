"""Walk a flow-change scenario and print how the pool reacts.

Presets cover the interesting shapes: a step up in arrival rate (one
new slot per interval, spaced by t_d), a step down (one idle-wait
abort), a drain to zero, and a flat run. Output is the per-interval
slot count, the scheduler events that changed the pool, and optionally
the phase gantt.
"""

import argparse
import sys

from gateflow.simulator import SimConfig, render_gantt, run_sim

PRESETS = {
    "flat": ((0, 1000),),
    "step-up": ((0, 700), (4000, 1800)),
    "step-down": ((0, 2000), (4000, 700)),
    "drain": ((0, 1000), (2000, 0)),
}

POOL_EVENTS = ("activated", "retired", "marked", "mark_cancelled", "rate")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("preset", choices=sorted(PRESETS), nargs="?",
                        default="step-up")
    parser.add_argument("--t-d", type=int, default=100)
    parser.add_argument("--t-s", type=int, default=40)
    parser.add_argument("--commit-fixed-ms", type=int, default=10)
    parser.add_argument("--commit-per-row-us", type=int, default=1000)
    parser.add_argument("--duration-ms", type=int, default=10_000)
    parser.add_argument("--dispatch-cycle-ms", type=int, default=1000)
    parser.add_argument("--gantt", action="store_true")
    parser.add_argument("--bucket-ms", type=int, default=None)
    args = parser.parse_args(argv)

    trace = run_sim(SimConfig(
        t_d_ms=args.t_d,
        t_s_ms=args.t_s,
        commit_fixed_ms=args.commit_fixed_ms,
        commit_per_row_us=args.commit_per_row_us,
        arrival=PRESETS[args.preset],
        duration_ms=args.duration_ms,
        dispatch_cycle_ms=args.dispatch_cycle_ms,
        tick_ms=1,
    ))

    print(f"preset={args.preset} arrival={PRESETS[args.preset]}")
    print(f"rows: arrived={trace.arrived_rows} committed={trace.committed_rows}")
    print(f"final pool size: {trace.final_slots}\n")

    print("interval  slots")
    for k, count in trace.interval_slots:
        print(f"{k:>8}  {count:<5} {'#' * count}")

    print("\npool events (t in us):")
    for e in trace.events:
        if e.kind in POOL_EVENTS:
            extra = f" {e.reason}" if e.reason else ""
            extra += f" detail={e.detail}" if e.kind == "rate" else ""
            print(f"  t={e.t:>10} slot={e.slot_id:<3} {e.kind}{extra}")

    if args.gantt:
        print()
        print(render_gantt(trace, bucket_ms=args.bucket_ms))
    return 0


if __name__ == "__main__":
    sys.exit(main())
