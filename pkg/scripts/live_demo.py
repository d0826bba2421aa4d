"""End-to-end run over real sockets: segment daemons, gateway, load.

Starts an in-process cluster, drives paced synthetic rows through the
HTTP front, waits for the pipeline to drain, then audits the segment
stores: every sequence number exactly once, no overlapping streaming
windows, counters consistent with what the load generator saw.
"""

import argparse
import asyncio
import sys

from gateflow.config import GatewayConfig, SegmentConfig
from gateflow.gateway import Gateway
from gateflow.loadgen import run_loadgen
from gateflow.segment import start_cluster


async def demo(args):
    latency = dict(
        begin_latency_ms=args.begin_latency_ms,
        commit_fixed_ms=args.commit_fixed_ms,
        commit_per_row_us=args.commit_per_row_us,
    )
    daemons = await start_cluster(
        [SegmentConfig(id=f"seg{i}", port=0, **latency)
         for i in range(args.segments)]
    )
    config = GatewayConfig(
        segments=tuple(
            SegmentConfig(id=d.spec.id, port=d.bound_port, **latency)
            for d in daemons
        ),
        listen_addr="127.0.0.1:0",
        schema="seq:int",
        interval_ms=args.interval_ms,
        max_slots=args.max_slots,
        queue_capacity=100_000,
    )
    gw = Gateway(config)
    await gw.start()
    try:
        print(f"{args.segments} segments up, gateway on port {gw.ingest_port}")
        print(f"driving {args.rate} rows/s for {args.seconds}s ...")
        report = await asyncio.to_thread(
            run_loadgen, "127.0.0.1", gw.ingest_port,
            rate=float(args.rate), duration_s=float(args.seconds),
            devices=32, batch_lines=200,
        )
        print(f"loadgen: {report.to_dict()}")
        if not await gw.quiesce(timeout_s=30):
            print("pipeline did not drain in 30s", file=sys.stderr)
            return 1

        print("\ncounters:")
        print(gw.counters.render(), end="")

        spans = sorted(gw.send_spans(), key=lambda s: s[1])
        overlaps = sum(1 for a, b in zip(spans, spans[1:]) if b[1] < a[2])
        print(f"\nstreaming windows: {len(spans)}, overlapping: {overlaps}")

        seqs = sorted(
            int(line.split(",")[2])
            for d in daemons
            for line in d.store.committed_lines()
        )
        expected = list(range(report.accepted))
        exactly_once = seqs == expected
        print(f"audit: {len(seqs)} rows in segment stores, "
              f"exactly-once={'yes' if exactly_once else 'NO'}")
        return 0 if exactly_once and overlaps == 0 else 1
    finally:
        await gw.stop()
        for d in daemons:
            await d.stop()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--segments", type=int, default=4)
    parser.add_argument("--rate", type=int, default=2000)
    parser.add_argument("--seconds", type=float, default=5.0)
    parser.add_argument("--interval-ms", type=int, default=100)
    parser.add_argument("--max-slots", type=int, default=8)
    parser.add_argument("--begin-latency-ms", type=int, default=2)
    parser.add_argument("--commit-fixed-ms", type=int, default=20)
    parser.add_argument("--commit-per-row-us", type=int, default=20)
    args = parser.parse_args(argv)
    return asyncio.run(demo(args))


if __name__ == "__main__":
    sys.exit(main())
