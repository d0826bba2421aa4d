"""CLI surface: argument handling, exit codes, and subcommand wiring."""

import asyncio
import json
import socket
import threading

import yaml

from gateflow.cli import main
from gateflow.ingest import IngestServer
from gateflow.metrics import Counters
from gateflow.pipeline import LockFreeQueue
from gateflow.records import Schema


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def write_gateway_config(path, segment_port, listen="127.0.0.1:0"):
    path.write_text(
        yaml.safe_dump(
            {
                "listen_addr": listen,
                "schema": "seq:int",
                "segments": [{"id": "s0", "host": "127.0.0.1", "port": segment_port}],
            }
        )
    )
    return str(path)


class BackgroundIngest:
    """A bare ingest listener on its own thread, for exercising the
    synchronous loadgen from test code."""

    def __enter__(self):
        self.loop = asyncio.new_event_loop()
        ready = threading.Event()
        holder = {}

        def run():
            asyncio.set_event_loop(self.loop)

            async def boot():
                srv = IngestServer(
                    LockFreeQueue(), Schema.parse_spec("seq:int"), Counters()
                )
                await srv.start()
                holder["srv"] = srv
                ready.set()

            self.loop.run_until_complete(boot())
            self.loop.run_forever()

        self.thread = threading.Thread(target=run, daemon=True)
        self.thread.start()
        ready.wait(5)
        self.srv = holder["srv"]
        self.port = self.srv.bound_port
        return self

    def __exit__(self, *exc):
        async def shutdown():
            await self.srv.stop()
            others = [
                t for t in asyncio.all_tasks() if t is not asyncio.current_task()
            ]
            for t in others:
                t.cancel()
            await asyncio.gather(*others, return_exceptions=True)

        asyncio.run_coroutine_threadsafe(shutdown(), self.loop).result(5)
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.thread.join(5)
        self.loop.close()


class TestArgHandling:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "serve" in capsys.readouterr().out

    def test_no_command_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_command_is_usage_error(self):
        assert main(["defrag"]) == 1

    def test_missing_scenario_file(self):
        assert main(["simulate", "--config", "/nonexistent/sim.yaml"]) == 1

    def test_bad_scenario_root(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("- a\n- b\n")
        assert main(["simulate", "--config", str(bad)]) == 1

    def test_bad_loadgen_target(self):
        assert main(["loadgen", "--target", "nowhere", "--rows", "5"]) == 1


class TestSimulateAndGantt:
    SCENARIO = {
        "t_d_ms": 100,
        "t_s_ms": 50,
        "commit_fixed_ms": 150,
        "arrival": [[0, 1000]],
        "duration_ms": 2000,
        "tick_ms": 1,
    }

    def test_round_trip_through_files(self, tmp_path, capsys):
        scenario = tmp_path / "scenario.yaml"
        scenario.write_text(yaml.safe_dump(self.SCENARIO))
        trace_path = tmp_path / "trace.json"

        assert main(["simulate", "--config", str(scenario),
                     "--out", str(trace_path)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["final_slots"] == 3
        assert summary["arrived_rows"] > 0
        assert summary["committed_rows"] > 0
        assert summary["digest"]

        raw = json.loads(trace_path.read_text())
        assert raw["arrived_rows"] == summary["arrived_rows"]

        assert main(["gantt", "--trace", str(trace_path)]) == 0
        chart = capsys.readouterr().out
        assert "slot" in chart
        assert "S" in chart

        assert main(["gantt", "--trace", str(trace_path),
                     "--bucket-ms", "200"]) == 0

    def test_simulate_without_out_file(self, tmp_path, capsys):
        scenario = tmp_path / "scenario.yaml"
        scenario.write_text(yaml.safe_dump(dict(self.SCENARIO, duration_ms=500)))
        assert main(["simulate", "--config", str(scenario)]) == 0
        assert "digest" in json.loads(capsys.readouterr().out)


class TestServe:
    def test_unreachable_segment_is_dependency_error(self, tmp_path, capsys):
        cfg = write_gateway_config(tmp_path / "gw.yaml", free_port())
        code = main(["serve", "--config", cfg,
                     "--segment-retries", "1", "--segment-retry-delay", "0.01"])
        assert code == 3
        assert "unreachable" in capsys.readouterr().err

    def test_bind_conflict_is_bind_error(self, tmp_path, capsys):
        # one live socket plays both the reachable segment and the
        # already-taken listen address
        squatter = socket.socket()
        squatter.bind(("127.0.0.1", 0))
        squatter.listen(8)
        port = squatter.getsockname()[1]
        try:
            cfg = write_gateway_config(
                tmp_path / "gw.yaml", port, listen=f"127.0.0.1:{port}"
            )
            code = main(["serve", "--config", cfg, "--segment-retries", "1"])
            assert code == 2
            assert "cannot bind" in capsys.readouterr().err
        finally:
            squatter.close()

    def test_config_env_fallback(self, tmp_path, monkeypatch, capsys):
        cfg = write_gateway_config(tmp_path / "gw.yaml", free_port())
        monkeypatch.setenv("GATEFLOW_CONFIG", cfg)
        code = main(["serve", "--segment-retries", "1",
                     "--segment-retry-delay", "0.01"])
        assert code == 3  # it read the env config and probed its segment
        assert "s0" in capsys.readouterr().err

    def test_no_config_anywhere(self, monkeypatch, capsys):
        monkeypatch.delenv("GATEFLOW_CONFIG", raising=False)
        assert main(["serve"]) == 1
        assert "GATEFLOW_CONFIG" in capsys.readouterr().err

    def test_invalid_config_rejected(self, tmp_path, monkeypatch):
        bad = tmp_path / "bad.yaml"
        bad.write_text(
            yaml.safe_dump(
                {
                    "segments": [
                        {"id": "a", "port": 9001},
                        {"id": "b", "port": 9001},
                    ]
                }
            )
        )
        monkeypatch.delenv("GATEFLOW_CONFIG", raising=False)
        assert main(["segmentd", "--config", str(bad)]) == 1
        empty = tmp_path / "empty.yaml"
        empty.write_text(yaml.safe_dump({"segments": []}))
        assert main(["serve", "--config", str(empty)]) == 1


class TestLoadgen:
    def test_nothing_listening_is_dependency_error(self, capsys):
        code = main(["loadgen", "--target", f"127.0.0.1:{free_port()}",
                     "--rows", "10"])
        assert code == 3
        report = json.loads(capsys.readouterr().out)
        assert report["accepted"] == 0
        assert report["transport_errors"] > 0

    def test_posts_synthetic_rows(self, capsys):
        with BackgroundIngest() as bg:
            code = main(["loadgen", "--target", f"127.0.0.1:{bg.port}",
                         "--rows", "50", "--batch", "20"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["posted"] == 50
        assert report["accepted"] == 50
        assert report["unresolved"] == 0

    def test_replays_a_file(self, tmp_path, capsys):
        rows = tmp_path / "rows.csv"
        rows.write_text("".join(f"dev{i},{i},{i}\n" for i in range(25)))
        with BackgroundIngest() as bg:
            code = main(["loadgen", "--target", f"127.0.0.1:{bg.port}",
                         "--file", str(rows)])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["accepted"] == 25


class TestBench:
    def test_single_node_scenario(self, tmp_path, capsys):
        scenario = tmp_path / "bench.yaml"
        scenario.write_text(
            yaml.safe_dump({"nodes": [1], "rows_per_node": 300})
        )
        out = tmp_path / "report.json"
        code = main(["bench", "--scenario", str(scenario), "--out", str(out)])
        assert code == 0
        shown = json.loads(capsys.readouterr().out)
        assert shown["incomplete"] is False
        assert "1" in shown["V"]
        report = json.loads(out.read_text())
        assert report["runs"][0]["nodes"] == 1
        assert report["runs"][0]["N"] == 300
        assert report["runs"][0]["config_hash"]
