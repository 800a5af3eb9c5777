"""Command-line entry point.

Subcommands:
  serve      run a real edge server (TCP control + UDP multicast)
  client     run a real client against a server, scripted by a scenario
  sim run    execute one scenario on the deterministic simulator
  sim sweep  incremental-client experiment with paired coded/uncoded runs
  report     summarize a saved JSON-lines trace

Exit codes: 0 success, 2 scenario/input validation failure, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from collections import Counter
from pathlib import Path

from .bench import (emit_report, run_paired, run_scenario, make_sync_scenario,
                    compare_segment_sizing)
from .catalog import SegmentStore, SyntheticOrigin, synthetic_body
from .client import SegmentCache, EdgeClient
from .scenario import Scenario, ScenarioError, load_scenario
from .server import EdgeServer
from . import sockets

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _parse_client_range(text: str) -> list[int]:
    """Accepts '1..5', '3', or '1,2,4'."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(part) for part in text.split(",") if part]
    if not values or any(v < 1 for v in values):
        raise ValueError(f"bad client range: {text!r}")
    return values


def _print_result(result) -> None:
    m = result.metrics
    mode = "coded" if result.coding_enabled else "uncoded"
    gain = "" if m.coding_gain is None else f"  gain={m.coding_gain:.3f}"
    print(f"{result.scenario_name} [{mode}] segment_tx={m.bytes_segment_tx}B "
          f"control_tx={m.bytes_control_tx}B ctl_frac={m.control_fraction:.4f}"
          f"{gain}  mean_T_e={m.mean_t_e * 1000:.2f}ms "
          f"virtual={m.virtual_duration:.3f}s")
    for line in result.fidelity_failures:
        print(f"  FIDELITY: {line}", file=sys.stderr)


def cmd_sim_run(args) -> int:
    scenario = load_scenario(args.scenario)
    trace_path = Path(args.trace) if args.trace else None
    if args.coding == "both":
        coded, uncoded = run_paired(scenario)
        results = [coded, uncoded]
    else:
        override = {"on": True, "off": False, "scenario": None}[args.coding]
        results = [run_scenario(scenario, coding=override)]
    for result in results:
        _print_result(result)
    if any(r.fidelity_failures or r.client_errors for r in results):
        return EXIT_RUNTIME
    if args.out:
        key = len(scenario.clients)
        if len(results) == 2:
            emit_report({key: (results[0], results[1])}, args.out,
                        stem=scenario.name)
        else:
            emit_report({key: (results[0], results[0])}, args.out,
                        stem=scenario.name)
    if trace_path is not None:
        results[0].trace.dump_jsonl(trace_path)
        print(f"trace written to {trace_path}")
    return EXIT_OK


def cmd_sim_sweep(args) -> int:
    ks = _parse_client_range(args.clients)
    results = {}
    for k in ks:
        scenario = make_sync_scenario(k, segments=args.segments,
                                      size=args.size, seed=args.seed)
        coded, uncoded = run_paired(scenario)
        results[k] = (coded, uncoded)
        _print_result(coded)
        _print_result(uncoded)
    if any(c.fidelity_failures or u.fidelity_failures
           for c, u in results.values()):
        return EXIT_RUNTIME
    if args.sizing:
        fixed, variable = compare_segment_sizing(max(ks), seed=args.seed)
        print(f"sizing: fixed mean throughput "
              f"{fixed.metrics.mean_throughput_bps:.0f} bps, variable "
              f"{variable.metrics.mean_throughput_bps:.0f} bps")
    if args.out:
        paths = emit_report(results, args.out)
        for path in paths:
            print(f"wrote {path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    scenario = load_scenario(args.scenario)
    catalog = scenario.catalog()
    store = SegmentStore(catalog, SyntheticOrigin())
    transport = sockets.ServerSocketTransport(
        host=args.host, port=args.port, group=args.group,
        multicast_port=args.multicast_port,
        rate_bps=scenario.channel.multicast_rate_bps)
    server = EdgeServer(scenario.server, catalog, store, transport)
    server.start()
    transport.start()
    print(f"serving on {args.host}:{args.port}, multicast "
          f"{args.group}:{args.multicast_port} (Ctrl-C to stop)")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        transport.stop()
        print(f"\nsegment_tx={server.bytes_segment_tx}B "
              f"control_tx={server.bytes_control_tx}B "
              f"sessions={len(server.session_reports)}")
    return EXIT_OK


def cmd_client(args) -> int:
    scenario = load_scenario(args.scenario)
    catalog = scenario.catalog()
    script = next((c for c in scenario.clients if c.client_id == args.id), None)
    if script is None:
        print(f"client {args.id} is not in the scenario", file=sys.stderr)
        return EXIT_VALIDATION

    cache = SegmentCache()
    for fid, idx in script.prefetch:
        ref = catalog.ref(fid, idx)
        cache.put(ref, synthetic_body(fid, idx, ref.size_bytes))

    transport = sockets.ClientSocketTransport(
        args.id, server_host=args.server, server_port=args.port,
        group=args.group, multicast_port=args.multicast_port)
    cl = EdgeClient(args.id, transport, cache)
    cl.start()

    done = threading.Event()
    failures: list[str] = []
    indices = list(script.segment_indices(catalog))

    def step(pos: int):
        if pos >= len(indices):
            done.set()
            return
        ref = catalog.ref(script.file_id, indices[pos])

        def delivered(body: bytes, ref=ref, pos=pos):
            ok = body == synthetic_body(ref.file_id, ref.segment_index,
                                        ref.size_bytes)
            if not ok:
                failures.append(f"{ref!r}: body mismatch")
            print(f"got {ref!r} ({len(body)} B){'' if ok else '  MISMATCH'}")
            step(pos + 1)

        def failed(exc: Exception, ref=ref, pos=pos):
            failures.append(f"{ref!r}: {exc}")
            print(f"FAILED {ref!r}: {exc}", file=sys.stderr)
            step(pos + 1)

        cl.request_segment(ref, delivered, failed)

    step(0)
    if not done.wait(timeout=args.timeout):
        print("timed out waiting for deliveries", file=sys.stderr)
        cl.stop()
        return EXIT_RUNTIME
    cl.stop()
    for stat in cl.stats:
        print(f"  {stat.ref!r}: T_e={stat.t_e * 1000:.2f} ms, "
              f"{stat.throughput_bps / 1e6:.2f} Mbps")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_report(args) -> int:
    kinds: Counter = Counter()
    mc_bytes = 0
    ctl_bytes = 0
    t_max = 0.0
    with open(args.trace) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                print(f"{args.trace}:{line_no}: {e}", file=sys.stderr)
                return EXIT_VALIDATION
            kind = rec.get("kind", "?")
            kinds[kind] += 1
            t_max = max(t_max, rec.get("t", 0.0))
            if kind == "mc_send":
                mc_bytes += rec.get("size", 0)
            elif kind == "ctl_send":
                ctl_bytes += rec.get("size", 0)
    print(f"{args.trace}: {sum(kinds.values())} records, "
          f"virtual span {t_max:.3f}s")
    for kind in sorted(kinds):
        print(f"  {kind:12s} {kinds[kind]}")
    print(f"  multicast bytes on air: {mc_bytes}")
    print(f"  control bytes on wire:  {ctl_bytes}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xcast",
        description="index-coded multicast segment delivery")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run a real edge server")
    serve.add_argument("scenario", help="scenario TOML supplying the catalog")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=sockets.DEFAULT_CONTROL_PORT)
    serve.add_argument("--group", default=sockets.DEFAULT_MULTICAST_GROUP)
    serve.add_argument("--multicast-port", type=int,
                       default=sockets.DEFAULT_MULTICAST_PORT)
    serve.set_defaults(fn=cmd_serve)

    client = sub.add_parser("client", help="run a real client")
    client.add_argument("scenario")
    client.add_argument("--id", type=int, required=True,
                        help="client id from the scenario")
    client.add_argument("--server", default="127.0.0.1")
    client.add_argument("--port", type=int, default=sockets.DEFAULT_CONTROL_PORT)
    client.add_argument("--group", default=sockets.DEFAULT_MULTICAST_GROUP)
    client.add_argument("--multicast-port", type=int,
                        default=sockets.DEFAULT_MULTICAST_PORT)
    client.add_argument("--timeout", type=float, default=120.0)
    client.set_defaults(fn=cmd_client)

    sim = sub.add_parser("sim", help="deterministic simulation")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)

    run = sim_sub.add_parser("run", help="execute one scenario")
    run.add_argument("scenario")
    run.add_argument("--coding", choices=["on", "off", "both", "scenario"],
                     default="scenario",
                     help="override the scenario's coding toggle")
    run.add_argument("--out", help="directory for CSV/JSON output")
    run.add_argument("--trace", help="write the event trace as JSON lines")
    run.set_defaults(fn=cmd_sim_run)

    sweep = sim_sub.add_parser("sweep", help="incremental-client experiment")
    sweep.add_argument("--clients", default="1..5",
                       help="range like 1..5 or list like 2,3,5")
    sweep.add_argument("--segments", type=int, default=23)
    sweep.add_argument("--size", type=int, default=250_000)
    sweep.add_argument("--seed", type=int, default=7)
    sweep.add_argument("--sizing", action="store_true",
                       help="also run the fixed-vs-variable size comparison")
    sweep.add_argument("--out", help="directory for CSV/JSON output")
    sweep.set_defaults(fn=cmd_sim_sweep)

    report = sub.add_parser("report", help="summarize a saved trace")
    report.add_argument("trace")
    report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
