"""Benchmark harness: runs scenarios over the simulator and computes the
coding-gain, control-overhead, and perceived-throughput metrics.

Coding gain is measured the way it is defined: the same scenario runs
twice, once with coding enabled and once without, and the gain is the
ratio of segment bytes the server transmitted. Every delivered body is
checked byte-for-byte against the origin.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .catalog import SegmentStore, SyntheticOrigin, synthetic_body
from .client import SegmentCache, EdgeClient
from .metrics import MetricsReport, coding_gain, control_fraction, mean
from .netsim import SimWorld, Trace
from .scenario import Scenario, ClientScript, sampled_sizes
from .server import EdgeServer, SessionReport


@dataclass
class RunResult:
    scenario_name: str
    coding_enabled: bool
    metrics: MetricsReport
    trace: Trace
    session_reports: list[SessionReport]
    client_stats: dict[int, list]
    fidelity_failures: list[str]
    client_errors: dict[int, list[str]]


def run_scenario(scenario: Scenario, coding: bool | None = None,
                 trace: Trace | None = None) -> RunResult:
    """Execute one scenario deterministically and collect its metrics."""
    scenario.validate()
    server_cfg = scenario.server
    if coding is not None:
        server_cfg = replace(server_cfg, coding_enabled=coding)

    world = SimWorld(scenario.channel, trace=trace)
    catalog = scenario.catalog()
    store = SegmentStore(catalog, SyntheticOrigin())
    server = EdgeServer(server_cfg, catalog, store, world.server_transport)
    server.start()

    fidelity_failures: list[str] = []
    clients: dict[int, EdgeClient] = {}

    for script in scenario.clients:
        cache = SegmentCache()
        for fid, idx in script.prefetch:
            ref = catalog.ref(fid, idx)
            cache.put(ref, synthetic_body(fid, idx, ref.size_bytes))
        cl = EdgeClient(script.client_id, world.client_transport(script.client_id),
                          cache)
        clients[script.client_id] = cl
        world.loop.call_at(script.start, _start_stream, cl, script, catalog,
                           fidelity_failures)

    world.run_until_idle(scenario.event_budget)

    report = MetricsReport(
        bytes_segment_tx=server.bytes_segment_tx,
        bytes_control_tx=server.bytes_control_tx,
        bytes_control_rx=server.bytes_control_rx,
        control_fraction=control_fraction(server.bytes_control_tx,
                                          server.bytes_segment_tx),
        per_client_throughput_bps={
            cid: mean(cl.throughput_samples()) for cid, cl in sorted(clients.items())},
        t_e_samples={cid: [s.t_e for s in cl.stats]
                     for cid, cl in sorted(clients.items())},
        sessions=len(server.session_reports),
        retransmission_rounds=sum(r.rounds for r in server.session_reports),
        retransmission_emissions=sum(r.emissions for r in server.session_reports),
        virtual_duration=world.loop.now)

    return RunResult(
        scenario_name=scenario.name,
        coding_enabled=server_cfg.coding_enabled,
        metrics=report,
        trace=world.trace,
        session_reports=server.session_reports,
        client_stats={cid: cl.stats for cid, cl in sorted(clients.items())},
        fidelity_failures=fidelity_failures,
        client_errors={cid: cl.errors for cid, cl in sorted(clients.items())
                       if cl.errors})


def _start_stream(cl: EdgeClient, script: ClientScript, catalog,
                  fidelity_failures: list[str]):
    cl.start()
    indices = list(script.segment_indices(catalog))

    def step(pos: int):
        if pos >= len(indices):
            return
        idx = indices[pos]
        ref = catalog.ref(script.file_id, idx)

        def delivered(body: bytes, ref=ref, pos=pos):
            if body != synthetic_body(ref.file_id, ref.segment_index,
                                      ref.size_bytes):
                fidelity_failures.append(
                    f"client {cl.client_id}: {ref!r} differs from origin")
            step(pos + 1)

        def failed(exc: Exception, ref=ref, pos=pos):
            fidelity_failures.append(
                f"client {cl.client_id}: {ref!r} not delivered: {exc}")
            step(pos + 1)

        cl.request_segment(ref, delivered, failed)

    step(0)


def run_paired(scenario: Scenario) -> tuple[RunResult, RunResult]:
    """Run with coding on and off; attach the measured gain to the coded
    result. Returns (coded, uncoded)."""
    coded = run_scenario(scenario, coding=True)
    uncoded = run_scenario(scenario, coding=False)
    coded.metrics.coding_gain = coding_gain(uncoded.metrics.bytes_segment_tx,
                                            coded.metrics.bytes_segment_tx)
    uncoded.metrics.coding_gain = 1.0
    return coded, uncoded


# ----------------------------------------------------------------------
# scenario builders for the standard experiments
# ----------------------------------------------------------------------

def make_sync_scenario(n_clients: int, segments: int = 23,
                       size: int = 250_000, seed: int = 7,
                       control_latency: float = 0.0002,
                       rate_bps: float = 24e6,
                       stagger: float = 0.0) -> Scenario:
    """Fully-codable clients, one stream each, lossless channel.

    Every client pre-caches every other client's whole file, so any two
    pending requests are codable. Client k starts at (k-1)*stagger;
    stagger=0 gives simultaneous starts.
    """
    from .netsim import ChannelConfig
    from .server import ServerConfig

    files = {fid: (size,) * segments for fid in range(1, n_clients + 1)}
    clients = []
    for cid in range(1, n_clients + 1):
        prefetch = tuple((fid, idx)
                         for fid in sorted(files) if fid != cid
                         for idx in range(1, segments + 1))
        clients.append(ClientScript(client_id=cid, file_id=cid,
                                    start=(cid - 1) * stagger,
                                    prefetch=prefetch))
    pairs = tuple((a, b) for a in range(1, n_clients + 1)
                  for b in range(a + 1, n_clients + 1))
    scenario = Scenario(
        files=files, clients=clients,
        channel=ChannelConfig(multicast_rate_bps=rate_bps,
                              control_latency=control_latency, rng_seed=seed),
        server=ServerConfig(), name=f"sync-{n_clients}", seed=seed,
        codable_pairs=pairs)
    scenario.validate()
    return scenario


def sweep_clients(ks, segments: int = 23, size: int = 250_000,
                  seed: int = 7) -> dict[int, tuple[RunResult, RunResult]]:
    """The incremental-client experiment: paired runs for each K."""
    return {k: run_paired(make_sync_scenario(k, segments, size, seed))
            for k in ks}


def make_sizing_scenario(n_clients: int, segments: int, mean_size: int,
                         cv: float, seed: int) -> Scenario:
    """Like the synchronized scenario but with per-segment sizes drawn
    from a lognormal distribution (cv=0 collapses to fixed sizes)."""
    base = make_sync_scenario(n_clients, segments, mean_size, seed)
    files = {fid: sampled_sizes(fid, segments, mean_size, cv, seed)
             for fid in base.files}
    return replace(base, files=files,
                   name=f"sizing-{n_clients}-cv{cv:g}")


def compare_segment_sizing(n_clients: int, segments: int = 12,
                           mean_size: int = 250_000, cv: float = 0.3,
                           seed: int = 7) -> tuple[RunResult, RunResult]:
    """Fixed versus variable segment sizes at the same mean; returns
    (fixed, variable), both with coding enabled."""
    fixed = run_scenario(make_sizing_scenario(n_clients, segments, mean_size,
                                              0.0, seed), coding=True)
    variable = run_scenario(make_sizing_scenario(n_clients, segments, mean_size,
                                                 cv, seed), coding=True)
    return fixed, variable


# ----------------------------------------------------------------------
# report output
# ----------------------------------------------------------------------

CSV_COLUMNS = ["scenario", "clients", "coding", "bytes_segment_tx",
               "bytes_control_tx", "control_fraction", "coding_gain",
               "mean_throughput_bps", "mean_t_e_s", "sessions",
               "retransmission_rounds", "virtual_duration_s"]


def _csv_row(k: int, result: RunResult) -> list:
    m = result.metrics
    return [result.scenario_name, k,
            "on" if result.coding_enabled else "off",
            m.bytes_segment_tx, m.bytes_control_tx,
            f"{m.control_fraction:.6f}",
            "" if m.coding_gain is None else f"{m.coding_gain:.4f}",
            f"{m.mean_throughput_bps:.1f}", f"{m.mean_t_e:.6f}",
            m.sessions, m.retransmission_rounds,
            f"{m.virtual_duration:.6f}"]


def emit_report(results: dict[int, tuple[RunResult, RunResult]],
                out_dir, stem: str = "sweep") -> list[Path]:
    """Write one CSV row per (K, run) plus a JSON summary.

    Output is deterministic: stable column order, sorted keys, and no
    wall-clock timestamps, so identical runs produce identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for k in sorted(results):
            coded, uncoded = results[k]
            writer.writerow(_csv_row(k, coded))
            writer.writerow(_csv_row(k, uncoded))

    summary = {str(k): {"coded": results[k][0].metrics.as_dict(),
                        "uncoded": results[k][1].metrics.as_dict()}
               for k in sorted(results)}
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [csv_path, json_path]
