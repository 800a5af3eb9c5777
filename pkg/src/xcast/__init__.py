"""Index-coded multicast segment delivery: server, client, simulator,
and benchmark harness."""

from .coding import (CodedPayload, CodingSet, ClientState, SegmentRef,
                     extend_codable, is_codable, select_coding_partner,
                     xor_decode, xor_encode)
from .retransmit import (CodedRetransmission, RetransmissionError,
                         RetransmissionGraph, build_retransmission_graph,
                         plan_retransmissions)
from .scheduler import (EntryState, PendingRequest, Scheduler, SchedulerConfig,
                        SchedulerEffect, TransmissionBuffer)
from .catalog import (Catalog, CatalogError, HttpOrigin, OriginError,
                      SegmentStore, SyntheticOrigin, synthetic_body)
from .netsim import ChannelConfig, EventLoop, LivelockError, LossSpec, SimWorld, Trace
from .client import LocalProxy, RequestStat, SegmentCache, EdgeClient
from .server import EdgeServer, ServerConfig, SessionReport
from .metrics import MetricsReport, coding_gain, control_fraction
from .scenario import ClientScript, Scenario, ScenarioError, load_scenario
from .bench import (RunResult, compare_segment_sizing, emit_report,
                    make_sync_scenario, run_paired, run_scenario, sweep_clients)

__version__ = "0.1.0"

__all__ = [
    "CodedPayload", "CodingSet", "ClientState", "SegmentRef",
    "extend_codable", "is_codable", "select_coding_partner",
    "xor_decode", "xor_encode",
    "CodedRetransmission", "RetransmissionError", "RetransmissionGraph",
    "build_retransmission_graph", "plan_retransmissions",
    "EntryState", "PendingRequest", "Scheduler", "SchedulerConfig",
    "SchedulerEffect", "TransmissionBuffer",
    "Catalog", "CatalogError", "HttpOrigin", "OriginError",
    "SegmentStore", "SyntheticOrigin", "synthetic_body",
    "ChannelConfig", "EventLoop", "LivelockError", "LossSpec",
    "SimWorld", "Trace",
    "LocalProxy", "RequestStat", "SegmentCache", "EdgeClient",
    "EdgeServer", "ServerConfig", "SessionReport",
    "MetricsReport", "coding_gain", "control_fraction",
    "ClientScript", "Scenario", "ScenarioError", "load_scenario",
    "RunResult", "compare_segment_sizing", "emit_report",
    "make_sync_scenario", "run_paired", "run_scenario", "sweep_clients",
    "__version__",
]
