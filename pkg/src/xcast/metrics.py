"""Run metrics: coding gain, control-byte fraction, perceived throughput.

Definitions:
  coding gain       = segment bytes sent with coding off / with coding on,
                      measured over two runs of the same scenario
  control fraction  = server-sent control bytes / server-sent segment bytes
  perceived throughput (per request) = segment size / T_e, where T_e is the
                      elapsed time from the client's request to its
                      successful decode
"""

from __future__ import annotations

from dataclasses import dataclass, field


def mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def control_fraction(bytes_control: int, bytes_segment: int) -> float:
    return bytes_control / bytes_segment if bytes_segment else 0.0


def coding_gain(uncoded_segment_bytes: int, coded_segment_bytes: int) -> float:
    if coded_segment_bytes == 0:
        raise ValueError("no segment bytes in the coded run")
    return uncoded_segment_bytes / coded_segment_bytes


@dataclass
class MetricsReport:
    bytes_segment_tx: int = 0
    bytes_control_tx: int = 0
    bytes_control_rx: int = 0
    coding_gain: float | None = None
    control_fraction: float = 0.0
    # client_id -> mean over that client's requests, network requests only
    per_client_throughput_bps: dict[int, float] = field(default_factory=dict)
    # client_id -> per-request elapsed times in request order
    t_e_samples: dict[int, list[float]] = field(default_factory=dict)
    sessions: int = 0
    retransmission_rounds: int = 0
    retransmission_emissions: int = 0
    virtual_duration: float = 0.0

    @property
    def mean_throughput_bps(self) -> float:
        return mean(self.per_client_throughput_bps.values())

    @property
    def mean_t_e(self) -> float:
        return mean(t for ts in self.t_e_samples.values() for t in ts)

    def as_dict(self) -> dict:
        return {
            "bytes_segment_tx": self.bytes_segment_tx,
            "bytes_control_tx": self.bytes_control_tx,
            "bytes_control_rx": self.bytes_control_rx,
            "coding_gain": self.coding_gain,
            "control_fraction": self.control_fraction,
            "per_client_throughput_bps": {
                str(c): v for c, v in sorted(self.per_client_throughput_bps.items())},
            "t_e_samples": {
                str(c): v for c, v in sorted(self.t_e_samples.items())},
            "sessions": self.sessions,
            "retransmission_rounds": self.retransmission_rounds,
            "retransmission_emissions": self.retransmission_emissions,
            "virtual_duration": self.virtual_duration,
            "mean_throughput_bps": self.mean_throughput_bps,
            "mean_t_e": self.mean_t_e,
        }
