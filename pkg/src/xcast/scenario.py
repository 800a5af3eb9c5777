"""Scenario files: the declarative input of the benchmark harness.

A scenario is a TOML document describing the catalog, the clients and
their request scripts, cache pre-seeding (which creates the coding
opportunities), the channel, and the delivery toggles. Validation errors
carry the offending key path.

Schema (all sections optional unless noted):

    name = "sync-3"
    seed = 7

    [channel]
    rate_bps = 24e6
    control_latency = 0.0002
    [channel.loss]              # default loss model for every client
    model = "iid"               # none | iid | burst
    p = 0.1                     # iid
    p_enter = 0.05              # burst: good -> bad
    p_stay = 0.7                # burst: bad -> bad
    [channel.loss_overrides.3]  # per-client override, keyed by client id
    model = "none"

    [delivery]
    coding = true
    proactive = true
    t_r = 0.05
    payload_size = 1400
    size_affinity = 0.8
    max_queue = 64
    ret_req_timeout = 0.2
    max_rounds = 10

    [[files]]                   # required, at least one
    id = 1
    segments = 23
    size = 250000               # fixed size, or:
    # sizes = [250000, 180000]  # explicit per-segment list, or:
    # size_mean = 250000        # lognormal sample (deterministic per seed)
    # size_cv = 0.3

    [[clients]]                 # required, at least one
    id = 1
    file = 1
    start = 0.0
    segments = 0                # 0 = stream the whole file
    prefetch = "cross"          # cross | none | [[file, index], ...]

    [expect]
    codable = [[1, 2]]          # declared codable client pairs, validated

    [run]
    event_budget = 2000000
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .catalog import Catalog
from .netsim import ChannelConfig, LossSpec
from .server import ServerConfig


class ScenarioError(Exception):
    """Scenario fails validation; the message names the key path."""


@dataclass(frozen=True)
class ClientScript:
    client_id: int
    file_id: int
    start: float = 0.0
    segments: int = 0  # 0 means the whole file
    prefetch: tuple[tuple[int, int], ...] = ()

    def segment_indices(self, catalog: Catalog) -> range:
        last = self.segments or catalog.segment_count(self.file_id)
        return range(1, last + 1)


@dataclass
class Scenario:
    files: dict[int, tuple[int, ...]]
    clients: list[ClientScript]
    channel: ChannelConfig
    server: ServerConfig = field(default_factory=ServerConfig)
    name: str = "scenario"
    seed: int = 1
    codable_pairs: tuple[tuple[int, int], ...] = ()
    event_budget: int = 2_000_000

    def catalog(self) -> Catalog:
        return Catalog(self.files)

    def validate(self):
        if not self.files:
            raise ScenarioError("files: at least one file required")
        if not self.clients:
            raise ScenarioError("clients: at least one client required")
        catalog = self.catalog()
        seen_ids = set()
        for i, script in enumerate(self.clients):
            where = f"clients[{i}]"
            if script.client_id in seen_ids:
                raise ScenarioError(f"{where}.id: duplicate client id "
                                    f"{script.client_id}")
            seen_ids.add(script.client_id)
            if script.file_id not in self.files:
                raise ScenarioError(f"{where}.file: unknown file {script.file_id}")
            if script.start < 0:
                raise ScenarioError(f"{where}.start: negative start time")
            if not 0 <= script.segments <= catalog.segment_count(script.file_id):
                raise ScenarioError(
                    f"{where}.segments: {script.segments} outside the file's "
                    f"{catalog.segment_count(script.file_id)} segments")
            for fid, idx in script.prefetch:
                if not catalog.has(fid, idx):
                    raise ScenarioError(
                        f"{where}.prefetch: no such segment f{fid}^({idx})")
        self._validate_codability(catalog)

    def _validate_codability(self, catalog: Catalog):
        """Declared codable pairs must hold for every scripted request:
        everything one client will request is pre-seeded at the other."""
        scripts = {s.client_id: s for s in self.clients}
        for a_id, b_id in self.codable_pairs:
            for side in (a_id, b_id):
                if side not in scripts:
                    raise ScenarioError(
                        f"expect.codable: unknown client {side}")
            a, b = scripts[a_id], scripts[b_id]
            for x, y in ((a, b), (b, a)):
                held = set(y.prefetch)
                for idx in x.segment_indices(catalog):
                    if (x.file_id, idx) not in held:
                        raise ScenarioError(
                            f"expect.codable: pair ({a_id}, {b_id}) fails: "
                            f"f{x.file_id}^({idx}) requested by client "
                            f"{x.client_id} is not pre-seeded at client "
                            f"{y.client_id}")


def sampled_sizes(file_id: int, count: int, mean_size: float, cv: float,
                  seed: int) -> tuple[int, ...]:
    """Deterministic lognormal per-segment sizes with the given mean and
    coefficient of variation."""
    if cv == 0:
        return (max(1, round(mean_size)),) * count
    sigma2 = math.log(1 + cv * cv)
    mu = math.log(mean_size) - sigma2 / 2
    rng = random.Random(f"{seed}:sizes:{file_id}")
    return tuple(max(1, round(rng.lognormvariate(mu, math.sqrt(sigma2))))
                 for _ in range(count))


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"{where}.{key}: required key missing")
    return table[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_loss(table: dict, where: str) -> LossSpec:
    model = table.get("model", "none")
    try:
        return LossSpec(model=model,
                        p=_number(table.get("p", 0.0), f"{where}.p"),
                        p_enter=_number(table.get("p_enter", 0.0),
                                        f"{where}.p_enter"),
                        p_stay=_number(table.get("p_stay", 0.0),
                                       f"{where}.p_stay"))
    except ValueError as e:
        raise ScenarioError(f"{where}: {e}") from e


def _parse_file_sizes(table: dict, where: str, seed: int) -> tuple[int, tuple[int, ...]]:
    file_id = int(_require(table, "id", where))
    if "sizes" in table:
        sizes = tuple(int(s) for s in table["sizes"])
    else:
        count = int(_require(table, "segments", where))
        if count < 1:
            raise ScenarioError(f"{where}.segments: must be at least 1")
        if "size" in table:
            sizes = (int(table["size"]),) * count
        elif "size_mean" in table:
            sizes = sampled_sizes(file_id, count,
                                  _number(table["size_mean"], f"{where}.size_mean"),
                                  _number(table.get("size_cv", 0.0),
                                          f"{where}.size_cv"),
                                  seed)
        else:
            raise ScenarioError(f"{where}: one of size / sizes / size_mean required")
    if any(s <= 0 for s in sizes):
        raise ScenarioError(f"{where}: segment sizes must be positive")
    return file_id, sizes


def parse_scenario(doc: dict) -> Scenario:
    seed = int(doc.get("seed", 1))

    files: dict[int, tuple[int, ...]] = {}
    for i, table in enumerate(doc.get("files", [])):
        file_id, sizes = _parse_file_sizes(table, f"files[{i}]", seed)
        if file_id in files:
            raise ScenarioError(f"files[{i}].id: duplicate file id {file_id}")
        files[file_id] = sizes

    clients: list[ClientScript] = []
    raw_clients = doc.get("clients", [])
    for i, table in enumerate(raw_clients):
        where = f"clients[{i}]"
        prefetch = table.get("prefetch", "none")
        if prefetch == "none":
            entries: tuple[tuple[int, int], ...] = ()
        elif prefetch == "cross":
            entries = _cross_prefetch(int(_require(table, "id", where)),
                                      raw_clients, files)
        elif isinstance(prefetch, list):
            entries = tuple((int(f), int(s)) for f, s in prefetch)
        else:
            raise ScenarioError(f"{where}.prefetch: expected 'cross', 'none', "
                                f"or a list of [file, index] pairs")
        clients.append(ClientScript(
            client_id=int(_require(table, "id", where)),
            file_id=int(_require(table, "file", where)),
            start=_number(table.get("start", 0.0), f"{where}.start"),
            segments=int(table.get("segments", 0)),
            prefetch=entries))

    ch = doc.get("channel", {})
    overrides = {}
    for cid, sub in ch.get("loss_overrides", {}).items():
        overrides[int(cid)] = _parse_loss(sub, f"channel.loss_overrides.{cid}")
    try:
        channel = ChannelConfig(
            multicast_rate_bps=_number(ch.get("rate_bps", 24e6),
                                       "channel.rate_bps"),
            control_latency=_number(ch.get("control_latency", 0.0002),
                                    "channel.control_latency"),
            rng_seed=seed,
            default_loss=_parse_loss(ch.get("loss", {}), "channel.loss"),
            loss=overrides)
    except ValueError as e:
        raise ScenarioError(f"channel: {e}") from e

    d = doc.get("delivery", {})
    try:
        server = ServerConfig(
            payload_size=int(d.get("payload_size", 1400)),
            t_r=_number(d.get("t_r", 0.05), "delivery.t_r"),
            proactive_enabled=bool(d.get("proactive", True)),
            coding_enabled=bool(d.get("coding", True)),
            size_affinity=_number(d.get("size_affinity", 0.8),
                                  "delivery.size_affinity"),
            max_queue=int(d.get("max_queue", 64)),
            ret_req_timeout=_number(d.get("ret_req_timeout", 0.2),
                                    "delivery.ret_req_timeout"),
            max_retransmission_rounds=int(d.get("max_rounds", 10)))
        server.scheduler_config()
    except ValueError as e:
        raise ScenarioError(f"delivery: {e}") from e

    codable = tuple((int(a), int(b))
                    for a, b in doc.get("expect", {}).get("codable", []))

    scenario = Scenario(
        files=files, clients=clients, channel=channel, server=server,
        name=str(doc.get("name", "scenario")), seed=seed,
        codable_pairs=codable,
        event_budget=int(doc.get("run", {}).get("event_budget", 2_000_000)))
    scenario.validate()
    return scenario


def _cross_prefetch(client_id: int, raw_clients: list[dict],
                    files: dict[int, tuple[int, ...]]) -> tuple[tuple[int, int], ...]:
    """Every segment the other clients' files contain, in catalog order."""
    other_files = sorted({int(t.get("file", 0)) for t in raw_clients
                          if int(t.get("id", -1)) != client_id})
    entries = []
    for fid in other_files:
        if fid in files:
            entries.extend((fid, idx) for idx in range(1, len(files[fid]) + 1))
    return tuple(entries)


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ScenarioError(f"{path}: not valid TOML: {e}") from e
    return parse_scenario(doc)
