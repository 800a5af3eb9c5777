"""Scenario TOML parsing and validation."""

import math
import statistics

import pytest

from xcast.scenario import (ClientScript, Scenario, ScenarioError,
                            load_scenario, parse_scenario, sampled_sizes)

FULL_DOC = {
    "name": "full",
    "seed": 42,
    "channel": {
        "rate_bps": 12e6,
        "control_latency": 0.001,
        "loss": {"model": "iid", "p": 0.1},
        "loss_overrides": {"2": {"model": "burst", "p_enter": 0.05,
                                 "p_stay": 0.7}},
    },
    "delivery": {
        "coding": True,
        "proactive": False,
        "t_r": 0.03,
        "payload_size": 1000,
        "size_affinity": 0.75,
        "max_queue": 16,
        "ret_req_timeout": 0.1,
        "max_rounds": 4,
    },
    "files": [
        {"id": 1, "segments": 3, "size": 20_000},
        {"id": 2, "sizes": [10_000, 30_000]},
    ],
    "clients": [
        {"id": 1, "file": 1, "prefetch": "cross"},
        {"id": 2, "file": 2, "start": 0.5, "segments": 1,
         "prefetch": [[1, 1], [1, 2], [1, 3]]},
    ],
    "expect": {"codable": [[1, 2]]},
    "run": {"event_budget": 123_456},
}


def doc(**patches):
    """Deep-ish copy of FULL_DOC with top-level key patches."""
    d = {k: (dict(v) if isinstance(v, dict) else list(v) if isinstance(v, list)
             else v) for k, v in FULL_DOC.items()}
    d.update(patches)
    return d


class TestParseFullSchema:
    def test_round_trip(self):
        sc = parse_scenario(FULL_DOC)
        assert sc.name == "full" and sc.seed == 42
        assert sc.files == {1: (20_000,) * 3, 2: (10_000, 30_000)}
        assert sc.channel.multicast_rate_bps == 12e6
        assert sc.channel.control_latency == 0.001
        assert sc.channel.default_loss.model == "iid"
        assert sc.channel.loss[2].model == "burst"
        assert sc.server.payload_size == 1000
        assert sc.server.proactive_enabled is False
        assert sc.server.max_retransmission_rounds == 4
        assert sc.codable_pairs == ((1, 2),)
        assert sc.event_budget == 123_456

    def test_cross_prefetch_expansion(self):
        sc = parse_scenario(FULL_DOC)
        c1 = next(c for c in sc.clients if c.client_id == 1)
        assert c1.prefetch == ((2, 1), (2, 2))

    def test_segments_zero_means_whole_file(self):
        sc = parse_scenario(FULL_DOC)
        catalog = sc.catalog()
        c1 = next(c for c in sc.clients if c.client_id == 1)
        c2 = next(c for c in sc.clients if c.client_id == 2)
        assert list(c1.segment_indices(catalog)) == [1, 2, 3]
        assert list(c2.segment_indices(catalog)) == [1]

    def test_defaults(self):
        sc = parse_scenario({
            "files": [{"id": 1, "segments": 1, "size": 100}],
            "clients": [{"id": 1, "file": 1}],
        })
        assert sc.seed == 1
        assert sc.channel.multicast_rate_bps == 24e6
        assert sc.channel.default_loss.model == "none"
        assert sc.server.payload_size == 1400
        assert sc.server.coding_enabled and sc.server.proactive_enabled
        assert sc.event_budget == 2_000_000

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "s.toml"
        path.write_text(
            'name = "tiny"\n'
            "[[files]]\nid = 1\nsegments = 2\nsize = 5000\n"
            "[[clients]]\nid = 1\nfile = 1\n")
        sc = load_scenario(path)
        assert sc.name == "tiny"
        assert sc.files == {1: (5000, 5000)}

    def test_load_rejects_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("name = [unterminated\n")
        with pytest.raises(ScenarioError, match="not valid TOML"):
            load_scenario(path)


class TestValidationErrors:
    @pytest.mark.parametrize("mutate, fragment", [
        (lambda d: d.update(files=[]), "files:"),
        (lambda d: d.update(clients=[]), "clients:"),
        (lambda d: d.update(files=[{"id": 1, "segments": 3, "size": 20_000},
                                   {"id": 1, "sizes": [10]}]),
         "files[1].id: duplicate"),
        (lambda d: d.update(clients=[{"id": 1, "file": 1},
                                     {"id": 1, "file": 1}]),
         "clients[1].id: duplicate"),
        (lambda d: d.update(clients=[{"id": 1, "file": 7}]),
         "clients[0].file: unknown"),
        (lambda d: d.update(clients=[{"id": 1, "file": 1, "start": -1.0}]),
         "clients[0].start"),
        (lambda d: d.update(clients=[{"id": 1, "file": 1, "segments": 9}]),
         "clients[0].segments"),
        (lambda d: d.update(clients=[{"id": 1, "file": 1,
                                      "prefetch": [[2, 99]]}]),
         "clients[0].prefetch"),
        (lambda d: d.update(clients=[{"id": 1, "file": 1,
                                      "prefetch": "sideways"}]),
         "clients[0].prefetch"),
        (lambda d: d.update(files=[{"id": 1}]), "files[0]"),
        (lambda d: d.update(files=[{"id": 1, "segments": 0, "size": 10}]),
         "files[0].segments"),
        (lambda d: d.update(files=[{"id": 1, "segments": 2, "size": -5}]),
         "files[0]"),
        (lambda d: d.update(clients=[{"file": 1}]), "clients[0].id"),
    ])
    def test_key_path_in_message(self, mutate, fragment):
        d = doc()
        # most cases only need one file and client; trim expectations
        d["expect"] = {}
        mutate(d)
        with pytest.raises(ScenarioError) as exc:
            parse_scenario(d)
        assert fragment.split(":")[0] in str(exc.value)

    def test_codable_pair_must_be_preseeded(self):
        d = doc()
        # client 2 now misses one of client 1's segments
        d["clients"] = [
            {"id": 1, "file": 1, "prefetch": "cross"},
            {"id": 2, "file": 2, "prefetch": [[1, 1], [1, 2]]},
        ]
        with pytest.raises(ScenarioError, match="expect.codable"):
            parse_scenario(d)

    def test_codable_pair_unknown_client(self):
        d = doc()
        d["expect"] = {"codable": [[1, 9]]}
        with pytest.raises(ScenarioError, match="unknown client 9"):
            parse_scenario(d)

    def test_bad_loss_model(self):
        d = doc()
        d["channel"] = {"loss": {"model": "quantum"}}
        with pytest.raises(ScenarioError, match="channel.loss"):
            parse_scenario(d)


class TestSampledSizes:
    def test_deterministic_and_distinct_per_file(self):
        a = sampled_sizes(1, 50, 100_000, 0.3, seed=9)
        b = sampled_sizes(1, 50, 100_000, 0.3, seed=9)
        c = sampled_sizes(2, 50, 100_000, 0.3, seed=9)
        assert a == b
        assert a != c

    def test_mean_and_spread(self):
        sizes = sampled_sizes(1, 4000, 100_000, 0.3, seed=5)
        assert all(s >= 1 for s in sizes)
        assert statistics.fmean(sizes) == pytest.approx(100_000, rel=0.05)
        cv = statistics.pstdev(sizes) / statistics.fmean(sizes)
        assert cv == pytest.approx(0.3, abs=0.05)

    def test_zero_cv_is_constant(self):
        assert sampled_sizes(1, 5, 1234.4, 0.0, seed=1) == (1234,) * 5


class TestScriptHelpers:
    def test_segment_indices_with_explicit_count(self):
        sc = Scenario(files={1: (10, 10, 10)},
                      clients=[ClientScript(1, 1, segments=2)],
                      channel=parse_scenario(doc()).channel)
        catalog = sc.catalog()
        assert list(sc.clients[0].segment_indices(catalog)) == [1, 2]
