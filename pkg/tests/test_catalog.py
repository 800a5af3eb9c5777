"""Catalog lookups, synthetic origin, and the segment store."""

import http.server
import threading

import pytest

from xcast.catalog import (Catalog, CatalogError, HttpOrigin, OriginError,
                           SegmentStore, SyntheticOrigin, synthetic_body)


@pytest.fixture
def catalog():
    return Catalog({1: (1000, 2000, 1500), 2: (500,)})


class TestCatalog:
    def test_lookup(self, catalog):
        assert catalog.has(1, 3) and catalog.has(2, 1)
        assert not catalog.has(1, 4) and not catalog.has(3, 1)
        assert not catalog.has(1, 0)
        r = catalog.ref(1, 2)
        assert r.size_bytes == 2000
        assert catalog.segment_count(1) == 3

    def test_next_ref_walks_the_file(self, catalog):
        assert catalog.ref(1, 2) == catalog.next_ref(1, 1)
        assert catalog.next_ref(1, 3) is None
        assert catalog.next_ref(2, 1) is None

    def test_unknown_ref_raises(self, catalog):
        with pytest.raises(CatalogError):
            catalog.ref(9, 1)
        with pytest.raises(CatalogError):
            catalog.ref(1, 9)

    def test_all_refs_sorted(self, catalog):
        refs = catalog.all_refs()
        assert refs == sorted(refs)
        assert len(refs) == 4

    def test_validate_for_payload(self, catalog):
        catalog.validate_for_payload(1400)
        huge = Catalog({1: (1400 * 0xFFFF + 1,)})
        with pytest.raises(CatalogError):
            huge.validate_for_payload(1400)

    def test_rejects_empty_or_bad_sizes(self):
        with pytest.raises(CatalogError):
            Catalog({1: ()})
        with pytest.raises(CatalogError):
            Catalog({1: (100, 0)})


class TestSyntheticBodies:
    def test_deterministic_and_distinct(self):
        a1 = synthetic_body(1, 1, 4096)
        a2 = synthetic_body(1, 1, 4096)
        b = synthetic_body(1, 2, 4096)
        assert a1 == a2 and a1 != b
        assert len(a1) == 4096

    def test_regenerable_anywhere(self):
        # clients and tests regenerate origin bytes with no shared state
        assert synthetic_body(3, 7, 64) == synthetic_body(3, 7, 64)
        assert synthetic_body(3, 7, 64) != synthetic_body(7, 3, 64)


class TestSegmentStore:
    def test_fetches_once_then_caches(self, catalog):
        origin = SyntheticOrigin()
        store = SegmentStore(catalog, origin)
        r = catalog.ref(1, 1)
        body1 = store.get(r)
        body2 = store.get(r)
        assert body1 is body2
        assert origin.fetch_count == 1
        assert r in store
        assert catalog.ref(1, 2) not in store

    def test_body_matches_synthetic_origin(self, catalog):
        store = SegmentStore(catalog, SyntheticOrigin())
        r = catalog.ref(1, 2)
        assert store.get(r) == synthetic_body(1, 2, 2000)

    def test_length_mismatch_rejected(self, catalog):
        class ShortOrigin:
            def fetch(self, ref):
                return b"x" * (ref.size_bytes - 1)

        store = SegmentStore(catalog, ShortOrigin())
        with pytest.raises(OriginError):
            store.get(catalog.ref(2, 1))


class _OriginHandler(http.server.BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_GET(self):
        if self.path == "/5/1.bin":
            body = synthetic_body(5, 1, 300)
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        else:
            self.send_error(404)


class TestHttpOrigin:
    def test_fetch_and_error(self):
        httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0),
                                                _OriginHandler)
        port = httpd.server_address[1]
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        try:
            origin = HttpOrigin(f"http://127.0.0.1:{port}")
            catalog = Catalog({5: (300,)})
            assert origin.fetch(catalog.ref(5, 1)) == synthetic_body(5, 1, 300)
            with pytest.raises(OriginError):
                origin.fetch(Catalog({6: (300,)}).ref(6, 1))
        finally:
            httpd.shutdown()
            httpd.server_close()
