"""Video catalog, origin fetch, and the server-side segment body store.

The catalog is static configuration: which files exist and the byte size
of every segment. Bodies are fetched lazily from an origin (a real HTTP
server or a deterministic synthetic one) and cached indefinitely in the
SegmentStore; an experiment never evicts.
"""

from __future__ import annotations

import random
import urllib.error
import urllib.request

from .coding import SegmentRef


class CatalogError(Exception):
    pass


class OriginError(Exception):
    """The origin could not produce a segment body."""


class Catalog:
    """Maps (file_id, segment_index) to registered segment sizes.

    `files` is a mapping of file_id to the per-segment byte sizes, index 1
    first. Sizes are immutable once registered.
    """

    def __init__(self, files: dict[int, tuple[int, ...]]):
        self.files: dict[int, tuple[int, ...]] = {}
        for file_id, sizes in files.items():
            sizes = tuple(int(s) for s in sizes)
            if not sizes:
                raise CatalogError(f"file {file_id} has no segments")
            if any(s <= 0 for s in sizes):
                raise CatalogError(f"file {file_id} has a non-positive segment size")
            self.files[int(file_id)] = sizes

    def has(self, file_id: int, segment_index: int) -> bool:
        sizes = self.files.get(file_id)
        return sizes is not None and 1 <= segment_index <= len(sizes)

    def ref(self, file_id: int, segment_index: int) -> SegmentRef:
        if not self.has(file_id, segment_index):
            raise CatalogError(f"no such segment f{file_id}^({segment_index})")
        return SegmentRef(file_id, segment_index,
                          self.files[file_id][segment_index - 1])

    def next_ref(self, file_id: int, segment_index: int) -> SegmentRef | None:
        """The following segment of the same stream, or None at the end."""
        if self.has(file_id, segment_index + 1):
            return self.ref(file_id, segment_index + 1)
        return None

    def segment_count(self, file_id: int) -> int:
        return len(self.files[file_id])

    def all_refs(self) -> list[SegmentRef]:
        return [self.ref(fid, idx)
                for fid in sorted(self.files)
                for idx in range(1, len(self.files[fid]) + 1)]

    def validate_for_payload(self, payload_size: int):
        """A 16-bit seq space caps any segment at 65535 packets."""
        limit = 0xFFFF * payload_size
        for fid, sizes in sorted(self.files.items()):
            for idx, size in enumerate(sizes, start=1):
                if size > limit:
                    raise CatalogError(
                        f"f{fid}^({idx}) is {size} bytes, over the "
                        f"{limit}-byte cap for payload_size {payload_size}")


def synthetic_body(file_id: int, segment_index: int, size: int) -> bytes:
    """Deterministic pseudo-random segment body.

    Keyed only by segment identity, so any process (client-side fidelity
    checks included) can regenerate the exact origin bytes.
    """
    return random.Random(f"seg:{file_id}:{segment_index}").randbytes(size)


class SyntheticOrigin:
    """In-process origin producing deterministic bodies; counts fetches."""

    def __init__(self):
        self.fetch_count = 0

    def fetch(self, ref: SegmentRef) -> bytes:
        self.fetch_count += 1
        return synthetic_body(ref.file_id, ref.segment_index, ref.size_bytes)


class HttpOrigin:
    """Fetches segment bodies with GET {base_url}/{file_id}/{segment_index}.bin."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.fetch_count = 0

    def fetch(self, ref: SegmentRef) -> bytes:
        url = f"{self.base_url}/{ref.file_id}/{ref.segment_index}.bin"
        self.fetch_count += 1
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, OSError) as e:
            raise OriginError(f"GET {url} failed: {e}") from e


class SegmentStore:
    """Cache of fetched segment bodies, keyed by segment identity."""

    def __init__(self, catalog: Catalog, origin):
        self.catalog = catalog
        self.origin = origin
        self._bodies: dict[tuple[int, int], bytes] = {}

    def get(self, ref: SegmentRef) -> bytes:
        body = self._bodies.get(ref.key)
        if body is None:
            body = self.origin.fetch(ref)
            if len(body) != ref.size_bytes:
                raise OriginError(
                    f"origin returned {len(body)} bytes for {ref!r}, "
                    f"registered size is {ref.size_bytes}")
            self._bodies[ref.key] = body
        return body

    def __contains__(self, ref: SegmentRef) -> bool:
        return ref.key in self._bodies
