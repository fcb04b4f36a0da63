from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import pytest

from greenmine.registry import (
    ModelNotFoundError,
    RawModelEntry,
    RegistryClient,
    RegistryParseError,
    RetryPolicy,
    SnapshotIntegrityError,
    SnapshotParseError,
    TransportError,
    entry_from_api,
    filter_snapshot,
    iter_snapshot,
    list_models,
    parse_timestamp,
    read_snapshot,
    write_snapshot,
)

MODELS = [
    {"id": "carol/gpt", "tags": ["text-generation", "pytorch"], "downloads": 12,
     "createdAt": "2022-05-01T10:00:00.000Z", "lastModified": "2023-01-02T00:00:00.000Z",
     "library_name": "transformers"},
    {"id": "alice/bert-co2", "tags": ["text-classification", "autotrain", "co2_eq_emissions"], "downloads": 40,
     "createdAt": "2021-10-03T08:30:00.000Z", "library_name": "transformers"},
    {"id": "bob/vit", "tags": ["image-classification"], "downloads": 0, "createdAt": "2023-02-01T00:00:00Z"},
]
CARDS = {
    "alice/bert-co2": "---\nco2_eq_emissions: 4.2\ntags: [autotrain]\n---\n# bert\nAccuracy: 0.926\n",
    "carol/gpt": "---\nlicense: mit\n---\nplain body\n",
}


class Hub(BaseHTTPRequestHandler):
    page_size = 2
    fail_first: list[int] = []
    calls: list[str] = []

    def log_message(self, *args):
        pass

    def _send(self, status, body=b"", headers=()):
        self.send_response(status)
        for k, v in headers:
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        Hub.calls.append(self.path)
        if Hub.fail_first:
            status = Hub.fail_first.pop(0)
            self._send(status, b"busy", [("Retry-After", "0")])
            return
        url = urlparse(self.path)
        if url.path == "/api/models":
            q = parse_qs(url.query)
            start = int(q.get("cursor", ["0"])[0])
            page = MODELS[start : start + self.page_size]
            headers = [("Content-Type", "application/json")]
            if start + self.page_size < len(MODELS):
                nxt = f"http://{self.headers['Host']}/api/models?cursor={start + self.page_size}"
                headers.append(("Link", f'<{nxt}>; rel="next"'))
            self._send(200, json.dumps(page).encode(), headers)
        elif url.path.startswith("/api/models/"):
            model_id = url.path[len("/api/models/"):]
            known = any(m["id"] == model_id for m in MODELS)
            self._send(200 if known else 404, b"{}")
        elif url.path.endswith("/raw/main/README.md"):
            model_id = url.path[1 : -len("/raw/main/README.md")]
            card = CARDS.get(model_id)
            self._send(404) if card is None else self._send(200, card.encode("utf-8"))
        else:
            self._send(404)


@pytest.fixture(scope="module")
def hub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), Hub)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    server.server_close()


@pytest.fixture
def hub(hub_server):
    Hub.fail_first = []
    Hub.calls = []
    return hub_server


def fast_client(base, **kw):
    return RegistryClient(base, retry=RetryPolicy(attempts=3, backoff=0.0), **kw)


def test_list_follows_pagination_and_sorts(hub):
    entries = fast_client(hub).list_models()
    assert [e.model_id for e in entries] == ["alice/bert-co2", "bob/vit", "carol/gpt"]
    assert sum(1 for c in Hub.calls if c.startswith("/api/models")) == 2
    carol = entries[2]
    assert carol.downloads == 12 and carol.library_name == "transformers"
    assert carol.created_at == datetime(2022, 5, 1, 10, tzinfo=timezone.utc)
    assert carol.last_modified == datetime(2023, 1, 2, tzinfo=timezone.utc)


def test_page_limit(hub):
    assert len(fast_client(hub).list_models(page_limit=1)) == 2
    assert fast_client(hub).list_models(page_limit=0) == []


def test_filter_is_enforced_client_side(hub):
    # the fake hub ignores the filter parameter entirely
    entries = list_models(hub, filter=["autotrain"], retry=RetryPolicy(backoff=0.0))
    assert [e.model_id for e in entries] == ["alice/bert-co2"]


def test_retries_rate_limit_then_succeeds(hub):
    Hub.fail_first = [429, 503]
    assert len(fast_client(hub).list_models()) == 3


def test_gives_up_after_attempts(hub):
    Hub.fail_first = [500, 500, 500]
    with pytest.raises(TransportError) as info:
        fast_client(hub).list_models()
    assert info.value.status == 500


def test_fetch_card_variants(hub):
    client = fast_client(hub)
    assert client.fetch_card("alice/bert-co2").startswith("---\nco2_eq_emissions: 4.2")
    assert client.fetch_card("bob/vit") is None
    with pytest.raises(ModelNotFoundError):
        client.fetch_card("nobody/missing")


def test_attach_cards_keeps_order_and_raw_metadata(hub):
    client = fast_client(hub, max_workers=3)
    entries = client.attach_cards(client.list_models())
    assert [e.model_id for e in entries] == ["alice/bert-co2", "bob/vit", "carol/gpt"]
    assert entries[0].card_metadata_raw == "co2_eq_emissions: 4.2\ntags: [autotrain]"
    assert entries[1].card_text is None and entries[1].card_metadata_raw is None
    assert entries[2].card_metadata_raw == "license: mit"


def test_retry_after_is_honoured_and_capped():
    policy = RetryPolicy(attempts=3, backoff=2.0, max_wait=5.0)
    assert policy.wait(0, "3") == 3.0
    assert policy.wait(0, "100") == 5.0
    assert policy.wait(1, None) == 4.0


@pytest.mark.parametrize(
    "item,needle",
    [
        ({"tags": []}, "model id"),
        ({"id": "x", "tags": "nlp"}, "tags"),
        ({"id": "x", "downloads": -1}, "downloads"),
        ({"id": "x", "createdAt": "yesterday"}, "isoformat"),
        ([1, 2], "object"),
    ],
)
def test_entry_from_api_rejects_malformed(item, needle):
    with pytest.raises(RegistryParseError, match=needle) as info:
        entry_from_api(item, 7)
    assert info.value.index == 7


def _entries():
    return [
        RawModelEntry("b/two", ("nlp",), 3, parse_timestamp("2022-01-05T00:00:00Z"),
                      last_modified=parse_timestamp("2023-04-01T00:00:00Z")),
        RawModelEntry("a/one", (), 0, parse_timestamp("2023-03-30T12:00:00Z"), card_text="---\na: 1\n---\nbody"),
        RawModelEntry("c/three", ("x",), 1, None),
    ]


def test_snapshot_round_trip_sorted(tmp_path):
    path = tmp_path / "snap.jsonl"
    fetched = datetime(2023, 3, 31, tzinfo=timezone.utc)
    header = write_snapshot(_entries(), path, source="test", fetched_at=fetched)
    assert header.record_count == 3
    header2, entries = read_snapshot(path)
    assert header2 == header
    assert [e.model_id for e in entries] == ["a/one", "b/two", "c/three"]
    assert entries == sorted(_entries(), key=lambda e: e.model_id)
    assert path.read_text().splitlines()[0].startswith("{")


def test_snapshot_is_byte_stable(tmp_path):
    fetched = datetime(2023, 3, 31, tzinfo=timezone.utc)
    write_snapshot(_entries(), tmp_path / "a.jsonl", source="s", fetched_at=fetched)
    write_snapshot(list(reversed(_entries())), tmp_path / "b.jsonl", source="s", fetched_at=fetched)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_snapshot_rejects_duplicates(tmp_path):
    e = _entries()
    with pytest.raises(SnapshotIntegrityError):
        write_snapshot(e + e[:1], tmp_path / "dup.jsonl")


def test_snapshot_count_mismatch_and_bad_lines(tmp_path):
    path = tmp_path / "snap.jsonl"
    write_snapshot(_entries(), path, source="s", fetched_at=datetime(2023, 1, 1, tzinfo=timezone.utc))
    lines = path.read_text().splitlines()
    (tmp_path / "short.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    _, records = iter_snapshot(tmp_path / "short.jsonl")
    with pytest.raises(SnapshotIntegrityError, match="declares 3"):
        list(records)
    (tmp_path / "bad.jsonl").write_text("\n".join(lines[:2] + ["{not json"]) + "\n")
    with pytest.raises(SnapshotParseError) as info:
        read_snapshot(tmp_path / "bad.jsonl")
    assert info.value.line == 3


def test_filter_snapshot_by_cutoff_field():
    until = parse_timestamp("2023-03-31T00:00:00Z")
    by_created = filter_snapshot(_entries(), until)
    assert {e.model_id for e in by_created} == {"a/one", "b/two"}
    by_modified = filter_snapshot(_entries(), until, field="last_modified")
    assert by_modified == []
    with pytest.raises(ValueError):
        filter_snapshot(_entries(), until, field="downloads")


def test_cli_fetch_writes_snapshot(hub, tmp_path, capsys):
    from greenmine.cli import main

    out = tmp_path / "out"
    assert main(["--out", str(out), "fetch", "--api-base", hub, "--workers", "2"]) == 0
    header, entries = read_snapshot(out / "snapshot.jsonl")
    assert header.record_count == 3
    assert {e.model_id: e.card_text is not None for e in entries} == {
        "alice/bert-co2": True, "bob/vit": False, "carol/gpt": True}
    assert "wrote 3 records" in capsys.readouterr().out
