"""Registry REST client and offline JSONL snapshots.

The client speaks the public hub API shape: a paginated ``/api/models``
listing (``Link: <...>; rel="next"`` cursors) and raw card files at
``/{model_id}/raw/main/README.md``. Both paths are configurable.
"""

from __future__ import annotations

import json
import logging
import os
import time
from collections.abc import Iterable, Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import requests

from . import __version__
from .errors import GreenmineError

logger = logging.getLogger(__name__)

TOKEN_ENV = "GREENMINE_API_TOKEN"
DEFAULT_API_BASE = "https://huggingface.co"

HEADER_FIELDS = ("fetched_at", "source", "record_count", "tool_version")
ENTRY_FIELDS = (
    "model_id",
    "tags",
    "downloads",
    "created_at",
    "library_name",
    "card_text",
    "card_metadata_raw",
    "last_modified",
)


class RegistryError(GreenmineError):
    pass


class TransportError(RegistryError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message if status is None else f"{message} (last HTTP status {status})")
        self.status = status


class RegistryParseError(RegistryError):
    def __init__(self, message: str, index: int):
        super().__init__(f"record {index}: {message}")
        self.index = index


class ModelNotFoundError(RegistryError):
    pass


class SnapshotError(GreenmineError):
    pass


class SnapshotParseError(SnapshotError):
    def __init__(self, path: Path | str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class SnapshotIntegrityError(SnapshotError):
    pass


def parse_timestamp(value: str | datetime) -> datetime:
    """Parse an ISO 8601 timestamp (``Z`` suffix allowed) into aware UTC."""
    if isinstance(value, datetime):
        dt = value
    else:
        text = value.strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class RawModelEntry:
    """One model listing as returned by the registry."""

    model_id: str
    tags: tuple[str, ...] = ()
    downloads: int = 0
    created_at: datetime | None = None
    library_name: str | None = None
    card_text: str | None = None
    card_metadata_raw: str | None = None
    last_modified: datetime | None = None

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.downloads < 0:
            raise ValueError(f"{self.model_id}: downloads must be >= 0")
        object.__setattr__(self, "tags", tuple(self.tags))

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "tags": list(self.tags),
            "downloads": self.downloads,
            "created_at": None if self.created_at is None else format_timestamp(self.created_at),
            "library_name": self.library_name,
            "card_text": self.card_text,
            "card_metadata_raw": self.card_metadata_raw,
            "last_modified": None if self.last_modified is None else format_timestamp(self.last_modified),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RawModelEntry:
        unknown = set(data) - set(ENTRY_FIELDS)
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        tags = data.get("tags") or []
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise ValueError("tags must be a list of strings")
        downloads = data.get("downloads") or 0
        if not isinstance(downloads, int) or isinstance(downloads, bool):
            raise ValueError("downloads must be an integer")
        created = data.get("created_at")
        modified = data.get("last_modified")
        return cls(
            model_id=data["model_id"],
            tags=tuple(tags),
            downloads=downloads,
            created_at=None if created is None else parse_timestamp(created),
            library_name=data.get("library_name"),
            card_text=data.get("card_text"),
            card_metadata_raw=data.get("card_metadata_raw"),
            last_modified=None if modified is None else parse_timestamp(modified),
        )


@dataclass(frozen=True)
class SnapshotHeader:
    fetched_at: datetime
    source: str
    record_count: int
    tool_version: str = __version__

    def to_dict(self) -> dict[str, Any]:
        return {
            "fetched_at": format_timestamp(self.fetched_at),
            "source": self.source,
            "record_count": self.record_count,
            "tool_version": self.tool_version,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SnapshotHeader:
        if set(data) != set(HEADER_FIELDS):
            raise ValueError(f"header fields must be exactly {list(HEADER_FIELDS)}")
        count = data["record_count"]
        if not isinstance(count, int) or count < 0:
            raise ValueError("record_count must be a non-negative integer")
        return cls(
            fetched_at=parse_timestamp(data["fetched_at"]),
            source=str(data["source"]),
            record_count=count,
            tool_version=str(data["tool_version"]),
        )


# --------------------------------------------------------------------------
# HTTP client


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 1.0
    max_wait: float = 60.0

    def wait(self, attempt: int, retry_after: str | None) -> float:
        if retry_after:
            try:
                return min(self.max_wait, max(0.0, float(retry_after)))
            except ValueError:
                pass
        return min(self.max_wait, self.backoff * 2**attempt)


@dataclass
class RegistryClient:
    api_base: str = DEFAULT_API_BASE
    token: str | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    list_path: str = "/api/models"
    model_path: str = "/api/models/{model_id}"
    card_path: str = "/{model_id}/raw/main/README.md"
    page_size: int = 1000
    timeout: float = 30.0
    max_workers: int = 8
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def __post_init__(self) -> None:
        if self.token is None:
            self.token = os.environ.get(TOKEN_ENV) or None
        self.api_base = self.api_base.rstrip("/")

    def _get(self, url: str, params: Any = None) -> requests.Response:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        status = None
        for attempt in range(self.retry.attempts):
            retry_after = None
            try:
                resp = self.session.get(url, params=params, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                logger.warning("GET %s failed: %s", url, exc)
            else:
                status = resp.status_code
                if status != 429 and status < 500:
                    return resp
                retry_after = resp.headers.get("Retry-After")
                logger.warning("GET %s returned %s", url, status)
            if attempt + 1 < self.retry.attempts:
                time.sleep(self.retry.wait(attempt, retry_after))
        raise TransportError(f"GET {url} failed after {self.retry.attempts} attempts", status)

    def iter_pages(
        self, filter: Sequence[str] = (), page_limit: int | None = None
    ) -> Iterator[list[Any]]:
        """Yield raw JSON pages of the model listing."""
        if page_limit is not None and page_limit <= 0:
            return
        url: str | None = self.api_base + self.list_path
        params: Any = [("limit", self.page_size), ("full", "true")] + [("filter", f) for f in filter]
        pages = 0
        while url is not None:
            resp = self._get(url, params)
            if resp.status_code != 200:
                raise TransportError(f"GET {url} returned {resp.status_code}", resp.status_code)
            try:
                payload = resp.json()
            except ValueError as exc:
                raise RegistryParseError(f"listing page {pages} is not JSON: {exc}", index=-1) from exc
            if not isinstance(payload, list):
                raise RegistryParseError(f"listing page {pages} is not a JSON array", index=-1)
            yield payload
            pages += 1
            if page_limit is not None and pages >= page_limit:
                return
            url = resp.links.get("next", {}).get("url")
            # the cursor in the next link already carries every query parameter
            params = None

    def list_models(
        self, filter: Sequence[str] = (), page_limit: int | None = None
    ) -> list[RawModelEntry]:
        wanted = set(filter)
        by_id: dict[str, RawModelEntry] = {}
        index = 0
        for page in self.iter_pages(filter, page_limit):
            for item in page:
                entry = entry_from_api(item, index)
                index += 1
                if wanted and not wanted.issubset(entry.tags):
                    continue
                by_id.setdefault(entry.model_id, entry)
        return [by_id[k] for k in sorted(by_id)]

    def fetch_card(self, model_id: str) -> str | None:
        """Raw card text; ``None`` when the model exists but has no card."""
        if not model_id:
            raise ValueError("model_id must be non-empty")
        resp = self._get(self.api_base + self.card_path.format(model_id=model_id))
        if resp.status_code == 200:
            return resp.content.decode("utf-8")
        if resp.status_code != 404:
            raise TransportError(f"card fetch for {model_id} returned {resp.status_code}", resp.status_code)
        probe = self._get(self.api_base + self.model_path.format(model_id=model_id))
        if probe.status_code == 404:
            raise ModelNotFoundError(model_id)
        if probe.status_code != 200:
            raise TransportError(f"model lookup for {model_id} returned {probe.status_code}", probe.status_code)
        return None

    def attach_cards(self, entries: Iterable[RawModelEntry]) -> list[RawModelEntry]:
        """Fetch every card with bounded concurrency; output sorted by model_id."""
        from .cards import split_front_matter_text

        entries = sorted(entries, key=lambda e: e.model_id)
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            cards = list(pool.map(lambda e: self.fetch_card(e.model_id), entries))
        out = []
        for entry, card in zip(entries, cards):
            raw_meta = None if card is None else split_front_matter_text(card)
            out.append(replace(entry, card_text=card, card_metadata_raw=raw_meta))
        return out


def entry_from_api(item: Any, index: int) -> RawModelEntry:
    """Map one listing record (hub JSON field names) to a RawModelEntry."""
    if not isinstance(item, dict):
        raise RegistryParseError("expected a JSON object", index)
    model_id = item.get("id") or item.get("modelId")
    if not isinstance(model_id, str) or not model_id:
        raise RegistryParseError("missing model id", index)
    tags = item.get("tags") or []
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise RegistryParseError("tags must be a list of strings", index)
    downloads = item.get("downloads") or 0
    if not isinstance(downloads, int) or isinstance(downloads, bool) or downloads < 0:
        raise RegistryParseError(f"invalid downloads {downloads!r}", index)
    try:
        created = item.get("createdAt") or item.get("created_at")
        modified = item.get("lastModified") or item.get("last_modified")
        return RawModelEntry(
            model_id=model_id,
            tags=tuple(tags),
            downloads=downloads,
            created_at=None if created is None else parse_timestamp(created),
            library_name=item.get("library_name"),
            last_modified=None if modified is None else parse_timestamp(modified),
        )
    except (TypeError, ValueError) as exc:
        raise RegistryParseError(str(exc), index) from exc


def list_models(
    api_base: str = DEFAULT_API_BASE,
    filter: Sequence[str] = (),
    page_limit: int | None = None,
    **client_options: Any,
) -> list[RawModelEntry]:
    """All listed models matching every tag in ``filter``, sorted by model_id."""
    return RegistryClient(api_base, **client_options).list_models(filter, page_limit)


def fetch_card(api_base: str, model_id: str, **client_options: Any) -> str | None:
    return RegistryClient(api_base, **client_options).fetch_card(model_id)


# --------------------------------------------------------------------------
# Snapshots


def write_snapshot(
    entries: Iterable[RawModelEntry],
    path: Path | str,
    *,
    source: str = "",
    fetched_at: datetime | None = None,
) -> SnapshotHeader:
    path = Path(path)
    ordered = sorted(entries, key=lambda e: e.model_id)
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.model_id == cur.model_id:
            raise SnapshotIntegrityError(f"duplicate model_id {cur.model_id!r}")
    header = SnapshotHeader(
        fetched_at=fetched_at or datetime.now(timezone.utc),
        source=source or str(path),
        record_count=len(ordered),
    )
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(header.to_dict(), ensure_ascii=False) + "\n")
            for entry in ordered:
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise SnapshotError(f"{path}: {exc}") from exc
    return header


def iter_snapshot(path: Path | str) -> tuple[SnapshotHeader, Iterator[RawModelEntry]]:
    """Header plus a lazy record iterator; counts are verified at exhaustion."""
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise SnapshotError(f"{path}: {exc}") from exc
    first = fh.readline()
    try:
        header = SnapshotHeader.from_dict(json.loads(first))
    except (ValueError, TypeError, KeyError) as exc:
        fh.close()
        raise SnapshotParseError(path, 1, f"bad header: {exc}") from exc

    def records() -> Iterator[RawModelEntry]:
        seen: set[str] = set()
        count = 0
        with fh:
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    entry = RawModelEntry.from_dict(json.loads(line))
                except (ValueError, TypeError, KeyError) as exc:
                    raise SnapshotParseError(path, line_no, str(exc)) from exc
                if entry.model_id in seen:
                    raise SnapshotIntegrityError(f"{path}:{line_no}: duplicate model_id {entry.model_id!r}")
                seen.add(entry.model_id)
                count += 1
                yield entry
        if count != header.record_count:
            raise SnapshotIntegrityError(
                f"{path}: header declares {header.record_count} records, found {count}"
            )

    return header, records()


def read_snapshot(path: Path | str) -> tuple[SnapshotHeader, list[RawModelEntry]]:
    header, records = iter_snapshot(path)
    return header, list(records)


def filter_snapshot(
    entries: Iterable[RawModelEntry], until: datetime, field: str = "created_at"
) -> list[RawModelEntry]:
    """Entries whose ``created_at`` (or ``last_modified``) is at or before ``until``."""
    if field not in ("created_at", "last_modified"):
        raise ValueError(f"cutoff field must be created_at or last_modified, not {field!r}")
    out = []
    for entry in entries:
        stamp = getattr(entry, field)
        if stamp is not None and stamp <= until:
            out.append(entry)
    return out
