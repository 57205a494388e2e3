"""Rating-collection service: durable store, sessions, HTTP interface.

Ratings are appended to a line-delimited log before the client is
acknowledged.  Every line carries a sha256 checksum of its own payload,
so truncation or tampering is detected on reload.  A single lock
serializes writers; readers always see a consistent prefix.

Raters are assigned deterministic session windows over the signal list:
the k-th distinct rater (first-seen order, persisted in the log) rates
``signals[(16k + j) % len(signals)]`` for ``j < 32``.  Each signal
carries 12 caption cards (3 categories x 4 captions), giving the
default 384 ratings per completed session.  With 44 raters over a
704-signal campaign every caption is rated exactly twice: 16,896 slots.

The HTTP layer is a thin wrapper over :class:`RatingService`:

* ``GET /api/session/{rater_id}/next`` -> next unrated card
* ``GET /signals/{id}.wav`` -> audio bytes
* ``POST /api/rating`` ``{caption_id, rater_id, rating}`` -> ``{accepted:true}``
* ``GET /api/export/ratings`` and ``/api/export/pairs`` -> JSON lines
* ``GET /api/progress/{rater_id}`` -> ``{completed, total}``
* anything else -> static UI assets (when a static dir is configured)
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import urllib.parse
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Sequence

import numpy as np

from .dpo import build_pairs
from .prompts import CATEGORIES

__all__ = [
    "StoreCorruption",
    "RatingStore",
    "RatingService",
    "serve",
    "SIGNALS_PER_SESSION",
    "RATERS_PER_CAPTION",
]

SIGNALS_PER_SESSION = 32
RATERS_PER_CAPTION = 2
_SESSION_STRIDE = 16  # window k starts at signal index 16k


class StoreCorruption(ValueError):
    """The rating log failed its checksum or sequence verification."""


def _checksum(record: Mapping) -> str:
    body = {k: v for k, v in record.items() if k != "sha256"}
    return hashlib.sha256(
        json.dumps(body, sort_keys=True).encode("utf-8")
    ).hexdigest()


class RatingStore:
    """Append-only JSONL log with per-line checksums and fsync-on-append."""

    def __init__(self, path: str):
        self.path = str(path)
        self._lock = threading.Lock()
        self.records: list[dict] = []
        if os.path.exists(self.path):
            with open(self.path, encoding="utf-8") as fh:
                for n, line in enumerate(fh):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise StoreCorruption(f"line {n}: not valid JSON") from exc
                    if record.get("sha256") != _checksum(record):
                        raise StoreCorruption(f"line {n}: checksum mismatch")
                    if record.get("seq") != len(self.records):
                        raise StoreCorruption(f"line {n}: sequence gap")
                    self.records.append(record)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: Mapping) -> dict:
        """Durably append one record (seq + checksum added) and return it."""
        with self._lock:
            full = dict(record)
            full["seq"] = len(self.records)
            full["sha256"] = _checksum(full)
            self._fh.write(json.dumps(full, sort_keys=True) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.records.append(full)
            return full

    def close(self) -> None:
        self._fh.close()


class RatingService:
    """Sessions, validation and exports over a caption campaign."""

    def __init__(
        self,
        cards: Sequence[Mapping],
        store: RatingStore,
        signal_dir: str | None = None,
        static_dir: str | None = None,
        signals_per_session: int = SIGNALS_PER_SESSION,
        seed: int = 0,
    ):
        if not cards:
            raise ValueError("campaign has no caption cards")
        self.cards = {str(c["caption_id"]): dict(c) for c in cards}
        if len(self.cards) != len(cards):
            raise ValueError("duplicate caption_id in campaign")
        self.signals = list(dict.fromkeys(str(c["signal_id"]) for c in cards))
        self._by_signal: dict[str, list[str]] = {}
        for c in cards:
            self._by_signal.setdefault(str(c["signal_id"]), []).append(
                str(c["caption_id"])
            )
        self.signal_dir = str(signal_dir) if signal_dir else None
        self.static_dir = str(static_dir) if static_dir else None
        self.signals_per_session = min(signals_per_session, len(self.signals))
        self.seed = seed
        self._lock = threading.Lock()
        self.store = store
        self._raters: dict[str, int] = {}
        self._rated: dict[str, set[str]] = {}
        self._last_ts: dict[str, float] = {}
        for record in store.records:
            if record.get("kind") == "session":
                self._raters[record["rater_id"]] = record["k"]
            elif record.get("kind") == "rating":
                self._rated.setdefault(record["rater_id"], set()).add(
                    record["caption_id"]
                )
                self._last_ts[record["rater_id"]] = max(
                    record["ts"], self._last_ts.get(record["rater_id"], 0.0)
                )

    # -- sessions ----------------------------------------------------
    def _session_index(self, rater_id: str) -> int:
        with self._lock:
            if rater_id not in self._raters:
                k = len(self._raters)
                self._raters[rater_id] = k
                self.store.append({"kind": "session", "rater_id": rater_id, "k": k})
            return self._raters[rater_id]

    def session_cards(self, rater_id: str) -> list[str]:
        """The rater's full ordered card list (stable per rater and seed)."""
        k = self._session_index(rater_id)
        window = [
            self.signals[(_SESSION_STRIDE * k + j) % len(self.signals)]
            for j in range(self.signals_per_session)
        ]
        ordered = [cid for sig in window for cid in self._by_signal[sig]]
        rng = np.random.default_rng([self.seed, k])
        return [ordered[i] for i in rng.permutation(len(ordered))]

    def next_card(self, rater_id: str) -> dict | None:
        """The next unrated card for this rater, or None when done."""
        rated = self._rated.get(rater_id, set())
        for cid in self.session_cards(rater_id):
            if cid not in rated:
                card = self.cards[cid]
                return {
                    "signal_id": card["signal_id"],
                    "wav_url": f"/signals/{card['signal_id']}.wav",
                    "category": card["category"],
                    "caption": card["caption"],
                    "caption_id": cid,
                }
        return None

    def progress(self, rater_id: str) -> dict:
        total = self.signals_per_session * len(CATEGORIES) * 4
        completed = len(self._rated.get(rater_id, set()))
        return {"completed": completed, "total": total}

    # -- ratings -----------------------------------------------------
    def submit(self, caption_id: str, rater_id: str, rating: object) -> dict:
        """Validate and durably record one rating; returns the record."""
        if isinstance(rating, bool) or not isinstance(rating, int):
            raise ValueError("rating must be an integer")
        if not 1 <= rating <= 7:
            raise ValueError("rating must be in 1-7")
        if not rater_id or not isinstance(rater_id, str):
            raise ValueError("rater_id required")
        card = self.cards.get(str(caption_id))
        if card is None:
            raise KeyError(f"unknown caption_id {caption_id!r}")
        with self._lock:
            rated = self._rated.setdefault(rater_id, set())
            if caption_id in rated:
                raise ValueError("caption already rated by this rater")
            ts = max(time.time(), self._last_ts.get(rater_id, 0.0) + 1e-6)
            record = self.store.append(
                {
                    "kind": "rating",
                    "caption_id": caption_id,
                    "rater_id": rater_id,
                    "signal_id": card["signal_id"],
                    "category": card["category"],
                    "variant": card["variant"],
                    "caption": card["caption"],
                    "rating": rating,
                    "ts": ts,
                }
            )
            rated.add(caption_id)
            self._last_ts[rater_id] = ts
            return record

    # -- exports -----------------------------------------------------
    def export_ratings(self) -> list[dict]:
        return [dict(r) for r in self.store.records if r.get("kind") == "rating"]

    def export_pairs(self) -> list[dict]:
        return [asdict(p) for p in build_pairs(self.export_ratings())]


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}


class _Handler(BaseHTTPRequestHandler):
    service: RatingService  # set by serve()

    def log_message(self, *args):  # quiet by default
        pass

    def _json(self, status: int, payload: Mapping) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _lines(self, rows: Sequence[Mapping]) -> None:
        body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _file(self, path: str, content_type: str) -> None:
        with open(path, "rb") as fh:
            body = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802  (stdlib handler naming)
        svc = self.service
        path = self.path.split("?", 1)[0]
        # Split before unquoting so an encoded "/" inside a segment (%2F)
        # cannot introduce new separators; rater ids then match the decoded
        # form clients send in POST bodies.
        parts = [urllib.parse.unquote(p) for p in path.split("/") if p]
        try:
            if len(parts) == 4 and parts[:2] == ["api", "session"] and parts[3] == "next":
                card = svc.next_card(parts[2])
                if card is None:
                    self._json(200, {"done": True, **svc.progress(parts[2])})
                else:
                    self._json(200, card)
            elif len(parts) == 3 and parts[:2] == ["api", "progress"]:
                self._json(200, svc.progress(parts[2]))
            elif path == "/api/export/ratings":
                self._lines(svc.export_ratings())
            elif path == "/api/export/pairs":
                self._lines(svc.export_pairs())
            elif len(parts) == 2 and parts[0] == "signals" and parts[1].endswith(".wav"):
                if svc.signal_dir is None:
                    self._json(404, {"error": "no signal store configured"})
                    return
                name = os.path.basename(parts[1])
                full = os.path.join(svc.signal_dir, name)
                if not os.path.isfile(full):
                    self._json(404, {"error": f"no such signal {name}"})
                    return
                self._file(full, "audio/wav")
            else:
                self._static(path)
        except BrokenPipeError:
            pass

    def _static(self, path: str) -> None:
        svc = self.service
        if svc.static_dir is None:
            self._json(404, {"error": "not found"})
            return
        rel = urllib.parse.unquote(path.lstrip("/")) or "index.html"
        full = os.path.realpath(os.path.join(svc.static_dir, rel))
        root = os.path.realpath(svc.static_dir)
        if not full.startswith(root + os.sep) and full != root:
            self._json(404, {"error": "not found"})
            return
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            self._json(404, {"error": "not found"})
            return
        ext = os.path.splitext(full)[1].lower()
        self._file(full, _CONTENT_TYPES.get(ext, "application/octet-stream"))

    def do_POST(self):  # noqa: N802
        if self.path.split("?", 1)[0] != "/api/rating":
            self._json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            record = self.service.submit(
                payload.get("caption_id"), payload.get("rater_id"),
                payload.get("rating"),
            )
            self._json(200, {"accepted": True, "seq": record["seq"]})
        except KeyError as exc:
            self._json(404, {"accepted": False, "error": str(exc)})
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            self._json(400, {"accepted": False, "error": str(exc)})


def serve(service: RatingService, host: str = "127.0.0.1",
          port: int = 8765) -> ThreadingHTTPServer:
    """Bind and return the HTTP server (caller runs serve_forever)."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
