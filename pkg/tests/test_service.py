"""Durable rating store, sessions, validation, exports, HTTP round trip."""

import http.client
import json
import threading

import pytest

from haptix.dpo import build_pairs
from haptix.prompts import CATEGORIES
from haptix.service import (
    RATERS_PER_CAPTION,
    SIGNALS_PER_SESSION,
    RatingService,
    RatingStore,
    StoreCorruption,
    serve,
)


def make_cards(n_signals=40):
    """Synthetic campaign: n signals x 3 categories x 4 captions."""
    cards = []
    for i in range(n_signals):
        sid = f"sig-{i:03d}"
        for cat in CATEGORIES:
            for vi, variant in enumerate(("freq", "rvq")):
                for k in range(2):
                    cards.append({
                        "caption_id": f"{sid}:{cat}:{variant}:{k}",
                        "signal_id": sid,
                        "category": cat,
                        "variant": variant,
                        "caption": f"caption {cat} {2 * vi + k} for class {i % 4}",
                    })
    return cards


@pytest.fixture
def service(tmp_path):
    store = RatingStore(str(tmp_path / "ratings.jsonl"))
    return RatingService(make_cards(), store, signals_per_session=4, seed=3)


class TestStore:
    def test_append_then_reload(self, tmp_path):
        path = str(tmp_path / "log.jsonl")
        store = RatingStore(path)
        store.append({"kind": "rating", "x": 1})
        store.append({"kind": "rating", "x": 2})
        store.close()
        again = RatingStore(path)
        assert [r["x"] for r in again.records] == [1, 2]
        assert [r["seq"] for r in again.records] == [0, 1]

    def test_checksum_detects_tampering(self, tmp_path):
        path = str(tmp_path / "log.jsonl")
        store = RatingStore(path)
        store.append({"kind": "rating", "x": 1})
        store.close()
        with open(path, encoding="utf-8") as fh:
            line = fh.read()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(line.replace('"x": 1', '"x": 9') if '"x": 1' in line
                     else line.replace('"x":1', '"x":9'))
        with pytest.raises(StoreCorruption):
            RatingStore(path)

    def test_checksum_detects_sequence_gap(self, tmp_path):
        path = str(tmp_path / "log.jsonl")
        store = RatingStore(path)
        store.append({"kind": "rating", "x": 1})
        store.append({"kind": "rating", "x": 2})
        store.close()
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(lines[1])  # drop the first record
        with pytest.raises(StoreCorruption):
            RatingStore(path)


class TestSessions:
    def test_deterministic_window_per_rater(self, service):
        a = service.session_cards("alice")
        assert a == service.session_cards("alice")
        assert len(a) == 4 * 12  # signals_per_session x (3 cats x 4 captions)
        assert len(set(a)) == len(a)  # no duplicate assignment

    def test_session_survives_restart(self, tmp_path):
        path = str(tmp_path / "log.jsonl")
        cards = make_cards()
        svc = RatingService(cards, RatingStore(path), signals_per_session=4, seed=3)
        first = svc.session_cards("alice")
        svc.next_card("bob")
        svc.store.close()
        svc2 = RatingService(cards, RatingStore(path), signals_per_session=4, seed=3)
        assert svc2.session_cards("alice") == first

    def test_windows_stride_through_signal_list(self, service):
        a_signals = {service.cards[c]["signal_id"] for c in service.session_cards("a")}
        b_signals = {service.cards[c]["signal_id"] for c in service.session_cards("b")}
        assert a_signals != b_signals

    def test_next_card_shape(self, service):
        card = service.next_card("alice")
        assert set(card) == {"signal_id", "wav_url", "category", "caption", "caption_id"}
        assert card["wav_url"] == f"/signals/{card['signal_id']}.wav"

    def test_progress_counts_up_to_done(self, service):
        rater = "alice"
        assert service.progress(rater) == {"completed": 0, "total": 48}
        while (card := service.next_card(rater)) is not None:
            service.submit(card["caption_id"], rater, 5)
        assert service.progress(rater) == {"completed": 48, "total": 48}
        assert service.next_card(rater) is None


class TestSubmission:
    def test_rejects_out_of_scale(self, service):
        card = service.next_card("r")
        for bad in (0, 8, -1):
            with pytest.raises(ValueError):
                service.submit(card["caption_id"], "r", bad)

    def test_rejects_non_integer(self, service):
        card = service.next_card("r")
        for bad in (3.5, "5", True, None):
            with pytest.raises(ValueError):
                service.submit(card["caption_id"], "r", bad)

    def test_rejects_unknown_caption(self, service):
        with pytest.raises(KeyError):
            service.submit("nope:sensory:freq:0", "r", 4)

    def test_rejects_double_rating(self, service):
        card = service.next_card("r")
        service.submit(card["caption_id"], "r", 4)
        with pytest.raises(ValueError):
            service.submit(card["caption_id"], "r", 4)

    def test_timestamps_monotone_per_rater(self, service):
        for _ in range(5):
            card = service.next_card("r")
            service.submit(card["caption_id"], "r", 3)
        ts = [r["ts"] for r in service.export_ratings() if r["rater_id"] == "r"]
        assert all(b > a for a, b in zip(ts, ts[1:]))

    def test_record_carries_card_metadata(self, service):
        card = service.next_card("r")
        record = service.submit(card["caption_id"], "r", 6)
        assert record["signal_id"] == card["signal_id"]
        assert record["category"] == card["category"]
        assert record["caption"] == card["caption"]
        assert record["variant"] in ("freq", "rvq")


class TestExports:
    def test_export_contains_each_write_exactly_once(self, service):
        for rater in ("a", "b"):
            for _ in range(7):
                card = service.next_card(rater)
                service.submit(card["caption_id"], rater, 2)
        first = service.export_ratings()
        second = service.export_ratings()
        assert len(first) == 14
        assert first == second  # idempotent re-export
        keys = [(r["rater_id"], r["caption_id"]) for r in first]
        assert len(set(keys)) == 14

    def test_pairs_match_in_memory_build_pairs(self, tmp_path):
        """Export -> pairs equals build_pairs over the in-memory records."""
        store = RatingStore(str(tmp_path / "log.jsonl"))
        svc = RatingService(make_cards(10), store, signals_per_session=10, seed=0)
        rng_ratings = [1, 7, 2, 6, 4, 5, 3, 7, 1, 6]
        in_memory = []
        n = 0
        for rater in ("a", "b"):
            while (card := svc.next_card(rater)) is not None and n < 100:
                rating = rng_ratings[n % len(rng_ratings)]
                record = svc.submit(card["caption_id"], rater, rating)
                in_memory.append({k: record[k] for k in
                                  ("signal_id", "category", "variant", "caption", "rating")})
                n += 1
        exported = svc.export_pairs()
        oracle = build_pairs(in_memory)
        assert len(exported) == len(oracle)
        for got, want in zip(exported, oracle):
            assert got["chosen"] == want.chosen
            assert got["rejected"] == want.rejected
            assert got["signal_id"] == want.signal_id

    def test_empty_store_exports_nothing(self, service):
        assert service.export_ratings() == []
        assert service.export_pairs() == []


class TestCampaignArithmetic:
    def test_two_rater_campaign_covers_every_caption_twice(self):
        """Full-scale slot accounting without doing any HTTP."""
        n_signals = 704
        cards_per_signal = len(CATEGORIES) * 4
        total_captions = n_signals * cards_per_signal
        n_raters = total_captions * RATERS_PER_CAPTION // (
            SIGNALS_PER_SESSION * cards_per_signal)
        assert n_raters == 44
        coverage = [0] * n_signals
        for k in range(n_raters):
            for j in range(SIGNALS_PER_SESSION):
                coverage[(16 * k + j) % n_signals] += 1
        assert all(c == RATERS_PER_CAPTION for c in coverage)
        assert n_raters * SIGNALS_PER_SESSION * cards_per_signal == 16896


class TestHttp:
    @pytest.fixture
    def server(self, tmp_path):
        import numpy as np

        from haptix.waveform import Waveform, write_wav

        sig_dir = tmp_path / "signals"
        sig_dir.mkdir()
        cards = make_cards(6)
        for i in range(6):
            t = np.arange(800) / 8000.0
            write_wav(Waveform(8000, 0.5 * np.sin(2 * np.pi * 60 * t)),
                      str(sig_dir / f"sig-{i:03d}.wav"))
        static_dir = tmp_path / "static"
        static_dir.mkdir()
        (static_dir / "index.html").write_text("<h1>rate</h1>", encoding="utf-8")
        store = RatingStore(str(tmp_path / "ratings.jsonl"))
        svc = RatingService(cards, store, signal_dir=str(sig_dir),
                            static_dir=str(static_dir), signals_per_session=3, seed=1)
        httpd = serve(svc, "127.0.0.1", 0)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        yield httpd
        httpd.shutdown()

    def _request(self, server, method, path, body=None):
        conn = http.client.HTTPConnection("127.0.0.1", server.server_address[1])
        headers = {"Content-Type": "application/json"} if body is not None else {}
        conn.request(method, path, json.dumps(body) if body is not None else None,
                     headers)
        resp = conn.getresponse()
        data = resp.read()
        conn.close()
        return resp.status, resp.getheader("Content-Type", ""), data

    def test_full_rating_round_trip(self, server):
        status, _, data = self._request(server, "GET", "/api/session/r1/next")
        assert status == 200
        card = json.loads(data)
        status, _, data = self._request(
            server, "POST", "/api/rating",
            {"caption_id": card["caption_id"], "rater_id": "r1", "rating": 6})
        assert status == 200 and json.loads(data)["accepted"] is True
        status, _, data = self._request(server, "GET", "/api/export/ratings")
        lines = [json.loads(l) for l in data.decode().splitlines()]
        assert len(lines) == 1 and lines[0]["rating"] == 6
        status, _, data = self._request(server, "GET", "/api/progress/r1")
        assert json.loads(data) == {"completed": 1, "total": 36}

    def test_rating_8_is_rejected(self, server):
        status, _, data = self._request(server, "GET", "/api/session/r1/next")
        card = json.loads(data)
        status, _, data = self._request(
            server, "POST", "/api/rating",
            {"caption_id": card["caption_id"], "rater_id": "r1", "rating": 8})
        assert status == 400
        assert json.loads(data)["accepted"] is False

    def test_wav_endpoint_serves_audio(self, server):
        status, ctype, data = self._request(server, "GET", "/signals/sig-000.wav")
        assert status == 200
        assert ctype == "audio/wav"
        assert data[:4] == b"RIFF"

    def test_missing_wav_is_404(self, server):
        status, _, _ = self._request(server, "GET", "/signals/zzz.wav")
        assert status == 404

    def test_static_index_served(self, server):
        status, ctype, data = self._request(server, "GET", "/")
        assert status == 200
        assert "text/html" in ctype
        assert b"rate" in data

    def test_encoded_rater_id_matches_json_body_identity(self, server):
        # The GET path carries the percent-encoded rater id while the POST
        # body carries the decoded form; both must address the same session,
        # or progress would stall and the same card would be served forever.
        status, _, data = self._request(
            server, "GET", "/api/session/rater%20one/next")
        assert status == 200
        card = json.loads(data)
        status, _, data = self._request(
            server, "POST", "/api/rating",
            {"caption_id": card["caption_id"], "rater_id": "rater one",
             "rating": 5})
        assert status == 200 and json.loads(data)["accepted"] is True
        status, _, data = self._request(server, "GET", "/api/progress/rater%20one")
        assert json.loads(data) == {"completed": 1, "total": 36}
        status, _, data = self._request(
            server, "GET", "/api/session/rater%20one/next")
        assert json.loads(data)["caption_id"] != card["caption_id"]

    def test_encoded_traversal_is_blocked(self, server):
        # "%2e%2e" decodes to ".." and ratings.jsonl really exists one level
        # above the static root; the resolved-path guard must still 404.
        status, _, _ = self._request(server, "GET", "/%2e%2e/ratings.jsonl")
        assert status == 404
        status, _, _ = self._request(server, "GET", "/../ratings.jsonl")
        assert status == 404

    def test_pairs_endpoint_is_ndjson(self, server):
        for rater, rating in (("a", 7), ("b", 6), ("a", 1), ("b", 2)):
            _, _, data = self._request(server, "GET", f"/api/session/{rater}/next")
            card = json.loads(data)
            self._request(server, "POST", "/api/rating",
                          {"caption_id": card["caption_id"], "rater_id": rater,
                           "rating": rating})
        status, ctype, data = self._request(server, "GET", "/api/export/pairs")
        assert status == 200
        assert "ndjson" in ctype
        for line in data.decode().splitlines():
            row = json.loads(line)
            assert {"signal_id", "category", "chosen", "rejected"} <= set(row)
