"""Synthetic vibration collection, caption grammar, splits and campaigns.

The collection holds 704 signals drawn from four construction sources —
174 parametric tones, 180 filtered-noise textures, 176 randomly
generated composites and 174 transformed variants of earlier signals —
and is reproducible bit-for-bit from one integer seed.

Captions are produced by a template grammar.  Each signal is reduced to
three features (frequency band, strength, temporal pattern) measured at
generation time, and every category (sensory / emotional / associative)
renders 8-10 distinct reference sentences from those features.  The
grammar gives supervised training a learnable signal-to-text structure
while keeping the dataset schema of a human-captioned corpus:
line-delimited records with signal_id, wav, category, caption, refs,
split and author fields.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .prompts import CATEGORIES
from .waveform import (
    DEFAULT_SAMPLE_RATE,
    SynthSpec,
    Waveform,
    low_pass,
    mix,
    normalize,
    repeat,
    reverse,
    read_wav,
    synthesize,
    write_wav,
)

__all__ = [
    "SOURCES",
    "SOURCE_COUNTS",
    "SPLITS",
    "VARIANTS",
    "SignalRecord",
    "build_collection",
    "write_collection",
    "load_collection",
    "reference_captions",
    "build_caption_dataset",
    "split_dataset",
    "assign_splits",
    "build_campaign",
    "save_jsonl",
    "load_jsonl",
]

SOURCES = ("parametric", "filtered", "generated", "transformed")
SOURCE_COUNTS = {"parametric": 174, "filtered": 180, "generated": 176, "transformed": 174}
SPLITS = ("train", "valid", "test")
VARIANTS = ("freq", "rvq")

# caption feature thresholds
BAND_EDGES_HZ = (60.0, 200.0)  # low < 60 <= mid < 200 <= high
STRONG_PEAK = 0.55


@dataclass(frozen=True)
class SignalRecord:
    """One collection entry: identity, source tag, audio and parameters.

    ``params`` always carries the three caption features measured from
    the finished waveform — ``dominant_hz``, ``peak`` and ``pattern`` —
    plus whatever source-specific settings produced the signal.
    """

    signal_id: str
    source: str
    waveform: Waveform
    params: Mapping[str, object]

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


# ---------------------------------------------------------------------------
# feature measurement
# ---------------------------------------------------------------------------

def _dominant_hz(w: Waveform) -> float:
    """Frequency of the strongest spectral component in the 10-500 Hz band."""
    spec = np.abs(np.fft.rfft(w.samples))
    freqs = np.fft.rfftfreq(len(w.samples), 1.0 / w.sample_rate)
    band = (freqs >= 10.0) & (freqs <= 500.0)
    if not band.any() or not spec[band].any():
        return 10.0
    return float(freqs[band][int(np.argmax(spec[band]))])


def _features(w: Waveform, pattern: str) -> dict:
    return {
        "pattern": pattern,
        "dominant_hz": round(_dominant_hz(w), 3),
        "peak": round(float(np.max(np.abs(w.samples))), 4),
    }


def band_of(hz: float) -> str:
    if hz < BAND_EDGES_HZ[0]:
        return "low"
    if hz < BAND_EDGES_HZ[1]:
        return "mid"
    return "high"


def strength_of(peak: float) -> str:
    return "soft" if peak < STRONG_PEAK else "strong"


# ---------------------------------------------------------------------------
# collection construction
# ---------------------------------------------------------------------------

def _scale(w: Waveform, amplitude: float) -> Waveform:
    return Waveform(w.sample_rate, w.samples * amplitude)


def _parametric(sample_rate: int) -> list[SignalRecord]:
    """58 sines + 58 pulse trains + 58 sweeps over a frequency grid."""
    freqs = [round(float(f), 3) for f in np.geomspace(12.0, 480.0, 29)]
    durations = (0.5, 0.9, 1.3, 1.7, 2.1)
    records = []

    def add(spec: SynthSpec, extra: dict) -> None:
        idx = len(records)
        w = synthesize(spec, sample_rate)
        params = {"kind": spec.kind, "frequency": spec.frequency,
                  "amplitude": spec.amplitude, "duration": spec.duration}
        params.update(extra)
        pattern = {"sine": "steady", "pulse_train": "pulsing",
                   "swept_sine": "sweeping"}[spec.kind]
        params.update(_features(w, pattern))
        records.append(SignalRecord(f"parametric-{idx:03d}", "parametric", w, params))

    for i, f in enumerate(freqs):
        for amp in (0.4, 0.9):
            add(SynthSpec("sine", f, amp, durations[(2 * i + int(amp > 0.5)) % 5]), {})
    for i, f in enumerate(freqs):
        for period, duty in ((0.18, 0.4), (0.35, 0.55)):
            amp = 0.45 if period < 0.25 else 0.85
            add(SynthSpec("pulse_train", f, amp, durations[(i + int(period > 0.25)) % 5],
                          pulse_period=period, pulse_duty=duty),
                {"pulse_period": period, "pulse_duty": duty})
    for i, f in enumerate(freqs):
        f_end = round(min(f * 3.0, 480.0), 3)
        amp = 0.4 if i % 2 else 0.9
        dur = durations[(3 * i) % 5]
        add(SynthSpec("swept_sine", f, amp, dur, frequency_end=f_end),
            {"frequency_end": f_end})
        add(SynthSpec("swept_sine", f_end, amp, dur, frequency_end=f),
            {"frequency_end": f})
    return records


_ENVELOPE_SHAPES = {
    # breakpoints as (fraction of duration, gain)
    "flat": ((0.0, 1.0), (1.0, 1.0)),
    "attack": ((0.0, 0.0), (0.4, 1.0), (1.0, 1.0)),
    "decay": ((0.0, 1.0), (0.6, 0.25), (1.0, 0.0)),
    "swell": ((0.0, 0.0), (0.5, 1.0), (1.0, 0.0)),
}


def _filtered(sample_rate: int, seed: int) -> list[SignalRecord]:
    """Low-pass-filtered enveloped noise: 15 cutoffs x 4 envelopes x 3 amps."""
    cutoffs = [round(float(c), 3) for c in np.geomspace(40.0, 450.0, 15)]
    records = []
    for ci, cutoff in enumerate(cutoffs):
        for shape, rel_env in _ENVELOPE_SHAPES.items():
            for ai, amp in enumerate((0.35, 0.65, 0.95)):
                idx = len(records)
                dur = (1.0, 1.4, 1.8)[ai]
                env = tuple((round(frac * dur, 6), gain) for frac, gain in rel_env)
                spec = SynthSpec("enveloped_noise", cutoff, 1.0, dur,
                                 envelope=env, noise_seed=seed * 100000 + idx)
                w = _scale(normalize(low_pass(synthesize(spec, sample_rate), cutoff)), amp)
                params = {"kind": "enveloped_noise", "cutoff_hz": cutoff,
                          "envelope": shape, "amplitude": amp, "duration": dur,
                          "noise_seed": spec.noise_seed}
                params.update(_features(w, "rough"))
                records.append(SignalRecord(f"filtered-{idx:03d}", "filtered", w, params))
    return records


def _generated(sample_rate: int, seed: int) -> list[SignalRecord]:
    """176 random composites: each mixes 2-3 seeded synthesis primitives."""
    records = []
    for idx in range(SOURCE_COUNTS["generated"]):
        rng = np.random.default_rng([seed, 2, idx])
        n_parts = int(rng.integers(2, 4))
        parts, part_params = [], []
        for _ in range(n_parts):
            kind = ("sine", "pulse_train", "swept_sine")[int(rng.integers(3))]
            f = round(float(np.exp(rng.uniform(np.log(15.0), np.log(450.0)))), 3)
            amp = round(float(rng.uniform(0.35, 0.95)), 3)
            dur = round(float(rng.uniform(0.6, 2.8)), 3)
            kwargs = {}
            if kind == "swept_sine":
                kwargs["frequency_end"] = round(
                    float(np.exp(rng.uniform(np.log(15.0), np.log(450.0)))), 3)
            elif kind == "pulse_train":
                kwargs["pulse_period"] = round(float(rng.uniform(0.12, 0.4)), 3)
                kwargs["pulse_duty"] = round(float(rng.uniform(0.3, 0.7)), 3)
            parts.append(synthesize(SynthSpec(kind, f, amp, dur, **kwargs), sample_rate))
            part_params.append({"kind": kind, "frequency": f, "amplitude": amp,
                                "duration": dur, **kwargs})
        w = parts[0]
        for p in parts[1:]:
            w = mix(w, p)
        peak_target = max(p["amplitude"] for p in part_params)
        w = _scale(normalize(w), peak_target)
        params = {"parts": part_params, "mix_seed": idx}
        params.update(_features(w, "layered"))
        records.append(SignalRecord(f"generated-{idx:03d}", "generated", w, params))
    return records


def _transformed(pool: Sequence[SignalRecord], sample_rate: int) -> list[SignalRecord]:
    """174 manual-style edits of earlier signals: reverse, repeat, mix."""
    records = []
    for idx in range(SOURCE_COUNTS["transformed"]):
        base = pool[(3 * idx + 1) % len(pool)]
        op = ("reverse", "repeat", "mix")[idx % 3]
        if op == "reverse":
            w = reverse(base.waveform)
            pattern = base.params["pattern"]
            params = {"op": op, "base": base.signal_id}
        elif op == "repeat":
            w = repeat(base.waveform, 2)
            pattern = base.params["pattern"]
            params = {"op": op, "base": base.signal_id, "times": 2}
        else:
            other = pool[(3 * idx + 2) % len(pool)]
            w = mix(base.waveform, reverse(other.waveform))
            pattern = "layered"
            params = {"op": op, "base": base.signal_id, "other": other.signal_id}
        params.update(_features(w, pattern))
        records.append(SignalRecord(f"transformed-{idx:03d}", "transformed", w, params))
    return records


def build_collection(seed: int = 0,
                     sample_rate: int = DEFAULT_SAMPLE_RATE) -> list[SignalRecord]:
    """Build the full 704-signal collection, deterministic per seed."""
    records = _parametric(sample_rate)
    records += _filtered(sample_rate, seed)
    records += _generated(sample_rate, seed)
    records += _transformed(records, sample_rate)
    counts = {s: sum(r.source == s for r in records) for s in SOURCES}
    assert counts == SOURCE_COUNTS, counts
    return records


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_collection(records: Sequence[SignalRecord], out_dir) -> str:
    """Write WAVs under ``out_dir/signals`` plus a manifest.jsonl; returns
    the manifest path."""
    sig_dir = os.path.join(str(out_dir), "signals")
    os.makedirs(sig_dir, exist_ok=True)
    manifest_path = os.path.join(str(out_dir), "manifest.jsonl")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for rec in records:
            wav_rel = f"signals/{rec.signal_id}.wav"
            write_wav(rec.waveform, os.path.join(str(out_dir), wav_rel))
            row = {
                "signal_id": rec.signal_id,
                "source": rec.source,
                "wav": wav_rel,
                "duration_s": round(len(rec.waveform.samples) / rec.waveform.sample_rate, 6),
                "sample_rate": rec.waveform.sample_rate,
                "params": dict(rec.params),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return manifest_path


def load_collection(root_dir) -> list[SignalRecord]:
    """Read a written collection back (waveforms from WAV, params from
    the manifest)."""
    records = []
    for row in load_jsonl(os.path.join(str(root_dir), "manifest.jsonl")):
        w = read_wav(os.path.join(str(root_dir), row["wav"]))
        records.append(SignalRecord(row["signal_id"], row["source"], w, row["params"]))
    return records


def save_jsonl(rows: Iterable[Mapping], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(dict(row), sort_keys=True) + "\n")


def load_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


# ---------------------------------------------------------------------------
# caption grammar
# ---------------------------------------------------------------------------

_SENSORY = (
    "a {s} {p} {b} vibration",
    "{s} {b} buzz with a {p} feel",
    "the vibration feels {s} and {p} in the {b} range",
    "a {p} {b} tone at a {s} level",
    "{p} vibration with {s} {b} energy",
    "feels like a {s} {b} {p} hum",
    "a {b} frequency {p} signal that feels {s}",
    "{s} intensity {p} motion in the {b} band",
    "a {p} and {s} rumble around the {b} range",
    "the {b} buzz is {s} with a {p} texture",
)

_EMOTIONAL = (
    "feels {e1} and {e2}",
    "a {e1} sensation with a {e2} pulse",
    "the feeling is {e1} with {e3} energy",
    "this touch feels {e2} and {e1}",
    "a {e1} mood runs through this {e2} vibration",
    "evokes a {e1} and {e3} state",
    "the vibration carries a {e2} {e1} tone",
    "an overall {e1} feeling with a {e2} touch",
    "its mood is {e1} leaning {e3}",
    "a {e2} buzz that leaves a {e1} impression",
)

_ASSOCIATIVE = (
    "reminds me of {o}",
    "feels like {o}",
    "this could be {o}",
    "brings to mind {o}",
    "similar to {o} nearby",
    "like touching {o}",
    "evokes {o}",
    "resembles {o}",
    "it recalls {o}",
    "as if {o} is close by",
)

_BAND_WORDS = {"low": "low", "mid": "midrange", "high": "high"}
_EMO_WORDS = {"soft": ("calm", "relaxing", "mellow"),
              "strong": ("tense", "thrilling", "urgent")}
_ASSOC_WORDS = {
    ("steady", "low"): "a big engine idling",
    ("steady", "mid"): "an electric razor",
    ("steady", "high"): "a dentist drill",
    ("pulsing", "low"): "a slow heartbeat",
    ("pulsing", "mid"): "a phone buzzing on a desk",
    ("pulsing", "high"): "an alarm buzzer",
    ("sweeping", "low"): "a motor revving up",
    ("sweeping", "mid"): "a passing siren",
    ("sweeping", "high"): "a swooping arcade effect",
    ("rough", "low"): "distant thunder",
    ("rough", "mid"): "heavy rain on a roof",
    ("rough", "high"): "radio static",
    ("layered", "low"): "machinery in a workshop",
    ("layered", "mid"): "a busy arcade machine",
    ("layered", "high"): "a swarm of insects",
}


def _n_refs(signal_id: str) -> int:
    return 8 + zlib.crc32(signal_id.encode("utf-8")) % 3


def reference_captions(record) -> dict[str, list[str]]:
    """8-10 grammar captions per category for one signal.

    Accepts a SignalRecord or any object/mapping exposing ``signal_id``
    and the measured features (``dominant_hz``, ``peak``, ``pattern``).
    Captions depend only on the feature class, so signals sharing a
    class share captions; the reference *count* varies with signal_id.
    """
    if isinstance(record, Mapping):
        signal_id, params = record["signal_id"], record.get("params", record)
    else:
        signal_id, params = record.signal_id, record.params
    b = _BAND_WORDS[band_of(float(params["dominant_hz"]))]
    s = strength_of(float(params["peak"]))
    p = str(params["pattern"])
    e1, e2, e3 = _EMO_WORDS[s]
    o = _ASSOC_WORDS[(p, band_of(float(params["dominant_hz"])))]
    n = _n_refs(signal_id)
    return {
        "sensory": [t.format(b=b, s=s, p=p) for t in _SENSORY[:n]],
        "emotional": [t.format(e1=e1, e2=e2, e3=e3) for t in _EMOTIONAL[:n]],
        "associative": [t.format(o=o) for t in _ASSOCIATIVE[:n]],
    }


# ---------------------------------------------------------------------------
# splits and datasets
# ---------------------------------------------------------------------------

def assign_splits(signal_ids: Sequence[str], ratios: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> dict[str, str]:
    """Deterministic signal-level split via largest-remainder apportionment."""
    if not signal_ids:
        raise ValueError("no signals to split")
    if len(ratios) != len(SPLITS):
        raise ValueError(f"need {len(SPLITS)} ratios")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative and sum to 1")
    unique = list(dict.fromkeys(signal_ids))
    order = np.random.default_rng(seed).permutation(len(unique))
    n = len(unique)
    quotas = [r * n for r in ratios]
    counts = [int(q) for q in quotas]
    remainders = sorted(range(len(ratios)),
                        key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[remainders[i % len(ratios)]] += 1
    assignment = {}
    pos = 0
    for split, count in zip(SPLITS, counts):
        for k in range(count):
            assignment[unique[order[pos + k]]] = split
        pos += count
    return assignment


def split_dataset(records: Sequence[Mapping], ratios: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> list[dict]:
    """Tag records with a split; all records of one signal share a split."""
    if not records:
        raise ValueError("no records to split")
    assignment = assign_splits([r["signal_id"] for r in records], ratios, seed)
    return [{**dict(r), "split": assignment[r["signal_id"]]} for r in records]


def build_caption_dataset(records: Sequence[SignalRecord],
                          ratios: Sequence[float] = (0.8, 0.1, 0.1),
                          seed: int = 0) -> list[dict]:
    """One row per signal and category: the primary caption plus its
    references, split-tagged and author-stamped."""
    rows = []
    for rec in records:
        refs = reference_captions(rec)
        for category in CATEGORIES:
            rows.append({
                "signal_id": rec.signal_id,
                "wav": f"signals/{rec.signal_id}.wav",
                "category": category,
                "caption": refs[category][0],
                "refs": refs[category],
                "author": "human-synthetic",
            })
    return split_dataset(rows, ratios, seed)


# ---------------------------------------------------------------------------
# rating campaign
# ---------------------------------------------------------------------------

def build_campaign(records: Sequence[SignalRecord]) -> list[dict]:
    """Caption cards for a rating campaign: per signal and category, two
    captions for each model variant (four total).  Grammar flavors stand
    in for sampled model captions; a caption's id encodes its slot."""
    cards = []
    for rec in records:
        refs = reference_captions(rec)
        for category in CATEGORIES:
            for vi, variant in enumerate(VARIANTS):
                for k in range(2):
                    cards.append({
                        "caption_id": f"{rec.signal_id}:{category}:{variant}:{k}",
                        "signal_id": rec.signal_id,
                        "category": category,
                        "variant": variant,
                        "caption": refs[category][2 * vi + k],
                    })
    return cards
