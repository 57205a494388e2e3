"""Vibrotactile waveform synthesis, transforms, and WAV persistence.

All functions are pure: they take immutable inputs and return new Waveform
instances, so any of them can be called concurrently. Samples are float64
in [-1, 1]; files are mono 16-bit PCM WAV.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, lfilter

# Vibrotactile band and canvas limits shared with the tokenizers.
F_MIN_HZ = 10.0
F_MAX_HZ = 500.0
MAX_DURATION_S = 10.0
DEFAULT_SAMPLE_RATE = 8000

SYNTH_KINDS = ("sine", "pulse_train", "swept_sine", "enveloped_noise")


class WaveformError(ValueError):
    """Invalid waveform data or synthesis spec."""


@dataclass(frozen=True)
class Waveform:
    """A mono vibration signal: sample rate plus amplitude samples in [-1, 1]."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise WaveformError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise WaveformError(f"samples must be 1-D, got shape {arr.shape}")
        if arr.size and (np.abs(arr).max() > 1.0 + 1e-12 or not np.isfinite(arr).all()):
            raise WaveformError("samples must be finite and within [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for one synthesized vibration.

    kind:          one of SYNTH_KINDS
    frequency:     carrier / start frequency in Hz, within [F_MIN_HZ, F_MAX_HZ]
    amplitude:     target peak amplitude in [0, 1]
    duration:      seconds, in (0, MAX_DURATION_S]
    frequency_end: end frequency for swept_sine (defaults to `frequency`)
    pulse_period:  seconds between pulse onsets (pulse_train)
    pulse_duty:    fraction of the period the carrier is on (pulse_train)
    envelope:      optional (time_s, gain) breakpoints, linearly interpolated
    noise_seed:    seed for enveloped_noise, part of the spec for determinism
    """

    kind: str
    frequency: float
    amplitude: float
    duration: float
    frequency_end: float | None = None
    pulse_period: float = 0.25
    pulse_duty: float = 0.5
    envelope: tuple[tuple[float, float], ...] = field(default_factory=tuple)
    noise_seed: int = 0

    def validate(self) -> None:
        if self.kind not in SYNTH_KINDS:
            raise WaveformError(f"unknown synth kind {self.kind!r}")
        for f in (self.frequency, self.frequency_end if self.frequency_end is not None else self.frequency):
            if not F_MIN_HZ <= f <= F_MAX_HZ:
                raise WaveformError(f"frequency {f} Hz outside band [{F_MIN_HZ}, {F_MAX_HZ}]")
        if not 0.0 <= self.amplitude <= 1.0:
            raise WaveformError(f"amplitude {self.amplitude} outside [0, 1]")
        if not 0.0 < self.duration <= MAX_DURATION_S:
            raise WaveformError(f"duration {self.duration}s outside (0, {MAX_DURATION_S}]")
        if self.kind == "pulse_train":
            if self.pulse_period <= 0 or not 0.0 < self.pulse_duty <= 1.0:
                raise WaveformError("pulse_train needs pulse_period > 0 and duty in (0, 1]")
        for t, g in self.envelope:
            if t < 0 or g < 0:
                raise WaveformError("envelope breakpoints must be non-negative")


def _apply_envelope(samples: np.ndarray, envelope, sample_rate: int) -> np.ndarray:
    if not envelope:
        return samples
    pts = sorted(envelope)
    t = np.arange(samples.size) / sample_rate
    gains = np.interp(t, [p[0] for p in pts], [p[1] for p in pts])
    return samples * gains


def synthesize(spec: SynthSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Render a SynthSpec to a waveform of round(duration * sample_rate) samples.

    Deterministic: the same spec and rate always give bit-identical output.
    The final peak is scaled to exactly spec.amplitude (zero-phase sine
    convention, so sample 0 of a sine is 0.0).
    """
    spec.validate()
    n = int(round(spec.duration * sample_rate))
    t = np.arange(n) / sample_rate

    if spec.kind == "sine":
        x = np.sin(2.0 * np.pi * spec.frequency * t)
    elif spec.kind == "swept_sine":
        f1 = spec.frequency_end if spec.frequency_end is not None else spec.frequency
        # Linear chirp: phase = 2*pi * (f0*t + (f1-f0)*t^2 / (2*T)).
        phase = 2.0 * np.pi * (spec.frequency * t + (f1 - spec.frequency) * t**2 / (2.0 * spec.duration))
        x = np.sin(phase)
    elif spec.kind == "pulse_train":
        carrier = np.sin(2.0 * np.pi * spec.frequency * t)
        gate = (t % spec.pulse_period) < spec.pulse_duty * spec.pulse_period
        x = carrier * gate
    else:  # enveloped_noise
        rng = np.random.default_rng(spec.noise_seed)
        x = rng.standard_normal(n)

    x = _apply_envelope(x, spec.envelope, sample_rate)
    peak = np.abs(x).max() if n else 0.0
    if peak > 0:
        x = x * (spec.amplitude / peak)
    return Waveform(sample_rate, x)


def reverse(w: Waveform) -> Waveform:
    return Waveform(w.sample_rate, w.samples[::-1])


def repeat(w: Waveform, n: int) -> Waveform:
    if n < 1:
        raise WaveformError(f"repeat count must be >= 1, got {n}")
    return Waveform(w.sample_rate, np.tile(w.samples, n))


def mix(a: Waveform, b: Waveform) -> Waveform:
    """Element-wise sum, hard-clipped to [-1, 1]; the shorter input is zero-padded."""
    if a.sample_rate != b.sample_rate:
        raise WaveformError(f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] += a.samples
    out[: len(b)] += b.samples
    return Waveform(a.sample_rate, np.clip(out, -1.0, 1.0))


def low_pass(w: Waveform, cutoff_hz: float) -> Waveform:
    """Single-pass 4th-order Butterworth low-pass, output clipped to [-1, 1]."""
    nyquist = w.sample_rate / 2.0
    if not 0.0 < cutoff_hz < nyquist:
        raise WaveformError(f"cutoff {cutoff_hz} Hz outside (0, {nyquist})")
    b, a = butter(4, cutoff_hz, btype="low", fs=w.sample_rate)
    return Waveform(w.sample_rate, np.clip(lfilter(b, a, w.samples), -1.0, 1.0))


def pad_or_truncate(w: Waveform, target_len: int) -> Waveform:
    if target_len < 0:
        raise WaveformError("target_len must be non-negative")
    if len(w) >= target_len:
        return Waveform(w.sample_rate, w.samples[:target_len])
    out = np.zeros(target_len)
    out[: len(w)] = w.samples
    return Waveform(w.sample_rate, out)


def normalize(w: Waveform) -> Waveform:
    """Scale the peak to 1.0; silence passes through unchanged."""
    peak = np.abs(w.samples).max() if len(w) else 0.0
    if peak == 0.0:
        return w
    return Waveform(w.sample_rate, w.samples / peak)


def write_wav(w: Waveform, path) -> None:
    """Write mono 16-bit PCM little-endian WAV."""
    pcm = np.round(w.samples * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV written by write_wav (or compatible)."""
    try:
        f = wave.open(str(path), "rb")
    except (OSError, wave.Error) as exc:
        raise WaveformError(f"unreadable WAV file {path}: {exc}") from exc
    with f:
        if f.getnchannels() != 1:
            raise WaveformError(f"{path}: only mono WAV is supported")
        if f.getsampwidth() != 2 or f.getcomptype() != "NONE":
            raise WaveformError(f"{path}: only uncompressed 16-bit PCM is supported")
        raw = f.readframes(f.getnframes())
        rate = f.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(rate, np.clip(samples, -1.0, 1.0))
