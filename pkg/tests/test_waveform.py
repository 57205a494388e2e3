import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haptix.waveform import (
    SynthSpec,
    Waveform,
    WaveformError,
    low_pass,
    mix,
    normalize,
    pad_or_truncate,
    read_wav,
    repeat,
    reverse,
    synthesize,
    write_wav,
)


def sine(freq=100.0, amp=0.5, dur=1.0, sr=8000):
    return synthesize(SynthSpec("sine", freq, amp, dur), sr)


def count_nonzero_runs(x):
    # Brute-force run-length scan used as the pulse-count oracle.
    runs = 0
    in_run = False
    for v in x:
        if v != 0.0 and not in_run:
            runs += 1
        in_run = v != 0.0
    return runs


class TestSynthesize:
    def test_sine_length_and_peak(self):
        w = sine()
        assert len(w) == 8000
        assert abs(np.abs(w.samples).max() - 0.5) < 1e-6

    def test_sine_zero_phase(self):
        assert sine().samples[0] == 0.0

    def test_pulse_train_burst_count(self):
        w = synthesize(SynthSpec("pulse_train", 100.0, 0.8, 1.0, pulse_period=0.25, pulse_duty=0.2))
        assert count_nonzero_runs(w.samples) == 4

    def test_deterministic(self):
        spec = SynthSpec("enveloped_noise", 100.0, 0.7, 2.0, envelope=((0.0, 0.0), (1.0, 1.0), (2.0, 0.2)), noise_seed=9)
        a, b = synthesize(spec), synthesize(spec)
        assert np.array_equal(a.samples, b.samples)

    def test_swept_sine_peak(self):
        w = synthesize(SynthSpec("swept_sine", 50.0, 0.9, 2.0, frequency_end=300.0))
        assert abs(np.abs(w.samples).max() - 0.9) < 1e-6

    @pytest.mark.parametrize(
        "spec",
        [
            SynthSpec("sine", 5.0, 0.5, 1.0),      # below band
            SynthSpec("sine", 600.0, 0.5, 1.0),    # above band
            SynthSpec("sine", 100.0, 0.5, 0.0),    # nonpositive duration
            SynthSpec("sine", 100.0, 0.5, 11.0),   # over max duration
            SynthSpec("sine", 100.0, 1.5, 1.0),    # amplitude out of range
            SynthSpec("dog", 100.0, 0.5, 1.0),     # unknown kind
        ],
    )
    def test_invalid_specs(self, spec):
        with pytest.raises(WaveformError):
            synthesize(spec)


class TestTransforms:
    def test_reverse_involution(self):
        w = sine()
        assert np.array_equal(reverse(reverse(w)).samples, w.samples)

    def test_reverse_ramp(self):
        w = Waveform(8000, np.array([0.0, 0.5, 1.0]))
        assert np.array_equal(reverse(w).samples, [1.0, 0.5, 0.0])

    def test_reverse_palindrome(self):
        w = Waveform(8000, np.array([0.0, 1.0, 0.0]))
        assert np.array_equal(reverse(w).samples, w.samples)

    def test_repeat_identity_and_length(self):
        w = sine(dur=0.1)
        assert np.array_equal(repeat(w, 1).samples, w.samples)
        assert len(repeat(w, 3)) == 3 * len(w)

    def test_repeat_concatenation(self):
        w = Waveform(8000, np.array([0.1, 0.2]))
        assert np.array_equal(repeat(w, 2).samples, [0.1, 0.2, 0.1, 0.2])

    def test_repeat_zero_rejected(self):
        with pytest.raises(WaveformError):
            repeat(sine(dur=0.1), 0)

    def test_mix_additive_identity(self):
        w = sine()
        silence = Waveform(8000, np.zeros(len(w)))
        assert np.array_equal(mix(w, silence).samples, w.samples)

    def test_mix_clips(self):
        w = sine(amp=0.7)
        assert mix(w, w).samples.max() == 1.0

    def test_mix_out_of_phase_cancels(self):
        # Oracle: analytic anti-phase sine. 100 Hz at 8 kHz samples the crest
        # exactly, so synthesize() applies no peak correction.
        t = np.arange(8000) / 8000.0
        anti = Waveform(8000, 0.5 * np.sin(2 * np.pi * 100.0 * t + np.pi))
        assert np.abs(mix(sine(), anti).samples).max() < 1e-6

    def test_mix_rate_mismatch(self):
        with pytest.raises(WaveformError):
            mix(sine(sr=8000), sine(sr=4000))

    def test_mix_pads_shorter(self):
        a = Waveform(8000, np.array([0.5, 0.5]))
        b = Waveform(8000, np.array([0.25]))
        assert np.array_equal(mix(a, b).samples, [0.75, 0.5])


class TestLowPass:
    def test_stopband_attenuation(self):
        # 4th-order Butterworth at 2 octaves above cutoff: |H| = 1/sqrt(1+4^8),
        # about -48 dB; require >= 40 dB on the steady-state tail.
        w = sine(freq=400.0, amp=0.5, dur=2.0)
        y = low_pass(w, 100.0)
        tail = slice(len(w) // 2, None)
        ratio = np.sqrt(np.mean(y.samples[tail] ** 2) / np.mean(w.samples[tail] ** 2))
        assert 20 * np.log10(ratio) <= -40.0

    def test_passband_flat(self):
        # |H| at cutoff/10 is 1/sqrt(1+0.1^8): well within 1 dB.
        w = sine(freq=10.0, amp=0.5, dur=4.0)
        y = low_pass(w, 100.0)
        tail = slice(len(w) // 2, None)
        ratio = np.sqrt(np.mean(y.samples[tail] ** 2) / np.mean(w.samples[tail] ** 2))
        assert abs(20 * np.log10(ratio)) < 1.0

    def test_no_dc_introduced(self):
        # Integer periods, transient excluded: output stays DC-free.
        w = sine(freq=50.0, amp=0.5, dur=2.0)
        y = low_pass(w, 100.0)
        assert abs(np.mean(y.samples[8000:])) < 1e-6

    def test_cutoff_out_of_range(self):
        for bad in (0.0, -1.0, 4000.0, 5000.0):
            with pytest.raises(WaveformError):
                low_pass(sine(), bad)


class TestPlumbing:
    def test_pad_or_truncate_noop(self):
        w = Waveform(8000, np.linspace(-1, 1, 100))
        assert np.array_equal(pad_or_truncate(w, 100).samples, w.samples)

    def test_pad_appends_zeros(self):
        w = Waveform(8000, np.array([0.5]))
        assert np.array_equal(pad_or_truncate(w, 3).samples, [0.5, 0.0, 0.0])

    def test_truncate_drops_tail(self):
        w = Waveform(8000, np.array([0.1, 0.2, 0.3]))
        assert np.array_equal(pad_or_truncate(w, 2).samples, [0.1, 0.2])

    def test_normalize(self):
        w = Waveform(8000, np.array([0.0, 0.25, -0.5]))
        assert np.allclose(normalize(w).samples, [0.0, 0.5, -1.0])

    def test_normalize_silence_noop(self):
        w = Waveform(8000, np.zeros(10))
        assert np.array_equal(normalize(w).samples, w.samples)

    def test_wav_round_trip(self, tmp_path):
        w = sine(freq=123.0, amp=0.9, dur=0.25)
        path = tmp_path / "t.wav"
        write_wav(w, path)
        back = read_wav(path)
        assert back.sample_rate == w.sample_rate
        assert len(back) == len(w)
        assert np.abs(back.samples - w.samples).max() <= 1.0 / 32768.0

    def test_read_wav_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not a wav at all")
        with pytest.raises(WaveformError):
            read_wav(path)

    def test_read_wav_rejects_stereo(self, tmp_path):
        import wave

        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(8000)
            f.writeframes(b"\x00\x00" * 32)
        with pytest.raises(WaveformError):
            read_wav(path)


@settings(max_examples=60, deadline=None)
@given(
    ops=st.lists(st.sampled_from(["reverse", "repeat", "mix", "lowpass", "pad", "norm"]), max_size=6),
    seed=st.integers(0, 2**16),
)
def test_transform_chains_preserve_amplitude_bound(ops, seed):
    rng = np.random.default_rng(seed)
    w = synthesize(SynthSpec("enveloped_noise", 100.0, 0.95, 0.5, noise_seed=seed))
    for op in ops:
        if op == "reverse":
            w = reverse(w)
        elif op == "repeat":
            w = repeat(w, int(rng.integers(1, 3)))
        elif op == "mix":
            w = mix(w, synthesize(SynthSpec("sine", 60.0, 0.9, 0.3), w.sample_rate))
        elif op == "lowpass":
            w = low_pass(w, 150.0)
        elif op == "pad":
            w = pad_or_truncate(w, int(rng.integers(1, 2 * len(w) + 1)))
        else:
            w = normalize(w)
        assert np.abs(w.samples).max() <= 1.0 + 1e-12
