"""Frequency-band tokenizer for vibrotactile waveforms.

Converts a waveform into a sequence of discrete tokens, one per analysis
frame.  Each frame is Hann-windowed, transformed with an FFT, and reduced
to its dominant in-band spectral peak; the peak is quantized on two axes:

* **frequency** — logarithmic bins sized by a just-noticeable-difference
  ratio.  Bin ``i`` covers ``[f_min * (1+jnd)^i, f_min * (1+jnd)^(i+1))``,
  and the number of bins is ``ceil(ln(f_max/f_min) / ln(1+jnd))``.
* **amplitude** — uniform levels over ``[0, 1)``; the estimate for a
  windowed sinusoid at bin ``k`` is ``2|X[k]| / sum(window)``, which is
  exact for on-bin tones under a periodic Hann window.

Frames whose in-band peak falls below ``silence_threshold`` emit the PAD
token, so every full frame maps to exactly one token and token sequences
stay aligned with frame positions.  A waveform shorter than one frame
emits a single PAD token.  The vocabulary is the ``n_bins * amp_levels``
content tokens ``FREQ_i_AMP_j`` followed by PAD and SEP.

The class follows the scikit-learn estimator protocol: constructor
arguments are stored verbatim, derived state is computed in :meth:`fit`
(suffixed with ``_``), and :meth:`transform` maps a list of waveforms to
a list of token-id sequences.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .waveform import DEFAULT_SAMPLE_RATE, Waveform

__all__ = ["FrequencyTokenizer", "PAD_TOKEN", "SEP_TOKEN"]

PAD_TOKEN = "PAD"
SEP_TOKEN = "SEP"


def _as_samples(x: object, sample_rate: int) -> np.ndarray:
    """Validate one input item and return its samples as float64."""
    if isinstance(x, Waveform):
        if x.sample_rate != sample_rate:
            raise ValueError(
                f"waveform sample rate {x.sample_rate} does not match "
                f"tokenizer sample rate {sample_rate}"
            )
        return x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D sample array, got shape {arr.shape}")
    if arr.size and (not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > 1.0 + 1e-9):
        raise ValueError("samples must be finite and within [-1, 1]")
    return arr


class FrequencyTokenizer(BaseEstimator, TransformerMixin):
    """Tokenize waveforms into dominant frequency/amplitude tokens.

    Parameters
    ----------
    f_min, f_max : float
        Analysis band in Hz; peaks outside ``[f_min, f_max)`` are ignored.
    jnd_ratio : float
        Relative width of each logarithmic frequency bin.
    amp_levels : int
        Number of uniform amplitude levels over ``[0, 1)``.
    frame_len, hop_len : int
        Analysis frame length and hop, in samples.  Only full frames are
        analyzed.
    silence_threshold : float
        In-band peak amplitude below which a frame emits PAD.
    sample_rate : int
        Required sample rate of all inputs.
    """

    def __init__(
        self,
        f_min: float = 10.0,
        f_max: float = 500.0,
        jnd_ratio: float = 0.19,
        amp_levels: int = 12,
        frame_len: int = 2048,
        hop_len: int = 1539,
        silence_threshold: float = 0.02,
        sample_rate: int = DEFAULT_SAMPLE_RATE,
    ) -> None:
        self.f_min = f_min
        self.f_max = f_max
        self.jnd_ratio = jnd_ratio
        self.amp_levels = amp_levels
        self.frame_len = frame_len
        self.hop_len = hop_len
        self.silence_threshold = silence_threshold
        self.sample_rate = sample_rate

    # ------------------------------------------------------------------
    # estimator protocol
    # ------------------------------------------------------------------
    def fit(self, X: object = None, y: object = None) -> "FrequencyTokenizer":
        """Validate parameters and build the token vocabulary.

        The tokenizer is analytic (nothing is learned from ``X``), so
        ``X`` may be omitted; it is accepted for pipeline compatibility.
        """
        if not 0 < self.f_min < self.f_max:
            raise ValueError("need 0 < f_min < f_max")
        if self.f_max > self.sample_rate / 2:
            raise ValueError("f_max must not exceed the Nyquist frequency")
        if self.jnd_ratio <= 0:
            raise ValueError("jnd_ratio must be positive")
        if self.amp_levels < 1:
            raise ValueError("amp_levels must be >= 1")
        if self.frame_len < 2 or self.hop_len < 1:
            raise ValueError("need frame_len >= 2 and hop_len >= 1")
        if not 0 <= self.silence_threshold < 1:
            raise ValueError("silence_threshold must be in [0, 1)")

        self.n_bins_ = math.ceil(
            math.log(self.f_max / self.f_min) / math.log(1.0 + self.jnd_ratio)
        )
        self.pad_id_ = self.n_bins_ * self.amp_levels
        self.sep_id_ = self.pad_id_ + 1
        self.vocab_ = [
            f"FREQ_{i}_AMP_{j}"
            for i in range(self.n_bins_)
            for j in range(self.amp_levels)
        ] + [PAD_TOKEN, SEP_TOKEN]
        self.vocab_size_ = len(self.vocab_)
        # periodic Hann: exact coherent gain (sum w = N/2) for on-bin tones
        self.window_ = get_window("hann", self.frame_len, fftbins=True)
        self._window_sum = float(np.sum(self.window_))
        freqs = np.fft.rfftfreq(self.frame_len, d=1.0 / self.sample_rate)
        self._band = np.flatnonzero((freqs >= self.f_min) & (freqs < self.f_max))
        if self._band.size == 0:
            raise ValueError("no FFT bins fall inside [f_min, f_max)")
        self._band_freqs = freqs[self._band]
        return self

    def transform(self, X: Iterable[object]) -> list[list[int]]:
        """Encode each waveform in ``X`` to a list of token ids."""
        check_is_fitted(self, "vocab_")
        return [self.encode(x) for x in X]

    # ------------------------------------------------------------------
    # encoding
    # ------------------------------------------------------------------
    def encode(self, waveform: object) -> list[int]:
        """Encode one waveform (``Waveform`` or sample array) to token ids."""
        check_is_fitted(self, "vocab_")
        samples = _as_samples(waveform, self.sample_rate)
        if len(samples) < self.frame_len:
            return [self.pad_id_]
        tokens = []
        for start in range(0, len(samples) - self.frame_len + 1, self.hop_len):
            frame = samples[start : start + self.frame_len]
            tokens.append(self._encode_frame(frame))
        return tokens

    def _encode_frame(self, frame: np.ndarray) -> int:
        spectrum = np.abs(np.fft.rfft(frame * self.window_))
        band = spectrum[self._band]
        peak = int(np.argmax(band))
        amplitude = 2.0 * band[peak] / self._window_sum
        if amplitude < self.silence_threshold:
            return self.pad_id_
        frequency = self._band_freqs[peak]
        freq_bin = math.floor(
            math.log(frequency / self.f_min) / math.log(1.0 + self.jnd_ratio)
        )
        freq_bin = min(max(freq_bin, 0), self.n_bins_ - 1)
        amp_level = min(int(min(amplitude, 1.0) * self.amp_levels), self.amp_levels - 1)
        return freq_bin * self.amp_levels + amp_level

    # ------------------------------------------------------------------
    # token utilities
    # ------------------------------------------------------------------
    def num_tokens(self, num_samples: int) -> int:
        """Number of tokens produced by a signal of ``num_samples`` samples."""
        check_is_fitted(self, "vocab_")
        if num_samples < self.frame_len:
            return 1
        return (num_samples - self.frame_len) // self.hop_len + 1

    def ids_to_strings(self, ids: Sequence[int]) -> list[str]:
        check_is_fitted(self, "vocab_")
        out = []
        for i in ids:
            if not 0 <= i < self.vocab_size_:
                raise ValueError(f"token id {i} out of range [0, {self.vocab_size_})")
            out.append(self.vocab_[i])
        return out

    def strings_to_ids(self, tokens: Sequence[str]) -> list[int]:
        check_is_fitted(self, "vocab_")
        index = {t: i for i, t in enumerate(self.vocab_)}
        out = []
        for t in tokens:
            if t not in index:
                raise ValueError(f"unknown token {t!r}")
            out.append(index[t])
        return out
