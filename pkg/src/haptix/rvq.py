"""Residual vector quantization of vibrotactile waveforms.

Signals are padded or truncated to a fixed canvas of
``(num_frames - 1) * hop_len + frame_len`` samples and cut into
``num_frames`` frames.  Each stage quantizes the residual left by the
previous stages against its own codebook; the token sequence is the
stage-major concatenation of the per-frame code indices, so every signal
maps to exactly ``num_stages * num_frames`` tokens regardless of length.

Codebooks are trained per stage with k-means (k-means++ seeding, a fixed
number of Lloyd iterations, empty clusters reseeded at the point farthest
from its assigned centroid).  Entry 0 of every stage is pinned to the
zero vector and never trained: silence encodes to code 0, and a later
stage can always choose "add nothing", so reconstruction error can never
increase when stages are added.  When the training corpus has fewer
distinct frames than codebook entries, the distinct frames become the
codebook verbatim (padded with zero rows) and reconstruction of that
corpus is exact.

Follows the scikit-learn estimator protocol: :meth:`fit` learns the
codebooks, :meth:`transform` encodes waveforms to token lists, and
:meth:`inverse_transform` decodes token lists back to waveforms.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .freq_tokenizer import _as_samples
from .waveform import DEFAULT_SAMPLE_RATE, Waveform

__all__ = ["ResidualVectorQuantizer"]

_CHUNK = 4096  # frames per block when computing distance matrices
_FORMAT_VERSION = 1


def _nearest(frames: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per frame; returns (codes, squared distances)."""
    codes = np.empty(len(frames), dtype=np.int64)
    dists = np.empty(len(frames))
    c_norm = np.sum(centroids**2, axis=1)
    for lo in range(0, len(frames), _CHUNK):
        block = frames[lo : lo + _CHUNK]
        d2 = c_norm[None, :] - 2.0 * (block @ centroids.T)
        idx = np.argmin(d2, axis=1)
        codes[lo : lo + _CHUNK] = idx
        d2_chosen = d2[np.arange(len(block)), idx] + np.sum(block**2, axis=1)
        dists[lo : lo + _CHUNK] = np.maximum(d2_chosen, 0.0)
    return codes, dists


def _kmeans(frames: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Plain k-means with k-means++ seeding and farthest-point reseeding."""
    n, d = frames.shape
    centroids = np.empty((k, d))
    centroids[0] = frames[rng.integers(n)]
    d2 = np.sum((frames - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:  # all remaining points coincide with a centroid
            centroids[j:] = frames[rng.integers(n, size=k - j)]
            break
        centroids[j] = frames[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((frames - centroids[j]) ** 2, axis=1))

    for _ in range(iters):
        codes, dists = _nearest(frames, centroids)
        sums = np.zeros_like(centroids)
        np.add.at(sums, codes, frames)
        counts = np.bincount(codes, minlength=k)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            farthest = np.argsort(dists)[::-1]
            centroids[empty] = frames[farthest[: empty.size]]
    return centroids


class ResidualVectorQuantizer(BaseEstimator, TransformerMixin):
    """Fixed-length residual VQ codec for waveforms.

    Parameters
    ----------
    frame_len, hop_len : int
        Frame size and stride in samples.  Equal values tile the canvas
        without overlap; smaller hops decode by averaged overlap-add.
    num_frames : int
        Frames per signal; the canvas length follows from this.
    num_stages : int
        Residual quantization stages; tokens per signal is
        ``num_stages * num_frames``.
    codebook_size : int
        Entries per stage codebook, including the pinned zero entry.
    kmeans_iters : int
        Lloyd iterations per stage.
    max_fit_frames : int
        Cap on frames used to train each stage (subsampled at random).
    random_state : int
        Seed for subsampling and k-means initialization.
    sample_rate : int
        Sample rate asserted on inputs and stamped on decoded waveforms.
    """

    def __init__(
        self,
        frame_len: int = 58,
        hop_len: int = 58,
        num_frames: int = 1379,
        num_stages: int = 1,
        codebook_size: int = 1024,
        kmeans_iters: int = 25,
        max_fit_frames: int = 20000,
        random_state: int = 0,
        sample_rate: int = DEFAULT_SAMPLE_RATE,
    ) -> None:
        self.frame_len = frame_len
        self.hop_len = hop_len
        self.num_frames = num_frames
        self.num_stages = num_stages
        self.codebook_size = codebook_size
        self.kmeans_iters = kmeans_iters
        self.max_fit_frames = max_fit_frames
        self.random_state = random_state
        self.sample_rate = sample_rate

    # ------------------------------------------------------------------
    # canvas helpers
    # ------------------------------------------------------------------
    def _validate_params(self) -> None:
        if self.frame_len < 1 or self.hop_len < 1 or self.hop_len > self.frame_len:
            raise ValueError("need 1 <= hop_len <= frame_len")
        if self.num_frames < 1 or self.num_stages < 1:
            raise ValueError("num_frames and num_stages must be >= 1")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2 (entry 0 is the zero vector)")
        if self.kmeans_iters < 1 or self.max_fit_frames < 1:
            raise ValueError("kmeans_iters and max_fit_frames must be >= 1")

    @property
    def canvas_len(self) -> int:
        return (self.num_frames - 1) * self.hop_len + self.frame_len

    @property
    def tokens_per_signal(self) -> int:
        return self.num_stages * self.num_frames

    def _frames(self, x: object) -> np.ndarray:
        samples = _as_samples(x, self.sample_rate)
        canvas = np.zeros(self.canvas_len)
        n = min(len(samples), self.canvas_len)
        canvas[:n] = samples[:n]
        starts = np.arange(self.num_frames) * self.hop_len
        return canvas[starts[:, None] + np.arange(self.frame_len)[None, :]]

    # ------------------------------------------------------------------
    # estimator protocol
    # ------------------------------------------------------------------
    def fit(self, X: Iterable[object], y: object = None) -> "ResidualVectorQuantizer":
        """Learn one codebook per stage from the waveforms in ``X``."""
        self._validate_params()
        frame_list = [self._frames(x) for x in X]
        if not frame_list:
            raise ValueError("cannot fit on an empty corpus")
        residuals = np.concatenate(frame_list, axis=0)
        rng = np.random.default_rng(self.random_state)

        codebooks = np.zeros((self.num_stages, self.codebook_size, self.frame_len))
        stage_fill = []
        for stage in range(self.num_stages):
            pool = residuals[np.any(residuals != 0.0, axis=1)]
            if len(pool) > self.max_fit_frames:
                pick = rng.choice(len(pool), size=self.max_fit_frames, replace=False)
                pool = pool[pick]
            distinct = np.unique(pool, axis=0)
            k = self.codebook_size - 1  # entry 0 stays the zero vector
            if len(distinct) <= k:
                codebooks[stage, 1 : 1 + len(distinct)] = distinct
                stage_fill.append(1 + len(distinct))
            elif len(pool):
                codebooks[stage, 1:] = _kmeans(pool, k, self.kmeans_iters, rng)
                stage_fill.append(self.codebook_size)
            else:  # all-zero residuals: the zero entry alone is exact
                stage_fill.append(1)
            codes, _ = _nearest(residuals, codebooks[stage])
            residuals = residuals - codebooks[stage][codes]

        self.codebooks_ = codebooks
        self.stage_fill_ = stage_fill
        return self

    def transform(self, X: Iterable[object]) -> list[list[int]]:
        check_is_fitted(self, "codebooks_")
        return [self.encode(x) for x in X]

    def inverse_transform(self, X: Iterable[Sequence[int]]) -> list[Waveform]:
        check_is_fitted(self, "codebooks_")
        return [self.decode(ids) for ids in X]

    # ------------------------------------------------------------------
    # codec
    # ------------------------------------------------------------------
    def encode(self, waveform: object) -> list[int]:
        """Encode one waveform to ``num_stages * num_frames`` code indices."""
        check_is_fitted(self, "codebooks_")
        residuals = self._frames(waveform)
        out = []
        for stage in range(self.num_stages):
            codes, _ = _nearest(residuals, self.codebooks_[stage])
            residuals = residuals - self.codebooks_[stage][codes]
            out.extend(int(c) for c in codes)
        return out

    def decode(self, ids: Sequence[int]) -> Waveform:
        """Decode code indices back to a canvas-length waveform."""
        check_is_fitted(self, "codebooks_")
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape != (self.tokens_per_signal,):
            raise ValueError(
                f"expected exactly {self.tokens_per_signal} code indices, got {ids.shape}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= self.codebook_size):
            raise ValueError(f"code indices must be in [0, {self.codebook_size})")
        per_stage = ids.reshape(self.num_stages, self.num_frames)
        frames = np.zeros((self.num_frames, self.frame_len))
        for stage in range(self.num_stages):
            frames += self.codebooks_[stage][per_stage[stage]]

        canvas = np.zeros(self.canvas_len)
        weight = np.zeros(self.canvas_len)
        for t in range(self.num_frames):
            lo = t * self.hop_len
            canvas[lo : lo + self.frame_len] += frames[t]
            weight[lo : lo + self.frame_len] += 1.0
        canvas /= np.maximum(weight, 1.0)
        return Waveform(self.sample_rate, np.clip(canvas, -1.0, 1.0))

    def reconstruction_error(self, waveform: object) -> float:
        """Mean squared error between a waveform's canvas and its decode."""
        check_is_fitted(self, "codebooks_")
        samples = _as_samples(waveform, self.sample_rate)
        canvas = np.zeros(self.canvas_len)
        n = min(len(samples), self.canvas_len)
        canvas[:n] = samples[:n]
        decoded = self.decode(self.encode(waveform)).samples
        return float(np.mean((canvas - decoded) ** 2))

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------
    def save(self, path: str) -> None:
        """Write the fitted codec to an ``.npz`` file."""
        check_is_fitted(self, "codebooks_")
        np.savez(
            path,
            version=np.int64(_FORMAT_VERSION),
            config=json.dumps(self.get_params()),
            codebooks=self.codebooks_,
            stage_fill=np.asarray(self.stage_fill_, dtype=np.int64),
        )

    @classmethod
    def load(cls, path: str) -> "ResidualVectorQuantizer":
        """Restore a codec previously written by :meth:`save`."""
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"])
            if version != _FORMAT_VERSION:
                raise ValueError(f"unsupported codec file version {version}")
            model = cls(**json.loads(str(data["config"])))
            model._validate_params()
            codebooks = data["codebooks"]
            expected = (model.num_stages, model.codebook_size, model.frame_len)
            if codebooks.shape != expected:
                raise ValueError(
                    f"codebook shape {codebooks.shape} does not match config {expected}"
                )
            model.codebooks_ = codebooks
            model.stage_fill_ = [int(v) for v in data["stage_fill"]]
        return model
