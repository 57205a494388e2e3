/**
 * Min/max amplitude envelope of a mono signal, one pair per display bin,
 * for drawing a waveform on a canvas.  Pure and DOM-free.
 */

export interface Envelope {
  readonly mins: Float32Array;
  readonly maxs: Float32Array;
}

export function computeEnvelope(
  samples: ArrayLike<number>,
  bins: number,
): Envelope {
  if (!Number.isInteger(bins) || bins <= 0) {
    throw new RangeError("bins must be a positive integer");
  }
  const n = samples.length;
  const mins = new Float32Array(bins);
  const maxs = new Float32Array(bins);
  if (n === 0) {
    return { mins, maxs };
  }
  for (let i = 0; i < bins; i++) {
    // Partition [0, n) into `bins` contiguous ranges; when n < bins the
    // lower bound lands on a valid sample and the range is forced
    // nonempty, so short signals still fill every bin.
    const lo = Math.floor((i * n) / bins);
    const hi = Math.max(lo + 1, Math.floor(((i + 1) * n) / bins));
    let mn = samples[lo];
    let mx = samples[lo];
    for (let j = lo + 1; j < hi; j++) {
      const v = samples[j];
      if (v < mn) mn = v;
      if (v > mx) mx = v;
    }
    mins[i] = mn;
    maxs[i] = mx;
  }
  return { mins, maxs };
}
