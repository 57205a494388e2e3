/** In-memory backend double with controllable failures, for state tests. */

import {
  ApiError,
  type NextCard,
  type NextResponse,
  type Progress,
  type RatingBackend,
  type SubmitAck,
} from "../src/api.js";

export function makeCards(count: number): NextCard[] {
  const cards: NextCard[] = [];
  for (let i = 0; i < count; i++) {
    cards.push({
      signal_id: `sig-${String(i).padStart(3, "0")}`,
      wav_url: `/signals/sig-${String(i).padStart(3, "0")}.wav`,
      category: ["sensory", "emotional", "associative"][i % 3],
      caption: `caption number ${i}`,
      caption_id: `sig-${String(i).padStart(3, "0")}:sensory:freq:${i % 2}`,
    });
  }
  return cards;
}

export interface SubmitCall {
  captionId: string;
  raterId: string;
  rating: number;
}

export class FakeBackend implements RatingBackend {
  readonly submitCalls: SubmitCall[] = [];
  readonly rated = new Map<string, number>(); // "rater|caption" -> rating
  /** Next N submits fail with a network-level ApiError. */
  failSubmits = 0;
  /** Next N fetchNext calls fail with a network-level ApiError. */
  failFetches = 0;
  /** When set, submits wait on this gate before resolving. */
  submitGate: (() => Promise<void>) | null = null;

  constructor(
    readonly cards: NextCard[],
    readonly total: number = cards.length,
  ) {}

  private remaining(raterId: string): NextCard[] {
    return this.cards.filter((c) => !this.rated.has(`${raterId}|${c.caption_id}`));
  }

  async fetchNext(raterId: string): Promise<NextResponse> {
    if (this.failFetches > 0) {
      this.failFetches--;
      throw new ApiError("network failure: fetch failed", null);
    }
    const remaining = this.remaining(raterId);
    if (remaining.length === 0) {
      return { done: true, completed: this.completed(raterId), total: this.total };
    }
    return remaining[0];
  }

  private completed(raterId: string): number {
    let n = 0;
    for (const key of this.rated.keys()) {
      if (key.startsWith(`${raterId}|`)) n++;
    }
    return n;
  }

  async fetchProgress(raterId: string): Promise<Progress> {
    return { completed: this.completed(raterId), total: this.total };
  }

  async submitRating(
    captionId: string,
    raterId: string,
    rating: number,
  ): Promise<SubmitAck> {
    this.submitCalls.push({ captionId, raterId, rating });
    if (this.submitGate) {
      await this.submitGate();
    }
    if (this.failSubmits > 0) {
      this.failSubmits--;
      throw new ApiError("network failure: connection refused", null);
    }
    const key = `${raterId}|${captionId}`;
    if (this.rated.has(key)) {
      throw new ApiError("caption already rated by this rater", 400);
    }
    if (!this.cards.some((c) => c.caption_id === captionId)) {
      throw new ApiError(`unknown caption_id '${captionId}'`, 404);
    }
    this.rated.set(key, rating);
    return { accepted: true, seq: this.rated.size - 1 };
  }
}
