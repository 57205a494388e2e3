/**
 * Session state machine for one rater in one browser tab.
 *
 * All client-side guarantees live here, independent of the DOM:
 *
 *  - submit stays blocked until the signal has been played at least once
 *    AND a rating is selected; blocked attempts surface an explanatory
 *    notice instead of posting;
 *  - rating values are integers 1-7; anything else throws and never
 *    enters the state;
 *  - at most one submission is in flight; once acknowledged the card is
 *    closed, so a double submit is a no-op;
 *  - a failed submission keeps the card and the selected rating and
 *    exposes a retry affordance;
 *  - the card object is frozen on receipt: what gets rated is exactly
 *    what the service sent, echoed back by caption_id.
 */

import {
  ApiError,
  isSessionDone,
  RATING_MAX,
  RATING_MIN,
  type NextCard,
  type Progress,
  type RatingBackend,
} from "./api.js";

export const RATING_VALUES: readonly number[] = [1, 2, 3, 4, 5, 6, 7];

/** On-screen guidance for the two rating criteria. */
export const RATING_CRITERIA: readonly string[] = [
  "clarity and semantic accuracy",
  "alignment between the haptic vibration experience and caption",
];

export interface CardState {
  readonly card: NextCard;
  /** The signal has finished playing at least once. */
  readonly played: boolean;
  /** Selected rating, or null before the rater picks one. */
  readonly selected: number | null;
  /** A submission is on the wire; further submits are no-ops. */
  readonly inFlight: boolean;
  /** The service acknowledged the rating; the card is closed. */
  readonly acked: boolean;
  /** Explanatory message for a blocked or failed action, if any. */
  readonly notice: string | null;
  /** A failed submission can be retried without losing the selection. */
  readonly canRetry: boolean;
}

export type SessionState =
  | { readonly kind: "idle" }
  | { readonly kind: "loading" }
  | { readonly kind: "card"; readonly cardState: CardState; readonly progress: Progress }
  | { readonly kind: "done"; readonly progress: Progress }
  | { readonly kind: "loadError"; readonly message: string };

function freshCardState(card: NextCard): CardState {
  return {
    card: Object.freeze({ ...card }),
    played: false,
    selected: null,
    inFlight: false,
    acked: false,
    notice: null,
    canRetry: false,
  };
}

export class RatingSession {
  private _state: SessionState = { kind: "idle" };

  constructor(
    private readonly api: RatingBackend,
    readonly raterId: string,
    private readonly onChange: (state: SessionState) => void = () => {},
  ) {
    if (!raterId.trim()) {
      throw new RangeError("rater id must be non-empty");
    }
  }

  get state(): SessionState {
    return this._state;
  }

  private set(state: SessionState): void {
    this._state = state;
    this.onChange(state);
  }

  private patchCard(patch: Partial<CardState>): void {
    if (this._state.kind !== "card") return;
    this.set({
      kind: "card",
      progress: this._state.progress,
      cardState: { ...this._state.cardState, ...patch },
    });
  }

  /** Fetch the first unrated card (or the completion state on resume). */
  async start(): Promise<void> {
    await this.loadNext();
  }

  /** Re-attempt the last failed card load. */
  async retryLoad(): Promise<void> {
    if (this._state.kind !== "loadError") return;
    await this.loadNext();
  }

  /** Record that the current signal has played through once. */
  notePlayed(): void {
    if (this._state.kind !== "card") return;
    if (this._state.cardState.played) return;
    this.patchCard({ played: true, notice: null });
  }

  /**
   * Select a rating.  Only integers 1-7 are representable; anything else
   * throws RangeError and leaves the state untouched.
   */
  selectRating(value: number): void {
    if (!Number.isInteger(value) || value < RATING_MIN || value > RATING_MAX) {
      throw new RangeError(
        `rating must be an integer in ${RATING_MIN}-${RATING_MAX}`,
      );
    }
    if (this._state.kind !== "card") return;
    const cs = this._state.cardState;
    if (cs.inFlight || cs.acked) return; // the selection is locked once submitted
    this.patchCard({ selected: value, notice: null });
  }

  canSubmit(): boolean {
    if (this._state.kind !== "card") return false;
    const cs = this._state.cardState;
    return cs.played && cs.selected !== null && !cs.inFlight && !cs.acked;
  }

  /**
   * Submit the selected rating and, on acknowledgment, advance to the
   * next card.  Blocked attempts set an explanatory notice; failures
   * keep the selection and flag the card retryable.
   */
  async submit(): Promise<void> {
    if (this._state.kind !== "card") return;
    const cs = this._state.cardState;
    if (cs.inFlight || cs.acked) return; // double submit is a no-op
    if (!cs.played) {
      this.patchCard({
        notice: "Play the vibration at least once before rating it.",
      });
      return;
    }
    if (cs.selected === null) {
      this.patchCard({
        notice: "Select a rating from 1 (poor) to 7 (excellent) first.",
      });
      return;
    }
    const progress = this._state.progress;
    this.patchCard({ inFlight: true, notice: null, canRetry: false });
    try {
      await this.api.submitRating(cs.card.caption_id, this.raterId, cs.selected);
    } catch (err) {
      if (!(err instanceof ApiError && err.alreadyRated)) {
        const message =
          err instanceof ApiError && err.isNetwork
            ? "Couldn't reach the rating service. Your selection is kept — retry when the connection is back."
            : `The service rejected the rating (${err instanceof Error ? err.message : String(err)}). Your selection is kept — retry.`;
        this.patchCard({ inFlight: false, canRetry: true, notice: message });
        return;
      }
      // "already rated": a previous attempt landed, so treat it as acknowledged.
    }
    const advanced: Progress = {
      completed: progress.completed + 1,
      total: progress.total,
    };
    this.set({
      kind: "card",
      progress: advanced,
      cardState: { ...cs, inFlight: false, acked: true, notice: null, canRetry: false },
    });
    await this.loadNext(advanced);
  }

  private async loadNext(knownProgress?: Progress): Promise<void> {
    this.set({ kind: "loading" });
    try {
      const next = await this.api.fetchNext(this.raterId);
      if (isSessionDone(next)) {
        this.set({
          kind: "done",
          progress: { completed: next.completed, total: next.total },
        });
        return;
      }
      const progress =
        knownProgress ?? (await this.api.fetchProgress(this.raterId));
      this.set({ kind: "card", cardState: freshCardState(next), progress });
    } catch (err) {
      this.set({
        kind: "loadError",
        message:
          err instanceof Error ? err.message : `unexpected failure: ${String(err)}`,
      });
    }
  }
}
