/**
 * Typed client for the rating service's HTTP interface.
 *
 * Endpoints consumed (all same-origin, served by the rating service):
 *   GET  /api/session/{rater_id}/next  -> next card, or {done, completed, total}
 *   GET  /api/progress/{rater_id}      -> {completed, total}
 *   POST /api/rating                   -> {accepted, seq} | 400/404 {error}
 *   GET  /signals/{id}.wav             -> audio bytes (via wav_url)
 *
 * Rating values are validated here before anything touches the wire, so
 * an out-of-range or non-integer rating is unrepresentable in a request.
 */

export interface NextCard {
  readonly signal_id: string;
  readonly wav_url: string;
  readonly category: string;
  readonly caption: string;
  readonly caption_id: string;
}

export interface SessionDone {
  readonly done: true;
  readonly completed: number;
  readonly total: number;
}

export type NextResponse = NextCard | SessionDone;

export interface Progress {
  readonly completed: number;
  readonly total: number;
}

export interface SubmitAck {
  readonly accepted: true;
  readonly seq: number;
}

/** The backend surface the session controller depends on. */
export interface RatingBackend {
  fetchNext(raterId: string): Promise<NextResponse>;
  fetchProgress(raterId: string): Promise<Progress>;
  submitRating(captionId: string, raterId: string, rating: number): Promise<SubmitAck>;
}

export function isSessionDone(response: NextResponse): response is SessionDone {
  return (response as SessionDone).done === true;
}

export class ApiError extends Error {
  /** HTTP status of the rejection, or null when the request never completed. */
  readonly status: number | null;

  constructor(message: string, status: number | null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }

  /** True when the request failed before reaching the service (retryable). */
  get isNetwork(): boolean {
    return this.status === null;
  }

  /**
   * A duplicate submit that the service already recorded.  The rating is
   * durably stored, so callers may treat this as an acknowledgment.
   */
  get alreadyRated(): boolean {
    return this.status === 400 && /already rated/i.test(this.message);
  }
}

export const RATING_MIN = 1;
export const RATING_MAX = 7;

export class RatingApi implements RatingBackend {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`, null);
    }
    const text = await response.text();
    let payload: unknown = null;
    try {
      payload = text ? JSON.parse(text) : null;
    } catch {
      // non-JSON body; fall through to the status-based error below
    }
    if (!response.ok) {
      const detail =
        payload !== null && typeof payload === "object" && "error" in payload
          ? String((payload as { error: unknown }).error)
          : `HTTP ${response.status}`;
      throw new ApiError(detail, response.status);
    }
    return payload as T;
  }

  fetchNext(raterId: string): Promise<NextResponse> {
    return this.request<NextResponse>(
      `/api/session/${encodeURIComponent(raterId)}/next`,
    );
  }

  fetchProgress(raterId: string): Promise<Progress> {
    return this.request<Progress>(
      `/api/progress/${encodeURIComponent(raterId)}`,
    );
  }

  submitRating(
    captionId: string,
    raterId: string,
    rating: number,
  ): Promise<SubmitAck> {
    if (!Number.isInteger(rating) || rating < RATING_MIN || rating > RATING_MAX) {
      throw new RangeError(
        `rating must be an integer in ${RATING_MIN}-${RATING_MAX}`,
      );
    }
    return this.request<SubmitAck>("/api/rating", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        caption_id: captionId,
        rater_id: raterId,
        rating,
      }),
    });
  }

  /** Absolute URL for a card's signal audio. */
  wavUrl(card: NextCard): string {
    return this.baseUrl + card.wav_url;
  }
}
