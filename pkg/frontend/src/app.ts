/**
 * Browser entry point: wires the session state machine to the DOM.
 *
 * One caption per screen: category badge, caption text, the signal panel
 * (amplitude envelope on a canvas plus a play button), the two rating
 * criteria, a 1-7 button row, submit, and a progress line.  The
 * vibration is rendered as audio playback — the fidelity note in the
 * page footer explains the substitution.
 */

import { RatingApi, type NextCard, type Progress } from "./api.js";
import {
  RatingSession,
  RATING_CRITERIA,
  RATING_VALUES,
  type SessionState,
} from "./state.js";
import { computeEnvelope, type Envelope } from "./envelope.js";

const ENVELOPE_BINS = 240;
const RATER_STORAGE_KEY = "haptix-rater-id";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Loads one signal's audio, draws its envelope, and plays it through. */
class SignalPlayer {
  private audioCtx: AudioContext | null = null;
  private buffer: AudioBuffer | null = null;
  private source: AudioBufferSourceNode | null = null;
  private startedAt = 0;
  private raf = 0;
  private envelope: Envelope | null = null;
  private _error: string | null = null;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly url: string,
    private readonly onPlayedThrough: () => void,
    private readonly onChange: () => void,
  ) {}

  get ready(): boolean {
    return this.buffer !== null;
  }

  get playing(): boolean {
    return this.source !== null;
  }

  get error(): string | null {
    return this._error;
  }

  async load(): Promise<void> {
    this._error = null;
    try {
      const response = await fetch(this.url);
      if (!response.ok) {
        throw new Error(`HTTP ${response.status}`);
      }
      const bytes = await response.arrayBuffer();
      this.audioCtx ??= new AudioContext();
      this.buffer = await this.audioCtx.decodeAudioData(bytes);
      this.envelope = computeEnvelope(
        this.buffer.getChannelData(0),
        ENVELOPE_BINS,
      );
    } catch (err) {
      this._error = `Couldn't load the signal audio (${String(err)}).`;
    }
    this.draw(null);
    this.onChange();
  }

  async play(): Promise<void> {
    if (!this.buffer || !this.audioCtx || this.source) return;
    await this.audioCtx.resume();
    const source = this.audioCtx.createBufferSource();
    source.buffer = this.buffer;
    source.connect(this.audioCtx.destination);
    source.onended = () => {
      this.source = null;
      cancelAnimationFrame(this.raf);
      this.draw(null);
      this.onPlayedThrough();
      this.onChange();
    };
    this.source = source;
    this.startedAt = this.audioCtx.currentTime;
    source.start();
    const duration = this.buffer.duration;
    const tick = () => {
      if (!this.source || !this.audioCtx) return;
      const fraction = Math.min(
        (this.audioCtx.currentTime - this.startedAt) / duration,
        1,
      );
      this.draw(fraction);
      this.raf = requestAnimationFrame(tick);
    };
    this.raf = requestAnimationFrame(tick);
    this.onChange();
  }

  dispose(): void {
    cancelAnimationFrame(this.raf);
    if (this.source) {
      try {
        this.source.stop();
      } catch {
        // already stopped
      }
      this.source = null;
    }
    void this.audioCtx?.close();
    this.audioCtx = null;
  }

  private draw(playheadFraction: number | null): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    const mid = height / 2;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#101828";
    ctx.fillRect(0, 0, width, height);
    ctx.strokeStyle = "#33415580";
    ctx.beginPath();
    ctx.moveTo(0, mid);
    ctx.lineTo(width, mid);
    ctx.stroke();
    if (this.envelope) {
      const { mins, maxs } = this.envelope;
      const bins = mins.length;
      const barWidth = width / bins;
      ctx.fillStyle = "#38bdf8";
      for (let i = 0; i < bins; i++) {
        const top = mid - maxs[i] * (mid - 2);
        const bottom = mid - mins[i] * (mid - 2);
        ctx.fillRect(i * barWidth, top, Math.max(barWidth - 0.5, 0.5), Math.max(bottom - top, 1));
      }
    }
    if (playheadFraction !== null) {
      ctx.strokeStyle = "#f8fafc";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(playheadFraction * width, 0);
      ctx.lineTo(playheadFraction * width, height);
      ctx.stroke();
      ctx.lineWidth = 1;
    }
  }
}

/** Handles to the mutable parts of the card screen. */
interface CardView {
  captionId: string;
  progressText: HTMLElement;
  playButton: HTMLButtonElement;
  playedMark: HTMLElement;
  ratingButtons: Map<number, HTMLButtonElement>;
  submitButton: HTMLButtonElement;
  notice: HTMLElement;
  retryButton: HTMLButtonElement;
  player: SignalPlayer;
}

const app = document.getElementById("app");
if (!app) {
  throw new Error("missing #app mount point");
}
const root: HTMLElement = app;

const api = new RatingApi();
let session: RatingSession | null = null;
let view: CardView | null = null;

function disposeView(): void {
  view?.player.dispose();
  view = null;
}

// ---------------------------------------------------------------------------
// Screens
// ---------------------------------------------------------------------------

function renderStart(): void {
  disposeView();
  const panel = el("section", "panel");
  panel.append(el("h2", undefined, "Start a rating session"));
  panel.append(
    el(
      "p",
      "muted",
      "You will listen to 32 vibration signals and rate 12 captions for " +
        "each, one caption at a time — 384 ratings in total. Progress is " +
        "saved on the service, so you can resume under the same name.",
    ),
  );
  const form = el("form", "start-form");
  const input = el("input");
  input.type = "text";
  input.placeholder = "Your rater name";
  input.value =
    new URLSearchParams(location.search).get("rater") ??
    localStorage.getItem(RATER_STORAGE_KEY) ??
    "";
  input.maxLength = 64;
  const button = el("button", "primary", "Start rating");
  button.type = "submit";
  form.append(input, button);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const raterId = input.value.trim();
    if (!raterId) {
      input.focus();
      return;
    }
    localStorage.setItem(RATER_STORAGE_KEY, raterId);
    session = new RatingSession(api, raterId, render);
    void session.start();
  });
  root.replaceChildren(panel);
  input.focus();
}

function renderLoading(): void {
  disposeView();
  const panel = el("section", "panel");
  panel.append(el("p", "muted", "Loading the next caption…"));
  root.replaceChildren(panel);
}

function renderLoadError(message: string): void {
  disposeView();
  const panel = el("section", "panel");
  panel.append(el("h2", undefined, "Connection trouble"));
  panel.append(el("p", "notice", `Couldn't reach the rating service: ${message}`));
  const retry = el("button", "primary", "Retry");
  retry.addEventListener("click", () => void session?.retryLoad());
  panel.append(retry);
  root.replaceChildren(panel);
}

function renderDone(progress: Progress): void {
  disposeView();
  const panel = el("section", "panel done");
  panel.append(el("h2", undefined, "Session complete"));
  panel.append(
    el(
      "p",
      undefined,
      `${progress.completed} of ${progress.total} ratings recorded. Thank you!`,
    ),
  );
  const again = el("button", undefined, "Start another session");
  again.addEventListener("click", () => {
    session = null;
    renderStart();
  });
  panel.append(again);
  root.replaceChildren(panel);
}

function buildCardScreen(card: NextCard, progress: Progress): CardView {
  disposeView();
  const panel = el("section", "panel");

  const header = el("div", "card-header");
  header.append(el("span", "category-badge", card.category));
  const progressText = el(
    "span",
    "progress",
    `${progress.completed} of ${progress.total} rated`,
  );
  header.append(progressText);
  panel.append(header);

  panel.append(el("p", "caption-label", "Caption under review"));
  panel.append(el("blockquote", "caption", card.caption));

  const signalPanel = el("div", "signal-panel");
  const canvas = el("canvas", "envelope");
  canvas.width = 640;
  canvas.height = 120;
  signalPanel.append(canvas);
  const controls = el("div", "signal-controls");
  const playButton = el("button", "primary", "Play vibration");
  const playedMark = el("span", "played-mark", "not played yet");
  controls.append(playButton, playedMark);
  signalPanel.append(controls);
  panel.append(signalPanel);

  const criteria = el("div", "criteria");
  criteria.append(el("h3", undefined, "Rate the caption on both criteria"));
  const list = el("ul");
  for (const criterion of RATING_CRITERIA) {
    list.append(el("li", undefined, criterion));
  }
  criteria.append(list);
  panel.append(criteria);

  const scale = el("div", "scale");
  scale.append(el("span", "scale-end", "1 = poor"));
  const ratingRow = el("div", "rating-row");
  const ratingButtons = new Map<number, HTMLButtonElement>();
  for (const value of RATING_VALUES) {
    const button = el("button", "rating", String(value));
    button.type = "button";
    button.setAttribute("aria-pressed", "false");
    button.addEventListener("click", () => {
      session?.selectRating(value);
    });
    ratingButtons.set(value, button);
    ratingRow.append(button);
  }
  scale.append(ratingRow);
  scale.append(el("span", "scale-end", "7 = excellent"));
  panel.append(scale);

  const actions = el("div", "actions");
  const submitButton = el("button", "primary submit", "Submit rating");
  submitButton.addEventListener("click", () => void session?.submit());
  const retryButton = el("button", "retry hidden", "Retry submit");
  retryButton.addEventListener("click", () => void session?.submit());
  actions.append(submitButton, retryButton);
  panel.append(actions);

  const notice = el("p", "notice hidden");
  panel.append(notice);

  root.replaceChildren(panel);

  const player = new SignalPlayer(
    canvas,
    api.wavUrl(card),
    () => session?.notePlayed(),
    syncCardScreen,
  );
  playButton.addEventListener("click", () => void player.play());
  void player.load();

  return {
    captionId: card.caption_id,
    progressText,
    playButton,
    playedMark,
    ratingButtons,
    submitButton,
    notice,
    retryButton,
    player,
  };
}

function syncCardScreen(): void {
  if (!session || !view) return;
  const state = session.state;
  if (state.kind !== "card") return;
  const cs = state.cardState;

  view.progressText.textContent = `${state.progress.completed} of ${state.progress.total} rated`;

  view.playButton.disabled = !view.player.ready || view.player.playing;
  view.playButton.textContent = view.player.playing
    ? "Playing…"
    : cs.played
      ? "Play again"
      : "Play vibration";
  view.playedMark.textContent = cs.played ? "played" : "not played yet";
  view.playedMark.classList.toggle("ok", cs.played);

  for (const [value, button] of view.ratingButtons) {
    const selected = cs.selected === value;
    button.classList.toggle("selected", selected);
    button.setAttribute("aria-pressed", selected ? "true" : "false");
    button.disabled = cs.inFlight || cs.acked;
  }

  view.submitButton.disabled = !session.canSubmit();
  view.submitButton.textContent = cs.inFlight
    ? "Submitting…"
    : cs.acked
      ? "Submitted"
      : "Submit rating";
  view.retryButton.classList.toggle("hidden", !cs.canRetry);

  const message = cs.notice ?? view.player.error;
  view.notice.textContent = message ?? "";
  view.notice.classList.toggle("hidden", message === null);
}

function render(state: SessionState): void {
  switch (state.kind) {
    case "idle":
      renderStart();
      break;
    case "loading":
      renderLoading();
      break;
    case "card":
      if (!view || view.captionId !== state.cardState.card.caption_id) {
        view = buildCardScreen(state.cardState.card, state.progress);
      }
      syncCardScreen();
      break;
    case "done":
      renderDone(state.progress);
      break;
    case "loadError":
      renderLoadError(state.message);
      break;
  }
}

renderStart();
