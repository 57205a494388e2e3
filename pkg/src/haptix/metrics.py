"""Multi-reference caption metrics: BLEU-1/4, ROUGE-L, METEOR.

All metrics share one tokenization (lowercase, punctuation characters
deleted, whitespace split) and return scores in [0, 1]. Corpus reports
aggregate per-sample scores with population standard deviation and are
presented on a x100 scale.

Pinned conventions, chosen for determinism and hand-computability:

* BLEU is sentence-level with the canonical clipped n-gram precisions,
  geometric mean over orders 1..max_n, and closest-reference-length
  brevity penalty (ties resolved toward the shorter reference). Orders
  n >= 2 with zero matched n-grams are smoothed to 1/(2*H_n) where H_n
  is the candidate n-gram count at that order (H_n floors at 1 when the
  candidate is shorter than n). Order 1 is never smoothed, so a
  candidate sharing no token with any reference scores 0.
* ROUGE-L is the LCS F1 against each reference, maximized over them.
* METEOR uses exact unigram matches first, then suffix-stemmed matches
  (one of "ing", "es", "ed", "s" stripped when at least 2 characters
  remain), F_mean = 10PR/(R+9P), fragmentation penalty
  0.5*(chunks/matches)^3, maximized over references. Alignment is
  greedy in candidate order, preferring the reference position that
  extends the current chunk.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass, field

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_STEM_SUFFIXES = ("ing", "es", "ed", "s")


def tokenize(text: str) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def _stem(token: str) -> str:
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 2:
            return token[: -len(suffix)]
    return token


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: list[str], max_n: int = 4) -> float:
    """Sentence-level multi-reference BLEU over orders 1..max_n."""
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references if tokenize(r)]
    if not cand or not refs:
        return 0.0

    log_p_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(cand, n)
        h_n = max(1, len(cand) - n + 1)
        matched = 0
        for gram, count in cand_counts.items():
            best = max(ref_counts.get(gram, 0) for ref_counts in (_ngrams(r, n) for r in refs))
            matched += min(count, best)
        if matched == 0:
            if n == 1:
                return 0.0
            p_n = 1.0 / (2.0 * h_n)
        else:
            p_n = matched / h_n
        log_p_sum += math.log(p_n)

    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p_sum / max_n)


def _lcs_len(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, references: list[str]) -> float:
    """Max over references of the LCS-based F1."""
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for ref_text in references:
        ref = tokenize(ref_text)
        if not ref:
            continue
        lcs = _lcs_len(cand, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(cand), lcs / len(ref)
        best = max(best, 2 * p * r / (p + r))
    return best


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Greedy two-stage unigram alignment; pairs sorted by candidate position."""
    aligned: dict[int, int] = {}
    used_ref: set[int] = set()
    for key in (lambda t: t, _stem):
        ref_keys = [key(t) for t in ref]
        for i, tok in enumerate(cand):
            if i in aligned:
                continue
            want = key(tok)
            options = [j for j, rk in enumerate(ref_keys) if rk == want and j not in used_ref]
            if not options:
                continue
            prev = aligned.get(i - 1)
            j = prev + 1 if prev is not None and (prev + 1) in options else options[0]
            aligned[i] = j
            used_ref.add(j)
    return sorted(aligned.items())


def meteor(candidate: str, references: list[str]) -> float:
    """Simplified METEOR: exact + suffix-stemmed matches, chunk penalty."""
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for ref_text in references:
        ref = tokenize(ref_text)
        if not ref:
            continue
        pairs = _align(cand, ref)
        m = len(pairs)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        f_mean = 10 * p * r / (r + 9 * p)
        chunks = 1 + sum(
            1
            for (c0, r0), (c1, r1) in zip(pairs, pairs[1:])
            if c1 != c0 + 1 or r1 != r0 + 1
        )
        penalty = 0.5 * (chunks / m) ** 3
        best = max(best, f_mean * (1.0 - penalty))
    return best


METRIC_FUNCS = {
    "bleu1": lambda c, refs: bleu(c, refs, max_n=1),
    "bleu4": lambda c, refs: bleu(c, refs, max_n=4),
    "rougeL": rouge_l,
    "meteor": meteor,
}


@dataclass
class EvalSample:
    signal_id: str
    category: str
    candidate: str
    references: list[str]

    def __post_init__(self):
        if not any(r.strip() for r in self.references):
            raise ValueError(f"sample {self.signal_id}: needs at least one non-empty reference")


@dataclass
class MetricReport:
    """Per-sample, per-category, and overall scores (stored in [0, 1])."""

    metrics: list[str]
    per_sample: list[dict] = field(default_factory=list)

    def _stats(self, rows: list[dict]) -> dict[str, tuple[float, float, int]]:
        out = {}
        for m in self.metrics:
            vals = [row[m] for row in rows]
            n = len(vals)
            mean = sum(vals) / n if n else 0.0
            var = sum((v - mean) ** 2 for v in vals) / n if n else 0.0
            out[m] = (mean, math.sqrt(var), n)
        return out

    def overall(self) -> dict[str, tuple[float, float, int]]:
        return self._stats(self.per_sample)

    def by_category(self) -> dict[str, dict[str, tuple[float, float, int]]]:
        cats = sorted({row["category"] for row in self.per_sample})
        return {c: self._stats([r for r in self.per_sample if r["category"] == c]) for c in cats}

    def format_table(self, by_category: bool = False) -> str:
        """Render mean +/- std on the x100 presentation scale."""
        lines = ["group\t" + "\t".join(self.metrics)]

        def fmt(stats):
            return "\t".join(f"{100 * m:.2f}±{100 * s:.2f}" for m, s, _ in (stats[k] for k in self.metrics))

        lines.append(f"overall (n={len(self.per_sample)})\t" + fmt(self.overall()))
        if by_category:
            for cat, stats in self.by_category().items():
                n = stats[self.metrics[0]][2]
                lines.append(f"{cat} (n={n})\t" + fmt(stats))
        return "\n".join(lines)


def evaluate_corpus(samples: list[EvalSample], metrics: list[str] | None = None) -> MetricReport:
    """Score every sample on every requested metric."""
    if not samples:
        raise ValueError("evaluate_corpus needs at least one sample")
    metrics = list(metrics or METRIC_FUNCS)
    unknown = set(metrics) - set(METRIC_FUNCS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    report = MetricReport(metrics=metrics)
    for s in samples:
        row = {"signal_id": s.signal_id, "category": s.category}
        for m in metrics:
            row[m] = METRIC_FUNCS[m](s.candidate, s.references)
        report.per_sample.append(row)
    return report
