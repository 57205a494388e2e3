"""Preference-pair construction and direct preference optimization.

Human ratings (integer 1-7) are aggregated per caption by averaging every
rating that caption received within its group — a group being one signal
and category (and, by default, one generation variant, so captions are
only compared against peers produced the same way).  Captions with a
mean above the scale midpoint 3.5 are "preferred", below it "rejected",
and exactly at the midpoint discarded; the group contributes the full
cross product preferred x rejected.

Policy training follows the direct preference objective: with
``r(y) = log p_policy(y) - log p_reference(y)`` on the caption span and
``margin = beta * (r(chosen) - r(rejected))``, the loss per pair is
``-log sigmoid(margin)``.  At initialization the policy equals the
reference, every margin is 0, and the loss is exactly ``ln 2``.  The
reference model's log-probabilities do not change during training, so
they are computed once up front.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .model import Model, MomentumSGD, logprob_and_grads, sequence_logprob

__all__ = [
    "RATING_MIDPOINT",
    "PreferencePair",
    "build_pairs",
    "dpo_loss_and_grads",
    "train_dpo",
]

RATING_MIDPOINT = 3.5  # midpoint of the 1-7 rating scale


@dataclass(frozen=True)
class PreferencePair:
    """One (chosen, rejected) caption pair for a signal and category."""

    signal_id: str
    category: str
    chosen: str
    rejected: str
    chosen_mean: float
    rejected_mean: float

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected captions must differ")
        if not self.chosen_mean > RATING_MIDPOINT > self.rejected_mean:
            raise ValueError("pair means must straddle the rating midpoint")


def build_pairs(
    records: Sequence[Mapping[str, object]], cross_variant: bool = False
) -> list[PreferencePair]:
    """Derive preference pairs from individual rating records.

    Each record needs ``signal_id``, ``category``, ``variant``,
    ``caption`` and a ``rating`` in 1-7 (fractional allowed).  With
    ``cross_variant=True`` captions of different variants compete within
    the same signal and category; by default each variant is its own
    group.  Output order is deterministic.
    """
    totals: dict[tuple, list[float]] = {}
    for rec in records:
        rating = rec["rating"]
        if (
            isinstance(rating, bool)
            or not isinstance(rating, (int, float))
            or not 1 <= rating <= 7
        ):
            raise ValueError(f"rating must be a number in 1-7, got {rating!r}")
        caption = str(rec["caption"]).strip()
        if not caption:
            raise ValueError("rating record has an empty caption")
        group = (str(rec["signal_id"]), str(rec["category"]))
        if not cross_variant:
            group = group + (str(rec["variant"]),)
        totals.setdefault(group + (caption,), []).append(float(rating))

    by_group: dict[tuple, list[tuple[str, float]]] = {}
    for key, ratings in totals.items():
        group, caption = key[:-1], key[-1]
        by_group.setdefault(group, []).append((caption, sum(ratings) / len(ratings)))

    pairs = []
    for group, scored in by_group.items():
        signal_id, category = group[0], group[1]
        high = [(c, m) for c, m in scored if m > RATING_MIDPOINT]
        low = [(c, m) for c, m in scored if m < RATING_MIDPOINT]
        for chosen, cm in high:
            for rejected, rm in low:
                pairs.append(
                    PreferencePair(signal_id, category, chosen, rejected, cm, rm)
                )
    pairs.sort(key=lambda p: (p.signal_id, p.category, p.chosen, p.rejected))
    return pairs


# ----------------------------------------------------------------------
# optimization
# ----------------------------------------------------------------------
def dpo_loss_and_grads(
    policy: Model,
    ids_chosen: Sequence[int],
    span_chosen: tuple[int, int],
    ids_rejected: Sequence[int],
    span_rejected: tuple[int, int],
    ref_logp_chosen: float,
    ref_logp_rejected: float,
    beta: float,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Loss, margin and policy gradients for one preference pair.

    The margin is ``beta * ((logp_c - ref_c) - (logp_l - ref_l))`` and
    the loss is ``-log sigmoid(margin)`` = ``softplus(-margin)``.  A zero
    beta makes the objective constant: loss ``ln 2``, all gradients zero.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    logp_c, grads_c = logprob_and_grads(policy, ids_chosen, span_chosen)
    logp_r, grads_r = logprob_and_grads(policy, ids_rejected, span_rejected)
    margin = beta * ((logp_c - ref_logp_chosen) - (logp_r - ref_logp_rejected))
    loss = float(np.logaddexp(0.0, -margin))
    coeff = float(expit(-margin)) * beta  # = -dL/dmargin * beta
    grads = {
        name: -coeff * grads_c[name] + coeff * grads_r[name] for name in grads_c
    }
    return loss, float(margin), grads


def train_dpo(
    policy: Model,
    reference: Model,
    pair_sequences: Sequence[
        tuple[Sequence[int], tuple[int, int], Sequence[int], tuple[int, int]]
    ],
    epochs: int = 3,
    batch_size: int = 4,
    lr: float = 1e-4,
    beta: float = 0.1,
    momentum: float = 0.9,
    seed: int = 0,
) -> tuple[Model, list[dict[str, float]]]:
    """Optimize the policy on assembled preference pairs.

    ``pair_sequences`` holds ``(ids_chosen, span_chosen, ids_rejected,
    span_rejected)`` tuples.  Returns the policy and one history row per
    epoch with the mean loss and mean margin.
    """
    if not pair_sequences:
        raise ValueError("no preference pairs")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    ref_logps = [
        (
            sequence_logprob(reference, ids_c, span_c),
            sequence_logprob(reference, ids_r, span_r),
        )
        for ids_c, span_c, ids_r, span_r in pair_sequences
    ]
    opt = MomentumSGD(policy.trainable_names(), lr=lr, momentum=momentum)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(pair_sequences))
        losses, margins = [], []
        for lo in range(0, len(order), batch_size):
            batch = order[lo : lo + batch_size]
            acc: dict[str, np.ndarray] | None = None
            for idx in batch:
                ids_c, span_c, ids_r, span_r = pair_sequences[idx]
                ref_c, ref_r = ref_logps[idx]
                loss, margin, grads = dpo_loss_and_grads(
                    policy, ids_c, span_c, ids_r, span_r, ref_c, ref_r, beta
                )
                losses.append(loss)
                margins.append(margin)
                if acc is None:
                    acc = grads
                else:
                    for name, g in grads.items():
                        acc[name] += g
            assert acc is not None
            for name in acc:
                acc[name] /= len(batch)
            opt.step(policy, acc)
        mean_loss = float(np.mean(losses))
        if not math.isfinite(mean_loss):
            raise RuntimeError(f"preference training diverged at epoch {epoch}")
        history.append(
            {"epoch": float(epoch), "loss": mean_loss, "margin": float(np.mean(margins))}
        )
    return policy, history
