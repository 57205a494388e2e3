import math

import numpy as np
import pytest

from haptix.dpo import PreferencePair, build_pairs, dpo_loss_and_grads, train_dpo
from haptix.model import forward, init_model, sequence_logprob

from tests.test_model import CFG, small_model


def rec(signal="s1", category="sensory", variant="sft", caption="a", rating=5):
    return dict(
        signal_id=signal, category=category, variant=variant, caption=caption, rating=rating
    )


class TestBuildPairs:
    def test_hand_worked_example(self):
        records = [
            # variant "sft": A mean 5.5, B mean 2.0, C mean exactly 3.5, D mean 4
            rec(caption="A", rating=5),
            rec(caption="A", rating=6),
            rec(caption="B", rating=2),
            rec(caption="C", rating=3),
            rec(caption="C", rating=4),
            rec(caption="D", rating=4),
            # variant "dpo": E mean 7, F mean 1
            rec(variant="dpo", caption="E", rating=7),
            rec(variant="dpo", caption="F", rating=1),
        ]
        pairs = build_pairs(records)
        got = {(p.chosen, p.rejected) for p in pairs}
        # C sits exactly on the midpoint and must appear nowhere
        assert got == {("A", "B"), ("D", "B"), ("E", "F")}
        means = {p.chosen: p.chosen_mean for p in pairs}
        assert means["A"] == 5.5 and means["D"] == 4.0

    def test_cross_variant_merges_groups(self):
        records = [
            rec(caption="A", rating=5),
            rec(caption="B", rating=2),
            rec(variant="dpo", caption="E", rating=7),
            rec(variant="dpo", caption="F", rating=1),
        ]
        got = {(p.chosen, p.rejected) for p in build_pairs(records, cross_variant=True)}
        assert got == {("A", "B"), ("A", "F"), ("E", "B"), ("E", "F")}

    def test_groups_never_mix_signals_or_categories(self):
        records = [
            rec(signal="s1", caption="A", rating=6),
            rec(signal="s2", caption="B", rating=1),
            rec(signal="s1", category="emotional", caption="C", rating=1),
        ]
        assert build_pairs(records) == []
        assert build_pairs(records, cross_variant=True) == []

    def test_output_order_deterministic(self):
        records = [
            rec(caption="A", rating=6),
            rec(caption="B", rating=2),
            rec(caption="Z", rating=7),
        ]
        a = build_pairs(records)
        b = build_pairs(list(reversed(records)))
        assert a == b
        assert [(p.chosen, p.rejected) for p in a] == [("A", "B"), ("Z", "B")]

    def test_rating_validation(self):
        with pytest.raises(ValueError, match="number in 1-7"):
            build_pairs([rec(rating=8)])
        with pytest.raises(ValueError, match="number in 1-7"):
            build_pairs([rec(rating=0)])
        with pytest.raises(ValueError, match="number in 1-7"):
            build_pairs([rec(rating=True)])
        with pytest.raises(ValueError, match="caption"):
            build_pairs([rec(caption="  ")])

    def test_fractional_ratings_accepted(self):
        # aggregated records may carry fractional means
        pairs = build_pairs([rec(caption="A", rating=5.5), rec(caption="B", rating=1.5)])
        assert [(p.chosen, p.rejected) for p in pairs] == [("A", "B")]

    def test_pair_invariants(self):
        with pytest.raises(ValueError):
            PreferencePair("s", "sensory", "same", "same", 5.0, 2.0)
        with pytest.raises(ValueError):
            PreferencePair("s", "sensory", "a", "b", 3.0, 2.0)


def pair_sequences(rng, n=2, length=12):
    out = []
    for _ in range(n):
        ids_c = rng.integers(0, CFG.vocab_size, size=length).tolist()
        ids_r = rng.integers(0, CFG.vocab_size, size=length).tolist()
        out.append((ids_c, (6, length), ids_r, (6, length)))
    return out


class TestDpoLoss:
    def test_identity_policy_gives_ln2_loss_and_zero_margin(self):
        policy = small_model(seed=3)
        reference = small_model(seed=3)
        rng = np.random.default_rng(0)
        for ids_c, span_c, ids_r, span_r in pair_sequences(rng, n=3):
            ref_c = sequence_logprob(reference, ids_c, span_c)
            ref_r = sequence_logprob(reference, ids_r, span_r)
            loss, margin, _ = dpo_loss_and_grads(
                policy, ids_c, span_c, ids_r, span_r, ref_c, ref_r, beta=0.5
            )
            assert margin == pytest.approx(0.0, abs=1e-12)
            assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_gradients_match_numeric(self):
        policy = small_model(seed=4, randomize_adapters=True)
        rng = np.random.default_rng(1)
        ids_c, span_c, ids_r, span_r = pair_sequences(rng, n=1)[0]
        ref_c, ref_r = -10.0, -12.0  # arbitrary fixed reference scores
        beta = 0.7

        def loss_fn():
            lc = sequence_logprob(policy, ids_c, span_c)
            lr = sequence_logprob(policy, ids_r, span_r)
            m = beta * ((lc - ref_c) - (lr - ref_r))
            return float(np.logaddexp(0.0, -m))

        _, _, grads = dpo_loss_and_grads(
            policy, ids_c, span_c, ids_r, span_r, ref_c, ref_r, beta
        )
        h = 1e-5
        for name in ("l0.wq.lora_a", "l1.wv.lora_b", "embed"):
            param = policy.params[name]
            idx = (1, 1) if name != "embed" else (17, 2)
            orig = param[idx]
            param[idx] = orig + h
            hi = loss_fn()
            param[idx] = orig - h
            lo = loss_fn()
            param[idx] = orig
            assert grads[name][idx] == pytest.approx((hi - lo) / (2 * h), rel=1e-4, abs=1e-8)

    def test_zero_beta_gives_constant_loss_and_zero_grads(self):
        policy = small_model(seed=5, randomize_adapters=True)
        rng = np.random.default_rng(6)
        ids_c, span_c, ids_r, span_r = pair_sequences(rng, n=1)[0]
        loss, margin, grads = dpo_loss_and_grads(
            policy, ids_c, span_c, ids_r, span_r, -5.0, -9.0, beta=0.0
        )
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)
        assert margin == 0.0
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_negative_beta_rejected(self):
        policy = small_model()
        with pytest.raises(ValueError):
            dpo_loss_and_grads(policy, [1, 2], (1, 2), [1, 3], (1, 2), 0.0, 0.0, beta=-0.1)


class TestTrainDpo:
    def test_loss_drops_below_ln2_and_margin_grows(self):
        policy = small_model(seed=6)
        reference = small_model(seed=6)
        rng = np.random.default_rng(2)
        pairs = pair_sequences(rng, n=2)
        policy, history = train_dpo(
            policy, reference, pairs, epochs=25, batch_size=2, lr=0.1, beta=0.5, seed=0
        )
        assert history[0]["loss"] == pytest.approx(math.log(2.0), abs=1e-9)
        assert history[-1]["loss"] < math.log(2.0)
        assert history[-1]["margin"] > 0.0

    def test_single_pair_history_satisfies_loss_margin_identity(self):
        policy = small_model(seed=7)
        reference = small_model(seed=7)
        rng = np.random.default_rng(3)
        pairs = pair_sequences(rng, n=1)
        _, history = train_dpo(
            policy, reference, pairs, epochs=10, batch_size=1, lr=0.05, beta=0.3, seed=0
        )
        for row in history:
            assert row["loss"] == pytest.approx(
                float(np.logaddexp(0.0, -row["margin"])), abs=1e-12
            )

    def test_reference_model_is_untouched(self):
        policy = small_model(seed=8)
        reference = small_model(seed=8)
        snapshot = {k: v.copy() for k, v in reference.params.items()}
        rng = np.random.default_rng(4)
        train_dpo(policy, reference, pair_sequences(rng), epochs=3, lr=0.05, seed=0)
        for name, value in reference.params.items():
            np.testing.assert_array_equal(value, snapshot[name])

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        pairs = pair_sequences(rng)
        _, h1 = train_dpo(small_model(seed=9), small_model(seed=9), pairs, epochs=4, seed=1)
        _, h2 = train_dpo(small_model(seed=9), small_model(seed=9), pairs, epochs=4, seed=1)
        assert h1 == h2

    def test_validation(self):
        with pytest.raises(ValueError):
            train_dpo(small_model(), small_model(), [], epochs=1)
