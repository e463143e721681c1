import csv
import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ScriptedLearner, adaboost, adaboost_predict, hand_trace, stump_dataset
from tumorfuse.errors import ContractError
from tumorfuse.tradaboost import (BETA_FLOOR, BoostedModel, DecisionStump, RoundRecord, WeightedDataset,
                                  boosted_predict, effective_weights, source_discount, tradaboost_train,
                                  write_round_log)


def scripted_factory(predictions):
    return lambda t: ScriptedLearner(predictions[t])


def model_with_votes(betas, votes):
    rounds = [RoundRecord(ScriptedLearner(np.array([v])), b, b / (1 + b), 0.0, 1.0) for b, v in zip(betas, votes)]
    return BoostedModel(rounds, len(rounds), 0.5, 1, 1, np.array([0.5, 0.5]))


class TestSourceDiscount:
    def test_n100_t10(self):
        # 1/(1+sqrt(2 ln 100 / 10)) evaluated to 30 digits with mpmath
        assert source_discount(100, 10) == pytest.approx(0.510280836608357153, abs=1e-15)
        assert abs(source_discount(100, 10) - 0.5103) <= 5e-4

    def test_invalid(self):
        with pytest.raises(ContractError):
            source_discount(0, 10)
        with pytest.raises(ContractError):
            source_discount(10, 0)


class TestTraining:
    def test_hand_simulated_two_rounds(self):
        h = hand_trace()
        data = WeightedDataset.combine(np.zeros((2, 1)), h["labels"][:2], np.zeros((2, 1)), h["labels"][2:],
                                       weights=h["initial"])
        model = tradaboost_train(data, scripted_factory(h["predictions"]), rounds=2)
        assert model.beta == pytest.approx(h["beta"], abs=1e-15)
        assert [r.epsilon_t for r in model.rounds] == pytest.approx(h["epsilons"], abs=1e-12)
        assert [r.beta_t for r in model.rounds] == pytest.approx(h["betas_t"], abs=1e-12)
        npt.assert_allclose(model.weight_trace[1], h["after_round1"], rtol=0, atol=1e-12)
        npt.assert_allclose(effective_weights(model, 2, 2), h["final"], rtol=0, atol=1e-12)
        assert model.stop_reason.startswith("perfect target fit")
        # source 0 was misclassified every round
        assert effective_weights(model, 2, 2)[0] < h["initial"][0]

    def test_misclassified_target_weight_triples_at_quarter_error(self):
        # four equal target samples, one missed: eps = 0.25, beta_t = 1/3
        data = WeightedDataset.combine(np.zeros((0, 1)), np.zeros(0, int), np.zeros((4, 1)), np.zeros(4, int))
        model = tradaboost_train(data, scripted_factory([np.array([1, 0, 0, 0])]), rounds=1)
        assert model.rounds[0].beta_t == pytest.approx(1 / 3, abs=1e-15)
        raw = model.weights / model.weights[1]
        npt.assert_allclose(raw, [3.0, 1.0, 1.0, 1.0], rtol=1e-12)

    def test_error_at_one_half_discards_round(self):
        data = WeightedDataset.combine(np.zeros((1, 1)), [0], np.zeros((2, 1)), [0, 1])
        model = tradaboost_train(data, scripted_factory([np.array([0, 0, 0])] * 3), rounds=3)
        assert model.rounds == []
        assert "discarded" in model.stop_reason
        npt.assert_allclose(effective_weights(model, 1, 2), 1 / 3)

    def test_perfect_fit_floors_beta_and_stops(self):
        data = WeightedDataset.combine(np.zeros((1, 1)), [1], np.zeros((2, 1)), [0, 1])
        model = tradaboost_train(data, scripted_factory([np.array([0, 0, 1])] * 5), rounds=5)
        assert len(model.rounds) == 1
        assert model.rounds[0].beta_t == BETA_FLOOR
        assert math.isfinite(math.log(1 / model.rounds[0].beta_t))

    def test_zero_source_weights_reduce_to_adaboost(self):
        x, y = stump_dataset()
        data = WeightedDataset.combine(np.ones((4, 1)), [0, 1, 0, 1], x[:, None], y,
                                       weights=np.r_[np.zeros(4), np.full(20, 1 / 20)])
        model = tradaboost_train(data, lambda t: DecisionStump(), rounds=10)
        ref = adaboost(x, y, 10)
        assert len(model.rounds) == len(ref)
        for rec, (th, pol, beta, eps, w), trace_w in zip(model.rounds, ref, model.weight_trace):
            assert (rec.learner.threshold, rec.learner.polarity) == (th, pol)
            assert rec.epsilon_t == pytest.approx(eps, abs=1e-12)
            npt.assert_allclose(trace_w[4:], w, atol=1e-12)
        npt.assert_array_equal(boosted_predict(model, x[:, None]), adaboost_predict(ref, x))

    def test_no_rounds(self):
        data = WeightedDataset.combine(np.zeros((1, 1)), [0], np.zeros((1, 1)), [0])
        with pytest.raises(ContractError):
            tradaboost_train(data, lambda t: DecisionStump(), rounds=0)

    def test_dataset_validation(self):
        with pytest.raises(ContractError):
            WeightedDataset.combine(np.zeros((1, 1)), [0], np.zeros((0, 1)), np.zeros(0, int))
        with pytest.raises(ContractError):
            WeightedDataset.combine(np.zeros((1, 1)), [2], np.zeros((1, 1)), [0])
        with pytest.raises(ContractError):
            WeightedDataset.combine(np.zeros((1, 1)), [0], np.zeros((1, 1)), [0], weights=[1.0, -1.0])

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_weight_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n, m, rounds = 6, 8, 4
        y = rng.integers(0, 2, n + m)
        preds = [np.where(rng.uniform(size=n + m) < 0.3, 1 - y, y) for _ in range(rounds)]
        data = WeightedDataset.combine(np.zeros((n, 1)), y[:n], np.zeros((m, 1)), y[n:])
        model = tradaboost_train(data, scripted_factory(preds), rounds)
        for t, (before, after) in enumerate(zip(model.weight_trace, model.weight_trace[1:])):
            assert abs(after.sum() - 1) < 1e-9 and np.all(after > 0)
            miss = preds[t] != y
            ratio = after / before * (before[-m:].sum() / after[-m:].sum())
            # relative to a correctly classified target sample: source misses shrink, target misses grow
            assert np.all(ratio[:n][miss[:n]] <= 1 + 1e-12)
            assert np.all(ratio[n:][miss[n:]] >= 1 - 1e-12)
        for rec in model.rounds:
            assert rec.epsilon_t < 0.5 and 0 < rec.beta_t < 1


class TestPrediction:
    def test_vote_weighs_log_inverse_beta(self):
        # ln 5 > ln 2.5, so the round with beta 0.2 wins
        model = model_with_votes([0.2, 0.4], [1, 0])
        assert boosted_predict(model, np.zeros((1, 1)))[0] == 1

    def test_only_latter_half_votes(self):
        model = model_with_votes([0.01, 0.4, 0.4], [1, 0, 0])
        assert boosted_predict(model, np.zeros((1, 1)))[0] == 0

    def test_tie_goes_to_label_zero(self):
        model = model_with_votes([0.3, 0.3], [1, 0])
        assert boosted_predict(model, np.zeros((1, 1)))[0] == 0

    def test_single_round_is_the_learner(self):
        model = model_with_votes([0.3], [1])
        assert boosted_predict(model, np.zeros((1, 1)))[0] == 1

    def test_rescaling_vote_weights_changes_nothing(self):
        a = model_with_votes([0.1, 0.2, 0.3, 0.05], [1, 0, 1, 0])
        b = model_with_votes([0.1 ** 2, 0.2 ** 2, 0.3 ** 2, 0.05 ** 2], [1, 0, 1, 0])
        x = np.zeros((1, 1))
        assert boosted_predict(a, x)[0] == boosted_predict(b, x)[0]

    def test_empty_model(self):
        with pytest.raises(ContractError):
            boosted_predict(model_with_votes([], []), np.zeros((1, 1)))

    def test_effective_weights_size_mismatch(self):
        with pytest.raises(ContractError):
            effective_weights(model_with_votes([0.2], [1]), 3, 1)


class TestStumpAndLog:
    def test_stump_separates(self):
        x = np.array([[0.1], [0.2], [0.8], [0.9]])
        stump = DecisionStump().fit(x, [1, 1, 0, 0])
        npt.assert_array_equal(stump.predict(x), [1, 1, 0, 0])
        assert stump.threshold == pytest.approx(0.5)
        assert stump.polarity == -1

    def test_round_log(self, tmp_path):
        h = hand_trace()
        data = WeightedDataset.combine(np.zeros((2, 1)), h["labels"][:2], np.zeros((2, 1)), h["labels"][2:],
                                       weights=h["initial"])
        model = tradaboost_train(data, scripted_factory(h["predictions"]), rounds=2)
        path = tmp_path / "rounds.csv"
        write_round_log(model, path)
        assert b"\r" not in path.read_bytes()
        rows = list(csv.DictReader(path.open()))
        assert [r["round"] for r in rows] == ["1", "2"]
        assert float(rows[0]["epsilon_t"]) == pytest.approx(0.3)
        assert float(rows[0]["source_weight_mass"]) + float(rows[0]["target_weight_mass"]) == pytest.approx(1.0)
