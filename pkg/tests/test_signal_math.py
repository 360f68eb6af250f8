import json
import math
import random

import numpy as np
import pytest
from scipy.special import softmax as scipy_softmax
from scipy.stats import entropy as scipy_entropy

from helpers import selection_oracle
from ifengine.errors import (
    BadPercentError,
    BadTemperatureError,
    EmptyBatchError,
    EmptySelectionError,
    GroupTooSmallError,
    MissingAdvantageError,
    NotNormalizedError,
    SchemaError,
    ValidationError,
)
from ifengine.signal_math import (
    SelectionResult,
    TokenRecord,
    combined_objective,
    entropy,
    entropy_sft_loss,
    grpo_advantages,
    read_selection,
    read_token_records,
    sft_select,
    tea_coefficients,
    tea_covariance,
    tea_loss,
    token_entropy_report,
    write_selection,
    write_token_records,
)


def rec(sid, pos, nll, ent, adv=None, text=None):
    return TokenRecord(
        sample_id=sid,
        position=pos,
        token_id=pos,
        nll=nll,
        entropy=ent,
        logp=-nll,
        token_text=text,
        advantage=adv,
    )


def random_batch(rng, size, with_adv=False, quantized=False):
    out = []
    for i in range(size):
        nll = rng.uniform(0, 8)
        ent = rng.uniform(0, 5)
        if quantized:
            nll = round(nll, 1)
            ent = round(ent, 1)
        out.append(
            rec(
                f"s{i % 7}",
                i,
                nll,
                ent,
                adv=rng.gauss(0, 1) if with_adv else None,
            )
        )
    return out


class TestTokenRecord:
    def test_nll_logp_consistency_enforced(self):
        with pytest.raises(ValidationError):
            TokenRecord(sample_id="a", position=0, token_id=1, nll=1.0, entropy=0.1, logp=-2.0)

    def test_negative_entropy_rejected(self):
        with pytest.raises(ValidationError):
            TokenRecord(sample_id="a", position=0, token_id=1, nll=1.0, entropy=-0.1, logp=-1.0)


class TestEntropy:
    def test_one_hot_is_zero(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0

    def test_uniform_is_log_v(self):
        assert abs(entropy([0.25] * 4) - math.log(4)) <= 1e-12

    def test_half_half(self):
        # Direct summation oracle: -(0.5 ln 0.5 + 0.5 ln 0.5) = ln 2.
        assert abs(entropy([0.5, 0.5, 0.0, 0.0]) - math.log(2)) <= 1e-12

    def test_matches_scipy_on_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = rng.random(rng.integers(2, 40))
            p = v / v.sum()
            assert abs(entropy(p.tolist()) - float(scipy_entropy(p))) <= 1e-9

    def test_upper_bound_with_equality_iff_uniform(self):
        rng = np.random.default_rng(1)
        bound = math.log(8)
        assert abs(entropy([1 / 8] * 8) - bound) <= 1e-12
        for _ in range(200):
            v = rng.random(8) + 0.01
            p = v / v.sum()
            h = entropy(p.tolist())
            assert h <= bound + 1e-9
            if float(np.max(p) - np.min(p)) > 1e-6:
                assert h < bound

    def test_not_normalized_rejected(self):
        with pytest.raises(NotNormalizedError):
            entropy([0.5, 0.6])
        with pytest.raises(NotNormalizedError):
            entropy([1.2, -0.2])


class TestSftSelect:
    def test_worked_three_token_example(self):
        # Scores with alpha=0.8: 1.2, 0.1, -0.6; top two selected at r=66.7.
        batch = [rec("s", 0, 2.0, 1.0), rec("s", 1, 0.5, 0.5), rec("s", 2, 1.0, 2.0)]
        result = sft_select(batch, 66.7, 0.8)
        assert result.selected == frozenset({("s", 0), ("s", 1)})
        assert result.selected_fraction == pytest.approx(2 / 3)

    def test_r_100_selects_everything(self):
        batch = [rec("s", i, float(i), 0.0) for i in range(5)]
        result = sft_select(batch, 100, 0.0)
        assert result.selected == frozenset(r.key for r in batch)

    def test_all_equal_scores_tie_rule(self):
        batch = [rec("b", 1, 1.0, 0.0), rec("a", 9, 1.0, 0.0), rec("a", 2, 1.0, 0.0)]
        result = sft_select(batch, 66.7, 0.0)
        # round(3 * 0.667) = 2 admitted in (sample_id, position) order.
        assert result.selected == frozenset({("a", 2), ("a", 9)})

    def test_score_shift_leaves_selection_unchanged(self):
        rng = random.Random(31)
        batch = random_batch(rng, 50)
        base = sft_select(batch, 80, 0.8).selected
        shifted = [
            rec(r.sample_id, r.position, r.nll + 5.0, r.entropy) for r in batch
        ]
        assert sft_select(shifted, 80, 0.8).selected == {k for k in base}

    def test_count_within_floor_ceil(self):
        rng = random.Random(37)
        for _ in range(100):
            n = rng.randint(1, 200)
            batch = random_batch(rng, n)
            picked = len(sft_select(batch, 80, 0.8).selected)
            assert math.floor(n * 0.8) <= picked <= math.ceil(n * 0.8)

    def test_alpha_zero_equals_pure_nll_cut(self):
        rng = random.Random(41)
        for _ in range(50):
            batch = random_batch(rng, rng.randint(2, 300))
            got = sft_select(batch, 80, 0.0).selected
            _, expected = selection_oracle(batch, 80, 0.0)
            assert got == expected

    def test_matches_oracle_with_ties(self):
        rng = random.Random(43)
        for _ in range(50):
            batch = random_batch(rng, rng.randint(1, 120), quantized=True)
            got = sft_select(batch, 80, 0.8)
            threshold, expected = selection_oracle(batch, 80, 0.8)
            assert got.selected == expected
            assert abs(got.threshold - threshold) <= 1e-12

    def test_shuffle_invariance(self):
        rng = random.Random(47)
        batch = random_batch(rng, 200, quantized=True)
        base = sft_select(batch, 80, 0.8)
        for _ in range(5):
            rng.shuffle(batch)
            again = sft_select(batch, 80, 0.8)
            assert again.selected == base.selected
            assert again.threshold == base.threshold

    def test_literal_quantile_mode(self):
        batch = [rec("s", i, float(i), 0.0) for i in range(10)]
        result = sft_select(batch, 80, 0.0, literal_quantile=True)
        # Literal reading keeps ~top 20%: the two highest scores.
        assert result.selected == frozenset({("s", 8), ("s", 9)})

    def test_input_validation(self):
        with pytest.raises(EmptyBatchError):
            sft_select([], 80, 0.8)
        with pytest.raises(BadPercentError):
            sft_select([rec("s", 0, 1.0, 1.0)], 0, 0.8)
        with pytest.raises(BadPercentError):
            sft_select([rec("s", 0, 1.0, 1.0)], 101, 0.8)


class TestEntropySftLoss:
    def test_hand_mean(self):
        batch = [rec("s", 0, 2.0, 1.0), rec("s", 1, 0.5, 0.5), rec("s", 2, 1.0, 2.0)]
        selection = sft_select(batch, 66.7, 0.8)
        assert entropy_sft_loss(batch, selection) == pytest.approx(1.25, abs=0)

    def test_single_token(self):
        batch = [rec("s", 0, 0.7, 0.1)]
        selection = SelectionResult(threshold=0.0, selected=frozenset({("s", 0)}), selected_fraction=1.0)
        assert entropy_sft_loss(batch, selection) == pytest.approx(0.7)

    def test_all_selected_uniform_nll(self):
        batch = [rec("s", i, 1.0, 0.3) for i in range(4)]
        selection = sft_select(batch, 100, 0.0)
        assert entropy_sft_loss(batch, selection) == pytest.approx(1.0)

    def test_empty_selection_rejected(self):
        batch = [rec("s", 0, 1.0, 0.0)]
        empty = SelectionResult(threshold=9.9, selected=frozenset(), selected_fraction=0.0)
        with pytest.raises(EmptySelectionError):
            entropy_sft_loss(batch, empty)


class TestGrpoAdvantages:
    def test_two_rewards(self):
        assert grpo_advantages([1.0, 0.0]) == [1.0, -1.0]

    def test_zero_variance_guard(self):
        assert grpo_advantages([3.0, 3.0, 3.0]) == [0.0, 0.0, 0.0]

    def test_three_rewards(self):
        got = grpo_advantages([3.0, 1.0, 2.0])
        assert got == pytest.approx([1.224745, -1.224745, 0.0], abs=1e-6)

    def test_matches_numpy_population_stats(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            rewards = rng.normal(0, 2, rng.integers(2, 30)).tolist()
            got = np.array(grpo_advantages(rewards))
            expected = (np.array(rewards) - np.mean(rewards)) / np.std(rewards)
            assert np.allclose(got, expected, atol=1e-9)

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmallError):
            grpo_advantages([1.0])


class TestTeaCovariance:
    def test_equal_advantages_vanish(self):
        records = [rec("s", i, 1.0 + i, 0.5, adv=0.7) for i in range(4)]
        assert tea_covariance(records) == [0.0] * 4

    def test_two_token_hand_computation(self):
        records = [rec("s", 0, 1.0, 0.5, adv=1.0), rec("s", 1, 3.0, 1.5, adv=-1.0)]
        assert tea_covariance(records) == pytest.approx([1.0, 1.0], abs=0)

    def test_single_token_self_centers(self):
        assert tea_covariance([rec("s", 0, 2.0, 1.0, adv=0.3)]) == [0.0]

    def test_missing_advantage_rejected(self):
        with pytest.raises(MissingAdvantageError):
            tea_covariance([rec("s", 0, 1.0, 0.5)])


class TestTeaCoefficients:
    def test_uniform_when_equal(self):
        assert tea_coefficients([2.0] * 4, tau=1.0, c=100.0) == pytest.approx([0.25] * 4, abs=0)

    def test_cap_binds(self):
        got = tea_coefficients([10.0, 0.0], tau=1.0, c=0.8)
        expected_small = math.exp(-10) / (1 + math.exp(-10))
        assert got[0] == pytest.approx(0.4, abs=0)
        assert got[1] == pytest.approx(expected_small, rel=1e-12)

    def test_shift_invariance(self):
        rng = random.Random(53)
        cov = [rng.uniform(-3, 3) for _ in range(20)]
        base = tea_coefficients(cov, tau=0.7, c=100.0)
        shifted = tea_coefficients([v + 11.5 for v in cov], tau=0.7, c=100.0)
        assert max(abs(a - b) for a, b in zip(base, shifted)) <= 1e-9

    def test_matches_scipy_softmax_pre_cap(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            cov = rng.normal(0, 2, rng.integers(1, 50))
            tau = float(rng.uniform(0.2, 3.0))
            got = tea_coefficients(cov.tolist(), tau=tau, c=1e9)
            expected = scipy_softmax(cov / tau)
            assert np.allclose(got, expected, atol=1e-9)
            assert abs(sum(got) - 1.0) <= 1e-9

    def test_permutation_equivariant(self):
        cov = [0.3, -1.2, 2.0, 0.0]
        base = tea_coefficients(cov, tau=1.0, c=0.9)
        perm = [2, 0, 3, 1]
        permuted = tea_coefficients([cov[i] for i in perm], tau=1.0, c=0.9)
        assert permuted == [base[i] for i in perm]

    def test_bad_temperature(self):
        with pytest.raises(BadTemperatureError):
            tea_coefficients([1.0], tau=0.0, c=1.0)


class TestTeaLoss:
    def test_uniform_advantages_give_entropy_sum(self):
        rng = random.Random(59)
        records = [rec("s", i, rng.uniform(0, 4), rng.uniform(0, 3), adv=0.5) for i in range(12)]
        result = tea_loss(records, tau=1.0, c=100.0)
        assert abs(result.l_tea - math.fsum(r.entropy for r in records)) <= 1e-9

    def test_zero_entropy_gives_zero(self):
        records = [rec("s", i, 1.0, 0.0, adv=float(i)) for i in range(3)]
        assert tea_loss(records, tau=1.0, c=100.0).l_tea == 0.0

    def test_two_token_hand_computation(self):
        records = [rec("s", 0, 1.0, 0.5, adv=1.0), rec("s", 1, 3.0, 1.5, adv=-1.0)]
        result = tea_loss(records, tau=1.0, c=100.0)
        assert result.covariances == pytest.approx([1.0, 1.0])
        assert result.coefficients == pytest.approx([0.5, 0.5])
        assert result.l_tea == pytest.approx(2.0, abs=0)

    def test_shuffle_stability(self):
        rng = random.Random(83)
        records = [
            rec("s", i, rng.uniform(0, 4), rng.uniform(0, 3), adv=rng.gauss(0, 1))
            for i in range(100)
        ]
        base = tea_loss(records, tau=0.8, c=0.9)
        by_key_cov = dict(zip((r.key for r in records), base.covariances))
        by_key_coef = dict(zip((r.key for r in records), base.coefficients))
        for _ in range(5):
            rng.shuffle(records)
            again = tea_loss(records, tau=0.8, c=0.9)
            assert abs(again.l_tea - base.l_tea) <= 1e-9
            for record, cov, coef in zip(records, again.covariances, again.coefficients):
                assert abs(cov - by_key_cov[record.key]) <= 1e-9
                assert abs(coef - by_key_coef[record.key]) <= 1e-9


class TestCombinedObjective:
    def test_defaults_worked_example(self):
        assert combined_objective(1.0, 2.0, 0.05) == pytest.approx(0.9, abs=0)

    def test_zero_lambda_passthrough(self):
        assert combined_objective(1.7, 99.0, 0.0) == 1.7

    def test_unit_lambda(self):
        assert combined_objective(0.0, 1.0, 1.0) == -1.0

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValidationError):
            combined_objective(1.0, 1.0, -0.1)


class TestTokenEntropyReport:
    def test_min_freq_filters(self):
        records = [rec("s", 0, 1.0, 2.0, text="rare")] + [
            rec("s", i + 1, 1.0, 1.0, text="common") for i in range(3)
        ]
        rows = token_entropy_report(records, top_k=10, min_freq=2)
        assert [r[0] for r in rows] == ["common"]

    def test_frequency_breaks_entropy_ties(self):
        records = [rec("s", i, 1.0, 2.0, text="five") for i in range(5)]
        records += [rec("s", 10 + i, 1.0, 2.0, text="three") for i in range(3)]
        rows = token_entropy_report(records, top_k=10, min_freq=1)
        assert [r[0] for r in rows] == ["five", "three"]

    def test_lexicographic_final_tie(self):
        records = [rec("s", i, 1.0, 2.0, text="bb") for i in range(2)]
        records += [rec("s", 10 + i, 1.0, 2.0, text="aa") for i in range(2)]
        rows = token_entropy_report(records, top_k=10, min_freq=1)
        assert [r[0] for r in rows] == ["aa", "bb"]

    def test_defaults(self):
        records = [rec("s", i, 1.0, 1.0, text=f"t{i}") for i in range(5)]
        assert token_entropy_report(records) == []  # min_freq=100 filters all

    def test_empty_input(self):
        assert token_entropy_report([], top_k=5, min_freq=1) == []


class TestJsonlInterchange:
    def test_round_trip(self, tmp_path):
        records = [rec("a", 0, 1.5, 0.7, adv=0.2, text="x"), rec("b", 3, 0.0, 0.0)]
        path = tmp_path / "records.jsonl"
        write_token_records(path, records)
        assert read_token_records(path) == records

    def test_exact_field_set_enforced(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        row = {
            "sample_id": "a",
            "position": 0,
            "token_id": 1,
            "token_text": None,
            "nll": 1.0,
            "entropy": 0.5,
            "logp": -1.0,
            "advantage": None,
            "extra": 1,
        }
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(SchemaError):
            read_token_records(path)

    def test_inconsistent_nll_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        row = {
            "sample_id": "a",
            "position": 0,
            "token_id": 1,
            "token_text": None,
            "nll": 1.0,
            "entropy": 0.5,
            "logp": -2.0,
            "advantage": None,
        }
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(SchemaError, match=":1:"):
            read_token_records(path)

    def test_duplicate_keys_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        write_token_records(path, [rec("a", 0, 1.0, 0.5)])
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(path.read_text().splitlines()[0] + "\n")
        with pytest.raises(SchemaError, match="duplicate"):
            read_token_records(path)

    def test_selection_round_trip(self, tmp_path):
        batch = [rec("s", i, float(i), 0.1) for i in range(10)]
        selection = sft_select(batch, 80, 0.8)
        path = tmp_path / "selection.jsonl"
        write_selection(path, selection, 80, 0.8)
        header, keys = read_selection(path)
        assert header["schema"] == "selection_v1"
        assert header["r_percent"] == 80
        assert header["alpha"] == 0.8
        assert keys == selection.selected
