import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from gala.classifier import GCNClassifier
from gala.errors import ArgumentError, ContractError
from gala.pseudo_label import (ConfidenceRecord, CurriculumSchedule, class_max, class_shares,
                               fixed_threshold_select, make_records, pseudo_label_nll, select_confident,
                               share_entropy, sup_loss, thresholds)

from conftest import path3, triangle


@st.composite
def prob_rows(draw, min_size=1, max_size=30, C=None):
    C = C or draw(st.integers(2, 5))
    rows = draw(st.lists(st.lists(st.floats(0.01, 1.0), min_size=C, max_size=C),
                         min_size=min_size, max_size=max_size))
    p = np.array(rows)
    return p / p.sum(1, keepdims=True)


def skewed_corpus(rng, n=300, C=3):
    """Class 0 dominates and is predicted with far higher confidence than the rest."""
    rows = []
    for k in range(n):
        c = 0 if k < n * 0.6 else 1 + k % (C - 1)
        top = rng.uniform(0.96, 0.999) if c == 0 else rng.uniform(0.6, 0.9)
        p = np.full(C, (1 - top) / (C - 1))
        p[c] = top
        rows.append(p)
    return np.array(rows)


class TestRecords:
    def test_tie_goes_to_lowest_index(self):
        r = ConfidenceRecord(0, (0.5, 0.5))
        assert r.predicted_class == 0 and r.confidence == 0.5

    def test_class_max_direct(self):
        M = class_max(make_records([[0.7, 0.3], [0.6, 0.4], [0.2, 0.8]]), 2)
        assert M.tolist() == [0.7, 0.8]

    def test_absent_class(self):
        M = class_max(make_records([[0.9, 0.1], [0.6, 0.4]]), 2)
        assert M[0] == 0.9 and math.isnan(M[1])

    def test_single_tied_record(self):
        M = class_max(make_records([[0.5, 0.5]]), 2)
        assert M[0] == 0.5 and math.isnan(M[1])

    def test_empty(self):
        with pytest.raises(ArgumentError):
            class_max([], 2)


class TestCurriculum:
    def test_endpoints(self):
        s = CurriculumSchedule(0.95, 0.99, 50)
        assert s.alpha(0) == 0.95
        assert s.alpha(49) == pytest.approx(0.99, abs=1e-15)
        assert s.alpha(200) == 0.99

    def test_single_epoch(self):
        assert CurriculumSchedule(0.9, 0.99, 1).alpha(0) == 0.9

    def test_invalid(self):
        with pytest.raises(ContractError):
            CurriculumSchedule(0.99, 0.95, 10)

    @given(st.floats(0.5, 0.99), st.floats(0.0, 0.5), st.integers(1, 100))
    def test_nondecreasing(self, a0, span, T):
        s = CurriculumSchedule(a0, min(a0 + span, 1.0), T)
        alphas = [s.alpha(e) for e in range(T + 3)]
        assert all(b >= a for a, b in zip(alphas, alphas[1:]))


class TestThresholds:
    def test_arithmetic(self):
        s = CurriculumSchedule(0.95, 0.99, 10)
        assert thresholds(np.array([0.9]), 0, s)[0] == pytest.approx(0.855)

    def test_final_epoch_full_confidence(self):
        s = CurriculumSchedule(0.95, 0.99, 10)
        assert thresholds(np.array([1.0]), 9, s)[0] == pytest.approx(0.99)

    def test_absent_fallback(self):
        s = CurriculumSchedule(0.95, 0.99, 10)
        assert thresholds(np.array([0.8, np.nan]), 3, s)[1] == s.alpha(3)

    def test_included_above(self):
        assert select_confident([ConfidenceRecord(0, (0.9, 0.1))], np.array([0.855, 0.9])) == [(0, 0)]

    def test_boundary_excluded(self):
        assert select_confident([ConfidenceRecord(0, (0.855, 0.145))], np.array([0.855, 0.9])) == []


class TestSelectionProperties:
    @given(prob_rows(), st.integers(0, 49))
    def test_argmax_record_always_selected(self, probs, e):
        records = make_records(probs)
        s = CurriculumSchedule(0.95, 0.99, 50)
        C = probs.shape[1]
        M = class_max(records, C)
        chosen = {i for i, _ in select_confident(records, thresholds(M, e, s))}
        for c in range(C):
            if not math.isnan(M[c]):
                top = [r.graph_index for r in records if r.predicted_class == c and r.confidence == M[c]]
                assert top[0] in chosen

    @given(prob_rows())
    def test_confident_set_non_growing(self, probs):
        records = make_records(probs)
        s = CurriculumSchedule(0.95, 0.99, 20)
        M = class_max(records, probs.shape[1])
        sets = [{i for i, _ in select_confident(records, thresholds(M, e, s))} for e in range(20)]
        taus = [thresholds(M, e, s) for e in range(20)]
        for a, b in zip(sets, sets[1:]):
            assert b <= a
        for a, b in zip(taus, taus[1:]):
            assert np.all(b >= a)

    @given(prob_rows(C=3), st.floats(0.05, 1.0), st.integers(0, 2))
    def test_scale_free_within_class(self, probs, factor, cls):
        records = make_records(probs)
        s = CurriculumSchedule(0.95, 0.99, 10)
        base = select_confident(records, thresholds(class_max(records, 3), 0, s))
        scaled = []
        for r in records:
            p = np.array(r.probs)
            if r.predicted_class == cls:
                p = p * factor
            scaled.append(ConfidenceRecord(r.graph_index, tuple(p.tolist())))
        after = select_confident(scaled, thresholds(class_max(scaled, 3), 0, s))
        assert {i for i, _ in after} == {i for i, _ in base}

    @given(prob_rows(), st.randoms(use_true_random=False))
    def test_order_independent(self, probs, rnd):
        records = make_records(probs)
        tau = thresholds(class_max(records, probs.shape[1]), 0, CurriculumSchedule())
        shuffled = list(records)
        rnd.shuffle(shuffled)
        assert sorted(select_confident(shuffled, tau)) == sorted(select_confident(records, tau))

    def test_class_specific_at_least_as_balanced(self, rng):
        probs = skewed_corpus(rng)
        records = make_records(probs)
        adaptive = select_confident(records, thresholds(class_max(records, 3), 0, CurriculumSchedule()))
        fixed = fixed_threshold_select(records, 0.95)
        assert share_entropy(adaptive, 3) >= share_entropy(fixed, 3)
        assert np.all(class_shares(adaptive, 3) > 0)


class TestSupLoss:
    def test_certain_model_zero(self):
        logp = torch.log(torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64))
        assert pseudo_label_nll(logp, [0, 1]).item() == 0.0

    def test_uniform_six_classes(self):
        logp = torch.log(torch.full((4, 6), 1 / 6, dtype=torch.float64))
        assert pseudo_label_nll(logp, [0, 1, 2, 5]).item() == pytest.approx(math.log(6))

    def test_two_graphs(self):
        logp = torch.log(torch.tensor([[0.5, 0.5], [0.75, 0.25]], dtype=torch.float64))
        assert pseudo_label_nll(logp, [0, 1]).item() == pytest.approx(-(math.log(0.5) + math.log(0.25)) / 2)
        assert pseudo_label_nll(logp, [0, 1]).item() == pytest.approx(1.0397, abs=5e-5)

    def test_empty_set(self):
        m = GCNClassifier(11, 2)
        loss = sup_loss([], [], m)
        assert loss.item() == 0.0 and not loss.requires_grad

    def test_gradients_flow(self):
        m = GCNClassifier(11, 2)
        sup_loss([triangle(), path3()], [0, 1], m).backward()
        assert all(p.grad is not None for p in m.parameters())
