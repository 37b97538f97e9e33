import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmbt.fusion import (
    EmptyAccuracies,
    FusionPolicy,
    ModalityAccuracy,
    ModalityMismatch,
    ModalityPrediction,
    PolicyError,
    TooManyModalities,
    default_weights,
    fused_accuracy,
    vote,
    weighted_sum,
)

MOUNT = [ModalityAccuracy.symmetric(m, a) for m, a in [("vision", 0.88), ("ft", 0.96), ("tactile", 0.82)]]


def preds(names, votes):
    return [ModalityPrediction(m, s) for m, s in zip(names, votes)]


# -- vote ---------------------------------------------------------------------------


def test_vote_examples():
    p = FusionPolicy(("a", "b", "c"), (0.5, 0.3, 0.2))
    assert weighted_sum(preds("abc", [1, 1, 0]), p) == pytest.approx(0.8)
    assert vote(preds("abc", [1, 1, 0]), p)
    assert not vote(preds("abc", [0, 0, 0]), p)


def test_tie_is_success():
    p = FusionPolicy(("a", "b"), (0.5, 0.5))
    assert weighted_sum({"a": 1, "b": 0}, p) == 0.5
    assert vote({"a": 1, "b": 0}, p)


def test_tie_survives_decimal_error():
    # 0.1 + 0.2 + 0.2 == 0.5000000000000001 or 0.49999999999999994 depending on order
    p = FusionPolicy(("a", "b", "c", "d"), (0.1, 0.2, 0.2, 0.5))
    assert vote({"a": 1, "b": 1, "c": 1, "d": 0}, p)


def test_strict_eq1_divides_by_n():
    p = FusionPolicy(("a", "b"), (0.5, 0.5))
    assert weighted_sum({"a": 1, "b": 1}, p, strict_eq1=True) == 0.5
    assert vote({"a": 1, "b": 1}, p, strict_eq1=True)
    assert not vote({"a": 1, "b": 0}, p, strict_eq1=True)


@pytest.mark.parametrize(
    "given_",
    [{"a": 1}, {"a": 1, "b": 1, "c": 1}, {"a": 1, "x": 0}],
)
def test_modality_mismatch(given_):
    p = FusionPolicy(("a", "b"), (0.5, 0.5))
    with pytest.raises(ModalityMismatch):
        vote(given_, p)


def test_duplicate_prediction():
    p = FusionPolicy(("a", "b"), (0.5, 0.5))
    with pytest.raises(ModalityMismatch):
        vote([ModalityPrediction("a", 1), ModalityPrediction("a", 0)], p)


def test_prediction_order_does_not_matter():
    p = FusionPolicy(("a", "b", "c"), (0.5, 0.3, 0.2))
    assert vote(preds("cba", [0, 0, 1]), p) == vote(preds("abc", [1, 0, 0]), p)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(modalities=("a", "b"), weights=(0.6, 0.5)),
        dict(modalities=("a", "b"), weights=(1.0,)),
        dict(modalities=(), weights=()),
        dict(modalities=("a", "a"), weights=(0.5, 0.5)),
        dict(modalities=("a", "b"), weights=(1.5, -0.5)),
        dict(modalities=("a",), weights=(1.0,), threshold=1.5),
    ],
)
def test_policy_validation(kwargs):
    with pytest.raises(PolicyError):
        FusionPolicy(**kwargs)


def test_policy_accepts_thirds():
    FusionPolicy(("a", "b", "c"), (1 / 3, 1 / 3, 1 / 3))


def test_prediction_must_be_binary():
    with pytest.raises(ValueError):
        ModalityPrediction("a", 2)


# -- default weights ---------------------------------------------------------------


def test_default_weights_mount():
    w = default_weights(MOUNT)
    assert w == pytest.approx([0.3308, 0.3609, 0.3083], abs=1e-4)
    assert abs(sum(w) - 1.0) <= 1e-12


def test_default_weights_single_and_equal():
    assert default_weights([ModalityAccuracy.symmetric("a", 0.7)]) == [1.0]
    w = default_weights([ModalityAccuracy.symmetric(m, 0.9) for m in "abcd"])
    assert w == pytest.approx([0.25] * 4)


def test_default_weights_use_balanced_accuracy():
    w = default_weights([ModalityAccuracy("ft", 0.884, 0.996), ModalityAccuracy("tactile", 1.0, 0.48)])
    assert w == pytest.approx([0.94 / 1.68, 0.74 / 1.68])


def test_default_weights_empty():
    with pytest.raises(EmptyAccuracies):
        default_weights([])


# -- oracle ------------------------------------------------------------------------


def test_oracle_identity():
    p = FusionPolicy(("ft",), (1.0,))
    assert fused_accuracy(p, [ModalityAccuracy.symmetric("ft", 0.96)]).accuracy == pytest.approx(0.96, abs=1e-15)


def test_oracle_three_equal_at_point_nine():
    p = FusionPolicy(("a", "b", "c"), (1 / 3, 1 / 3, 1 / 3))
    r = fused_accuracy(p, [ModalityAccuracy.symmetric(m, 0.9) for m in "abc"])
    assert abs(r.accuracy - 0.972) < 1e-12
    assert abs(r.sensitivity - 0.972) < 1e-12 and abs(r.specificity - 0.972) < 1e-12


def test_oracle_mount_cap():
    p = FusionPolicy(("vision", "ft", "tactile"), tuple(default_weights(MOUNT)))
    r = fused_accuracy(p, MOUNT)
    # with default weights any two agreeing modalities win, so this is the majority formula
    a, b, c = 0.88, 0.96, 0.82
    assert r.accuracy == pytest.approx(a * b + a * c + b * c - 2 * a * b * c, abs=1e-12)
    assert r.accuracy == pytest.approx(0.968128, abs=1e-9)
    assert r.accuracy > 0.96


def test_oracle_prior_weighting():
    p = FusionPolicy(("a",), (1.0,))
    r = fused_accuracy(p, [ModalityAccuracy("a", 0.9, 0.5)], prior_success=0.25)
    assert r.accuracy == pytest.approx(0.25 * 0.9 + 0.75 * 0.5)


def test_oracle_limits():
    n = 21
    p = FusionPolicy(tuple(f"m{i}" for i in range(n)), tuple([1 / n] * n))
    with pytest.raises(TooManyModalities):
        fused_accuracy(p, [ModalityAccuracy.symmetric(f"m{i}", 0.9) for i in range(n)])
    p2 = FusionPolicy(("a", "b"), (0.5, 0.5))
    with pytest.raises(ModalityMismatch):
        fused_accuracy(p2, [ModalityAccuracy.symmetric("a", 0.9)])


def test_majority_equivalence():
    p = FusionPolicy(("a", "b", "c"), (1 / 3, 1 / 3, 1 / 3))
    for votes in itertools.product((0, 1), repeat=3):
        assert vote(dict(zip("abc", votes)), p) == (sum(votes) >= 2)


@pytest.mark.parametrize("w1", [0.51, 0.6, 0.75, 0.99, 1.0])
def test_heavy_modality_dominance(w1):
    p = FusionPolicy(("a", "b"), (w1, 1.0 - w1))
    for votes in itertools.product((0, 1), repeat=2):
        assert vote(dict(zip("ab", votes)), p) == bool(votes[0])
    accs = [ModalityAccuracy("a", 0.94, 0.91), ModalityAccuracy.symmetric("b", 0.99)]
    r = fused_accuracy(p, accs)
    assert r.sensitivity == pytest.approx(0.94, abs=1e-12)
    assert r.specificity == pytest.approx(0.91, abs=1e-12)


def test_condorcet_grid():
    p = FusionPolicy(("a", "b", "c"), (1 / 3, 1 / 3, 1 / 3))
    for i in range(1, 100):
        q = 0.5 + 0.5 * i / 100
        r = fused_accuracy(p, [ModalityAccuracy.symmetric(m, q) for m in "abc"])
        assert r.accuracy == pytest.approx(3 * q**2 - 2 * q**3, abs=1e-12)
        assert r.accuracy >= q - 1e-15


# -- properties -------------------------------------------------------------------


@st.composite
def policies(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(lambda xs: sum(xs) > 1e-3))
    total = math.fsum(raw)
    weights = tuple(x / total for x in raw)
    threshold = draw(st.floats(0.0, 1.0))
    return FusionPolicy(tuple(f"m{i}" for i in range(n)), weights, threshold)


@settings(max_examples=300, deadline=None)
@given(policies(), st.data())
def test_vote_is_monotone(policy, data):
    votes = data.draw(st.lists(st.integers(0, 1), min_size=policy.n, max_size=policy.n))
    before = vote(dict(zip(policy.modalities, votes)), policy)
    for i, s in enumerate(votes):
        if s == 0:
            flipped = list(votes)
            flipped[i] = 1
            after = vote(dict(zip(policy.modalities, flipped)), policy)
            assert after or not before


@settings(max_examples=200, deadline=None)
@given(policies(), st.data())
def test_oracle_matches_direct_enumeration(policy, data):
    accs = [
        ModalityAccuracy(m, data.draw(st.floats(0, 1)), data.draw(st.floats(0, 1))) for m in policy.modalities
    ]
    r = fused_accuracy(policy, accs)
    # independent re-derivation with numpy over the full vote table
    table = np.array(list(itertools.product((0, 1), repeat=policy.n)))
    w = np.array(policy.weights)
    wins = table @ w >= policy.threshold - 1e-12
    sens = np.array([a.sensitivity for a in accs])
    spec = np.array([a.specificity for a in accs])
    p_s = np.prod(np.where(table == 1, sens, 1 - sens), axis=1)
    p_f = np.prod(np.where(table == 1, 1 - spec, spec), axis=1)
    assert r.sensitivity == pytest.approx(p_s[wins].sum(), abs=1e-9)
    assert r.specificity == pytest.approx(p_f[~wins].sum(), abs=1e-9)
    assert 0.0 <= r.accuracy <= 1.0 + 1e-12


def test_oracle_agrees_with_sampling():
    policy = FusionPolicy(("vision", "ft", "tactile"), tuple(default_weights(MOUNT)))
    exact = fused_accuracy(policy, MOUNT).accuracy
    rng = np.random.default_rng(11)
    n = 100_000
    truth = rng.random(n) < 0.5
    acc = np.array([0.88, 0.96, 0.82])
    correct = rng.random((n, 3)) < acc
    votes = np.where(correct, truth[:, None], ~truth[:, None]).astype(int)
    fused = votes @ np.array(policy.weights) >= policy.threshold - 1e-12
    emp = np.mean(fused == truth)
    sigma = math.sqrt(exact * (1 - exact) / n)
    assert abs(emp - exact) <= 3 * sigma
