import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmkws import evaluation as ev
from mmkws.config import ModelConfig
from mmkws.corpus import Episode, build_multiclass_episode
from mmkws.model import MMKWS

from oracles import auc_pair_count, eer_sweep


def random_set(rng, n=None):
    n = n or int(rng.integers(2, 51))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    # coarse grid forces ties
    s = rng.integers(0, 12, n) / 11.0 if rng.random() < 0.5 else rng.random(n)
    return s, y


def test_auc_perfect_and_chance():
    assert ev.compute_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    rng = np.random.default_rng(0)
    s, y = rng.random(2000), rng.integers(0, 2, 2000)
    assert abs(ev.compute_auc(s, y) - 0.5) <= 0.05


def test_auc_six_point_hand_count():
    # pos 0.9, 0.4, 0.6 against neg 0.5, 0.4, 0.1:
    # 0.9 beats all (3); 0.6 beats all (3); 0.4 beats 0.1, ties 0.4 (1.5)
    s = [0.9, 0.4, 0.6, 0.5, 0.4, 0.1]
    y = [1, 1, 1, 0, 0, 0]
    assert ev.compute_auc(s, y) == pytest.approx(7.5 / 9, abs=1e-15)


def test_auc_and_eer_match_oracles_on_random_sets():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s, y = random_set(rng)
        assert abs(ev.compute_auc(s, y) - auc_pair_count(s, y)) <= 1e-9
        assert abs(ev.compute_eer(s, y) - eer_sweep(list(s), list(y))) <= 1e-9
        assert abs(ev.compute_auc_trapezoid(s, y) - ev.compute_auc(s, y)) <= 1e-9


def test_eer_special_cases():
    assert ev.compute_eer([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 0.0
    assert ev.compute_eer([0.3] * 6, [0, 1, 0, 1, 0, 1]) == pytest.approx(0.5)
    s = [0.1, 0.35, 0.4, 0.8, 0.2, 0.7, 0.55, 0.9]
    y = [0, 0, 0, 0, 1, 1, 1, 1]
    assert ev.compute_eer(s, y) == pytest.approx(eer_sweep(s, y), abs=1e-9)


@pytest.mark.parametrize("fn", [ev.compute_auc, ev.compute_eer])
def test_single_class_rejected(fn):
    with pytest.raises(ValueError):
        fn([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        fn([], [])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_invariances(seed):
    rng = np.random.default_rng(seed)
    s, y = random_set(rng)
    assert ev.compute_eer(np.exp(3 * s) + 1, y) == pytest.approx(ev.compute_eer(s, y), abs=1e-12)
    assert abs(ev.compute_auc(-s, 1 - y) - ev.compute_auc(s, y)) <= 1e-12


def test_multiclass_rules():
    assert ev.multiclass_classify([0.3]) == 0
    assert ev.multiclass_classify([0.99, 0.2], threshold=1.0) == ev.UNKNOWN
    scores = [0.2, 0.7, 0.5]
    best = max(range(3), key=lambda i: scores[i])
    assert ev.multiclass_classify(scores) == best == 1
    assert ev.multiclass_classify(scores, threshold=0.6) == 1
    assert ev.multiclass_classify(scores, threshold=0.75) == ev.UNKNOWN
    with pytest.raises(ValueError):
        ev.multiclass_classify([])


def test_episode_accuracy_and_threshold_selection():
    queries = [(None, None, 0), (None, None, 1), (None, None, "unknown"), (None, None, "unknown")]
    ep = Episode(["a", "b"], ["c"], queries, {})
    M = np.array([[0.9, 0.1], [0.3, 0.8], [0.4, 0.2], [0.1, 0.5]])
    assert ev.episode_accuracy(M, ep) == 1.0
    assert ev.episode_accuracy(M, ep, threshold=0.0, closed=False) == 0.5
    t = ev.select_threshold(M, ep)
    assert ev.episode_accuracy(M, ep, threshold=t, closed=False) == 1.0
    assert ev.episode_accuracy(M, ep, threshold=1.0, closed=False) == 0.5


def test_monotonicity_conventions():
    b = [4, 3, 2]
    A = np.zeros((9, 9))
    for i in range(3):
        A[4 + i, i] = 1.0
    assert ev.monotonicity_score(A, b) == pytest.approx(1.0)
    A[4:7, :4] = 0.0
    A[4:7, 0] = 1.0
    assert ev.monotonicity_score(A, b) == 0.0
    A[4:7, :4] = 0.0
    for i in range(3):
        A[4 + i, 3 - i] = 1.0
    assert ev.monotonicity_score(A, b) == pytest.approx(-1.0)
    assert ev.monotonicity_score(np.eye(6), [4, 1, 1]) == 0.0
    heads = np.stack([A, A])
    assert ev.monotonicity_score(heads, b) == pytest.approx(-1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_monotonicity_invariant_to_logit_scale(seed, c):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((9, 9))

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    a = ev.monotonicity_score(softmax(logits), [4, 3, 2])
    b = ev.monotonicity_score(softmax(c * logits), [4, 3, 2])
    assert a == pytest.approx(b, abs=1e-12)


def test_bench_latency_report():
    cfg = ModelConfig.tiny()
    model = MMKWS(cfg, seed=0)
    reps = ev.bench_latency(model, frame_counts=(20, 40), repetitions=100, warmup=10)
    assert [r.frames for r in reps] == [20, 40]
    for r in reps:
        assert len(r.samples_ms) == 100
        assert r.median_ms > 0 and r.p95_ms >= r.median_ms
    again = ev.bench_latency(model, frame_counts=(20,), repetitions=100, warmup=10)
    assert 0.5 <= again[0].median_ms / reps[0].median_ms <= 1.5


def test_scoring_helpers_on_small_corpus(small_corpus, small_model_cfg):
    model = MMKWS(small_model_cfg, seed=0)
    pairs = small_corpus.test_pairs[:40]
    s = ev.score_pairs(model, small_corpus, pairs, batch_size=7)
    single = [model.score(small_corpus.phoneme_ids(p.enroll_text), small_corpus.subword_ids(p.enroll_text),
                          p.query, small_corpus.templates[p.enroll_text][:1]).p_utt for p in pairs]
    np.testing.assert_allclose(s, single, atol=1e-12)
    rep = ev.split_metrics(s, pairs)
    assert set(rep) <= {"auc_easy", "eer_easy", "auc_hard", "eer_hard"}
    ep = build_multiclass_episode(small_corpus, seed=3)
    M = ev.episode_scores(model, small_corpus, ep)
    assert M.shape == (len(ep.queries), 10)
    assert 0.0 <= ev.episode_accuracy(M, ep) <= 1.0
