import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmkws import discriminator as disc
from mmkws import pattern as pt
from mmkws.config import ModelConfig
from mmkws.model import MMKWS
from mmkws.numeric import Tensor


@pytest.fixture
def cfg():
    return ModelConfig(d=4, heads=1, attn_layers=1, gru_hidden=3, n_mels=4)


@pytest.fixture
def params(cfg):
    return MMKWS(cfg, seed=2).params


def joint(rng, bounds, d=4):
    rows = rng.standard_normal((1, sum(bounds), d))
    return pt.JointEmbedding(Tensor(rows), np.array([bounds], dtype=np.int64))


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_absent_template_uses_text_branch_only(params):
    rng = np.random.default_rng(0)
    jt = joint(rng, [5, 3, 2])
    p, h_t, h_a = disc.utterance_score(jt, pt.ABSENT, params)
    np.testing.assert_array_equal(h_a.data, 0.0)
    expect = sig(float(h_t.data[0] @ params["fuse.w"].data[:, 0] + params["fuse.b"].data[0]))
    assert p.data[0] == pytest.approx(expect, rel=1e-14)


def test_zero_fusion_weights_give_one_half(params):
    params["fuse.w"].data[:] = 0.0
    params["fuse.b"].data[:] = 0.0
    rng = np.random.default_rng(1)
    for _ in range(5):
        p, _, _ = disc.utterance_score(joint(rng, [4, 2, 2]), joint(rng, [4, 3]), params)
        assert p.data[0] == 0.5


def test_missing_text_joint_rejected(params):
    with pytest.raises(ValueError):
        disc.utterance_score(pt.ABSENT, None, params)


def test_one_step_gru_and_fusion_by_hand():
    cfg = ModelConfig(d=2, heads=1, gru_hidden=2, n_mels=4)
    p = MMKWS(cfg, seed=0).params
    # hand-set gates: reset from x[0], update from x[1], candidate from both
    wx = np.zeros((2, 6))
    wx[0, 0], wx[1, 3], wx[0, 4], wx[1, 5] = 1.0, -1.0, 2.0, 0.5
    p["gru_t.wx"].data = wx
    p["gru_t.wh"].data = np.zeros((2, 6))
    p["gru_t.bx"].data = np.array([0.0, 0.0, 0.0, 0.0, 0.1, -0.1])
    p["gru_t.bh"].data = np.zeros(6)
    p["fuse.w"].data = np.array([[0.7], [-1.2]])
    p["fuse.b"].data = np.array([0.3])
    x = [0.4, -0.8]
    # h0 = 0, so h1 = (1 - z) * n
    z = [sig(0.0), sig(-x[1])]
    n = [math.tanh(2.0 * x[0] + 0.1), math.tanh(0.5 * x[1] - 0.1)]
    h = [(1 - z[0]) * n[0], (1 - z[1]) * n[1]]
    expect = sig(0.7 * h[0] - 1.2 * h[1] + 0.3)
    jt = pt.JointEmbedding(Tensor(np.array([[x]])), np.array([[1, 0, 0]]))
    got, h_t, _ = disc.utterance_score(jt, None, p)
    np.testing.assert_allclose(h_t.data[0], h, rtol=1e-14)
    assert got.data[0] == pytest.approx(expect, rel=1e-14)


def test_unit_scores_lengths(params):
    pp, pw = disc.unit_scores(joint(np.random.default_rng(2), [5, 3, 2]), params)
    assert pp.shape == (1, 3) and pw.shape == (1, 2)


def test_zero_heads_give_one_half(params):
    for h in ("head_phon", "head_text"):
        params[f"{h}.w"].data[:] = 0.0
        params[f"{h}.b"].data[:] = 0.0
    pp, pw = disc.unit_scores(joint(np.random.default_rng(3), [5, 3, 2]), params)
    np.testing.assert_array_equal(pp.data, 0.5)
    np.testing.assert_array_equal(pw.data, 0.5)


def test_unit_head_on_one_row_by_hand(params):
    jt = joint(np.random.default_rng(4), [5, 3, 2])
    pp, pw = disc.unit_scores(jt, params)
    row = jt.rows.data[0, 6]  # second phoneme row
    w, b = params["head_phon.w"].data[:, 0], params["head_phon.b"].data[0]
    assert pp.data[0, 1] == pytest.approx(sig(sum(r * wi for r, wi in zip(row, w)) + b), rel=1e-13)
    row = jt.rows.data[0, 9]  # last text row
    w, b = params["head_text.w"].data[:, 0], params["head_text.b"].data[0]
    assert pw.data[0, 1] == pytest.approx(sig(sum(r * wi for r, wi in zip(row, w)) + b), rel=1e-13)


def test_unit_scores_boundary_errors(params):
    rng = np.random.default_rng(5)
    bad = pt.JointEmbedding(Tensor(rng.standard_normal((1, 6, 4))), np.array([[5, 3, 2]]))
    with pytest.raises(ValueError):
        disc.unit_scores(bad, params)
    with pytest.raises(ValueError):
        disc.unit_scores(joint(rng, [5, 3]), params)


def test_unit_scores_ignore_query_rows(params):
    rng = np.random.default_rng(6)
    jt = joint(rng, [5, 3, 2])
    a = [x.data.copy() for x in disc.unit_scores(jt, params)]
    jt.rows.data[0, :5] = rng.standard_normal((5, 4)) * 10
    b = [x.data for x in disc.unit_scores(jt, params)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_absent_equals_forced_zero_template(params):
    rng = np.random.default_rng(7)
    jt, ja = joint(rng, [4, 3, 2]), joint(rng, [4, 3])
    absent = disc.utterance_score(jt, pt.ABSENT, params)[0].data
    masked = disc.utterance_score(jt, ja, params, has_template=[False])[0].data
    assert absent.tobytes() == masked.tobytes()


def test_model_score_without_templates_equals_absent(small_corpus, small_model_cfg):
    model = MMKWS(small_model_cfg, seed=0)
    pair = small_corpus.test_pairs[0]
    ph, sw = small_corpus.phoneme_ids(pair.enroll_text), small_corpus.subword_ids(pair.enroll_text)
    r = model.score(ph, sw, pair.query)
    assert 0.0 < r.p_utt < 1.0
    assert len(r.p_phon) == len(ph) and len(r.p_text) == len(sw)
    assert np.all((r.p_phon > 0) & (r.p_phon < 1))
    rec = r.to_record(label=1)
    assert set(rec) == {"p_utt", "p_phon", "p_text", "label"}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**16), st.integers(0, 2), st.floats(0.01, 5.0))
def test_fusion_is_monotone_in_positive_weights(seed, coord, bump):
    cfg = ModelConfig(d=4, heads=1, gru_hidden=3, n_mels=4)
    p = MMKWS(cfg, seed=0).params
    rng = np.random.default_rng(seed)
    p["fuse.w"].data = np.abs(rng.standard_normal((3, 1))) + 0.01
    h = rng.standard_normal(3)
    h2 = h.copy()
    h2[coord] += bump
    from mmkws import layers
    from mmkws import numeric as nm
    lo = nm.sigmoid(layers.linear(Tensor(h[None]), p, "fuse")).data[0, 0]
    hi = nm.sigmoid(layers.linear(Tensor(h2[None]), p, "fuse")).data[0, 0]
    assert hi >= lo


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.1, 50.0))
def test_probabilities_strictly_inside_unit_interval(seed, spread):
    cfg = ModelConfig(d=4, heads=1, gru_hidden=3, n_mels=4)
    p = MMKWS(cfg, seed=1).params
    rng = np.random.default_rng(seed)
    rows = Tensor(spread * rng.standard_normal((1, 8, 4)))
    jt = pt.JointEmbedding(rows, np.array([[4, 2, 2]]))
    u = disc.utterance_score(jt, None, p)[0].data
    pp, pw = disc.unit_scores(jt, p)
    for v in (u, pp.data, pw.data):
        assert np.all((v > 0) & (v < 1))
