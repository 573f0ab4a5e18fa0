import numpy as np
import pytest

from mmkws import numeric as nm
from mmkws.augmentation import Lexicon


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def check_grads(build, leaves, rtol=1e-6, atol=1e-8, h=1e-6):
    """``build()`` maps the leaf Tensors to an output Tensor.  The scalar is a
    fixed random projection of the output; analytic and numeric gradients of
    every leaf must agree."""
    proj = np.random.default_rng(99).standard_normal(build().shape)
    with nm.Tape() as tape:
        loss = nm.sum(nm.mul(build(), proj))
    grads = nm.backward(tape, loss)

    def f():
        return float((build().data * proj).sum())

    num = numeric_grad(f, [t.data for t in leaves], h)
    for t, n in zip(leaves, num):
        np.testing.assert_allclose(grads[t], n, rtol=rtol, atol=atol)


@pytest.fixture
def gradcheck():
    return check_grads


@pytest.fixture(scope="session")
def word_lexicon():
    """A small hand-written lexicon with ARPAbet entries."""
    entries = {
        "good": ("G", "UH", "D"), "boy": ("B", "OY"), "night": ("N", "AY", "T"),
        "in": ("IH", "N"), "the": ("DH", "AH"), "united": ("Y", "UW", "N", "AY", "T", "IH", "D"),
        "states": ("S", "T", "EY", "T", "S"), "bad": ("B", "AE", "D"), "toy": ("T", "OY"),
        "could": ("K", "UH", "D"), "cat": ("K", "AE", "T"), "hat": ("HH", "AE", "T"),
    }
    return Lexicon(entries)


@pytest.fixture(scope="session")
def small_corpus():
    """A few dozen keywords over a 200-word toy lexicon with 8 feature bins."""
    from mmkws.augmentation import make_toy_lexicon
    from mmkws.corpus import CorpusConfig, build_corpus

    cfg = CorpusConfig(n_train=12, n_test=32, n_mels=8, train_positives=2, train_hard=2,
                       train_easy=2, seed=5)
    return build_corpus(cfg, make_toy_lexicon(200, seed=3))


@pytest.fixture(scope="session")
def small_model_cfg(small_corpus):
    from mmkws.config import ModelConfig

    return ModelConfig(n_mels=8, d=8, heads=2, enc_layers=1, attn_layers=1, gru_hidden=6,
                       phone_dim=4, text_dim=4, speech_dim=6, subsample=2,
                       n_phonemes=len(small_corpus.lexicon.inventory),
                       vocab_size=len(small_corpus.vocab))


# --------------------------------------------------------------------------
# desk-scale run shared by the acceptance suite

ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str):
    ACCEPTANCE[criterion] = (ok, detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk_corpus():
    from mmkws.augmentation import make_toy_lexicon
    from mmkws.corpus import CorpusConfig, build_corpus

    return build_corpus(CorpusConfig(seed=7), make_toy_lexicon(800, seed=7))


def desk_model_cfg(corpus):
    from mmkws.config import ModelConfig

    return ModelConfig(n_mels=corpus.config.n_mels, n_phonemes=len(corpus.lexicon.inventory),
                       vocab_size=len(corpus.vocab))


@pytest.fixture(scope="session")
def desk_run(desk_corpus):
    """Default configuration, 2000 steps, seed 7; returns (result, seconds)."""
    import time

    from mmkws.config import TrainConfig
    from mmkws.training import train

    t0 = time.perf_counter()
    result = train(desk_corpus, desk_model_cfg(desk_corpus), TrainConfig(steps=2000, seed=7))
    return result, time.perf_counter() - t0
