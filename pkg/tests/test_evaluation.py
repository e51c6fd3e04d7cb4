import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bnbpfa.errors import DataError, DomainError
from bnbpfa.evaluation import (
    PredictiveAccumulator,
    factor_report,
    perplexity,
    split_counts,
    synthetic_corpus,
    train_size,
    uniform_perplexity,
)
from bnbpfa.pfa_model import CountMatrix, FactorState
from bnbpfa.samplers import ChainConfig, HyperParams, run_chain
from bnbpfa.special_math import RngStream


dense_counts = st.integers(1, 6).flatmap(
    lambda P: st.integers(1, 5).flatmap(
        lambda N: st.lists(st.integers(0, 9), min_size=P * N, max_size=P * N).map(
            lambda v: np.array(v).reshape(P, N)
        )
    )
)


@settings(max_examples=60, deadline=None)
@given(dense_counts, st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_split_conserves_counts(X, ratio, seed):
    if X.sum() == 0:
        X[0, 0] = 1
    M = CountMatrix.from_dense(X)
    pair = split_counts(M, ratio, RngStream(seed))
    T, Y = pair.train.to_dense(), pair.test.to_dense()
    assert np.array_equal(T + Y, X)
    assert np.all(T >= 0) and np.all(Y >= 0)
    for i in range(X.shape[1]):
        assert T[:, i].sum() == train_size(X[:, i].sum(), ratio)


def test_train_size_rounding():
    assert train_size(10, 0.8) == 8
    assert train_size(7, 0.5) == 4
    assert train_size(0, 0.8) == 0


def test_heldout_tokens_are_hypergeometric():
    # one document of 10 tokens over three terms; 2 are held out
    X = CountMatrix.from_dense([[5], [3], [2]])
    root = RngStream(1)
    held = np.array([split_counts(X, 0.8, root.substream("rep", j)).test.to_dense()[:, 0] for j in range(10_000)])
    assert np.all(held.sum(axis=1) == 2)
    for term, good in enumerate((5, 3, 2)):
        ref = stats.hypergeom(10, good, 2).pmf(np.arange(3))
        obs = np.bincount(held[:, term], minlength=3)
        assert stats.chisquare(obs, ref * 10_000).pvalue > 0.001


def test_split_edges():
    X = CountMatrix.from_dense([[6, 1], [4, 0]])
    pair = split_counts(X, 0.99, RngStream(2))
    assert pair.test.nnz == 0
    with pytest.raises(DataError):
        PredictiveAccumulator(pair.test)
    with pytest.raises(DomainError):
        split_counts(X, 1.0, RngStream(2))
    with pytest.raises(DataError):
        split_counts(CountMatrix.from_dense(np.zeros((2, 2), dtype=int)), 0.5, RngStream(2))


def test_split_reproducible():
    X = CountMatrix.from_dense(np.arange(12).reshape(4, 3))
    a = split_counts(X, 0.7, RngStream(3).substream("split", 0))
    b = split_counts(X, 0.7, RngStream(3).substream("split", 0))
    assert a.test == b.test


def test_two_term_perplexity():
    # probabilities (0.9, 0.1), one held-out token on each term
    S = FactorState(Phi=np.array([[0.9], [0.1]]), Theta=np.array([[4.0]]))
    Y = CountMatrix.from_dense([[1], [1]])
    assert perplexity([S], Y) == pytest.approx(3.3333333333333335, rel=1e-12)
    assert perplexity([S], CountMatrix.from_dense([[1], [0]])) == pytest.approx(1 / 0.9, rel=1e-12)
    # Theta only scales each document, so the split between factors does not matter
    S2 = FactorState(Phi=np.array([[1.0, 0.8], [0.0, 0.2]]), Theta=np.array([[0.5], [0.5]]))
    assert perplexity([S2], Y) == pytest.approx(3.3333333333333335, rel=1e-12)


def test_perplexity_averages_rates_not_probabilities():
    # two samples predicting [0.2, 0.8] and [0.6, 0.4] with equal totals
    S1 = FactorState(Phi=np.array([[0.2], [0.8]]), Theta=np.array([[1.0]]))
    S2 = FactorState(Phi=np.array([[0.6], [0.4]]), Theta=np.array([[1.0]]))
    Y = CountMatrix.from_dense([[2], [1]])
    expected = math.exp(-(2 * math.log(0.4) + math.log(0.6)) / 3)
    assert perplexity([S1, S2], Y) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 1000))
def test_uniform_predictor_scores_P(P, N, seed):
    rng = np.random.default_rng(seed)
    Y = rng.poisson(1.0, size=(P, N))
    Y[0, 0] += 1
    Y = CountMatrix.from_dense(Y)
    assert uniform_perplexity(Y) == pytest.approx(P, rel=1e-12)
    S = FactorState(Phi=np.full((P, 1), 1.0 / P), Theta=rng.gamma(1.0, 1.0, size=(1, N)) + 0.1)
    assert perplexity([S], Y) == pytest.approx(P, rel=1e-12)


def test_perplexity_sample_and_factor_permutation():
    rng = np.random.default_rng(4)
    samples = [FactorState(Phi=rng.dirichlet(np.ones(5), size=3).T, Theta=rng.gamma(1, 1, size=(3, 4)))
               for _ in range(6)]
    Y = CountMatrix.from_dense(rng.poisson(2.0, size=(5, 4)) + 1)
    base = perplexity(samples, Y)
    assert perplexity(samples[::-1], Y) == pytest.approx(base, rel=1e-12)
    perm = [2, 0, 1]
    shuffled = [FactorState(Phi=S.Phi[:, perm], Theta=S.Theta[perm]) for S in samples]
    assert perplexity(shuffled, Y) == pytest.approx(base, rel=1e-12)


def test_zero_predictive_mass_is_infinite(caplog):
    S = FactorState(Phi=np.array([[1.0], [0.0]]), Theta=np.array([[1.0]]))
    Y = CountMatrix.from_dense([[1], [1]])
    with caplog.at_level("WARNING"):
        assert perplexity([S], Y) == math.inf
    assert "zero predictive rate" in caplog.text
    with pytest.raises(DataError):
        perplexity([], Y)


def test_fitted_model_beats_uniform():
    data = synthetic_corpus(RngStream(5).substream("corpus"), P=40, N=60, K=3, tokens_per_doc=40, a_phi=0.05)
    pair = split_counts(data.X, 0.8, RngStream(5).substream("split"))
    cfg = ChainConfig("BGG", n_iterations=300, burn_in=200, thin=5, mh_adapt_window=50)
    res = run_chain(pair.train, HyperParams(K=10, a_phi=0.5), cfg, RngStream(5).substream("fit"))
    assert perplexity(res.samples, pair.test) < 0.8 * uniform_perplexity(pair.test)


def test_factor_report_order_and_stats():
    S = FactorState(Phi=np.eye(3), Theta=np.ones((3, 2)), p=np.array([0.5, 0.2, 0.9]), r=np.array([2.0, 1.0, 0.5]))
    rep = factor_report(S, np.array([4, 9, 0]), M=2)
    assert rep.factor_id.tolist() == [1, 0, 2]
    assert rep.count.tolist() == [9, 4, 0]
    assert rep.n_active == 2
    assert rep.vmr[1] == pytest.approx(2.0)
    assert rep.mean[1] == pytest.approx(2.0)
    assert rep.mean[0] == pytest.approx(0.25)
    assert rep.top_terms[0][0] == 1
    rows = list(rep.rows(vocab=["a", "b", "c"]))
    assert rows[0][:3] == (1, 1, 9) and rows[0][5].split()[0] == "b"


def test_factor_report_ties_are_stable_and_nan_without_p():
    S = FactorState(Phi=np.full((4, 3), 0.25), Theta=np.ones((3, 1)))
    rep = factor_report(S, np.array([2, 2, 2]))
    assert rep.factor_id.tolist() == [0, 1, 2]
    assert np.all(np.isnan(rep.mean)) and np.all(np.isnan(rep.vmr))
    assert len(rep.top_terms[0]) == 4
    assert factor_report(S, np.zeros(3, dtype=int)).n_active == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=8), st.randoms(use_true_random=False))
def test_factor_report_permutation_invariant(counts, rnd):
    K = len(counts)
    counts = np.array(counts)
    p = np.linspace(0.1, 0.9, K)
    S = FactorState(Phi=np.full((3, K), 1 / 3), Theta=np.ones((K, 1)), p=p, r=np.ones(K))
    perm = list(range(K))
    rnd.shuffle(perm)
    S2 = FactorState(Phi=S.Phi[:, perm], Theta=S.Theta[perm], p=p[perm], r=np.ones(K))
    a, b = factor_report(S, counts), factor_report(S2, counts[perm])
    assert np.array_equal(a.count, b.count)
    assert sorted(a.vmr[a.count > 0].round(12)) == sorted(b.vmr[b.count > 0].round(12))
    assert np.all(np.diff(a.count) <= 0)


def test_synthetic_corpus_scale():
    data = synthetic_corpus(RngStream(6), P=100, N=200, K=5, tokens_per_doc=50)
    assert data.X.shape == (100, 200)
    assert data.Phi.shape == (100, 5) and np.allclose(data.Phi.sum(axis=0), 1.0)
    # every factor contributes tokens_per_doc / K tokens per document in expectation
    assert np.allclose(data.r * data.p / (1 - data.p), 10.0)
    assert 40 < data.X.total / 200 < 60
