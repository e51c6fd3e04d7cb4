"""Held-out evaluation: word-level splits, per-word perplexity, factor summaries.

Perplexity follows the predictive-rate form

    exp(-(1/y..) sum_pi y_pi log[ sum_s (Phi^s Theta^s)_pi / sum_s sum_p (Phi^s Theta^s)_pi ])

The denominator sums over terms only, so each document's predictive
distribution over terms is normalised separately (i is free inside the
outer sum). A uniform loading matrix therefore scores exactly P.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError
from .pfa_model import CountMatrix
from .special_math import _gen

log = logging.getLogger(__name__)


@dataclass
class SplitPair:
    train: CountMatrix
    test: CountMatrix
    seed: object
    ratio: float


def train_size(total, ratio):
    """Tokens kept for training from a document of ``total`` tokens."""
    return int(math.floor(ratio * total + 0.5))


def split_counts(X, ratio, rng):
    """Hold out tokens uniformly at random within every document.

    Each document keeps ``train_size(x_.i, ratio)`` of its tokens, drawn
    without replacement (multivariate hypergeometric over its terms).
    """
    if not 0.0 < ratio < 1.0:
        raise DomainError(f"ratio must lie in (0, 1), got {ratio}")
    if X.nnz == 0:
        raise DataError("cannot split an empty count matrix")
    gen = _gen(rng)
    train = np.empty_like(X.counts)
    bounds = np.searchsorted(X.cols, np.arange(X.N + 1))
    for i in range(X.N):
        lo, hi = bounds[i], bounds[i + 1]
        if lo == hi:
            continue
        colors = X.counts[lo:hi]
        train[lo:hi] = gen.multivariate_hypergeometric(colors, train_size(int(colors.sum()), ratio))
    test = X.counts - train
    keep_t, keep_y = train > 0, test > 0
    T = CountMatrix(X.P, X.N, X.rows[keep_t], X.cols[keep_t], train[keep_t])
    Y = CountMatrix(X.P, X.N, X.rows[keep_y], X.cols[keep_y], test[keep_y])
    seed = getattr(rng, "seed", None)
    return SplitPair(train=T, test=Y, seed=seed, ratio=ratio)


class PredictiveAccumulator:
    """Running sums of predictive rates over collected samples.

    Only the test cells and the per-document totals are stored, so memory
    does not grow with the number of samples.
    """

    def __init__(self, Y):
        if Y.nnz == 0:
            raise DataError("test matrix has no positive entries")
        self.Y = Y
        self.cell_rate = np.zeros(Y.nnz)
        self.doc_rate = np.zeros(Y.N)
        self.n_samples = 0

    def add(self, S):
        theta = S.effective_theta()
        self.cell_rate += (S.Phi[self.Y.rows] * theta[:, self.Y.cols].T).sum(axis=1)
        self.doc_rate += S.Phi.sum(axis=0) @ theta
        self.n_samples += 1

    __call__ = add

    def perplexity(self):
        if self.n_samples == 0:
            raise DataError("no samples collected")
        Y = self.Y
        bad = self.cell_rate <= 0
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            log.warning(
                "zero predictive rate at %d test cell(s), first at term %d, document %d",
                int(bad.sum()), Y.rows[j], Y.cols[j],
            )
            return math.inf
        logprob = np.log(self.cell_rate) - np.log(self.doc_rate[Y.cols])
        return float(math.exp(-np.dot(Y.counts, logprob) / Y.total))


def perplexity(samples, Y):
    """Held-out per-word perplexity of ``Y`` under the collected ``samples``."""
    if len(samples) == 0:
        raise DataError("need at least one collected sample")
    acc = PredictiveAccumulator(Y)
    for S in samples:
        acc.add(S)
    return acc.perplexity()


def uniform_perplexity(Y):
    """Perplexity of the model that spreads every document evenly over terms."""
    acc = PredictiveAccumulator(Y)
    acc.cell_rate[:] = 1.0 / Y.P
    acc.doc_rate[:] = 1.0
    acc.n_samples = 1
    return acc.perplexity()


# ---------------------------------------------------------------------------
# factor summaries

@dataclass
class FactorReport:
    """Per-factor statistics in decreasing order of assigned count.

    ``factor_id[j]`` is the original index of the factor at rank j.
    ``mean`` and ``vmr`` are NaN for variants without a p_k.
    """

    factor_id: np.ndarray
    count: np.ndarray
    mean: np.ndarray
    vmr: np.ndarray
    top_terms: list
    active: np.ndarray

    @property
    def n_active(self):
        return int(self.active.sum())

    def rows(self, vocab=None):
        """CSV rows (factor_rank, factor_id, count, mean, vmr, top_terms)."""
        for rank, k in enumerate(self.factor_id):
            terms = self.top_terms[rank]
            if vocab is not None:
                terms = [vocab[t] for t in terms]
            yield (rank + 1, int(k), int(self.count[rank]), float(self.mean[rank]),
                   float(self.vmr[rank]), " ".join(str(t) for t in terms))


FACTOR_COLUMNS = ("factor_rank", "factor_id", "count", "mean", "vmr", "top_terms")


def factor_report(S, A, M=10):
    """Summarise factors by assigned count, NB mean r p/(1-p) and VMR 1/(1-p).

    ``A`` is a LatentAllocation or directly the per-factor counts x_..k.
    """
    counts = np.asarray(getattr(A, "x_k", A))
    order = np.argsort(-counts, kind="stable")
    if S.p is not None and S.r is not None:
        p, r = S.p[order], S.r[order]
        mean = r * p / (1.0 - p)
        vmr = 1.0 / (1.0 - p)
    else:
        mean = vmr = np.full(order.size, np.nan)
    m = min(int(M), S.Phi.shape[0])
    top = [list(np.argsort(-S.Phi[:, k], kind="stable")[:m]) for k in order]
    return FactorReport(
        factor_id=order, count=counts[order], mean=mean, vmr=vmr, top_terms=top, active=counts[order] > 0
    )


# ---------------------------------------------------------------------------
# synthetic data

@dataclass
class SyntheticCorpus:
    X: CountMatrix
    Phi: np.ndarray
    Theta: np.ndarray
    p: np.ndarray
    r: np.ndarray


def synthetic_corpus(rng, P=100, N=200, K=5, tokens_per_doc=50.0, a_phi=0.05, r_shape=2.0, r_scale=1.0):
    """Draw a count matrix from the beta-gamma-gamma-Poisson hierarchy with K factors.

    phi_k ~ Dir(a_phi), r_k ~ Gamma(r_shape, r_scale),
    theta_ki ~ Gamma(r_k, p_k/(1-p_k)), x_pi ~ Pois((Phi Theta)_pi).
    Instead of drawing p_k, it is set so every factor contributes
    tokens_per_doc / K expected tokens per document.
    """
    gen = _gen(rng)
    Phi = gen.dirichlet(np.full(P, a_phi), size=K).T
    r = gen.gamma(r_shape, r_scale, size=K)
    share = tokens_per_doc / K
    p = share / (share + r)
    Theta = gen.gamma(r[:, None], (p / (1.0 - p))[:, None], size=(K, N))
    X = gen.poisson(Phi @ Theta)
    return SyntheticCorpus(CountMatrix.from_dense(X), Phi, Theta, p, r)
