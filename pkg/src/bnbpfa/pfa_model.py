"""Poisson factor analysis data model: X ~ Pois(Phi Theta).

Observed counts are kept as sparse triplets. The latent split of each
observed x_pi over factors (x_pik) is stored only for observed cells, one
dense K-vector per cell; cells with x_pi = 0 carry no latent counts and
enter the likelihood analytically.
"""

import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .errors import DataError, ModelDegeneracyError
from .special_math import _gen


class CountMatrix:
    """Sparse P x N matrix of positive integer counts (terms x documents).

    Entries are stored in document-major order (sorted by document, then
    term), which fixes the iteration order of every sampler.
    """

    def __init__(self, P, N, rows, cols, counts):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        counts = np.asarray(counts).reshape(-1)
        if not (rows.size == cols.size == counts.size):
            raise DataError("rows, cols and counts must have equal length")
        if counts.size and np.any(counts != np.floor(counts)):
            raise DataError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts <= 0):
            raise DataError("stored counts must be positive")
        if rows.size and (rows.min() < 0 or rows.max() >= P or cols.min() < 0 or cols.max() >= N):
            raise DataError("index out of range")
        order = np.lexsort((rows, cols))
        rows, cols, counts = rows[order], cols[order], counts[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                j = int(np.flatnonzero(dup)[0])
                raise DataError(f"duplicate entry at term {rows[j]}, document {cols[j]}")
        self.P, self.N = int(P), int(N)
        self.rows, self.cols, self.counts = rows, cols, counts
        self._doc_ind = None
        self._term_ind = None

    @classmethod
    def from_dense(cls, X):
        X = np.asarray(X)
        if X.ndim != 2:
            raise DataError("expected a 2-D array")
        if np.any(X < 0):
            raise DataError("counts must be nonnegative")
        rows, cols = np.nonzero(X)
        return cls(X.shape[0], X.shape[1], rows, cols, X[rows, cols])

    @classmethod
    def from_triplets(cls, P, N, rows, cols, counts):
        """Build from possibly duplicated triplets, summing duplicates."""
        coo = sparse.coo_matrix(
            (np.asarray(counts, dtype=np.int64), (np.asarray(rows), np.asarray(cols))),
            shape=(P, N),
        )
        coo.sum_duplicates()
        keep = coo.data > 0
        return cls(P, N, coo.row[keep], coo.col[keep], coo.data[keep])

    @property
    def nnz(self):
        return self.counts.size

    @property
    def shape(self):
        return self.P, self.N

    @property
    def total(self):
        return int(self.counts.sum())

    def doc_totals(self):
        return np.bincount(self.cols, weights=self.counts, minlength=self.N).astype(np.int64)

    def term_totals(self):
        return np.bincount(self.rows, weights=self.counts, minlength=self.P).astype(np.int64)

    def doc_frequency(self):
        return np.bincount(self.rows, minlength=self.P)

    def to_dense(self):
        X = np.zeros((self.P, self.N), dtype=np.int64)
        X[self.rows, self.cols] = self.counts
        return X

    def to_scipy(self):
        return sparse.csc_matrix((self.counts, (self.rows, self.cols)), shape=(self.P, self.N))

    @property
    def doc_indicator(self):
        """N x nnz 0/1 matrix mapping cells to their document."""
        if self._doc_ind is None:
            self._doc_ind = sparse.csr_matrix(
                (np.ones(self.nnz), (self.cols, np.arange(self.nnz))), shape=(self.N, self.nnz)
            )
        return self._doc_ind

    @property
    def term_indicator(self):
        """P x nnz 0/1 matrix mapping cells to their term."""
        if self._term_ind is None:
            self._term_ind = sparse.csr_matrix(
                (np.ones(self.nnz), (self.rows, np.arange(self.nnz))), shape=(self.P, self.nnz)
            )
        return self._term_ind

    def select_terms(self, keep):
        """Restrict to the terms where boolean mask ``keep`` is true, renumbering them."""
        keep = np.asarray(keep, dtype=bool)
        new_id = np.cumsum(keep) - 1
        m = keep[self.rows]
        return CountMatrix(int(keep.sum()), self.N, new_id[self.rows[m]], self.cols[m], self.counts[m])

    def digest(self):
        h = hashlib.sha256()
        h.update(np.array([self.P, self.N], dtype=np.int64).tobytes())
        for arr in (self.rows, self.cols, self.counts):
            h.update(arr.astype(np.int64).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"CountMatrix(P={self.P}, N={self.N}, nnz={self.nnz}, total={self.total})"


@dataclass
class FactorState:
    """Latent variables of one chain.

    ``Theta`` holds the factor scores. In the sparse variant it holds the
    gamma-distributed magnitudes s_ki and the effective score is z_ki s_ki.
    """

    Phi: np.ndarray
    Theta: np.ndarray
    p: np.ndarray = None
    r: np.ndarray = None
    z: np.ndarray = None
    pi: np.ndarray = None
    g: np.ndarray = None

    @property
    def K(self):
        return self.Phi.shape[1]

    def effective_theta(self):
        if self.z is None:
            return self.Theta
        return self.Theta * self.z

    def copy(self):
        return FactorState(**{f.name: None if getattr(self, f.name) is None else np.array(getattr(self, f.name))
                              for f in fields(self)})

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


@dataclass
class LatentAllocation:
    """Latent counts x_pik for the observed cells plus cached marginals.

    ``cells[j]`` is the K-vector of counts for observed cell j of the
    CountMatrix; ``x_ik`` is N x K, ``x_pk`` is P x K, ``x_k`` has length K
    and ``x_i`` length N.
    """

    cells: np.ndarray
    x_ik: np.ndarray = field(default=None)
    x_pk: np.ndarray = field(default=None)
    x_k: np.ndarray = field(default=None)
    x_i: np.ndarray = field(default=None)

    @classmethod
    def from_cells(cls, X, cells):
        cells = np.asarray(cells, dtype=np.int64)
        alloc = cls(cells=cells)
        alloc.recompute(X)
        return alloc

    @classmethod
    def empty(cls, X, K):
        return cls.from_cells(X, np.zeros((X.nnz, K), dtype=np.int64))

    def recompute(self, X):
        cells = self.cells
        self.x_ik = np.rint(X.doc_indicator @ cells).astype(np.int64)
        self.x_pk = np.rint(X.term_indicator @ cells).astype(np.int64)
        self.x_k = cells.sum(axis=0)
        self.x_i = self.x_ik.sum(axis=1)

    def check(self, X):
        """Raise if conservation or cached marginals are violated."""
        if not np.array_equal(self.cells.sum(axis=1), X.counts):
            raise AssertionError("latent counts do not sum to observed counts")
        fresh = LatentAllocation.from_cells(X, self.cells)
        for name in ("x_ik", "x_pk", "x_k", "x_i"):
            if not np.array_equal(getattr(self, name), getattr(fresh, name)):
                raise AssertionError(f"stale marginal {name}")

    @property
    def K(self):
        return self.cells.shape[1]


def cell_rates(X, S):
    """nnz x K matrix of phi_pk theta_ki for every observed cell."""
    theta = S.effective_theta()
    return S.Phi[X.rows] * theta[:, X.cols].T


def allocate_counts(X, S, rng):
    """Split every observed count over factors, x_pi. ~ Mult(x_pi; zeta_pi.)."""
    rates = cell_rates(X, S)
    total = rates.sum(axis=1, keepdims=True)
    bad = ~(total[:, 0] > 0)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        cell = (int(X.rows[j]), int(X.cols[j]))
        raise ModelDegeneracyError(f"zero rate at observed cell (term={cell[0]}, doc={cell[1]})", cell)
    probs = rates / total
    cells = _gen(rng).multinomial(X.counts, probs)
    return LatentAllocation.from_cells(X, cells)


def compose_rate(S, p, i):
    """Poisson rate of cell (p, i): sum_k phi_pk theta_ki."""
    theta = S.effective_theta()
    return float(S.Phi[p] @ theta[:, i])


def poisson_loglik(X, S):
    """Full Poisson log likelihood of X under rates Phi Theta.

    Zero cells contribute -lambda only, so the rate total is taken as
    sum_k (sum_p phi_pk)(sum_i theta_ki). Returns -inf when an observed
    count has zero rate.
    """
    theta = S.effective_theta()
    lam = (S.Phi[X.rows] * theta[:, X.cols].T).sum(axis=1)
    if np.any(lam <= 0):
        return -np.inf
    total_rate = float(S.Phi.sum(axis=0) @ theta.sum(axis=1))
    return float(np.sum(X.counts * np.log(lam) - gammaln(X.counts + 1.0)) - total_rate)


# ---------------------------------------------------------------------------
# snapshots

def _atomic_write_bytes(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_state(path, S, iteration, hyper=None):
    """Write a FactorState snapshot as an ``.npz`` archive.

    Keys: ``Phi`` (P x K), ``Theta`` (K x N), and when present ``p``, ``r``,
    ``z``, ``pi``, ``g``; ``iteration`` (int) and ``hyper`` (JSON text).
    """
    buf = io.BytesIO()
    np.savez(buf, iteration=np.int64(iteration), hyper=np.array(json.dumps(hyper or {}, sort_keys=True)),
             **S.arrays())
    _atomic_write_bytes(path, buf.getvalue())


def load_state(path):
    """Return (FactorState, iteration, hyper dict) from a snapshot file."""
    with np.load(path, allow_pickle=False) as data:
        arrays = {f.name: np.array(data[f.name]) for f in fields(FactorState) if f.name in data.files}
        iteration = int(data["iteration"])
        hyper = json.loads(str(data["hyper"]))
    return FactorState(**arrays), iteration, hyper
