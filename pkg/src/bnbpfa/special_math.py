"""Special functions and seeded samplers used by the PFA inference code.

Every function accepts scalars or numpy arrays. Samplers draw from an
``RngStream`` so that experiments are reproducible from a single seed.
"""

import zlib

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

# p is kept inside [P_MIN, P_MAX] so that p/(1-p) and log(1-p) stay finite
P_MIN = 1e-16
P_MAX = 1.0 - 1e-16
TINY = np.finfo(float).tiny

_SEED_LIMIT = 2**64


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


class RngStream:
    """Seeded random stream with reproducible labelled substreams.

    A stream is identified by ``(seed, key)``. ``substream("theta", 3)``
    derives a statistically independent child whose state depends only on
    the parent identity and the label, never on how much the parent has
    been used.
    """

    def __init__(self, seed, key=()):
        seed = int(seed)
        if not 0 <= seed < _SEED_LIMIT:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def substream(self, label, *index):
        return RngStream(self.seed, self.key + (_label_key(label),) + tuple(int(i) for i in index))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def _gen(rng):
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def _require_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        raise DomainError(f"{name} must be positive, got {x!r}")
    return arr


def _scalar_or_array(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


# ---------------------------------------------------------------------------
# deterministic functions

def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    return _scalar_or_array(gammaln(_require_positive(x, "x")))


# Bernoulli-number coefficients B_2n / (2n) for the digamma asymptotic series
_DIGAMMA_COEFFS = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
# B_2n for the trigamma series 1/x + 1/(2x^2) + sum B_2n / x^(2n+1)
_TRIGAMMA_COEFFS = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
_SHIFT_TO = 10.0


def _shift_up(x):
    """Return (x shifted to >= _SHIFT_TO, number of unit shifts per element)."""
    steps = np.maximum(np.ceil(_SHIFT_TO - x), 0.0)
    return x + steps, steps


def digamma(x):
    """Digamma function psi(x) for x > 0.

    Upward recurrence psi(x) = psi(x+1) - 1/x until x >= 10, then the
    asymptotic expansion in 1/x^2.
    """
    x = _require_positive(x, "x")
    y, steps = _shift_up(x)
    acc = np.zeros_like(y)
    nmax = int(steps.max()) if steps.size else 0
    for j in range(nmax):
        live = steps > j
        acc -= np.where(live, 1.0 / (x + j), 0.0)
    inv2 = 1.0 / (y * y)
    series = np.zeros_like(y)
    for coeff in reversed(_DIGAMMA_COEFFS):
        series = (series + coeff) * inv2
    out = np.log(y) - 0.5 / y - series + acc
    return _scalar_or_array(out)


def trigamma(x):
    """Trigamma function psi_1(x) for x > 0 (recurrence + asymptotic series)."""
    x = _require_positive(x, "x")
    y, steps = _shift_up(x)
    acc = np.zeros_like(y)
    nmax = int(steps.max()) if steps.size else 0
    for j in range(nmax):
        live = steps > j
        acc += np.where(live, 1.0 / (x + j) ** 2, 0.0)
    inv = 1.0 / y
    inv2 = inv * inv
    series = np.zeros_like(y)
    for coeff in reversed(_TRIGAMMA_COEFFS):
        series = (series + coeff) * inv2
    out = inv + 0.5 * inv2 + series * inv + acc
    return _scalar_or_array(out)


def log_beta(a, b):
    a = _require_positive(a, "a")
    b = _require_positive(b, "b")
    return _scalar_or_array(gammaln(a) + gammaln(b) - gammaln(a + b))


def beta_function(a, b):
    """B(a, b), evaluated in log space."""
    return _scalar_or_array(np.exp(log_beta(a, b)))


def nb_logpmf(k, r, p):
    """log NB(k; r, p) = log[Gamma(r+k)/(k! Gamma(r)) (1-p)^r p^k]."""
    k = np.asarray(k, dtype=float)
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    return _scalar_or_array(
        gammaln(r + k) - gammaln(k + 1) - gammaln(r) + r * np.log1p(-p) + k * np.log(p)
    )


def poisson_logpmf(k, lam):
    k = np.asarray(k, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(k > 0, k * np.log(lam), 0.0) - lam - gammaln(k + 1)
    return _scalar_or_array(out)


# ---------------------------------------------------------------------------
# samplers

def _log_standard_gamma(shape, gen, size=None):
    """log of a Gamma(shape, 1) draw; small shapes use the boost
    Gamma(a) = Gamma(a+1) * U^(1/a) so the log never underflows."""
    a = np.asarray(shape, dtype=float)
    small = a < 1.0
    g = gen.standard_gamma(np.where(small, a + 1.0, a), size=size)
    with np.errstate(divide="ignore"):
        out = np.log(g)
    if np.any(small):
        u = gen.random(np.shape(out))
        out = np.where(small, out + np.log(u) / a, out)
    return out


def sample_gamma(shape, scale, rng, size=None):
    """Gamma(shape, scale) draws; mean shape * scale."""
    shape = _require_positive(shape, "shape")
    scale = _require_positive(scale, "scale")
    gen = _gen(rng)
    if size is None:
        size = np.broadcast(shape, scale).shape or None
    out = np.exp(_log_standard_gamma(np.broadcast_to(shape, size or ()), gen, size)) * scale
    return _scalar_or_array(np.maximum(out, TINY))


def sample_beta(a, b, rng, size=None):
    """Beta(a, b) draws via a ratio of gammas, clamped to [P_MIN, P_MAX]."""
    a = _require_positive(a, "a")
    b = _require_positive(b, "b")
    gen = _gen(rng)
    if size is None:
        size = np.broadcast(a, b).shape or None
    shp = size or ()
    lx = _log_standard_gamma(np.broadcast_to(a, shp), gen, size)
    ly = _log_standard_gamma(np.broadcast_to(b, shp), gen, size)
    p = np.exp(-np.logaddexp(0.0, ly - lx))
    return _scalar_or_array(np.clip(p, P_MIN, P_MAX))


def sample_dirichlet(alphas, rng):
    """Dirichlet draw(s) along the last axis of ``alphas``.

    Normalisation happens in log space, so tiny concentrations (e.g. 0.01
    over thousands of terms) still give strictly positive components.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim == 0 or alphas.shape[-1] == 0:
        raise DomainError("Dirichlet needs a non-empty concentration vector")
    _require_positive(alphas, "alphas")
    lg = _log_standard_gamma(alphas, _gen(rng), alphas.shape)
    lg -= lg.max(axis=-1, keepdims=True)
    w = np.exp(lg)
    w /= w.sum(axis=-1, keepdims=True)
    w = np.maximum(w, TINY)
    return w / w.sum(axis=-1, keepdims=True)


def _check_simplex(probs, tol=1e-9):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim == 0 or probs.shape[-1] == 0:
        raise DomainError("probability vector is empty")
    if np.any(probs < 0) or np.any(~np.isfinite(probs)):
        raise DomainError("probabilities must be finite and nonnegative")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > tol):
        raise DomainError("probabilities must sum to 1")
    return probs / probs.sum(axis=-1, keepdims=True)


def sample_multinomial(n, probs, rng):
    """Multinomial counts; broadcasts ``n`` against leading axes of ``probs``."""
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise DomainError(f"n must be a nonnegative integer, got {n!r}")
    probs = _check_simplex(probs)
    return _gen(rng).multinomial(n.astype(np.int64), probs)


def sample_poisson(lam, rng, size=None):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(~np.isfinite(lam)):
        raise DomainError(f"Poisson rate must be finite and >= 0, got {lam!r}")
    out = _gen(rng).poisson(lam, size=size)
    return int(out) if np.ndim(out) == 0 else out


def sample_negative_binomial(r, p, rng, size=None):
    """NB(r, p) as lambda ~ Gamma(r, p/(1-p)), k ~ Pois(lambda)."""
    r = _require_positive(r, "r")
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    odds = np.minimum(p / (1.0 - p), 1e15)
    lam = sample_gamma(r, odds, rng, size=size)
    return sample_poisson(lam, rng)
