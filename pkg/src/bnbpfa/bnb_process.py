"""Marked beta process, its epsilon-truncation and the multi-scoop IBP.

The truncated process keeps the beta-process Levy density up to a factor
(p/(1-p))^(c*eps), which makes the total mass finite::

    nu_eps(dp) = c p^(c eps - 1) (1-p)^(c(1-eps) - 1) dp
    mass       = c * gamma * alpha * B(c eps, c(1-eps))

Atom weights are then iid Beta(c eps, c(1-eps)) and atom marks r_k are iid
from the normalised mark measure.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .errors import DomainError, NumericError
from .special_math import (
    _gen,
    beta_function,
    sample_beta,
    sample_gamma,
    sample_negative_binomial,
    sample_poisson,
)

MARK_GAMMA = "gamma"
MARK_DELTA1 = "delta1"


@dataclass(frozen=True)
class BnbHyper:
    """Hyperparameters of the marked (truncated) beta process.

    ``mark`` selects the mark measure: ``"gamma"`` means
    R0 = gamma_mass * Gamma(r_base_shape, r_base_scale), ``"delta1"`` means
    R0 = gamma_mass * delta_1 (every mark equals 1).
    """

    c: float = 1.0
    alpha: float = 1.0
    gamma_mass: float = 1.0
    eps: float = 1.0 / 400
    r_base_shape: float = 1.0
    r_base_scale: float = 1.0
    mark: str = MARK_GAMMA

    def __post_init__(self):
        for name in ("c", "alpha", "gamma_mass", "r_base_shape", "r_base_scale"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value}")
        if not 0 < self.eps <= 0.5:
            raise DomainError(f"eps must lie in (0, 0.5], got {self.eps}")
        if self.mark not in (MARK_GAMMA, MARK_DELTA1):
            raise DomainError(f"unknown mark measure {self.mark!r}")

    @property
    def weight_params(self):
        """Beta parameters (c eps, c (1 - eps)) of a normalised atom weight."""
        return self.c * self.eps, self.c * (1.0 - self.eps)


@dataclass
class BnbAtoms:
    p: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(-1)
        self.r = np.asarray(self.r, dtype=float).reshape(-1)
        if self.p.shape != self.r.shape:
            raise DomainError("weights and marks must have equal length")
        if np.any((self.p <= 0) | (self.p >= 1)):
            raise DomainError("atom weights must lie in (0, 1)")
        if np.any(self.r <= 0):
            raise DomainError("atom marks must be positive")

    @property
    def K(self):
        return self.p.size


def eps_levy_mass(h):
    """Total mass c * gamma * alpha * B(c eps, c (1 - eps))."""
    a, b = h.weight_params
    return h.c * h.gamma_mass * h.alpha * beta_function(a, b)


def eps_levy_density(p, h):
    """Weight density c p^(c eps - 1) (1 - p)^(c (1 - eps) - 1) on (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("p must lie strictly inside (0, 1)")
    a, b = h.weight_params
    out = h.c * np.exp((a - 1.0) * np.log(p) + (b - 1.0) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def bp_levy_density(p, c):
    """Untruncated beta-process weight density c p^-1 (1 - p)^(c - 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("p must lie strictly inside (0, 1)")
    out = c * np.exp(-np.log(p) + (c - 1.0) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def _draw_marks(h, k, rng):
    if h.mark == MARK_DELTA1:
        return np.ones(k)
    if k == 0:
        return np.zeros(0)
    return np.atleast_1d(sample_gamma(h.r_base_shape, h.r_base_scale, rng, size=k))


def draw_eps_bp(h, rng, fixed_k=False):
    """One draw of the truncated marked beta process.

    The atom count is Pois(mass), or ceil(mass) when ``fixed_k`` is set.
    """
    mass = eps_levy_mass(h)
    k = math.ceil(mass) if fixed_k else sample_poisson(mass, rng)
    a, b = h.weight_params
    p = np.atleast_1d(sample_beta(a, b, rng, size=k)) if k else np.zeros(0)
    return BnbAtoms(p=p, r=_draw_marks(h, k, rng))


def draw_nbp(atoms, rng):
    """One negative binomial process draw: a count per atom."""
    if atoms.K == 0:
        return np.zeros(0, dtype=np.int64)
    return np.atleast_1d(sample_negative_binomial(atoms.r, atoms.p, rng)).astype(np.int64)


def posterior_p_params(m_nk, n, r_k, h):
    """Beta(m_nk, c + n r_k) posterior of an observed atom weight."""
    if n < 1:
        raise DomainError("need at least one observation")
    if r_k <= 0 or m_nk < 0:
        raise DomainError("r_k must be positive and m_nk nonnegative")
    return float(m_nk), h.c + n * r_k


def _inner_new_dish(r, n, c):
    """int_0^1 c (1 - (1-p)^r) p^-1 (1-p)^(c + n r - 1) dp.

    With p = 1 - exp(-s / rate), rate = c + n r, the integrand becomes
    smooth on [0, inf) with an exp(-s) tail whatever the size of n r.
    """
    rate = c + n * r

    def f(s):
        t = s / rate
        if t == 0.0:
            return c * r
        return c * math.expm1(-r * t) / math.expm1(-t) * math.exp(-s)

    val, err, info = integrate.quad(f, 0.0, np.inf, epsabs=1e-12, epsrel=1e-10, full_output=1)[:3]
    val /= rate
    if not math.isfinite(val) or err > 1e-8 * rate:
        raise NumericError("inner quadrature failed", {"r": r, "n": n, "abserr": err / rate})
    return val


def new_dish_rate(n, h):
    """Expected number of dishes first sampled by customer n + 1."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    c = h.c
    if h.mark == MARK_DELTA1:
        return h.alpha * h.gamma_mass * c / (c + n)
    shape, scale = h.r_base_shape, h.r_base_scale
    density = stats.gamma(shape, scale=scale).pdf

    val, err, info = integrate.quad(
        lambda r: density(r) * _inner_new_dish(r, n, c),
        0.0, np.inf, epsabs=1e-10, epsrel=1e-9, limit=200, full_output=1,
    )[:3]
    if err > 1e-8:
        raise NumericError(
            "outer quadrature did not reach 1e-8 absolute accuracy",
            {"n": n, "abserr": err, "neval": info.get("neval")},
        )
    return h.alpha * h.gamma_mass * val


@dataclass
class MsibpDraw:
    """One multi-scoop IBP simulation over a shared atom list.

    ``customer``, ``atom`` and ``count`` are the nonzero entries of the
    customer-by-atom count table (customers 0-based). ``new_dishes[i]`` is
    how many atoms customer i is the first to touch.
    """

    atoms: BnbAtoms
    customer: np.ndarray
    atom: np.ndarray
    count: np.ndarray
    new_dishes: np.ndarray

    @property
    def total_dishes(self):
        return np.cumsum(self.new_dishes)


def _zero_truncated_nb(r, p, gen):
    """Draw NB(r, p) conditioned on being >= 1, by inverting the tail."""
    s0 = -np.expm1(r * np.log1p(-p))
    v = (1.0 - gen.random(np.shape(r))) * s0
    k = stats.nbinom.isf(v, r, 1.0 - p)
    return np.maximum(k, 1).astype(np.int64)


def simulate_msibp(n_customers, h, rng, fixed_k=False):
    """Simulate customers 1..n through a single truncated-process draw.

    Each customer takes NB(r_k, p_k) scoops of every atom. Per atom, the
    number of customers with a nonzero count is Binomial(n, 1-(1-p)^r);
    those customers are a uniform subset and their counts are zero-truncated
    NB. This is the same joint law as drawing every NB count, but costs
    O(K + touched pairs) instead of O(n K).
    """
    if n_customers < 0:
        raise DomainError("n_customers must be nonnegative")
    gen = _gen(rng)
    atoms = draw_eps_bp(h, rng, fixed_k=fixed_k)
    empty = np.zeros(0, dtype=np.int64)
    if n_customers == 0 or atoms.K == 0:
        return MsibpDraw(atoms, empty, empty, empty, np.zeros(n_customers, dtype=np.int64))
    q = -np.expm1(atoms.r * np.log1p(-atoms.p))
    touched = gen.binomial(n_customers, np.clip(q, 0.0, 1.0))
    idx = np.flatnonzero(touched)
    customers, atom_ids = [], []
    for k in idx:
        who = gen.choice(n_customers, size=touched[k], replace=False)
        customers.append(np.sort(who))
        atom_ids.append(np.full(touched[k], k))
    if idx.size:
        customer = np.concatenate(customers)
        atom = np.concatenate(atom_ids)
        count = _zero_truncated_nb(atoms.r[atom], atoms.p[atom], gen)
        first = np.array([c[0] for c in customers], dtype=np.int64)
        new = np.bincount(first, minlength=n_customers)
        order = np.lexsort((atom, customer))
        customer, atom, count = customer[order], atom[order], count[order]
    else:
        customer = atom = count = empty
        new = np.zeros(n_customers, dtype=np.int64)
    return MsibpDraw(atoms, customer.astype(np.int64), atom.astype(np.int64), count, new)
