"""Gibbs / Metropolis-Hastings / EM engines for the PFA prior variants.

Variants (names follow the prior placed on the factor scores):

``BGG``          beta-gamma-gamma: infers p_k, r_k and Theta
``BG``           beta-gamma: as BGG with r_k frozen (GaP-like)
``SGG``          sparse gamma-gamma: theta_ki = z_ki s_ki, p_k fixed at 0.5
``DIR``          Dirichlet scores (LDA-like block Gibbs)
``GAMMA_GIBBS``  independent gamma priors on Phi and Theta
``GAMMA_EM``     MAP/EM counterpart of GAMMA_GIBBS (KL-NMF when flat)

Every Gibbs sweep starts by re-allocating the observed counts to factors,
then updates Phi, then the score-side variables.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .bnb_process import BnbHyper
from .errors import ConfigError, DomainError, ModelDegeneracyError
from .pfa_model import FactorState, LatentAllocation, allocate_counts, poisson_loglik
from .special_math import (
    _gen,
    digamma,
    sample_beta,
    sample_dirichlet,
    sample_gamma,
    trigamma,
)

log = logging.getLogger(__name__)

VARIANTS = ("BGG", "SGG", "BG", "DIR", "GAMMA_GIBBS", "GAMMA_EM")
MH_VARIANTS = ("BGG", "SGG")
ODDS_MAX = 1e15


@dataclass(frozen=True)
class HyperParams:
    """Model hyperparameters; ``K`` is the factor count or its upper bound.

    ``eps`` defaults to 1/K and ``a_theta`` to a variant-specific value
    (1.01 for the gamma variants, 50/K for DIR) when left as None.
    """

    K: int = 400
    c: float = 1.0
    c0: float = 1.0
    r0: float = 1.0
    gamma_mass: float = 1.0
    alpha: float = 1.0
    eps: float = None
    a_phi: float = 0.05
    a_theta: float = None
    b_phi: float = 1e-6
    g: float = 1e6
    r_fixed: float = 1.1
    update_g: bool = False

    def __post_init__(self):
        if int(self.K) < 1:
            raise DomainError("K must be at least 1")
        for name in ("c", "c0", "r0", "gamma_mass", "alpha", "a_phi", "g", "r_fixed"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.b_phi < 0:
            raise DomainError("b_phi must be nonnegative")

    @property
    def eps_value(self):
        return self.eps if self.eps is not None else min(1.0 / self.K, 0.5)

    def a_theta_for(self, variant):
        if self.a_theta is not None:
            return self.a_theta
        return 50.0 / self.K if variant == "DIR" else 1.01

    def bnb(self):
        return BnbHyper(
            c=self.c, alpha=self.alpha, gamma_mass=self.gamma_mass, eps=self.eps_value,
            r_base_shape=self.c0 * self.r0, r_base_scale=1.0 / self.c0,
        )

    @property
    def weight_params(self):
        eps = self.eps_value
        return self.c * eps, self.c * (1.0 - eps)


def default_hyper(variant, **overrides):
    """Hyperparameters with the published defaults for ``variant``."""
    base = {}
    if variant in ("GAMMA_GIBBS", "GAMMA_EM"):
        base = dict(a_phi=1.01, a_theta=1.01, b_phi=1e-6, g=1e6)
    base.update(overrides)
    return HyperParams(**base)


@dataclass(frozen=True)
class ChainConfig:
    variant: str = "BGG"
    n_iterations: int = 2500
    burn_in: int = 1000
    thin: int = 5
    mh_stepsize: float = 0.01
    mh_adapt_window: int = 100
    target_accept: tuple = (0.25, 0.50)
    audit: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.n_iterations < 1 or self.thin < 1 or self.mh_adapt_window < 1:
            raise ConfigError("n_iterations, thin and mh_adapt_window must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < n_iterations")
        lo, hi = self.target_accept
        if not 0 < lo < hi < 1:
            raise ConfigError("target_accept must be an interval inside (0, 1)")
        if not self.mh_stepsize > 0:
            raise ConfigError("mh_stepsize must be positive")

    @property
    def n_collected(self):
        return (self.n_iterations - self.burn_in) // self.thin


@dataclass
class MhDiagnostics:
    """Per-factor MH bookkeeping for the r_k updates.

    ``accepted``/``proposed`` accumulate since the last ``reset_totals``;
    the ``window_*`` counters feed step-size adaptation.
    """

    mu: np.ndarray
    accepted: np.ndarray = None
    proposed: np.ndarray = None
    window_accepted: np.ndarray = None
    window_proposed: np.ndarray = None
    fallbacks: int = 0
    sweep_accepted: int = 0
    sweep_proposed: int = 0

    @classmethod
    def create(cls, K, mu):
        z = lambda: np.zeros(K, dtype=np.int64)  # noqa: E731
        return cls(mu=np.full(K, float(mu)), accepted=z(), proposed=z(), window_accepted=z(), window_proposed=z())

    def record(self, idx, accepted):
        acc = accepted.astype(np.int64)
        np.add.at(self.accepted, idx, acc)
        np.add.at(self.proposed, idx, 1)
        np.add.at(self.window_accepted, idx, acc)
        np.add.at(self.window_proposed, idx, 1)
        self.sweep_accepted += int(acc.sum())
        self.sweep_proposed += int(np.size(idx))

    def acceptance_rates(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)

    def adapt(self, target):
        """Scale mu by 1.2 where the window rate is above the band, 0.8 below."""
        lo, hi = target
        seen = self.window_proposed > 0
        rate = np.where(seen, self.window_accepted / np.maximum(self.window_proposed, 1), 0.0)
        self.mu = np.where(seen & (rate > hi), self.mu * 1.2, self.mu)
        self.mu = np.where(seen & (rate < lo), self.mu * 0.8, self.mu)
        self.window_accepted[:] = 0
        self.window_proposed[:] = 0

    def reset_totals(self):
        self.accepted[:] = 0
        self.proposed[:] = 0

    def start_sweep(self):
        self.sweep_accepted = 0
        self.sweep_proposed = 0


# ---------------------------------------------------------------------------
# r_k updates

class RTarget:
    """Conditional log density of r_k for several factors at once.

    ``x`` is N x K (latent counts per observation and factor); ``n_obs`` is
    the number of NB observations behind each column; the prior is
    Gamma(shape, 1/rate)::

        g(r) = (shape-1) log r - rate r + n_obs r log(1-p)
               + sum_i [lnGamma(r + x_i) - lnGamma(r)]
    """

    def __init__(self, x, n_obs, log1mp, shape, rate):
        x = np.asarray(x, dtype=float)
        ii, kk = np.nonzero(x > 0)
        self.col = kk
        self.xv = x[ii, kk]
        self.npos = np.bincount(kk, minlength=x.shape[1]).astype(float)
        self.K = x.shape[1]
        self.n_obs = np.asarray(n_obs, dtype=float)
        self.log1mp = np.asarray(log1mp, dtype=float)
        self.shape = float(shape)
        self.rate = float(rate)

    def _colsum(self, v):
        return np.bincount(self.col, weights=v, minlength=self.K)

    def logp(self, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = self._colsum(gammaln(r[self.col] + self.xv)) - self.npos * gammaln(r)
            return (self.shape - 1.0) * np.log(r) - self.rate * r + lg + self.n_obs * r * self.log1mp

    def derivs(self, r):
        """g'(r) and g''(r)."""
        d1 = self._colsum(digamma(r[self.col] + self.xv)) - self.npos * digamma(r)
        d2 = self._colsum(trigamma(r[self.col] + self.xv)) - self.npos * trigamma(r)
        g1 = (self.shape - 1.0) / r - self.rate + self.n_obs * self.log1mp + d1
        g2 = -(self.shape - 1.0) / r**2 + d2
        return g1, g2

    def newton_center(self, r):
        """One Newton step from r; NaN where the step is unusable."""
        g1, g2 = self.derivs(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            m = r - g1 / g2
        ok = np.isfinite(g2) & (g2 < 0) & np.isfinite(m) & (m > 0)
        return np.where(ok, m, np.nan)


def _log_q(target, center, mu, shape, rate):
    """Log density of proposing ``target`` from a state with Newton ``center``.

    A finite center gives N(center, var = mu sqrt(center)); otherwise the
    proposal is the Gamma(shape, 1/rate) prior.
    """
    newton = np.isfinite(center)
    c = np.where(newton, center, 1.0)
    var = mu * np.sqrt(c)
    lq_norm = -0.5 * np.log(2 * np.pi * var) - (target - c) ** 2 / (2 * var)
    t = np.maximum(target, 1e-300)
    lq_prior = shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(t) - rate * t
    return np.where(newton, lq_norm, lq_prior)


def log_accept_ratio(r, prop, target, mu, center=None):
    """log of pi(r') q(r | r') / (pi(r) q(r' | r)) for the Newton-guided proposal."""
    m = target.newton_center(r) if center is None else center
    m_back = target.newton_center(prop)
    return (
        target.logp(prop) - target.logp(r)
        + _log_q(r, m_back, mu, target.shape, target.rate)
        - _log_q(prop, m, mu, target.shape, target.rate)
    )


def mh_r_batch(r, target, mu, rng):
    """One Newton-guided MH step for several independent r_k at once.

    Returns (new r, accepted mask, number of prior-proposal fallbacks).
    Proposals r' <= 0 are rejected outright.
    """
    gen = _gen(rng)
    r = np.asarray(r, dtype=float)
    k = r.size
    shape, rate = target.shape, target.rate
    m = target.newton_center(r)
    noise = gen.standard_normal(k)
    prior_draw = gen.gamma(shape, 1.0 / rate, size=k)
    u = gen.random(k)
    newton = np.isfinite(m)
    mc = np.where(newton, m, 1.0)
    prop = np.where(newton, mc + np.sqrt(mu * np.sqrt(mc)) * noise, prior_draw)
    valid = prop > 0
    prop_safe = np.where(valid, prop, 1.0)
    log_ratio = log_accept_ratio(r, prop_safe, target, mu, center=m)
    accept = valid & np.isfinite(log_ratio) & (np.log(u) < log_ratio)
    fallbacks = int((~newton).sum())
    if fallbacks:
        log.debug("r_k MH: %d Newton steps unusable, used prior proposal", fallbacks)
    return np.where(accept, prop_safe, r), accept, fallbacks


def sample_r_mh(r_k, x_counts, p_k, h, diag, rng, k=0):
    """MH update of one r_k given its per-document latent counts.

    ``h`` supplies the Gamma(c0 r0, 1/c0) prior; ``diag`` is updated at
    factor index ``k``.
    """
    x = np.asarray(x_counts, dtype=float).reshape(-1, 1)
    if x.sum() <= 0:
        raise DomainError("the MH path needs at least one positive count")
    target = RTarget(x, [x.shape[0]], [math.log1p(-p_k)], h.c0 * h.r0, h.c0)
    new, acc, fb = mh_r_batch(np.array([r_k], dtype=float), target, diag.mu[k:k + 1], rng)
    diag.record(np.array([k]), acc)
    diag.fallbacks += fb
    return float(new[0])


def r_conditional_gamma(shape, rate, n_obs, p):
    """(shape, scale) of r_k's exact conditional when its factor has no counts.

    The NB zero probabilities contribute (1-p)^(n r), so the Gamma(shape,
    1/rate) prior becomes Gamma(shape, 1/(rate - n log(1-p))).
    """
    return shape, 1.0 / (rate - np.asarray(n_obs, dtype=float) * np.log1p(-np.asarray(p, dtype=float)))


def update_r(r, x_ik, n_obs, p, shape, rate, diag, rng):
    """Refresh every r_k: exact gamma draw for factors without counts, MH otherwise.

    ``x_ik`` is N x K; ``n_obs`` is the per-factor number of NB observations.
    """
    gen = _gen(rng)
    r = np.array(r, dtype=float)
    log1mp = np.log1p(-p)
    x_k = x_ik.sum(axis=0)
    empty = x_k == 0
    if np.any(empty):
        _, scale = r_conditional_gamma(shape, rate, n_obs[empty], p[empty])
        r[empty] = np.maximum(gen.gamma(shape, scale), 1e-300)
    busy = np.flatnonzero(~empty)
    if busy.size:
        target = RTarget(x_ik[:, busy], n_obs[busy], log1mp[busy], shape, rate)
        new, acc, fb = mh_r_batch(r[busy], target, diag.mu[busy], gen)
        r[busy] = new
        diag.record(busy, acc)
        diag.fallbacks += fb
    return r


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepInfo:
    """Conditional parameters used in one sweep (for audit mode)."""

    params: dict = field(default_factory=dict)


def _sample_phi_dirichlet(A, a_phi, rng):
    return sample_dirichlet(a_phi + A.x_pk.T, rng).T


def step_bgg(X, S, A, h, cfg, rng, diag):
    """Sweep: allocation, Phi, p, r, Theta."""
    A = allocate_counts(X, S, rng.substream("alloc"))
    Phi = _sample_phi_dirichlet(A, h.a_phi, rng.substream("phi"))
    a, b = h.weight_params
    p_a, p_b = a + A.x_k, b + X.N * S.r
    p = sample_beta(p_a, p_b, rng.substream("p"))
    r = update_r(S.r, A.x_ik, np.full(S.K, float(X.N)), p, h.c0 * h.r0, h.c0, diag, rng.substream("r"))
    shape = r[:, None] + A.x_ik.T
    Theta = sample_gamma(shape, np.broadcast_to(p[:, None], shape.shape), rng.substream("theta"))
    info = SweepInfo({"phi_conc": h.a_phi + A.x_pk.T, "p_a": p_a, "p_b": p_b, "r_in": S.r.copy(),
                      "theta_shape": shape, "r_out": r, "p_out": p})
    return FactorState(Phi=Phi, Theta=Theta, p=p, r=r), A, info


def step_bg(X, S, A, h, cfg, rng, diag=None):
    """Sweep with r_k frozen: allocation, Phi, p, Theta."""
    A = allocate_counts(X, S, rng.substream("alloc"))
    Phi = _sample_phi_dirichlet(A, h.a_phi, rng.substream("phi"))
    a, b = h.weight_params
    p_a, p_b = a + A.x_k, b + X.N * S.r
    p = sample_beta(p_a, p_b, rng.substream("p"))
    shape = S.r[:, None] + A.x_ik.T
    Theta = sample_gamma(shape, np.broadcast_to(p[:, None], shape.shape), rng.substream("theta"))
    info = SweepInfo({"phi_conc": h.a_phi + A.x_pk.T, "p_a": p_a, "p_b": p_b, "r_in": S.r.copy(),
                      "theta_shape": shape, "r_out": S.r, "p_out": p})
    return FactorState(Phi=Phi, Theta=Theta, p=p, r=S.r.copy()), A, info


def z_on_probability(pi, r, p):
    """P(z_ki = 1 | x_.ik = 0) with s_ki integrated out.

    Given z = 1 the factor count is NB(r, p), which is zero with
    probability (1-p)^r; given z = 0 it is zero surely. Bayes' rule gives
    pi (1-p)^r / (pi (1-p)^r + 1 - pi).
    """
    on = pi * np.exp(r * np.log1p(-p))
    return on / (on + (1.0 - pi))


def step_sgg(X, S, A, h, cfg, rng, diag):
    """Sweep: allocation, Phi, z, pi, r, s.

    z and r are drawn with s integrated out, so s must come last.
    """
    A = allocate_counts(X, S, rng.substream("alloc"))
    Phi = _sample_phi_dirichlet(A, h.a_phi, rng.substream("phi"))
    x_ki = A.x_ik.T
    p = S.p
    prob_on = z_on_probability(S.pi, S.r, p)
    u = _gen(rng.substream("z")).random(x_ki.shape)
    z = np.where(x_ki > 0, 1, (u < prob_on[:, None]).astype(np.int64))
    a, b = h.weight_params
    nz = z.sum(axis=1)
    pi = sample_beta(a + nz, b + X.N - nz, rng.substream("pi"))
    r = update_r(S.r, A.x_ik, nz.astype(float), p, h.r0, 1.0, diag, rng.substream("r"))
    shape = r[:, None] + x_ki
    scale = np.where(z == 1, p[:, None], np.minimum(p / (1.0 - p), ODDS_MAX)[:, None])
    s = sample_gamma(shape, scale, rng.substream("s"))
    info = SweepInfo({"phi_conc": h.a_phi + A.x_pk.T, "z": z, "pi_a": a + nz, "pi_b": b + X.N - nz,
                      "theta_shape": shape})
    return FactorState(Phi=Phi, Theta=s, p=p.copy(), r=r, z=z, pi=pi), A, info


def step_dir(X, S, A, h, cfg, rng, diag=None):
    """Sweep: allocation, Phi, Dirichlet document scores."""
    A = allocate_counts(X, S, rng.substream("alloc"))
    Phi = _sample_phi_dirichlet(A, h.a_phi, rng.substream("phi"))
    conc = h.a_theta_for("DIR") + A.x_ik
    Theta = sample_dirichlet(conc, rng.substream("theta")).T
    info = SweepInfo({"phi_conc": h.a_phi + A.x_pk.T, "theta_conc": conc})
    return FactorState(Phi=Phi, Theta=Theta), A, info


def step_gamma_gibbs(X, S, A, h, cfg, rng, diag=None):
    """Sweep: allocation, gamma Phi, gamma Theta (and g_k if requested)."""
    A = allocate_counts(X, S, rng.substream("alloc"))
    a_theta = h.a_theta_for("GAMMA_GIBBS")
    theta_tot = S.Theta.sum(axis=1)
    phi_rate = h.b_phi + theta_tot
    if np.any(phi_rate <= 0):
        raise ModelDegeneracyError("b_phi + theta_k. is zero; Phi scale is degenerate")
    phi_shape = h.a_phi + A.x_pk
    Phi = sample_gamma(phi_shape, np.broadcast_to(1.0 / phi_rate, phi_shape.shape), rng.substream("phi"))
    g = S.g if S.g is not None else np.full(S.K, h.g)
    theta_rate = a_theta / g + Phi.sum(axis=0)
    theta_shape = a_theta + A.x_ik.T
    Theta = sample_gamma(theta_shape, np.broadcast_to((1.0 / theta_rate)[:, None], theta_shape.shape),
                         rng.substream("theta"))
    if h.update_g:
        g = np.maximum(Theta.mean(axis=1), 1e-300)
    info = SweepInfo({"phi_shape": phi_shape, "phi_rate": phi_rate, "theta_shape": theta_shape,
                      "theta_rate": theta_rate})
    return FactorState(Phi=Phi, Theta=Theta, g=np.array(g, dtype=float)), A, info


def _ratio_matrix(X, Phi, Theta):
    """Sparse P x N matrix with x_pi / (Phi Theta)_pi at observed cells."""
    lam = (Phi[X.rows] * Theta[:, X.cols].T).sum(axis=1)
    if np.any(lam <= 0):
        j = int(np.flatnonzero(lam <= 0)[0])
        cell = (int(X.rows[j]), int(X.cols[j]))
        raise ModelDegeneracyError(f"zero rate at observed cell (term={cell[0]}, doc={cell[1]})", cell)
    return sparse.csr_matrix((X.counts / lam, (X.rows, X.cols)), shape=X.shape)


def step_gamma_em(X, S, h):
    """One EM update of (Phi, Theta) under the gamma priors.

    phi_pk   <- [(a_phi - 1) + phi_pk sum_i x_pi theta_ki / lam_pi] / (b_phi + theta_k.)
    theta_ki <- [(a_theta - 1) + theta_ki sum_p x_pi phi_pk / lam_pi] / (a_theta / g_k + phi_.k)

    Theta's update uses the refreshed Phi. With b_phi = 0, a_phi = a_theta
    = 1 and g = inf these are the KL-NMF multiplicative updates.
    """
    a_theta = h.a_theta_for("GAMMA_EM")
    Phi, Theta = S.Phi, S.Theta
    g = S.g if S.g is not None else np.full(S.K, h.g)
    denom = h.b_phi + Theta.sum(axis=1)
    if np.any(denom <= 0):
        raise ModelDegeneracyError("b_phi + theta_k. is zero; Phi update is undefined")
    R = _ratio_matrix(X, Phi, Theta)
    Phi = ((h.a_phi - 1.0) + Phi * (R @ Theta.T)) / denom
    R = _ratio_matrix(X, Phi, Theta)
    denom = a_theta / g + Phi.sum(axis=0)
    Theta = ((a_theta - 1.0) + Theta * (R.T @ Phi).T) / denom[:, None]
    if h.update_g:
        g = np.maximum(Theta.mean(axis=1), 1e-300)
    return FactorState(Phi=Phi, Theta=Theta, g=np.array(g, dtype=float))


def expected_factor_counts(X, S):
    """E[x_..k] under the multinomial allocation given (Phi, Theta)."""
    rates = S.Phi[X.rows] * S.effective_theta()[:, X.cols].T
    tot = rates.sum(axis=1, keepdims=True)
    return (X.counts[:, None] * rates / np.where(tot > 0, tot, 1.0)).sum(axis=0)


def kl_divergence(X, S):
    """Generalised KL divergence D(X || Phi Theta) for count data."""
    theta = S.effective_theta()
    lam = (S.Phi[X.rows] * theta[:, X.cols].T).sum(axis=1)
    x = X.counts.astype(float)
    total_rate = float(S.Phi.sum(axis=0) @ theta.sum(axis=1))
    return float(np.sum(x * np.log(x / lam) - x)) + total_rate


STEPS = {
    "BGG": step_bgg,
    "BG": step_bg,
    "SGG": step_sgg,
    "DIR": step_dir,
    "GAMMA_GIBBS": step_gamma_gibbs,
}


# ---------------------------------------------------------------------------
# chains

def init_state(X, h, variant, rng):
    """Random starting state: Dir(1) loadings, Gamma(1, 1) scores, prior p_k."""
    K = int(h.K)
    Phi = sample_dirichlet(np.ones((K, X.P)), rng.substream("init-phi")).T
    Theta = sample_gamma(1.0, 1.0, rng.substream("init-theta"), size=(K, X.N))
    a, b = h.weight_params
    if variant == "BGG":
        p = sample_beta(a, b, rng.substream("init-p"), size=K)
        return FactorState(Phi=Phi, Theta=Theta, p=np.atleast_1d(p), r=np.ones(K))
    if variant == "BG":
        p = sample_beta(a, b, rng.substream("init-p"), size=K)
        return FactorState(Phi=Phi, Theta=Theta, p=np.atleast_1d(p), r=np.full(K, h.r_fixed))
    if variant == "SGG":
        pi = sample_beta(a, b, rng.substream("init-pi"), size=K)
        return FactorState(Phi=Phi, Theta=Theta, p=np.full(K, 0.5), r=np.ones(K),
                           z=np.ones((K, X.N), dtype=np.int64), pi=np.atleast_1d(pi))
    if variant == "DIR":
        Theta = sample_dirichlet(np.ones((X.N, K)), rng.substream("init-theta")).T
        return FactorState(Phi=Phi, Theta=Theta)
    return FactorState(Phi=Phi, Theta=Theta, g=np.full(K, float(h.g)))


@dataclass
class ChainResult:
    samples: list
    trace: dict
    diagnostics: MhDiagnostics
    state: FactorState
    allocation: LatentAllocation
    n_collected: int = 0


TRACE_COLUMNS = ("iteration", "loglik", "n_active_factors", "mh_accept_rate")


def audit_sweep(X, variant, A, info, h):
    """Recompute the sweep's conditional parameters from fresh marginals."""
    A.check(X)
    fresh = LatentAllocation.from_cells(X, A.cells)
    par = info.params
    expect = {}
    if "phi_conc" in par:
        expect["phi_conc"] = h.a_phi + fresh.x_pk.T
    if variant in ("BGG", "BG"):
        a, b = h.weight_params
        expect["p_a"] = a + fresh.x_k
        expect["p_b"] = b + X.N * par["r_in"]
        expect["theta_shape"] = par["r_out"][:, None] + fresh.x_ik.T
    elif variant == "SGG":
        a, b = h.weight_params
        nz = par["z"].sum(axis=1)
        expect["pi_a"] = a + nz
        expect["pi_b"] = b + X.N - nz
        if np.any((fresh.x_ik.T > 0) & (par["z"] == 0)):
            raise AssertionError("z_ki = 0 where the factor has counts")
    elif variant == "DIR":
        expect["theta_conc"] = h.a_theta_for("DIR") + fresh.x_ik
    elif variant == "GAMMA_GIBBS":
        expect["phi_shape"] = h.a_phi + fresh.x_pk
        expect["theta_shape"] = h.a_theta_for(variant) + fresh.x_ik.T
    for key, value in expect.items():
        if not np.allclose(par[key], value, rtol=0, atol=1e-9):
            raise AssertionError(f"audit: stale conditional parameter {key}")


def run_chain(X, h, cfg, rng, init=None, keep_samples=True, on_sample=None):
    """Run one chain and collect every ``thin``-th state after burn-in.

    ``on_sample(state)`` is called for each collected state; with
    ``keep_samples=False`` states are not retained in memory. The trace has
    one row per iteration.
    """
    variant = cfg.variant
    S = init if init is not None else init_state(X, h, variant, rng.substream("init"))
    A = None
    diag = MhDiagnostics.create(S.K, cfg.mh_stepsize)
    trace = {name: [] for name in TRACE_COLUMNS}
    samples = []
    collected = 0
    for it in range(1, cfg.n_iterations + 1):
        srng = rng.substream("sweep", it)
        diag.start_sweep()
        try:
            if variant == "GAMMA_EM":
                S = step_gamma_em(X, S, h)
            else:
                S, A, info = STEPS[variant](X, S, A, h, cfg, srng, diag)
                if cfg.audit:
                    audit_sweep(X, variant, A, info, h)
        except ModelDegeneracyError as exc:
            raise ModelDegeneracyError(f"iteration {it}: {exc}", exc.cell) from exc
        if variant in MH_VARIANTS and it <= cfg.burn_in and it % cfg.mh_adapt_window == 0:
            diag.adapt(cfg.target_accept)
        if it == cfg.burn_in:
            diag.reset_totals()
        if A is not None:
            n_active = int((A.x_k > 0).sum())
        else:
            n_active = int((expected_factor_counts(X, S) >= 0.5).sum())
        trace["iteration"].append(it)
        trace["loglik"].append(poisson_loglik(X, S))
        trace["n_active_factors"].append(n_active)
        trace["mh_accept_rate"].append(
            diag.sweep_accepted / diag.sweep_proposed if diag.sweep_proposed else float("nan")
        )
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            collected += 1
            if keep_samples:
                samples.append(S.copy())
            if on_sample is not None:
                on_sample(S)
    return ChainResult(samples=samples, trace=trace, diagnostics=diag, state=S, allocation=A,
                       n_collected=collected)


def with_variant(cfg, variant):
    return replace(cfg, variant=variant)
