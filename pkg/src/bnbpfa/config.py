"""Experiment configuration: flat ``key = value`` text with typed validation.

Lines starting with ``#`` are comments. Lists are comma separated. Every
key has a default, so a minimal config names only the corpus files (or
sets ``synthetic = true``).
"""

import dataclasses
import os
import typing
from dataclasses import dataclass, fields

from .errors import ConfigError
from .samplers import VARIANTS, ChainConfig, HyperParams

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class ExperimentConfig:
    variant: str = "BGG"
    # model
    K: int = 400
    c: float = 1.0
    c0: float = 1.0
    r0: float = 1.0
    gamma_mass: float = 1.0
    alpha: float = 1.0
    eps: typing.Optional[float] = None
    a_phi: typing.Optional[float] = None
    a_theta: typing.Optional[float] = None
    b_phi: float = 1e-6
    g: float = 1e6
    r_fixed: float = 1.1
    update_g: bool = False
    # chain
    n_iterations: int = 2500
    burn_in: int = 1000
    thin: int = 5
    mh_stepsize: float = 0.01
    mh_adapt_window: int = 100
    audit: bool = False
    snapshot_every: int = 50
    # corpus
    docword: typing.Optional[str] = None
    vocab: typing.Optional[str] = None
    header: bool = True
    min_doc_freq: int = 5
    synthetic: bool = False
    synthetic_P: int = 100
    synthetic_N: int = 200
    synthetic_K: int = 5
    synthetic_tokens: float = 50.0
    synthetic_a_phi: float = 0.05
    # evaluation
    ratio: float = 0.8
    replicates: int = 5
    variants: typing.Optional[list] = None
    k_grid: typing.Optional[list] = None
    a_phi_grid: typing.Optional[list] = None
    baseline: bool = False
    top_terms: int = 10
    # simulation
    n_customers: int = 10
    sim_replicates: int = 1000
    mark: str = "gamma"
    sim_eps: float = 1e-4
    fixed_k: bool = False
    write_counts: bool = False
    # run
    seed: int = 0
    output_dir: str = "out"
    threads: int = 1

    def hyper(self, variant=None, K=None, a_phi=None):
        """HyperParams for one fit, applying the variant's published defaults."""
        variant = variant or self.variant
        gamma = variant in ("GAMMA_GIBBS", "GAMMA_EM")
        a_phi = a_phi if a_phi is not None else self.a_phi
        if a_phi is None:
            a_phi = 1.01 if gamma else 0.05
        a_theta = self.a_theta if self.a_theta is not None else (1.01 if gamma else None)
        try:
            return HyperParams(
                K=int(K if K is not None else self.K), c=self.c, c0=self.c0, r0=self.r0,
                gamma_mass=self.gamma_mass, alpha=self.alpha, eps=self.eps, a_phi=a_phi,
                a_theta=a_theta, b_phi=self.b_phi, g=self.g, r_fixed=self.r_fixed, update_g=self.update_g,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def chain(self, variant=None):
        return ChainConfig(
            variant=variant or self.variant, n_iterations=self.n_iterations, burn_in=self.burn_in,
            thin=self.thin, mh_stepsize=self.mh_stepsize, mh_adapt_window=self.mh_adapt_window,
            audit=self.audit,
        )

    def validate(self, need_corpus=True):
        for v in [self.variant] + list(self.variants or []):
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError("ratio must lie in (0, 1)")
        for name in ("replicates", "threads", "snapshot_every", "top_terms", "sim_replicates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_customers < 0:
            raise ConfigError("n_customers must be nonnegative")
        if self.mark not in ("gamma", "delta1"):
            raise ConfigError("mark must be 'gamma' or 'delta1'")
        if need_corpus and not self.synthetic:
            if self.docword is None:
                raise ConfigError("set 'docword' to a corpus file or 'synthetic = true'")
            for path in (self.docword, self.vocab):
                if path is not None and not os.path.exists(path):
                    raise ConfigError(f"file not found: {path}")
        self.chain()
        self.hyper()
        return self

    def to_text(self):
        """Serialise every key, so the file alone reproduces the run."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, list):
                value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_LIST_TYPES = {"variants": str, "k_grid": int, "a_phi_grid": float}


def _base_type(f):
    tp = f.type
    if typing.get_origin(tp) is typing.Union:
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    return tp


def _convert(name, raw, tp):
    raw = raw.strip()
    try:
        if name in _LIST_TYPES:
            item = _LIST_TYPES[name]
            return [item(x.strip()) for x in raw.split(",") if x.strip()]
        if tp is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def parse_config(text):
    """Parse config text into a dict of typed values."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, raw, _base_type(_FIELDS[key]))
    return out


def load_config(path=None, **overrides):
    """Read a config file (optional) and apply keyword overrides."""
    values = {}
    base = None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_config(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        base = os.path.dirname(os.path.abspath(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**values)
    if base is not None:
        for key in ("docword", "vocab"):
            p = getattr(cfg, key)
            if p is not None and not os.path.isabs(p) and key not in overrides:
                setattr(cfg, key, os.path.join(base, p))
    return cfg


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)
