"""Conditional samplers ``p(x_unobserved | x_observed)`` behind one interface.

Coalitions are bitmasks of observed features (see :mod:`vaeacshap.shapley`).
Every sampler returns completions for the unobserved features only through
:meth:`Conditioner.draw`, and full rows through :meth:`Conditioner.complete`.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import serialize
from .vaeac import VaeacModel, coalition_masks

JITTER = 1e-8


class NumericalError(ArithmeticError):
    """Factorization or conditioning failed."""


def _unobserved(S, M):
    return coalition_masks(np.array([S]), M)[0]


class Conditioner:
    """Base class. Subclasses implement :meth:`draw`."""

    supports_continuous = True
    supports_categorical = False

    def draw(self, x, S, K, rng):
        """``(K, |unobserved|)`` draws given ``x`` on coalition ``S``."""
        raise NotImplementedError

    def complete(self, x, codes, K, rng):
        """Full rows ``(len(codes), K, M)`` with the observed part copied from ``x``."""
        x = np.asarray(x, dtype=np.float64)
        M = x.size
        out = np.repeat(np.repeat(x[None, None, :], len(codes), axis=0), K, axis=1)
        for c, S in enumerate(codes):
            miss = _unobserved(int(S), M)
            if miss.any():
                out[c][:, miss] = self.draw(x, int(S), K, rng)
        return out

    def save(self, path, phi0):
        raise NotImplementedError


class IndependenceConditioner(Conditioner):
    """Unobserved features copied from uniformly drawn training rows."""

    supports_categorical = True

    def __init__(self, train):
        self.train = np.atleast_2d(np.asarray(train, dtype=np.float64))
        if self.train.shape[0] == 0:
            raise ValueError("independence sampling needs at least one training row")

    def draw(self, x, S, K, rng):
        miss = _unobserved(S, self.train.shape[1])
        rows = rng.integers(0, self.train.shape[0], size=K)
        return self.train[rows][:, miss]

    def save(self, path, phi0):
        serialize.write_container(path, "independence", {"phi0": float(phi0)}, {"train": self.train})


@dataclass
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray


def gaussian_fit(train):
    """Sample mean and covariance (denominator ``N - 1``), jittered if singular."""
    X = np.atleast_2d(np.asarray(train, dtype=np.float64))
    N, M = X.shape
    if N < M + 1:
        raise ValueError(f"need at least {M + 1} rows to fit {M} features, got {N}")
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    if np.linalg.eigvalsh(cov)[0] <= JITTER * max(1.0, np.trace(cov) / M):
        warnings.warn("degenerate covariance; adding 1e-8 jitter to the diagonal", RuntimeWarning)
        cov = cov + JITTER * np.eye(M)
    return GaussianFit(X.mean(axis=0), cov)


def gaussian_conditional(fit, observed, x_obs):
    """Mean and covariance of the unobserved block given the observed values.

    ``observed`` is a boolean vector over features.
    """
    observed = np.asarray(observed, dtype=bool)
    o, u = observed, ~observed
    mu, C = fit.mean, fit.cov
    if not o.any():
        return mu[u].copy(), C[np.ix_(u, u)].copy()
    C_oo, C_uo = C[np.ix_(o, o)], C[np.ix_(u, o)]
    try:
        A = np.linalg.solve(C_oo, C_uo.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"observed covariance block on features {np.flatnonzero(o) + 1} is singular") from exc
    mu_c = mu[u] + A @ (np.asarray(x_obs, dtype=np.float64) - mu[o])
    cov_c = C[np.ix_(u, u)] - A @ C_uo.T
    return mu_c, 0.5 * (cov_c + cov_c.T)


def sym_sqrt(cov):
    """Square root ``R`` with ``R @ R.T == cov`` via the eigendecomposition.

    Tiny negative eigenvalues from rounding are clipped; the jitter escalates
    if the matrix is materially indefinite.
    """
    cov = np.atleast_2d(cov)
    jitter = 0.0
    for _ in range(8):
        vals, vecs = np.linalg.eigh(cov + jitter * np.eye(cov.shape[0]))
        if vals[0] >= -1e-10 * max(1.0, abs(vals[-1])):
            return vecs * np.sqrt(np.clip(vals, 0.0, None))
        jitter = JITTER if jitter == 0.0 else jitter * 10.0
    raise NumericalError("covariance is not positive semi-definite")


class GaussianConditioner(Conditioner):
    """Jointly Gaussian features, parameters estimated from training data."""

    def __init__(self, fit):
        self.fit = fit

    @classmethod
    def from_data(cls, train):
        return cls(gaussian_fit(train))

    def draw(self, x, S, K, rng):
        M = self.fit.mean.size
        miss = _unobserved(S, M)
        mu_c, cov_c = gaussian_conditional(self.fit, ~miss, np.asarray(x)[~miss])
        return mu_c + rng.standard_normal((K, mu_c.size)) @ sym_sqrt(cov_c).T

    def save(self, path, phi0):
        serialize.write_container(path, "gaussian", {"phi0": float(phi0)},
                                  {"mean": self.fit.mean, "cov": self.fit.cov})


@dataclass
class BurrParams:
    kappa: float
    b: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        self.r = np.atleast_1d(np.asarray(self.r, dtype=np.float64))
        if self.kappa <= 0 or np.any(self.b <= 0) or np.any(self.r <= 0):
            raise ValueError("Burr parameters must be positive")
        if self.b.shape != self.r.shape:
            raise ValueError("b and r must have the same length")

    @property
    def M(self):
        return self.b.size


def burr_conditional_params(p, observed, x_obs):
    """Burr parameters of the unobserved features given the observed ones."""
    observed = np.asarray(observed, dtype=bool)
    x_obs = np.asarray(x_obs, dtype=np.float64)
    if np.any(x_obs <= 0):
        raise ValueError("Burr conditioning values must be positive")
    denom = 1.0 + np.sum(p.r[observed] * x_obs ** p.b[observed])
    u = ~observed
    return BurrParams(p.kappa + int(observed.sum()), p.b[u].copy(), p.r[u] / denom)


def burr_draw(p, K, rng):
    """Gamma-compounded Weibull draws, shape ``(K, M)``."""
    g = rng.gamma(p.kappa, 1.0, size=(K, 1))
    e = rng.exponential(1.0, size=(K, p.M))
    return (e / (g * p.r)) ** (1.0 / p.b)


class BurrConditioner(Conditioner):
    """Exact conditionals of a known Burr distribution."""

    def __init__(self, params):
        self.params = params

    def draw(self, x, S, K, rng):
        miss = _unobserved(S, self.params.M)
        cond = burr_conditional_params(self.params, ~miss, np.asarray(x)[~miss])
        return burr_draw(cond, K, rng)

    def save(self, path, phi0):
        serialize.write_container(path, "burr", {"phi0": float(phi0), "kappa": self.params.kappa},
                                  {"b": self.params.b, "r": self.params.r})


class VaeacConditioner(Conditioner):
    """Samples from a trained VAEAC model."""

    supports_categorical = True

    def __init__(self, model):
        self.model = model

    def draw(self, x, S, K, rng):
        miss = _unobserved(S, self.model.schema.M)
        return self.model.sample_conditional(x, miss, K, rng)[:, miss]

    def complete(self, x, codes, K, rng):
        x = np.asarray(x, dtype=np.float64)
        codes = np.asarray(codes, dtype=np.int64)
        masks = coalition_masks(codes, x.size)
        return self.model.sample_conditional_batch(np.repeat(x[None, :], codes.size, axis=0), masks, K, rng)

    def save(self, path, phi0):
        self.model.save(path, extra={"phi0": float(phi0)})


def load_conditioner(path):
    """Return ``(conditioner, phi0)`` from any conditioner file."""
    kind = serialize.peek_kind(path)
    if kind == "vaeac":
        model, extra = VaeacModel.load(path)
        return VaeacConditioner(model), extra.get("phi0")
    _, header, arrays = serialize.read_container(path)
    phi0 = header.get("phi0")
    if kind == "independence":
        return IndependenceConditioner(arrays["train"]), phi0
    if kind == "gaussian":
        return GaussianConditioner(GaussianFit(arrays["mean"], arrays["cov"])), phi0
    if kind == "burr":
        return BurrConditioner(BurrParams(header["kappa"], arrays["b"], arrays["r"])), phi0
    raise serialize.FormatError(f"{path}: {kind!r} is not a conditioner")


__all__ = [
    "BurrConditioner", "BurrParams", "Conditioner", "GaussianConditioner",
    "GaussianFit", "IndependenceConditioner", "NumericalError", "VaeacConditioner",
    "burr_conditional_params", "burr_draw", "gaussian_conditional", "gaussian_fit",
    "load_conditioner", "sym_sqrt",
]
