"""Multivariate Burr features with a non-linear, heteroscedastic response."""

from dataclasses import dataclass, field

import numpy as np

from ..conditioners import BurrConditioner, BurrParams, burr_draw

R_GRID = np.round(np.arange(1.0, 5.0 + 1e-9, 0.25), 2)
B_GRID = np.round(np.arange(2.0, 6.0 + 1e-9, 0.25), 2)
C_GRID = np.round(np.arange(0.1, 2.0 + 1e-9, 0.1), 1)


def burr_marginal_cdf(x, kappa, b, r):
    """``1 - (1 + r x^b)^(-kappa)`` for ``x >= 0``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("Burr marginals live on x >= 0")
    # -expm1(-kappa * log1p(.)) keeps precision in both tails
    return -np.expm1(-kappa * np.log1p(r * x**b))


@dataclass
class BurrSpec:
    """Burr features plus the response coefficients.

    ``noise_features`` are the 0-based indices whose ``u`` values scale the
    noise; they are drawn once with the other generator parameters.
    """

    params: BurrParams
    c: np.ndarray
    noise_features: np.ndarray
    noise: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.params.M

    @property
    def n_blocks(self):
        return self.M // 5

    def to_dict(self):
        return {
            "type": "burr",
            "kappa": float(self.params.kappa),
            "b": self.params.b.tolist(),
            "r": self.params.r.tolist(),
            "c": self.c.tolist(),
            "noise_features": self.noise_features.tolist(),
            "noise": bool(self.noise),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(BurrParams(d["kappa"], d["b"], d["r"]), np.asarray(d["c"], dtype=np.float64),
                   np.asarray(d["noise_features"], dtype=np.int64), bool(d["noise"]))


def burr_spec_from_grid(M, rng, kappa=2.0, noise=True):
    """Draw ``r``, ``b`` and ``c`` from the standard grids.

    ``M`` need not be a multiple of five: ``M // 5`` response blocks are used
    and any trailing features carry no signal.
    """
    if M < 5:
        raise ValueError("the Burr response needs at least five features")
    blocks = M // 5
    r = rng.choice(R_GRID, size=M)
    b = rng.choice(B_GRID, size=M)
    c = rng.choice(C_GRID, size=3 * blocks)
    noise_features = rng.integers(0, M, size=blocks)
    return BurrSpec(BurrParams(kappa, b, r), c, noise_features, noise)


def burr_uniforms(spec, X):
    return burr_marginal_cdf(X, spec.params.kappa, spec.params.b, spec.params.r)


def burr_signal(spec, U):
    """Noise-free response from the marginal uniforms ``U``."""
    U = np.atleast_2d(U)
    y = np.zeros(U.shape[0])
    c = spec.c
    for k in range(spec.n_blocks):
        u = U[:, 5 * k:5 * k + 5]
        c1, c2, c3 = c[3 * k:3 * k + 3]
        y += np.sin(np.pi * c1 * u[:, 0] * u[:, 1]) + c2 * u[:, 2] * np.exp(c3 * u[:, 3] * u[:, 4])
    return y


def gen_burr_dataset(spec, N, rng):
    """Features ``(N, M)`` and responses ``(N,)``."""
    X = burr_draw(spec.params, N, rng)
    U = burr_uniforms(spec, X)
    y = burr_signal(spec, U)
    if spec.noise and spec.n_blocks:
        eps = rng.standard_normal(N)
        y = y + eps / spec.n_blocks * U[:, spec.noise_features].sum(axis=1)
    return X, y


def burr_truth_conditioner(spec):
    return BurrConditioner(spec.params)
