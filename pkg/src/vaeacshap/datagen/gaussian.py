"""Equicorrelated Gaussian features, some discretized into categories.

A latent ``x̃ ~ N(mu, Sigma_rho)`` is drawn; feature ``j`` with cut-offs
``v_1 = -inf < ... < v_{L+1} = inf`` reports the label ``l`` for which
``v_l < x̃_j <= v_{l+1}``. Features without cut-offs stay continuous.
Because the latent law is known, conditional expectations of a linear model
can be computed exactly up to quadrature and rectangle-probability error.
"""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from ..conditioners import NumericalError
from ..predictors import LinearModel
from ..shapley import members
from ..vaeac import FeatureSchema

MAX_ENUMERATION = 1_000_000
MAX_MIXED_M = 6
_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
                    73, 79, 83, 89, 97, 101, 103, 107, 109, 113])


def equicorrelation(M, rho):
    if M > 1 and not -1.0 / (M - 1) < rho < 1.0:
        raise ValueError(f"rho={rho} does not give a positive definite {M}x{M} equicorrelation")
    C = np.full((M, M), float(rho))
    np.fill_diagonal(C, 1.0)
    return C


@dataclass
class DiscretizedGaussianSpec:
    """``cutoffs[j]`` is ``None`` for a continuous feature, else the interior
    cut-offs (the infinite end points are implied)."""

    M: int
    rho: float
    cutoffs: list
    mu: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu = np.zeros(self.M) if self.mu is None else np.asarray(self.mu, dtype=np.float64)
        if len(self.cutoffs) != self.M:
            raise ValueError("one cut-off entry per feature is required")
        cleaned = []
        for j, c in enumerate(self.cutoffs):
            if c is None:
                cleaned.append(None)
                continue
            c = np.asarray(c, dtype=np.float64)
            if c.size < 1 or np.any(np.diff(c) <= 0) or not np.all(np.isfinite(c)):
                raise ValueError(f"feature {j + 1}: interior cut-offs must be finite and strictly increasing")
            cleaned.append(c)
        self.cutoffs = cleaned
        self.cov = equicorrelation(self.M, self.rho)

    @property
    def schema(self):
        return FeatureSchema(tuple(0 if c is None else c.size + 1 for c in self.cutoffs))

    def edges(self, j):
        return np.concatenate([[-np.inf], self.cutoffs[j], [np.inf]])

    def interval(self, j, label):
        e = self.edges(j)
        return e[int(label) - 1], e[int(label)]

    def to_dict(self):
        return {
            "type": "discretized_gaussian",
            "M": self.M,
            "rho": float(self.rho),
            "mu": self.mu.tolist(),
            "cutoffs": [None if c is None else c.tolist() for c in self.cutoffs],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["M"], d["rho"], d["cutoffs"], np.asarray(d["mu"], dtype=np.float64))


def mixed_spec(M, rho):
    """Mixed-data setups: categorical features first, then continuous ones."""
    if M == 4:
        cut = [-0.5, 0.0, 1.0]
        return DiscretizedGaussianSpec(4, rho, [cut, cut, None, None])
    if M == 6:
        cut = [0.0, 1.0]
        return DiscretizedGaussianSpec(6, rho, [cut, cut, None, None, None, None])
    raise ValueError("preset mixed setups exist for M = 4 and M = 6")


def mixed_linear_model(M):
    """Coefficients paired with :func:`mixed_spec`."""
    spec = mixed_spec(M, 0.0)
    if M == 4:
        beta = [np.array([1.0, 0.0, -1.0, 0.5]), np.array([2.0, 3.0, -1.0, -0.5]), np.zeros(0), np.zeros(0)]
        gamma = np.array([0.0, 0.0, 1.0, -1.0])
    else:
        beta = [np.array([1.0, 0.0, -1.0]), np.array([2.0, 3.0, -0.5])] + [np.zeros(0)] * 4
        gamma = np.array([0.0, 0.0, 1.0, -1.0, 2.0, -0.25])
    return LinearModel(spec.schema, 1.0, beta, gamma)


def grid_linear_model(schema, rng, alpha=1.0):
    """Coefficients drawn from the high-dimensional grids."""
    beta_grid = np.round(np.arange(-1.0, 3.0 + 1e-9, 0.1), 1)
    gamma_grid = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.1), 1)
    beta, gamma = [], np.zeros(schema.M)
    for j, L in enumerate(schema.levels):
        if L:
            beta.append(rng.choice(beta_grid, size=L))
        else:
            beta.append(np.zeros(0))
            gamma[j] = rng.choice(gamma_grid)
    return LinearModel(schema, alpha, beta, gamma)


def normal_linear_model(schema, rng):
    """Intercept and level effects drawn from N(0, 1)."""
    beta, gamma = [], np.zeros(schema.M)
    alpha = float(rng.standard_normal())
    for j, L in enumerate(schema.levels):
        if L:
            beta.append(rng.standard_normal(L))
        else:
            beta.append(np.zeros(0))
            gamma[j] = rng.standard_normal()
    return LinearModel(schema, alpha, beta, gamma)


def linear_model_to_dict(model):
    return {"alpha": float(model.alpha), "beta": [np.asarray(b).tolist() for b in model.beta],
            "gamma": np.asarray(model.gamma).tolist(), "levels": list(model.schema.levels)}


def linear_model_from_dict(d):
    return LinearModel(FeatureSchema(tuple(d["levels"])), d["alpha"],
                       [np.asarray(b, dtype=np.float64) for b in d["beta"]],
                       np.asarray(d["gamma"], dtype=np.float64))


def discretize(spec, latent):
    X = np.array(latent, dtype=np.float64, copy=True)
    for j, c in enumerate(spec.cutoffs):
        if c is not None:
            # label l when v_l < x <= v_{l+1}
            X[:, j] = np.searchsorted(c, latent[:, j], side="left") + 1
    return X


def gen_discretized_dataset(spec, N, rng, return_latent=False):
    """Features ``(N, M)``; categorical columns hold labels ``1..L``."""
    R = np.linalg.cholesky(spec.cov)
    latent = spec.mu + rng.standard_normal((N, spec.M)) @ R.T
    X = discretize(spec, latent)
    return (X, latent) if return_latent else X


def gen_response_mixed(X, model, rng, noise_sd=1.0):
    y = model.predict(X)
    if noise_sd:
        y = y + noise_sd * rng.standard_normal(y.shape[0])
    return y


# ---- rectangle probabilities --------------------------------------------

class _Lattice:
    """Randomly shifted rank-1 lattice points with a tent transform."""

    def __init__(self, dim, n_points, n_shifts, seed):
        self.dim = dim
        if dim == 0:
            self.points = np.zeros((n_shifts, 1, 0))
            return
        z = np.sqrt(_PRIMES[:dim].astype(np.float64))
        k = np.arange(1, n_points + 1)[:, None]
        shifts = np.random.default_rng(seed).random((n_shifts, 1, dim))
        frac = np.mod(k * z + shifts, 1.0)
        self.points = np.abs(2.0 * frac - 1.0)


_LATTICES = {}


def _lattice(dim, n_points, n_shifts, seed):
    key = (dim, n_points, n_shifts, seed)
    if key not in _LATTICES:
        _LATTICES[key] = _Lattice(dim, n_points, n_shifts, seed)
    return _LATTICES[key]


def _rect_sov(chol, lower, upper, lattice):
    """Separation-of-variables estimate on fixed lattice points.

    ``lower``/``upper`` are already centred. Returns ``(estimate, se)``.
    """
    d = chol.shape[0]
    w = lattice.points  # (shifts, n, d-1)
    shape = w.shape[:2]
    f = np.ones(shape)
    y = np.zeros(shape + (d,))
    lo = ndtr(lower[0] / chol[0, 0])
    hi = ndtr(upper[0] / chol[0, 0])
    f *= hi - lo
    dlo, dhi = np.full(shape, lo), np.full(shape, hi)
    for i in range(1, d):
        u = dlo + w[..., i - 1] * (dhi - dlo)
        y[..., i - 1] = ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))
        s = y[..., :i] @ chol[i, :i]
        dlo = ndtr((lower[i] - s) / chol[i, i])
        dhi = ndtr((upper[i] - s) / chol[i, i])
        f *= dhi - dlo
    per_shift = f.mean(axis=1)
    n_s = per_shift.size
    se = per_shift.std(ddof=1) / np.sqrt(n_s) if n_s > 1 else 0.0
    return float(per_shift.mean()), float(se)


def mvn_rect_prob(mu, cov, lower, upper, n_points=2048, n_shifts=10, seed=0):
    """``P(lower < X <= upper)`` for ``X ~ N(mu, cov)``; returns ``(p, se)``.

    Infinite bounds are allowed. One dimension is computed exactly. The
    estimate is a deterministic function of its arguments.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64)) - mu
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64)) - mu
    if np.any(lower >= upper):
        raise ValueError("rectangle needs lower < upper in every coordinate")
    # coordinates with infinite range on both sides integrate out exactly
    keep = ~(np.isneginf(lower) & np.isposinf(upper))
    if not keep.any():
        return 1.0, 0.0
    cov, lower, upper = cov[np.ix_(keep, keep)], lower[keep], upper[keep]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("rectangle probability needs a positive definite covariance") from exc
    if chol.shape[0] == 1:
        s = chol[0, 0]
        return float(ndtr(upper[0] / s) - ndtr(lower[0] / s)), 0.0
    lat = _lattice(chol.shape[0] - 1, n_points, n_shifts, seed)
    p, se = _rect_sov(chol, lower, upper, lat)
    return min(max(p, 0.0), 1.0), se


# ---- truth oracles -------------------------------------------------------

def _condition(mu, cov, idx_obs, x_obs):
    """Gaussian law of the remaining coordinates given exact values."""
    rest = np.setdiff1d(np.arange(mu.size), idx_obs)
    if idx_obs.size == 0:
        return rest, mu.copy(), cov.copy()
    A = np.linalg.solve(cov[np.ix_(idx_obs, idx_obs)], cov[np.ix_(idx_obs, rest)]).T
    m = mu[rest] + A @ (x_obs - mu[idx_obs])
    C = cov[np.ix_(rest, rest)] - A @ cov[np.ix_(idx_obs, rest)]
    return rest, m, 0.5 * (C + C.T)


def true_v_categorical(spec, model, x, S, n_points=2048, n_shifts=10):
    """Exact ``E[f(x) | x_S]`` for all-categorical data by enumeration."""
    if any(c is None for c in spec.cutoffs):
        raise ValueError("true_v_categorical needs every feature categorical")
    v, _ = _categorical_conditional(spec, model, np.asarray(x, dtype=np.float64), S, n_points, n_shifts)
    return v


def categorical_conditional_probs(spec, x, S, n_points=2048, n_shifts=10):
    """Enumerated unobserved combinations and their conditional probabilities."""
    x = np.asarray(x, dtype=np.float64)
    M = spec.M
    obs = members([S], M)[0]
    miss = np.flatnonzero(~obs)
    levels = [range(1, spec.cutoffs[j].size + 2) for j in miss]
    n_comb = int(np.prod([len(lv) for lv in levels])) if miss.size else 1
    if n_comb > MAX_ENUMERATION:
        raise ValueError(f"{n_comb} level combinations exceed the enumeration guard")
    combos = np.array(list(itertools.product(*levels)), dtype=np.float64).reshape(n_comb, miss.size)
    probs = np.empty(n_comb)
    lo, hi = np.empty(M), np.empty(M)
    for j in np.flatnonzero(obs):
        lo[j], hi[j] = spec.interval(j, x[j])
    for k, comb in enumerate(combos):
        for j, lab in zip(miss, comb):
            lo[j], hi[j] = spec.interval(j, lab)
        probs[k] = mvn_rect_prob(spec.mu, spec.cov, lo, hi, n_points, n_shifts)[0]
    total = probs.sum()
    if not total > 0:
        raise NumericalError(f"observed categories have zero probability at coalition {S}")
    return miss, combos, probs / total


def _categorical_conditional(spec, model, x, S, n_points, n_shifts):
    miss, combos, probs = categorical_conditional_probs(spec, x, S, n_points, n_shifts)
    rows = np.repeat(x[None, :], combos.shape[0], axis=0)
    rows[:, miss] = combos
    return float(probs @ model.predict(rows)), probs


def _quad(fun, a, b, what):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(fun, a, b, epsabs=1e-11, epsrel=1e-10, limit=200)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature for {what} did not converge: {exc}") from exc
    return val


def true_v_mixed(spec, model, x, S, n_points=2048, n_shifts=10):
    """Exact ``E[f(x) | x_S]`` for a linear model on mixed data.

    Observed continuous features condition the latent Gaussian exactly.
    Observed categories constrain latent coordinates to intervals ``R``.
    Unobserved continuous means come from 1-D quadrature of
    ``x p(x) P(R | x)`` over ``±8`` standard deviations, and unobserved
    category masses from rectangle-probability ratios.
    """
    if spec.M > MAX_MIXED_M:
        raise ValueError(f"the mixed-data oracle is limited to M <= {MAX_MIXED_M}")
    x = np.asarray(x, dtype=np.float64)
    M = spec.M
    obs = members([S], M)[0]
    cat = np.array([c is not None for c in spec.cutoffs])
    v = float(model.alpha)
    for j in np.flatnonzero(obs):
        v += model.beta[j][int(x[j]) - 1] if cat[j] else model.gamma[j] * x[j]
    if obs.all():
        return v

    oc = np.flatnonzero(obs & ~cat)
    rest, m, C = _condition(spec.mu, spec.cov, oc, x[oc])
    pos = {int(j): k for k, j in enumerate(rest)}
    od = [j for j in np.flatnonzero(obs & cat)]
    od_k = np.array([pos[j] for j in od], dtype=np.int64)
    r_lo = np.array([spec.interval(j, x[j])[0] for j in od])
    r_hi = np.array([spec.interval(j, x[j])[1] for j in od])

    def rect(idx, lo, hi):
        return mvn_rect_prob(m[idx], C[np.ix_(idx, idx)], lo, hi, n_points, n_shifts)[0]

    p_R = rect(od_k, r_lo, r_hi) if od else 1.0
    if od and not p_R > 0:
        raise NumericalError(f"observed categories have zero probability at coalition {S}")

    for j in np.flatnonzero(~obs):
        k = pos[int(j)]
        if cat[j]:
            edges = spec.edges(j)
            mass = np.empty(edges.size - 1)
            for l in range(mass.size):
                if od:
                    idx = np.concatenate([od_k, [k]])
                    mass[l] = rect(idx, np.append(r_lo, edges[l]), np.append(r_hi, edges[l + 1])) / p_R
                else:
                    s = np.sqrt(C[k, k])
                    mass[l] = ndtr((edges[l + 1] - m[k]) / s) - ndtr((edges[l] - m[k]) / s)
            v += float(np.asarray(model.beta[j]) @ mass)
        else:
            if not od:
                v += model.gamma[j] * m[k]
                continue
            v += model.gamma[j] * _conditional_mean_given_rect(m, C, k, od_k, r_lo, r_hi,
                                                               n_points, n_shifts, f"feature {j + 1}")
    return v


def _conditional_mean_given_rect(m, C, k, idx, lo, hi, n_points, n_shifts, what):
    """``E[z_k | z_idx in (lo, hi]]`` by quadrature over ``z_k``."""
    s = np.sqrt(C[k, k])
    b = C[idx, k] / C[k, k]
    Cc = C[np.ix_(idx, idx)] - np.outer(C[idx, k], C[idx, k]) / C[k, k]
    if idx.size == 1:
        sd = np.sqrt(Cc[0, 0])

        def p_rect(t):
            c = m[idx] + b * (t - m[k])
            return float(ndtr((hi[0] - c[0]) / sd) - ndtr((lo[0] - c[0]) / sd))
    else:
        chol = np.linalg.cholesky(Cc)
        lat = _lattice(idx.size - 1, n_points, n_shifts, 0)

        def p_rect(t):
            c = m[idx] + b * (t - m[k])
            return _rect_sov(chol, lo - c, hi - c, lat)[0]

    def weight(u):
        return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi) * p_rect(m[k] + s * u)

    # the normalizer uses the same quadrature so rule error cancels in the ratio
    den = _quad(weight, -8.0, 8.0, f"{what} normalizer")
    num = _quad(lambda u: (m[k] + s * u) * weight(u), -8.0, 8.0, what)
    return num / den
