"""Shapley values from contribution functions.

Coalitions are integer bitmasks over the *observed* features: bit ``j`` set
means feature ``j + 1`` is in the coalition. ``0`` is the empty coalition and
``2**M - 1`` the grand coalition.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod

EXACT_MAX_M = 20


class InputError(ValueError):
    """Incomplete or inconsistent value table."""


class EstimationError(ValueError):
    """Sampled coalitions do not identify every Shapley value."""


def shapley_weight(s, M):
    """``s! (M - s - 1)! / M!``, the weight of a coalition of size ``s``."""
    s, M = int(s), int(M)
    if not 0 <= s <= M - 1:
        raise ValueError(f"coalition size {s} outside 0..{M - 1}")
    return 1.0 / (M * math.comb(M - 1, s))


def kernel_weight(s, M):
    """Shapley-kernel weight of one coalition of size ``s`` (infinite at the ends)."""
    if s == 0 or s == M:
        return math.inf
    return (M - 1) / (math.comb(M, s) * s * (M - s))


def popcount(codes):
    codes = np.asarray(codes, dtype=np.int64)
    out = np.zeros(codes.shape, dtype=np.int64)
    c = codes.copy()
    while np.any(c):
        out += c & 1
        c >>= 1
    return out


def members(codes, M):
    """Boolean membership matrix ``(n, M)`` of observed features."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[..., None] >> np.arange(M)) & 1).astype(bool)


def code_of(features):
    """Bitmask for a collection of 1-based feature indices."""
    c = 0
    for j in features:
        c |= 1 << (int(j) - 1)
    return c


@dataclass
class CoalitionValueTable:
    """Contribution values of one instance, keyed by coalition bitmask."""

    M: int
    values: dict
    phi0: float
    fx: float

    def full_array(self):
        """Values for all ``2**M`` coalitions, with the fixed end points."""
        n = 1 << self.M
        out = np.empty(n)
        out[0], out[n - 1] = self.phi0, self.fx
        for c in range(1, n - 1):
            if c not in self.values:
                raise InputError(f"value table lacks coalition {members([c], self.M)[0].nonzero()[0] + 1}")
            out[c] = self.values[c]
        return out


@dataclass
class ShapleyExplanation:
    phi0: float
    phi: np.ndarray


def exact_shapley_array(v, M):
    """Exact Shapley values from a length-``2**M`` value array."""
    if M > EXACT_MAX_M:
        raise InputError(f"exact Shapley values are limited to M <= {EXACT_MAX_M}")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (1 << M,):
        raise InputError(f"need {1 << M} coalition values, got {v.shape}")
    codes = np.arange(1 << M, dtype=np.int64)
    sizes = popcount(codes)
    w = np.array([shapley_weight(s, M) for s in range(M)] + [0.0])[sizes]
    phi = np.empty(M)
    for j in range(M):
        bit = 1 << j
        without = codes[(codes & bit) == 0]
        phi[j] = np.sum(w[without] * (v[without | bit] - v[without]))
    return phi


def exact_shapley(table, M=None):
    M = table.M if M is None else M
    return ShapleyExplanation(float(table.phi0), exact_shapley_array(table.full_array(), M))


@dataclass
class CoalitionSample:
    """Distinct proper coalitions with their multiplicities (or weights).

    ``exact`` marks the full power set with Shapley-kernel weights, in which
    case the solvers use the exact formula.
    """

    M: int
    codes: np.ndarray
    counts: np.ndarray
    exact: bool = False

    @property
    def n_draws(self):
        return float(self.counts.sum())


def sample_coalitions(M, n_draws, rng):
    """Draw ``n_draws`` proper, nonempty coalitions with replacement.

    Sizes follow the Shapley kernel summed over each size,
    ``P(s) ∝ (M - 1) / (s (M - s))``; given the size, the members are a
    uniform subset.
    """
    if M < 2 or n_draws < 1:
        raise ValueError("need M >= 2 and at least one draw")
    s_vals = np.arange(1, M)
    p = (M - 1) / (s_vals * (M - s_vals))
    sizes = rng.choice(s_vals, size=n_draws, p=p / p.sum())
    ranks = np.argsort(np.argsort(rng.random((n_draws, M)), axis=1), axis=1)
    picked = ranks < sizes[:, None]
    codes = (picked.astype(np.int64) << np.arange(M)).sum(axis=1)
    uniq, counts = np.unique(codes, return_counts=True)
    return CoalitionSample(M, uniq, counts.astype(np.float64))


def full_coalition_plan(M):
    """All proper coalitions, weighted by the Shapley kernel."""
    if M > EXACT_MAX_M:
        raise InputError(f"exact plans are limited to M <= {EXACT_MAX_M}")
    codes = np.arange(1, (1 << M) - 1, dtype=np.int64)
    sizes = popcount(codes)
    w = np.array([kernel_weight(s, M) if 0 < s < M else 0.0 for s in range(M + 1)])
    return CoalitionSample(M, codes, w[sizes], exact=True)


def coalition_plan(M, n_draws, rng):
    """Sampled plan, or the exact plan once ``n_draws`` reaches ``2**M``."""
    if n_draws is None or n_draws >= (1 << M):
        return full_coalition_plan(M)
    return sample_coalitions(M, n_draws, rng)


def kernelshap_wls(sample, vhat, phi0, fx):
    """Constrained weighted least squares on sampled coalitions.

    Fits ``vhat(S) ≈ phi0 + sum_{j in S} phi_j`` with the sample counts as
    weights, subject to ``sum(phi) == fx - phi0``.
    """
    M = sample.M
    vhat = np.asarray(vhat, dtype=np.float64)
    if vhat.shape != sample.codes.shape:
        raise InputError("one estimate per sampled coalition is required")
    Z = members(sample.codes, M).astype(np.float64)
    w = np.asarray(sample.counts, dtype=np.float64)
    for j in range(M):
        col = Z[:, j]
        if np.all(col == 0) or np.all(col == 1):
            state = "never" if np.all(col == 0) else "always"
            raise EstimationError(f"feature {j + 1} is {state} in the sampled coalitions")
    ZW = Z.T * w
    A = np.zeros((M + 1, M + 1))
    A[:M, :M] = ZW @ Z
    A[:M, M] = A[M, :M] = 1.0
    rhs = np.concatenate([ZW @ (vhat - phi0), [fx - phi0]])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"sampled coalitions leave the Shapley values unidentified: {exc}")
    if np.linalg.cond(A) > 1e12:
        raise EstimationError("sampled coalitions leave the Shapley values unidentified")
    phi = sol[:M]
    # remove the rounding drift so efficiency holds to machine precision
    phi += ((fx - phi0) - phi.sum()) / M
    return ShapleyExplanation(float(phi0), phi)


def estimate_v(conditioner, predictor, x, S, K, rng, phi0=None):
    """Monte Carlo contribution of coalition ``S`` (bitmask) at instance ``x``."""
    x = np.asarray(x, dtype=np.float64)
    M = x.size
    if S == 0:
        if phi0 is None:
            raise InputError("v(empty) needs phi0")
        return float(phi0)
    if S == (1 << M) - 1:
        return float(predictor.predict(x[None, :])[0])
    comp = conditioner.complete(x, np.array([S]), K, rng)[0]
    return float(np.mean(predictor.predict(comp)))


@dataclass
class Explanations:
    """Explanations of a batch of instances plus their contribution tables."""

    phi0: np.ndarray
    phi: np.ndarray
    fx: np.ndarray
    plan: CoalitionSample
    vhat: np.ndarray

    def instance(self, i):
        return ShapleyExplanation(float(self.phi0[i]), self.phi[i].copy())

    def table(self, i):
        vals = dict(zip(self.plan.codes.tolist(), self.vhat[i].tolist()))
        return CoalitionValueTable(self.plan.M, vals, float(self.phi0[i]), float(self.fx[i]))

    def write_csv(self, path):
        M = self.phi.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance_id", "phi0"] + [f"phi_{j + 1}" for j in range(M)] + ["prediction"])
            for i in range(self.phi.shape[0]):
                w.writerow([i, f"{self.phi0[i]:.17g}"]
                           + [f"{p:.17g}" for p in self.phi[i]] + [f"{self.fx[i]:.17g}"])

    def write_coalitions_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance_id", "coalition", "count", "v_hat"])
            for i in range(self.vhat.shape[0]):
                for c, n, v in zip(self.plan.codes, self.plan.counts, self.vhat[i]):
                    w.writerow([i, int(c), f"{n:.17g}", f"{v:.17g}"])


def solve(plan, vhat, phi0, fx):
    if plan.exact:
        v = np.empty(1 << plan.M)
        v[0], v[-1] = phi0, fx
        v[plan.codes] = vhat
        return ShapleyExplanation(float(phi0), exact_shapley_array(v, plan.M))
    return kernelshap_wls(plan, vhat, phi0, fx)


def explain(predictor, conditioner, X, plan, K, phi0, seed):
    """Explain every row of ``X``.

    Instance ``i`` draws from its own stream ``(seed, i)``, so results do not
    depend on which other instances are explained or in what order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, M = X.shape
    if plan.M != M:
        raise InputError(f"plan covers {plan.M} features, data has {M}")
    fx = predictor.predict(X) if n else np.zeros(0)
    vhat = np.empty((n, plan.codes.size))
    phi = np.empty((n, M))
    for i in range(n):
        r = rngmod.stream(seed, i)
        comp = conditioner.complete(X[i], plan.codes, K, r)
        preds = predictor.predict(comp.reshape(-1, M)).reshape(plan.codes.size, K)
        vhat[i] = preds.mean(axis=1)
        phi[i] = solve(plan, vhat[i], phi0, fx[i]).phi
    return Explanations(np.full(n, float(phi0)), phi, np.asarray(fx, dtype=np.float64), plan, vhat)


def explain_values(value_fn, X, plan, phi0, fx):
    """Explanations from known contribution values ``value_fn(x, codes)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, M = X.shape
    fx = np.asarray(fx, dtype=np.float64)
    vhat = np.empty((n, plan.codes.size))
    phi = np.empty((n, M))
    for i in range(n):
        vhat[i] = value_fn(X[i], plan.codes)
        phi[i] = solve(plan, vhat[i], phi0, fx[i]).phi
    return Explanations(np.full(n, float(phi0)), phi, fx, plan, vhat)
