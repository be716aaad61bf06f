"""Variational autoencoder with arbitrary conditioning.

Three networks share one flat parameter vector: a full encoder that sees every
feature, a masked encoder that only sees the observed ones, and a decoder that
reconstructs the unobserved features from a latent draw plus the observed
encoding. The masked encoder's hidden activations are fed mirror-wise into the
decoder's hidden layers.

Masks are boolean arrays with ``True`` marking an *unobserved* feature.
Categorical values are integer labels ``1..L`` stored as floats.
"""

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore, rng as rngmod, serialize
from .nncore import ConfigurationError, TrainingError

SIGMA_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


class SchemaError(ValueError):
    """Data does not conform to the feature schema."""


class UsageError(RuntimeError):
    """Operation called on a model in the wrong state."""


@dataclass(frozen=True)
class FeatureSchema:
    """Per-feature kinds: ``levels[j] == 0`` is continuous, otherwise categorical
    with that many levels."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 1:
            raise SchemaError("a schema needs at least one feature")
        for j, L in enumerate(levels):
            if L != 0 and L < 2:
                raise SchemaError(f"feature {j + 1}: categorical needs L >= 2, got {L}")

    @classmethod
    def continuous(cls, M):
        return cls((0,) * M)

    @property
    def M(self):
        return len(self.levels)

    def is_categorical(self, j):
        return self.levels[j] > 0

    @property
    def categorical(self):
        return [j for j, L in enumerate(self.levels) if L > 0]

    @property
    def continuous_features(self):
        return [j for j, L in enumerate(self.levels) if L == 0]

    @property
    def encoded_width(self):
        return sum(L if L else 1 for L in self.levels)

    @property
    def decoder_width(self):
        return sum(L if L else 2 for L in self.levels)

    def column_features(self):
        """Feature index of every encoded column."""
        return np.repeat(np.arange(self.M), [L if L else 1 for L in self.levels])

    def validate(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.M:
            raise SchemaError(f"expected {self.M} columns, got {X.shape[1]}")
        for j in self.categorical:
            col = X[:, j]
            bad = (col != np.round(col)) | (col < 1) | (col > self.levels[j])
            if np.any(bad):
                raise SchemaError(
                    f"feature {j + 1}: category {col[bad][0]!r} outside 1..{self.levels[j]}"
                )
        return X


@dataclass
class UniformMasking:
    """Every feature unobserved independently with probability one half."""


@dataclass
class FrequencyMasking:
    """Masks drawn as complements of coalitions in proportion to their counts.

    Coalitions are bitmasks of *observed* features, bit ``j`` for feature ``j+1``.
    """

    coalitions: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.coalitions = np.asarray(self.coalitions, dtype=np.int64).ravel()
        self.counts = np.asarray(self.counts, dtype=np.float64).ravel()
        if self.coalitions.size == 0:
            raise ConfigurationError("frequency masking needs at least one coalition")
        if self.coalitions.shape != self.counts.shape or np.any(self.counts <= 0):
            raise ConfigurationError("frequency masking needs one positive count per coalition")


def coalition_masks(codes, M):
    """Unobserved-feature masks for observed-set bitmasks ``codes``."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[..., None] >> np.arange(M)) & 1) == 0


def sample_masks(scheme, M, n, rng):
    """``n`` masks of shape ``(n, M)``."""
    if isinstance(scheme, UniformMasking):
        return rng.random((n, M)) < 0.5
    if isinstance(scheme, FrequencyMasking):
        if scheme.coalitions.max() >= (1 << M):
            raise ConfigurationError(f"coalition outside {M} features")
        idx = rng.choice(scheme.coalitions.size, size=n, p=scheme.counts / scheme.counts.sum())
        return coalition_masks(scheme.coalitions[idx], M)
    raise ConfigurationError(f"unknown masking scheme {scheme!r}")


def sample_mask(scheme, M, rng):
    return sample_masks(scheme, M, 1, rng)[0]


@dataclass
class VaeacHyper:
    depth: int = 3
    width: int = 32
    latent_dim: int = 8
    lr: float = 1e-3
    batch_size: int = 64
    # None picks 200 for up to 1000 rows, 100 beyond
    epochs: int = None
    sigma_mu: float = 1e4
    sigma_sigma: float = 1e4
    iwae_samples: int = 40
    val_frac: float = 0.25
    multistart: int = 15
    warmup_epochs: int = 5

    def __post_init__(self):
        for name in ("depth", "width", "latent_dim", "batch_size", "iwae_samples",
                     "multistart", "warmup_epochs"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.epochs is not None and int(self.epochs) < 1:
            raise ConfigurationError("epochs must be positive")
        if not 0.0 < self.val_frac < 1.0:
            raise ConfigurationError("val_frac must lie in (0, 1)")
        if self.lr <= 0 or self.sigma_mu <= 0 or self.sigma_sigma <= 0:
            raise ConfigurationError("lr and prior scales must be positive")

    def resolved_epochs(self, n_rows):
        if self.epochs is not None:
            return int(self.epochs)
        return 200 if n_rows <= 1000 else 100


@dataclass
class LatentGaussian:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class DecoderOutput:
    """Decoder parameters for every feature; consumers select the masked ones.

    ``mu`` and ``sigma`` have one column per continuous feature (in schema
    order); ``logits`` has one ``(n, L)`` array per categorical feature.
    """

    mu: np.ndarray
    sigma: np.ndarray
    logits: list
    pre_sigma: np.ndarray = None


def _bounded_sigma(pre):
    return np.maximum(nncore.softplus(pre), SIGMA_FLOOR)


def _sigma_grad(pre):
    # derivative of the floored softplus; zero where the floor is active
    return nncore.sigmoid(pre) * (nncore.softplus(pre) > SIGMA_FLOOR)


def _gauss_logpdf(x, mu, sigma):
    return -0.5 * _LOG_2PI - np.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2


def kl_diag_gauss(q, p):
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    return np.sum(
        np.log(p.sigma / q.sigma)
        + (q.sigma**2 + (q.mu - p.mu) ** 2) / (2.0 * p.sigma**2)
        - 0.5,
        axis=-1,
    )


def reparameterize(lg, eps):
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != lg.mu.shape[-1]:
        raise ConfigurationError("noise and latent dimensions differ")
    return lg.mu + eps * lg.sigma


@dataclass
class _Cache:
    """Intermediate values of one forward pass, kept for the reverse pass."""

    masks: np.ndarray
    x_norm: np.ndarray
    eps: np.ndarray
    full_pre: np.ndarray
    masked_pre: np.ndarray
    full: LatentGaussian
    masked: LatentGaussian
    dec_out: DecoderOutput
    full_cache: object
    masked_cache: object
    dec_cache: object


class VaeacModel:
    """Parameters of the three networks plus schema and normalization.

    All network weights are views into :attr:`theta`, so optimizer updates and
    snapshots act on one contiguous vector.
    """

    def __init__(self, schema, hyper, full_encoder, masked_encoder, decoder,
                 mean=None, sd=None, trained=False):
        self.schema = schema
        self.hyper = hyper
        self.full_encoder = full_encoder
        self.masked_encoder = masked_encoder
        self.decoder = decoder
        M = schema.M
        self.mean = np.zeros(M) if mean is None else np.asarray(mean, dtype=np.float64)
        self.sd = np.ones(M) if sd is None else np.asarray(sd, dtype=np.float64)
        self.trained = trained
        self._bind()
        self._index()

    @classmethod
    def init(cls, schema, hyper, rng):
        d, W, depth = hyper.latent_dim, hyper.width, hyper.depth
        enc_in = schema.encoded_width + schema.M
        hidden = [W] * depth
        full = nncore.Mlp.build([enc_in] + hidden + [2 * d], rng)
        masked = nncore.Mlp.build([enc_in] + hidden + [2 * d], rng)
        decoder = nncore.Mlp.build(
            [d + enc_in] + hidden + [schema.decoder_width], rng,
            skip_widths=[W] * depth + [0],
        )
        return cls(schema, hyper, full, masked, decoder)

    @property
    def nets(self):
        return (self.full_encoder, self.masked_encoder, self.decoder)

    def params(self):
        return [p for net in self.nets for p in net.params()]

    def _bind(self):
        self.theta = nncore.flatten(self.params())
        pos = 0
        for net in self.nets:
            for L in net.layers:
                n = L.weights.size
                L.weights = self.theta[pos:pos + n].reshape(L.weights.shape)
                pos += n
                L.bias = self.theta[pos:pos + L.bias.size]
                pos += L.bias.size

    def _index(self):
        s = self.schema
        cols = s.column_features()
        self._col_feat = cols
        enc_start = np.concatenate([[0], np.cumsum([L if L else 1 for L in s.levels])])
        dec_start = np.concatenate([[0], np.cumsum([L if L else 2 for L in s.levels])])
        self._cont = np.array(s.continuous_features, dtype=np.int64)
        self._cont_enc = enc_start[self._cont]
        self._cont_mu = dec_start[self._cont]
        self._cont_sig = dec_start[self._cont] + 1
        self._cat = [(j, int(enc_start[j]), int(dec_start[j]), s.levels[j]) for j in s.categorical]

    # ---- encoding -------------------------------------------------------
    def normalize(self, X):
        X = self.schema.validate(X)
        Z = X.copy()
        c = self._cont
        Z[:, c] = (X[:, c] - self.mean[c]) / self.sd[c]
        return Z

    def denormalize(self, Z):
        X = np.array(Z, dtype=np.float64, copy=True)
        c = self._cont
        X[:, c] = Z[:, c] * self.sd[c] + self.mean[c]
        return X

    def _encode_norm(self, Xn):
        """Full-width encoding of normalized rows, no masking."""
        out = np.zeros((Xn.shape[0], self.schema.encoded_width))
        out[:, self._cont_enc] = Xn[:, self._cont]
        rows = np.arange(Xn.shape[0])
        for j, e0, _, _ in self._cat:
            out[rows, e0 + Xn[:, j].astype(np.int64) - 1] = 1.0
        return out

    def _inputs(self, Xn, masks):
        enc = self._encode_norm(Xn)
        m = masks.astype(np.float64)
        observed = ~masks[:, self._col_feat]
        full_in = np.concatenate([enc, m], axis=1)
        masked_in = np.concatenate([enc * observed, m], axis=1)
        return full_in, masked_in

    # ---- forward pieces -------------------------------------------------
    def _split_latent(self, out):
        d = self.hyper.latent_dim
        pre = out[:, d:]
        return LatentGaussian(out[:, :d], _bounded_sigma(pre)), pre

    def _decode_raw(self, z, masked_in, hidden):
        depth = self.hyper.depth
        skips = [hidden[depth - 1 - k] for k in range(depth)] + [None]
        out, _, cache = self.decoder.forward(np.concatenate([z, masked_in], axis=1), skips)
        pre = out[:, self._cont_sig]
        dec = DecoderOutput(
            mu=out[:, self._cont_mu],
            sigma=_bounded_sigma(pre),
            logits=[out[:, d0:d0 + L] for _, _, d0, L in self._cat],
            pre_sigma=pre,
        )
        return dec, cache

    def log_prob_norm(self, dec, Xn, masks):
        """Per-row decoder log-likelihood of the masked entries (normalized scale)."""
        total = np.zeros(Xn.shape[0])
        if self._cont.size:
            lp = _gauss_logpdf(Xn[:, self._cont], dec.mu, dec.sigma)
            total += np.sum(lp * masks[:, self._cont], axis=1)
        rows = np.arange(Xn.shape[0])
        for (j, _, _, _), w in zip(self._cat, dec.logits):
            ls = nncore.log_softmax(w, axis=1)
            total += ls[rows, Xn[:, j].astype(np.int64) - 1] * masks[:, j]
        return total

    def _forward(self, Xn, masks, eps):
        full_in, masked_in = self._inputs(Xn, masks)
        f_out, _, f_cache = self.full_encoder.forward(full_in)
        m_out, m_hidden, m_cache = self.masked_encoder.forward(masked_in)
        full, f_pre = self._split_latent(f_out)
        masked, m_pre = self._split_latent(m_out)
        z = reparameterize(full, eps)
        dec, d_cache = self._decode_raw(z, masked_in, m_hidden)
        cache = _Cache(masks, Xn, eps, f_pre, m_pre, full, masked, dec, f_cache, m_cache, d_cache)
        return cache

    def _vlb_rows(self, cache):
        h = self.hyper
        logp = self.log_prob_norm(cache.dec_out, cache.x_norm, cache.masks)
        kl = kl_diag_gauss(cache.full, cache.masked)
        mu_m, sig_m = cache.masked.mu, cache.masked.sigma
        reg = (-np.sum(mu_m**2, axis=1) / (2.0 * h.sigma_mu**2)
               + np.sum(np.log(sig_m) - sig_m, axis=1) / h.sigma_sigma)
        return logp - kl + reg

    def _backward(self, cache):
        """Gradient of the batch-mean VLB with respect to :attr:`theta`."""
        h = self.hyper
        B = cache.x_norm.shape[0]
        d = h.latent_dim
        masks, Xn, dec = cache.masks, cache.x_norm, cache.dec_out

        # decoder output layer
        g_dec = np.zeros((B, self.schema.decoder_width))
        if self._cont.size:
            mc = masks[:, self._cont]
            r = Xn[:, self._cont] - dec.mu
            g_dec[:, self._cont_mu] = mc * r / dec.sigma**2
            d_sig = -1.0 / dec.sigma + r**2 / dec.sigma**3
            g_dec[:, self._cont_sig] = mc * d_sig * _sigma_grad(dec.pre_sigma)
        rows = np.arange(B)
        for (j, _, d0, L), w in zip(self._cat, dec.logits):
            g = -nncore.softmax(w, axis=1)
            g[rows, Xn[:, j].astype(np.int64) - 1] += 1.0
            g_dec[:, d0:d0 + L] = g * masks[:, j:j + 1]
        g_dec /= B
        dec_grads, d_in, d_skips = self.decoder.backward(cache.dec_cache, g_dec)
        dz = d_in[:, :d]

        # latent terms: -KL(full || masked) plus the masked-encoder priors
        mf, sf = cache.full.mu, cache.full.sigma
        mm, sm = cache.masked.mu, cache.masked.sigma
        diff = mf - mm
        d_mf = -diff / sm**2 / B + dz
        d_sf = (1.0 / sf - sf / sm**2) / B + dz * cache.eps
        d_mm = diff / sm**2 / B - mm / h.sigma_mu**2 / B
        d_sm = (-(1.0 / sm - (sf**2 + diff**2) / sm**3)
                + (1.0 / sm - 1.0) / h.sigma_sigma) / B

        g_full = np.concatenate([d_mf, d_sf * _sigma_grad(cache.full_pre)], axis=1)
        g_masked = np.concatenate([d_mm, d_sm * _sigma_grad(cache.masked_pre)], axis=1)
        full_grads, _, _ = self.full_encoder.backward(cache.full_cache, g_full)
        depth = h.depth
        d_hidden = [d_skips[depth - 1 - i] for i in range(depth)]
        masked_grads, _, _ = self.masked_encoder.backward(cache.masked_cache, g_masked, d_hidden)
        return nncore.flatten(full_grads + masked_grads + dec_grads)

    # ---- public numerics ------------------------------------------------
    def encode_full(self, X, masks):
        Xn = self.normalize(X)
        full_in, _ = self._inputs(Xn, _as_masks(masks, Xn.shape[0], self.schema.M))
        return self._split_latent(self.full_encoder.forward(full_in)[0])[0]

    def encode_masked(self, X, masks):
        Xn = self.normalize(_fill_masked(X, masks, self.schema))
        _, masked_in = self._inputs(Xn, _as_masks(masks, Xn.shape[0], self.schema.M))
        return self._split_latent(self.masked_encoder.forward(masked_in)[0])[0]

    def decode(self, z, X, masks):
        Xn = self.normalize(_fill_masked(X, masks, self.schema))
        masks = _as_masks(masks, Xn.shape[0], self.schema.M)
        _, masked_in = self._inputs(Xn, masks)
        _, hidden, _ = self.masked_encoder.forward(masked_in)
        return self._decode_raw(np.atleast_2d(z), masked_in, hidden)[0]

    def vlb_res(self, X, masks, eps):
        """Per-row regularized single-sample VLB."""
        Xn = self.normalize(X)
        masks = _as_masks(masks, Xn.shape[0], self.schema.M)
        return self._vlb_rows(self._forward(Xn, masks, np.atleast_2d(eps)))

    def vlb_and_grad(self, X, masks, eps):
        """Batch-mean VLB and its gradient with respect to :attr:`theta`."""
        Xn = self.normalize(X)
        masks = _as_masks(masks, Xn.shape[0], self.schema.M)
        cache = self._forward(Xn, masks, np.atleast_2d(eps))
        return float(np.mean(self._vlb_rows(cache))), self._backward(cache)

    def iwae(self, X, masks, V, rng):
        """Per-row importance-weighted log-likelihood of the masked entries."""
        if V < 1:
            raise ConfigurationError("V must be at least 1")
        Xn = self.normalize(X)
        masks = _as_masks(masks, Xn.shape[0], self.schema.M)
        return self._iwae_norm(Xn, masks, V, rng)

    def _iwae_norm(self, Xn, masks, V, rng):
        n, d = Xn.shape[0], self.hyper.latent_dim
        full_in, masked_in = self._inputs(Xn, masks)
        full, _ = self._split_latent(self.full_encoder.forward(full_in)[0])
        m_out, hidden, _ = self.masked_encoder.forward(masked_in)
        masked, _ = self._split_latent(m_out)
        eps = rng.standard_normal((n, V, d))
        z = full.mu[:, None, :] + eps * full.sigma[:, None, :]
        log_q = np.sum(_gauss_logpdf(z, full.mu[:, None, :], full.sigma[:, None, :]), axis=2)
        log_prior = np.sum(_gauss_logpdf(z, masked.mu[:, None, :], masked.sigma[:, None, :]), axis=2)
        rep = np.repeat(np.arange(n), V)
        dec, _ = self._decode_raw(z.reshape(n * V, d), masked_in[rep], [hh[rep] for hh in hidden])
        log_lik = self.log_prob_norm(dec, Xn[rep], masks[rep]).reshape(n, V)
        w = log_prior + log_lik - log_q
        wmax = w.max(axis=1, keepdims=True)
        return (wmax[:, 0] + np.log(np.mean(np.exp(w - wmax), axis=1)))

    def sample_conditional(self, x, mask, K, rng):
        """``K`` completions of one instance; observed entries copied from ``x``."""
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        mask = np.asarray(mask, dtype=bool).reshape(1, -1)
        return self.sample_conditional_batch(x, mask, K, rng)[0]

    def sample_conditional_batch(self, X, masks, K, rng):
        """Completions for many (instance, mask) pairs, shape ``(n, K, M)``."""
        if not self.trained:
            raise UsageError("sample_conditional needs a trained model")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        masks = _as_masks(masks, X.shape[0], self.schema.M)
        n, M = X.shape
        out = np.repeat(X[:, None, :], K, axis=1)
        if n == 0 or K == 0 or not masks.any():
            return out
        Xn = self.normalize(_fill_masked(X, masks, self.schema))
        rep = np.repeat(np.arange(n), K)
        _, masked_in = self._inputs(Xn, masks)
        m_out, hidden, _ = self.masked_encoder.forward(masked_in)
        masked, _ = self._split_latent(m_out)
        d = self.hyper.latent_dim
        z = masked.mu[rep] + rng.standard_normal((n * K, d)) * masked.sigma[rep]
        dec, _ = self._decode_raw(z, masked_in[rep], [hh[rep] for hh in hidden])
        draw = np.zeros((n * K, M))
        if self._cont.size:
            draw[:, self._cont] = dec.mu + dec.sigma * rng.standard_normal(dec.mu.shape)
        for (j, _, _, L), w in zip(self._cat, dec.logits):
            cdf = np.cumsum(nncore.softmax(w, axis=1), axis=1)
            u = rng.random((n * K, 1))
            draw[:, j] = np.minimum(np.sum(cdf < u * cdf[:, -1:], axis=1), L - 1) + 1
        draw = self.denormalize(draw).reshape(n, K, M)
        keep = masks[:, None, :]
        return np.where(keep, draw, out)

    # ---- persistence ----------------------------------------------------
    def save(self, path, extra=None):
        header = {
            "levels": list(self.schema.levels),
            "hyper": asdict(self.hyper),
            "nets": [net.header() for net in self.nets],
            "trained": bool(self.trained),
            "extra": extra or {},
        }
        arrays = {"theta": self.theta, "mean": self.mean, "sd": self.sd}
        serialize.write_container(path, "vaeac", header, arrays)

    @classmethod
    def load(cls, path):
        _, header, arrays = serialize.read_container(path, "vaeac")
        model, extra = cls.from_parts(header, arrays)
        return model, extra

    @classmethod
    def from_parts(cls, header, arrays):
        theta = arrays["theta"]
        nets, pos = [], 0
        for nh in header["nets"]:
            probe = nncore.Mlp.from_header(nh, np.zeros(_n_params(nh)))
            n = probe.n_params()
            nets.append(nncore.Mlp.from_header(nh, theta[pos:pos + n]))
            pos += n
        model = cls(FeatureSchema(tuple(header["levels"])), VaeacHyper(**header["hyper"]),
                    *nets, mean=arrays["mean"], sd=arrays["sd"], trained=header["trained"])
        return model, header.get("extra", {})


def _n_params(net_header):
    w, s = net_header["widths"], net_header["skip_widths"]
    return sum(w[k + 1] * (w[k] + s[k]) + w[k + 1] for k in range(len(w) - 1))


def _as_masks(masks, n, M):
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 1:
        masks = np.broadcast_to(masks, (n, M))
    if masks.shape != (n, M):
        raise ConfigurationError(f"mask shape {masks.shape} does not match data ({n}, {M})")
    return np.ascontiguousarray(masks)


def _fill_masked(X, masks, schema):
    """Replace masked entries with a schema-valid placeholder.

    Masked values never reach the networks, but normalization validates every
    entry, so unknown (e.g. NaN) values need a harmless stand-in.
    """
    X = np.array(np.atleast_2d(X), dtype=np.float64, copy=True)
    masks = _as_masks(masks, X.shape[0], schema.M)
    fill = np.where(np.array(schema.levels) > 0, 1.0, 0.0)
    return np.where(masks, fill, X)


def fixed_length_encode(x, mask, schema, mean=None, sd=None):
    """Masked encoding of one row followed by the mask indicator.

    Continuous entries are standardized with ``mean``/``sd`` when given.
    """
    model_stub = VaeacModel.__new__(VaeacModel)
    model_stub.schema = schema
    model_stub.mean = np.zeros(schema.M) if mean is None else np.asarray(mean, dtype=np.float64)
    model_stub.sd = np.ones(schema.M) if sd is None else np.asarray(sd, dtype=np.float64)
    model_stub._index()
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    Xn = model_stub.normalize(_fill_masked(x, mask, schema))
    return model_stub._inputs(Xn, mask)[1][0]


def log_prob_decoder(dec, x_norm, mask, schema):
    """Decoder log-likelihood of the masked entries of normalized rows."""
    stub = VaeacModel.__new__(VaeacModel)
    stub.schema = schema
    stub._index()
    x_norm = np.atleast_2d(np.asarray(x_norm, dtype=np.float64))
    return stub.log_prob_norm(dec, x_norm, _as_masks(mask, x_norm.shape[0], schema.M))


@dataclass
class TrainingLog:
    chosen_start: int = -1
    start_vlb: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_vlb", "val_iwae"])
            for r in self.rows:
                w.writerow([r["epoch"], f"{r['train_vlb']:.17g}", f"{r['val_iwae']:.17g}"])


def _run_epoch(model, adam, Xn, scheme, batch, rng, epoch_label):
    n, M = Xn.shape
    d = model.hyper.latent_dim
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        masks = sample_masks(scheme, M, idx.size, rng)
        eps = rng.standard_normal((idx.size, d))
        cache = model._forward(Xn[idx], masks, eps)
        vlb = model._vlb_rows(cache)
        if not np.all(np.isfinite(vlb)):
            raise TrainingError(f"non-finite VLB in epoch {epoch_label}")
        grad = model._backward(cache)
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient in epoch {epoch_label}")
        # descend on the negative VLB
        nncore.adam_step(adam, [model.theta], [-grad])
        total += vlb.sum()
    return total / n


def train(data, schema, scheme=None, hyper=None, rng=None, log_path=None):
    """Fit a model; returns ``(model, TrainingLog)``.

    Validation rows are split off first and continuous features are
    standardized with training-split statistics. Several random starts are
    warmed up and the one with the largest validation VLB continues; the
    returned parameters are those of the epoch with the largest validation
    IWAE.
    """
    scheme = UniformMasking() if scheme is None else scheme
    hyper = VaeacHyper() if hyper is None else hyper
    if rng is None:
        raise ConfigurationError("train needs an explicit random generator")
    X = schema.validate(data)
    N, M = X.shape
    if N < 8:
        raise ConfigurationError(f"need at least 8 training rows, got {N}")
    base = int(rng.integers(0, 2**62))
    split = rngmod.stream(base, "split").permutation(N)
    n_val = min(max(1, int(round(hyper.val_frac * N))), N - 1)
    val_idx, tr_idx = np.sort(split[:n_val]), np.sort(split[n_val:])

    cont = schema.continuous_features
    mean, sd = np.zeros(M), np.ones(M)
    if cont:
        mean[cont] = X[tr_idx][:, cont].mean(axis=0)
        sd[cont] = X[tr_idx][:, cont].std(axis=0, ddof=1)
        if np.any(~(sd[cont] > 0)):
            bad = [j + 1 for j in cont if not sd[j] > 0]
            raise ConfigurationError(f"continuous features {bad} have zero variance")

    epochs = hyper.resolved_epochs(N)
    warm = min(hyper.warmup_epochs, epochs)
    log = TrainingLog()

    def fresh(k):
        m = VaeacModel.init(schema, hyper, rngmod.stream(base, "init", k))
        m.mean, m.sd = mean.copy(), sd.copy()
        return m

    def val_iwae(model, epoch):
        r = rngmod.stream(base, "iwae", epoch)
        vm = sample_masks(scheme, M, n_val, r)
        return float(np.mean(model._iwae_norm(Xn_val, vm, hyper.iwae_samples, r)))

    probe = fresh(0)
    Xn_tr, Xn_val = probe.normalize(X[tr_idx]), probe.normalize(X[val_idx])
    vr = rngmod.stream(base, "val-vlb")
    val_masks = sample_masks(scheme, M, n_val, vr)
    val_eps = vr.standard_normal((n_val, hyper.latent_dim))

    best = None
    for k in range(hyper.multistart):
        model = probe if k == 0 else fresh(k)
        adam = nncore.AdamState(lr=hyper.lr)
        erng = rngmod.stream(base, "epochs", k)
        rows, snap, snap_score, snap_epoch = [], None, -np.inf, -1
        for e in range(1, warm + 1):
            tv = _run_epoch(model, adam, Xn_tr, scheme, hyper.batch_size, erng, e)
            iw = val_iwae(model, e)
            rows.append({"epoch": e, "train_vlb": tv, "val_iwae": iw})
            if iw > snap_score:
                snap, snap_score, snap_epoch = model.theta.copy(), iw, e
        score = float(np.mean(model._vlb_rows(model._forward(Xn_val, val_masks, val_eps))))
        log.start_vlb.append(score)
        if not np.isfinite(score):
            continue
        if best is None or score > best[0]:
            best = (score, k, model, adam, erng, rows, snap, snap_score, snap_epoch)
    if best is None:
        raise TrainingError("every random start diverged during warmup")

    _, k, model, adam, erng, rows, snap, snap_score, snap_epoch = best
    log.chosen_start = k
    for e in range(warm + 1, epochs + 1):
        tv = _run_epoch(model, adam, Xn_tr, scheme, hyper.batch_size, erng, e)
        iw = val_iwae(model, e)
        rows.append({"epoch": e, "train_vlb": tv, "val_iwae": iw})
        if iw > snap_score:
            snap, snap_score, snap_epoch = model.theta.copy(), iw, e
    if snap is None:
        raise TrainingError("validation IWAE was never finite")
    model.theta[:] = snap
    model.trained = True
    log.rows, log.best_epoch = rows, snap_epoch
    if log_path is not None:
        log.write_csv(log_path)
    return model, log
