"""Simulation experiments: generate, fit, explain, evaluate, report.

Seed fan-out (all via :func:`vaeacshap.rng.stream` / :func:`child_seed`):

* repetition ``r``: ``rep = child_seed(seed, "rep", r)``
* generator parameters ``(rep, "spec")``, training data ``(rep, "train")``,
  test data ``(rep, "test")``, predictor ``(rep, "predictor")``, coalition
  sample ``(rep, "coalitions")``
* method ``m``: ``ms = child_seed(rep, m)``; fitting uses ``(ms, "fit")`` and
  explaining with ``K`` samples uses seed ``child_seed(ms, "explain", K)``
  with one stream per test instance.

A method's numbers therefore never depend on which other methods run.
"""

import copy
import json
import os
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import datagen, dataio, metrics, predictors, shapley, vaeac
from . import rng as rngmod
from .conditioners import GaussianConditioner, IndependenceConditioner, VaeacConditioner
from .datagen.gaussian import (
    DiscretizedGaussianSpec,
    linear_model_from_dict,
    linear_model_to_dict,
)

METHODS = ("truth", "independence", "gaussian", "vaeac", "vaeac_c")

DEFAULTS = {
    "generator": {"type": "burr", "M": 5, "kappa": 2.0, "noise": True},
    "predictor": {"type": "forest", "trees": 500, "min_leaf": 5, "mtry": None},
    "methods": ["truth", "independence", "gaussian", "vaeac"],
    "coalitions": None,
    "K": 250,
    "K_extra": [],
    "K_true": 5000,
    "n_train": 1000,
    "n_test": 50,
    "repetitions": 1,
    "seed": 1,
    "vaeac": {},
    "timings": False,
    "write_explanations": True,
}


class ConfigError(ValueError):
    """Experiment configuration is invalid."""


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(cfg):
    """Fill defaults and validate."""
    cfg = _merge(DEFAULTS, cfg)
    for key in ("K", "K_true", "n_train", "n_test", "repetitions"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be positive")
    unknown = [m for m in cfg["methods"] if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
    if "vaeac_c" in cfg["methods"] and cfg["coalitions"] is None:
        raise ConfigError("vaeac_c needs a sampled coalition plan (set coalitions)")
    if cfg["coalitions"] is not None and int(cfg["coalitions"]) < 1:
        raise ConfigError("coalitions must be positive")
    if cfg["generator"].get("type") == "csv":
        if not cfg["generator"].get("path"):
            raise ConfigError("csv generator needs a path")
        if "truth" in cfg["methods"]:
            raise ConfigError("truth is unavailable for external CSV data")
    if cfg["predictor"]["type"] not in ("forest", "linear"):
        raise ConfigError("predictor type must be forest or linear")
    vaeac.VaeacHyper(**cfg["vaeac"])
    return cfg


def load_config(path):
    import yaml

    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return cfg


# ---- generators ----------------------------------------------------------

@dataclass
class Generator:
    """Sampled generator: features, responses, and (when known) truth."""

    kind: str
    schema: vaeac.FeatureSchema
    burr: object = None
    gauss: DiscretizedGaussianSpec = None
    response: predictors.LinearModel = None
    noise_sd: float = 0.0

    def sample(self, N, rng):
        if self.kind == "burr":
            return datagen.gen_burr_dataset(self.burr, N, rng)
        X = datagen.gen_discretized_dataset(self.gauss, N, rng)
        return X, datagen.gen_response_mixed(X, self.response, rng, self.noise_sd)

    def to_dict(self):
        if self.kind == "burr":
            return self.burr.to_dict()
        d = self.gauss.to_dict()
        d["response"] = linear_model_to_dict(self.response)
        d["noise_sd"] = float(self.noise_sd)
        return d

    @classmethod
    def from_dict(cls, d):
        if d["type"] == "burr":
            spec = datagen.BurrSpec.from_dict(d)
            return cls("burr", vaeac.FeatureSchema.continuous(spec.M), burr=spec)
        spec = DiscretizedGaussianSpec.from_dict(d)
        return cls("gaussian", spec.schema, gauss=spec,
                   response=linear_model_from_dict(d["response"]), noise_sd=d["noise_sd"])

    def truth_values(self, predictor):
        """``fn(x, codes) -> values`` for exact oracles, or ``None``."""
        if self.kind != "gaussian" or not isinstance(predictor, predictors.LinearModel):
            return None
        spec = self.gauss
        all_cat = all(c is not None for c in spec.cutoffs)

        def fn(x, codes):
            if all_cat and spec.M > datagen.gaussian.MAX_MIXED_M:
                return np.array([datagen.true_v_categorical(spec, predictor, x, int(S)) for S in codes])
            return np.array([datagen.true_v_mixed(spec, predictor, x, int(S)) for S in codes])

        return fn


def make_generator(gcfg, rng):
    """Build a generator from its config section; random parameters use ``rng``."""
    t = gcfg.get("type", "burr")
    if t == "burr":
        spec = datagen.burr_spec_from_grid(int(gcfg.get("M", 5)), rng, float(gcfg.get("kappa", 2.0)),
                                           bool(gcfg.get("noise", True)))
        return Generator("burr", vaeac.FeatureSchema.continuous(spec.M), burr=spec)
    rho = float(gcfg.get("rho", 0.5))
    if t == "mixed":
        M = int(gcfg.get("M", 4))
        spec = datagen.mixed_spec(M, rho)
        coef = gcfg.get("coefficients", "preset")
        model = datagen.mixed_linear_model(M) if coef == "preset" else datagen.grid_linear_model(spec.schema, rng)
        return Generator("gaussian", spec.schema, gauss=spec, response=model,
                         noise_sd=float(gcfg.get("noise_sd", 1.0)))
    if t == "categorical":
        M, L = int(gcfg.get("M", 3)), int(gcfg.get("L", 3))
        cuts = gcfg.get("cutoffs") or list(ndtri(np.arange(1, L) / L))
        spec = DiscretizedGaussianSpec(M, rho, [cuts] * M)
        return Generator("gaussian", spec.schema, gauss=spec,
                         response=datagen.normal_linear_model(spec.schema, rng),
                         noise_sd=float(gcfg.get("noise_sd", 0.1)))
    if t == "discretized_gaussian":
        spec = DiscretizedGaussianSpec(int(gcfg["M"]), rho, gcfg["cutoffs"])
        coef = gcfg.get("coefficients", "grid")
        model = (datagen.normal_linear_model(spec.schema, rng) if coef == "normal"
                 else datagen.grid_linear_model(spec.schema, rng))
        return Generator("gaussian", spec.schema, gauss=spec, response=model,
                         noise_sd=float(gcfg.get("noise_sd", 1.0)))
    raise ConfigError(f"unknown generator type {t!r}")


def fit_predictor(pcfg, X, y, schema, rng):
    if pcfg["type"] == "linear":
        return predictors.fit_linear(X, y, schema)
    return predictors.fit_forest(X, y, schema, n_trees=int(pcfg.get("trees", 500)),
                                 min_leaf=int(pcfg.get("min_leaf", 5)), mtry=pcfg.get("mtry"), rng=rng)


def build_conditioner(method, X_train, schema, plan, hyper, seed, log_path=None):
    if method == "independence":
        return IndependenceConditioner(X_train)
    if method == "gaussian":
        if schema.categorical:
            raise ConfigError("the gaussian conditioner needs all-continuous features")
        return GaussianConditioner.from_data(X_train)
    if method in ("vaeac", "vaeac_c"):
        scheme = vaeac.UniformMasking()
        if method == "vaeac_c":
            scheme = vaeac.FrequencyMasking(plan.codes, plan.counts)
        model, _ = vaeac.train(X_train, schema, scheme, hyper, rngmod.stream(seed, "fit"), log_path)
        return VaeacConditioner(model)
    raise ConfigError(f"no conditioner for method {method!r}")


# ---- main loop -----------------------------------------------------------

@dataclass
class RepetitionResult:
    explanations: dict
    truth: shapley.Explanations
    plan: shapley.CoalitionSample
    phi0: float


def _evaluate(rep, method, K, ex, truth):
    r = metrics.EvalReport(method, rep, n_test=int(ex.phi.shape[0]),
                           n_coalitions=float(ex.plan.n_draws), K=int(K))
    counts = ex.plan.counts
    r.ec3 = metrics.ec3(ex.fx, ex.vhat, counts)
    if truth is not None:
        r.ec1 = metrics.ec1(truth.phi, ex.phi)
        r.ec2 = metrics.ec2(truth.vhat, ex.vhat, counts)
    return r


class StageFailure(RuntimeError):
    """A repetition failed; ``stage`` names the step that raised."""

    def __init__(self, stage, exc):
        super().__init__(f"{type(exc).__name__}: {exc}")
        self.stage = stage


def _split_csv(gcfg, n_train, n_test, rng):
    """Train/test rows from external CSV files (no truth available)."""
    X, y, schema, _ = dataio.read_dataset(gcfg["path"], gcfg.get("response"))
    if y is None:
        raise ConfigError(f"{gcfg['path']}: no response column")
    if gcfg.get("test_path"):
        X_te, _, schema_te, _ = dataio.read_dataset(gcfg["test_path"], gcfg.get("response"))
        if schema_te.levels != schema.levels:
            raise ConfigError("train and test CSV schemas differ")
        return schema, X, y, X_te[:n_test]
    if n_train + n_test > X.shape[0]:
        raise ConfigError(f"{gcfg['path']}: {X.shape[0]} rows, need n_train + n_test = {n_train + n_test}")
    order = rng.permutation(X.shape[0])
    tr, te = order[:n_train], order[n_train:n_train + n_test]
    return schema, X[tr], y[tr], X[te]


def run_repetition(cfg, rep, out_dir=None, timings=None):
    """One repetition; returns ``(reports, RepetitionResult)``.

    Any exception is re-raised as :class:`StageFailure` naming the step.
    """
    stage = ["generate"]
    try:
        return _run_repetition(cfg, rep, out_dir, timings, stage)
    except Exception as exc:  # noqa: BLE001 - tagged and re-raised
        raise StageFailure(stage[0], exc) from exc


def _run_repetition(cfg, rep, out_dir, timings, stage):
    seed = rngmod.child_seed(cfg["seed"], "rep", rep)
    gcfg = cfg["generator"]
    if gcfg.get("type") == "csv":
        gen = None
        schema, X_tr, y_tr, X_te = _split_csv(gcfg, int(cfg["n_train"]), int(cfg["n_test"]),
                                              rngmod.stream(seed, "split"))
    else:
        gen = make_generator(gcfg, rngmod.stream(seed, "spec"))
        schema = gen.schema
        X_tr, y_tr = gen.sample(int(cfg["n_train"]), rngmod.stream(seed, "train"))
        X_te, _ = gen.sample(int(cfg["n_test"]), rngmod.stream(seed, "test"))
    M = schema.M
    stage[0] = "predictor"
    predictor = fit_predictor(cfg["predictor"], X_tr, y_tr, schema, rngmod.stream(seed, "predictor"))
    phi0 = float(np.mean(y_tr))
    stage[0] = "coalitions"
    n_s = cfg["coalitions"]
    plan = shapley.coalition_plan(M, None if n_s is None else int(n_s), rngmod.stream(seed, "coalitions"))
    hyper = vaeac.VaeacHyper(**cfg["vaeac"])
    Ks = [int(cfg["K"])] + [int(k) for k in cfg["K_extra"]]

    reports, explanations, truth = [], {}, None
    if "truth" in cfg["methods"] and gen is not None:
        stage[0] = "truth"
        ms = rngmod.child_seed(seed, "truth")
        t0 = time.perf_counter()
        fn = gen.truth_values(predictor)
        if fn is not None:
            truth = shapley.explain_values(fn, X_te, plan, phi0, predictor.predict(X_te))
        elif gen.kind == "burr":
            truth = shapley.explain(predictor, datagen.burr_truth_conditioner(gen.burr), X_te, plan,
                                    int(cfg["K_true"]), phi0, rngmod.child_seed(ms, "explain", cfg["K_true"]))
        if truth is not None:
            explanations[("truth", int(cfg["K_true"]))] = truth
            rr = _evaluate(rep, "truth", cfg["K_true"], truth, truth)
            reports.append(rr)
        if timings is not None:
            timings.append({"repetition": rep, "method": "truth", "explain_s": time.perf_counter() - t0})

    for method in cfg["methods"]:
        if method == "truth":
            continue
        ms = rngmod.child_seed(seed, method)
        stage[0] = f"train:{method}"
        t0 = time.perf_counter()
        log_path = None
        if out_dir is not None and method.startswith("vaeac"):
            log_path = os.path.join(out_dir, f"train_log_rep{rep}_{method}.csv")
        cond = build_conditioner(method, X_tr, schema, plan, hyper, ms, log_path)
        stage[0] = f"explain:{method}"
        t1 = time.perf_counter()
        for K in Ks:
            ex = shapley.explain(predictor, cond, X_te, plan, K, phi0, rngmod.child_seed(ms, "explain", K))
            explanations[(method, K)] = ex
            reports.append(_evaluate(rep, method, K, ex, truth))
        if timings is not None:
            timings.append({"repetition": rep, "method": method, "train_s": t1 - t0,
                            "explain_s": time.perf_counter() - t1})
    stage[0] = "report"
    if out_dir is not None and cfg.get("write_explanations", True):
        for (method, K), ex in explanations.items():
            ex.write_csv(os.path.join(out_dir, f"explanations_rep{rep}_{method}_K{K}.csv"))
    return reports, RepetitionResult(explanations, truth, plan, phi0)


def run_experiment(cfg, out_dir=None, keep_results=False):
    """Run all repetitions; a failing repetition is recorded and skipped.

    Returns a dict with ``reports``, ``aggregate`` and ``failures`` (and the
    per-repetition results when ``keep_results``).
    """
    cfg = resolve_config(cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    reports, failures, results = [], [], []
    timings = [] if cfg["timings"] else None
    for rep in range(int(cfg["repetitions"])):
        try:
            rr, res = run_repetition(cfg, rep, out_dir, timings)
        except StageFailure as exc:
            failures.append({"repetition": rep, "stage": exc.stage, "error": str(exc)})
            continue
        reports.extend(rr)
        if keep_results:
            results.append(res)
    out = {"reports": reports, "aggregate": _aggregate_by_k(reports), "failures": failures}
    if out_dir is not None:
        metrics.write_reports_csv(os.path.join(out_dir, "reports.csv"), reports)
        doc = {"config": cfg, "aggregate": out["aggregate"], "failures": failures,
               "reports": [r.row() for r in reports]}
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if timings is not None:
            with open(os.path.join(out_dir, "timings.json"), "w") as fh:
                json.dump(timings, fh, indent=2)
                fh.write("\n")
    if keep_results:
        out["results"] = results
    return out


def _aggregate_by_k(reports):
    groups = {}
    for r in reports:
        groups.setdefault(f"{r.method}@K={r.K}", []).append(r)
    agg = {}
    for key, rs in groups.items():
        agg[key] = {}
        for k in ("ec1", "ec2", "ec3"):
            vals = [getattr(r, k) for r in rs if getattr(r, k) is not None]
            agg[key][k] = float(np.mean(vals)) if vals else None
        agg[key]["repetitions"] = len(rs)
    return agg
