"""Command line entry point ``vaeacshap``.

Subcommands::

    simulate        generate a dataset CSV plus schema sidecar
    fit-model       fit the model to be explained (forest or linear)
    train-vaeac     train a VAEAC conditioner checkpoint
    explain         Shapley values for every row of a CSV
    evaluate        EC1/EC2/EC3 from explanation files
    run-experiment  full simulation study from a YAML config
"""

import argparse
import csv
import json
import sys

import numpy as np

from . import datagen, dataio, experiment, metrics, predictors, shapley, vaeac
from . import rng as rngmod
from .conditioners import (
    GaussianConditioner,
    IndependenceConditioner,
    load_conditioner,
)


class CliError(Exception):
    pass


def _config(args):
    return experiment.load_config(args.config) if getattr(args, "config", None) else {}


def _seed(args, cfg, default=1):
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", default))


# ---- simulate --------------------------------------------------------------

def cmd_simulate(args):
    if args.from_sidecar:
        with open(args.from_sidecar) as fh:
            side = json.load(fh)
        gen = experiment.Generator.from_dict(side["generator"])
        seed = int(side["seed"]) if args.seed is None else int(args.seed)
        n = int(side["n_rows"]) if args.n is None else int(args.n)
    else:
        cfg = _config(args)
        gcfg = dict(cfg.get("generator", {}))
        for key in ("type", "M", "rho", "L"):
            val = getattr(args, key.lower() if key != "type" else "generator")
            if val is not None:
                gcfg[key] = val
        seed = _seed(args, cfg)
        gen = experiment.make_generator(gcfg, rngmod.stream(seed, "spec"))
        n = int(args.n if args.n is not None else cfg.get("n", 1000))
    if n < 0:
        raise CliError("--n must be non-negative")
    X, y = gen.sample(n, rngmod.stream(seed, "data"))
    dataio.write_dataset(args.out, X, y, gen.schema, generator=gen.to_dict(), seed=seed)
    print(f"wrote {n} rows to {args.out}")


# ---- models ----------------------------------------------------------------

def _load_xy(path, need_y=True):
    X, y, schema, meta = dataio.read_dataset(path)
    if need_y and y is None:
        raise CliError(f"{path}: no response column")
    return X, y, schema, meta


def cmd_fit_model(args):
    X, y, schema, _ = _load_xy(args.data)
    seed = args.seed if args.seed is not None else 1
    if args.model == "linear":
        model = predictors.fit_linear(X, y, schema)
    elif args.model == "constant":
        model = predictors.ConstantModel(float(np.mean(y)) if y.size else 0.0, schema)
    else:
        model = predictors.fit_forest(X, y, schema, n_trees=args.trees, min_leaf=args.min_leaf,
                                      rng=rngmod.stream(seed, "predictor"))
    model.save(args.out)
    print(f"wrote {args.model} model to {args.out}")


def cmd_train_vaeac(args):
    cfg = _config(args)
    X, y, schema, _ = _load_xy(args.data, need_y=False)
    seed = _seed(args, cfg)
    hyper = vaeac.VaeacHyper(**cfg.get("vaeac", {}))
    if args.epochs is not None:
        hyper.epochs = args.epochs
    scheme = vaeac.UniformMasking()
    n_s = args.coalitions if args.coalitions is not None else None
    if n_s is not None:
        plan = shapley.coalition_plan(schema.M, n_s, rngmod.stream(seed, "coalitions"))
        scheme = vaeac.FrequencyMasking(plan.codes, plan.counts)
    model, log = vaeac.train(X, schema, scheme, hyper, rngmod.stream(seed, "fit"), args.log)
    phi0 = float(np.mean(y)) if y is not None and y.size else None
    model.save(args.out, extra={"phi0": phi0})
    print(f"wrote checkpoint to {args.out} (best epoch {log.best_epoch})")


# ---- explain ---------------------------------------------------------------

def _truth_conditioner(meta):
    gen_d = meta.get("generator") if meta else None
    if not gen_d or gen_d.get("type") != "burr":
        raise CliError("--method truth needs data simulated from the burr generator (schema sidecar)")
    gen = experiment.Generator.from_dict(gen_d)
    return datagen.burr_truth_conditioner(gen.burr)


def cmd_explain(args):
    X, _, schema, meta = dataio.read_dataset(args.data)
    model = predictors.load_model(args.model)
    ms = getattr(model, "schema", None)
    if ms is not None:
        if ms.M != schema.M:
            raise CliError(f"model expects {ms.M} features, data has {schema.M}")
        if tuple(ms.levels) != tuple(schema.levels):
            raise CliError(f"data feature kinds {list(schema.levels)} differ from the model's "
                           f"{list(ms.levels)} (0 = continuous, else number of levels)")
    phi0 = args.phi0
    if args.conditioner:
        cond, stored = load_conditioner(args.conditioner)
        phi0 = stored if phi0 is None else phi0
    else:
        if args.method is None or (args.method != "truth" and args.train is None):
            raise CliError("give --conditioner FILE, or --method with --train CSV")
        Xt, yt, tschema, _ = dataio.read_dataset(args.train) if args.train else (None, None, None, None)
        if args.method == "independence":
            cond = IndependenceConditioner(Xt)
        elif args.method == "gaussian":
            cond = GaussianConditioner.from_data(Xt)
        elif args.method == "truth":
            cond = _truth_conditioner(meta)
        else:
            raise CliError(f"--method {args.method!r} needs a trained conditioner file")
        if phi0 is None and yt is not None:
            phi0 = float(np.mean(yt))
    if phi0 is None:
        raise CliError("no phi0: pass --phi0 or a conditioner/training file with responses")
    seed = args.seed if args.seed is not None else 1
    plan = shapley.coalition_plan(schema.M, args.coalitions, rngmod.stream(seed, "coalitions"))
    ex = shapley.explain(model, cond, X, plan, args.k, phi0, rngmod.child_seed(seed, "explain"))
    ex.write_csv(args.out)
    if args.values:
        ex.write_coalitions_csv(args.values)
    print(f"wrote {X.shape[0]} explanations to {args.out}")


# ---- evaluate --------------------------------------------------------------

def _read_phi(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = [k for k, h in enumerate(header) if h.startswith("phi_")]
    pk = header.index("prediction")
    body = rows[1:]
    phi = np.array([[float(r[k]) for k in cols] for r in body]).reshape(len(body), len(cols))
    fx = np.array([float(r[pk]) for r in body])
    return phi, fx


def _read_values(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    inst = sorted({int(r["instance_id"]) for r in rows})
    codes = sorted({int(r["coalition"]) for r in rows})
    ci = {c: k for k, c in enumerate(codes)}
    v = np.full((len(inst), len(codes)), np.nan)
    counts = np.zeros(len(codes))
    for r in rows:
        v[int(r["instance_id"]), ci[int(r["coalition"])]] = float(r["v_hat"])
        counts[ci[int(r["coalition"])]] = float(r["count"])
    return codes, counts, v


def cmd_evaluate(args):
    phi, fx = _read_phi(args.estimate)
    out = {"n_test": int(phi.shape[0])}
    if args.truth:
        phi_t, _ = _read_phi(args.truth)
        out["ec1"] = metrics.ec1(phi_t, phi)
    if args.values:
        codes, counts, v = _read_values(args.values)
        out["ec3"] = metrics.ec3(fx, v, counts)
        if args.truth_values:
            codes_t, _, v_t = _read_values(args.truth_values)
            if codes_t != codes:
                raise CliError("estimate and truth cover different coalitions")
            out["ec2"] = metrics.ec2(v_t, v, counts)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


# ---- run-experiment --------------------------------------------------------

def cmd_run_experiment(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.k is not None:
        cfg["K"] = args.k
    if args.coalitions is not None:
        cfg["coalitions"] = args.coalitions
    if args.method:
        cfg["methods"] = args.method
    if args.timings:
        cfg["timings"] = True
    res = experiment.run_experiment(cfg, args.out)
    for key, agg in sorted(res["aggregate"].items()):
        parts = [f"{k}={agg[k]:.5g}" for k in ("ec1", "ec2", "ec3") if agg[k] is not None]
        print(f"{key}: " + " ".join(parts))
    for f in res["failures"]:
        print(f"repetition {f['repetition']} failed at {f['stage']}: {f['error']}", file=sys.stderr)
    return 1 if res["failures"] and not res["reports"] else 0


def _methods(text):
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="vaeacshap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a dataset")
    s.add_argument("--config")
    s.add_argument("--from-sidecar", help="regenerate from a schema sidecar")
    s.add_argument("--generator", choices=["burr", "mixed", "categorical"])
    s.add_argument("--m", type=int, dest="m")
    s.add_argument("--rho", type=float)
    s.add_argument("--l", type=int, dest="l")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit-model", help="fit the model to explain")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["forest", "linear", "constant"], default="forest")
    s.add_argument("--trees", type=int, default=500)
    s.add_argument("--min-leaf", type=int, default=5)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_model)

    s = sub.add_parser("train-vaeac", help="train a VAEAC conditioner")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--coalitions", type=int, help="train on a sampled coalition plan's frequencies")
    s.add_argument("--log", help="CSV training log path")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_vaeac)

    s = sub.add_parser("explain", help="explain every row of a CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--conditioner")
    s.add_argument("--method", choices=["independence", "gaussian", "truth"])
    s.add_argument("--train")
    s.add_argument("--k", type=int, default=250)
    s.add_argument("--coalitions", type=int)
    s.add_argument("--phi0", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--values", help="also write per-coalition contribution estimates")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("evaluate", help="evaluation criteria from explanation files")
    s.add_argument("--estimate", required=True)
    s.add_argument("--truth")
    s.add_argument("--values")
    s.add_argument("--truth-values")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run-experiment", help="simulation study from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--coalitions", type=int)
    s.add_argument("--method", type=_methods)
    s.add_argument("--timings", action="store_true", help="also write timings.json")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except (CliError, ValueError, OSError, vaeac.UsageError, vaeac.TrainingError) as exc:
        print(f"vaeacshap: error: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
