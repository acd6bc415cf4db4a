"""Command-line front end: ``generate``, ``diagnose``, ``fit`` and ``bench``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure or
non-convergence, 4 I/O error.
"""
import configparser
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path

import click
import numpy as np

from . import __version__
from .conjugate import fit_ml2, predict
from .data import (ConfigError, ContaminationPlan, CsvError, NoiseSpec, gen_friedman, gen_neal,
                   kfold_split, load_csv, metrics, write_dataset_csv)
from .dataset import Dataset
from .laplace import optimize_hyperparams, predict_laplace
from .likelihoods import HuberConfig
from .mcmc import ChainSettings, predictive_average, run_chain
from .optim import NonFiniteObjective
from .projection import DegenerateDataError, input_weights

RESULTS_SCHEMA = 1
RESULT_COLUMNS = ["dataset", "noise", "model", "seed", "replicate", "fold", "rmse", "mae", "nlp", "status"]
MODELS = ("gp", "huber-la", "huber-mcmc")
DATASETS = ("neal", "friedman", "csv")
DEFAULT_NOISE = {"neal": "student-t:10", "friedman": "normal:0.01,0.08"}

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
NUMERIC_ERRORS = (np.linalg.LinAlgError, FloatingPointError, NonFiniteObjective, DegenerateDataError)


class NotConverged(RuntimeError):
    pass


def fmt(v):
    """Round-trip decimal text for numbers, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


def guarded(func):
    """Map library exceptions onto the documented exit codes."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"error: invalid configuration: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (CsvError, OSError) as exc:
            click.echo(f"error: I/O: {exc}", err=True)
            sys.exit(EXIT_IO)
        except NotConverged as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except NUMERIC_ERRORS as exc:
            click.echo(f"error: numerical failure ({type(exc).__name__}): {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


# -- configuration -------------------------------------------------------------

def parse_noise(text):
    return NoiseSpec.parse(text)


def huber_config(b, eps):
    try:
        return HuberConfig(b=b, eps=eps)
    except ValueError as exc:
        field = "b" if "b must" in str(exc) else "eps"
        raise ConfigError(field, str(exc)) from None


def chain_settings(total, burn_in, thin, chains, seed):
    try:
        return ChainSettings(total=total, burn_in=burn_in, thin=thin, seed=seed, chains=chains)
    except ValueError as exc:
        raise ConfigError("sampler", str(exc)) from None


def ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise OSError(f"output directory {p} is not writable")
    return p


def load_ini(path):
    """INI file to a click default map: ``[fit]`` sections feed that command, ``[robustgp]`` all."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise click.FileError(str(path), hint=exc.strerror)
    except configparser.Error as exc:
        raise click.BadParameter(str(exc), param_hint="--config")
    shared = {k.replace("-", "_"): v for k, v in parser.defaults().items()}
    if parser.has_section("robustgp"):
        shared.update({k.replace("-", "_"): v for k, v in parser.items("robustgp")})
    out = {}
    for cmd in ("generate", "diagnose", "fit", "bench"):
        section = dict(shared)
        if parser.has_section(cmd):
            section.update({k.replace("-", "_"): v for k, v in parser.items(cmd)})
        out[cmd] = section
    bench = out["bench"]
    for key, name in BENCH_MULTI.items():
        if key in bench:
            bench[name] = bench.pop(key)
        if isinstance(bench.get(name), str):
            bench[name] = bench[name].split()
    return out


BENCH_MULTI = {"dataset": "datasets", "noise": "noises", "model": "models", "seed": "seeds"}


def split_multi(values):
    """Repeatable options may also arrive as one whitespace separated string from the INI file."""
    out = []
    for v in values:
        out.extend(str(v).split())
    return out


# -- datasets ------------------------------------------------------------------

def make_datasets(dataset, noise, seed, replicates=1, csv_path=None, target=None, standardize=False,
                  n_test=10000):
    """Build the training sets for one dataset choice as (replicate, Dataset) pairs."""
    if dataset == "neal":
        return [(0, gen_neal(parse_noise(noise or DEFAULT_NOISE["neal"]), ContaminationPlan.neal(), seed))]
    if dataset == "friedman":
        if replicates < 1:
            raise ConfigError("replicates", "must be at least 1")
        sets = gen_friedman(replicates, parse_noise(noise or DEFAULT_NOISE["friedman"]),
                            ContaminationPlan.friedman(), seed, n_test=n_test)
        return list(enumerate(sets))
    if dataset == "csv":
        if not csv_path:
            raise ConfigError("csv", "--csv is required with --dataset csv")
        if target is None:
            raise ConfigError("target", "--target is required with --dataset csv")
        return [(0, load_csv(csv_path, target, standardize))]
    raise ConfigError("dataset", f"unknown dataset {dataset!r}; expected one of {DATASETS}")


def weights_for(X, use_weights):
    return input_weights(X).weights if use_weights else np.ones(X.shape[0])


def fit_and_predict(model, train: Dataset, Xs, cfg, restarts, seed, settings, use_weights=True):
    """Fit one model and predict at ``Xs``.

    Returns ``(prediction, hyperparameters, converged, extra)`` where
    ``extra`` holds the chain for the sampler.
    """
    if model == "gp":
        m = fit_ml2(train.X, train.y, restarts=restarts, seed=seed)
        return predict(m, Xs), m.hyperparameters(), m.converged, None
    w = weights_for(train.X, use_weights)
    if model == "huber-la":
        m = optimize_hyperparams(train.X, train.y, cfg, w, restarts=restarts, seed=seed)
        return predict_laplace(m, Xs), m.hyperparameters(), m.converged, None
    if model == "huber-mcmc":
        chain = run_chain(train.X, train.y, cfg, w, settings)
        hyper = chain_summary(chain)
        converged = all(v < 1.05 for v in chain.rhat.values()) if chain.n_chains > 1 else True
        return predictive_average(chain, Xs), hyper, converged, chain
    raise ConfigError("model", f"unknown model {model!r}; expected one of {MODELS}")


def chain_summary(chain):
    cols = {}
    for k, name in enumerate(chain.names):
        v = chain.draws[:, k]
        v = v[np.isfinite(v)]
        cols[name] = {"mean": float(v.mean()) if v.size else None,
                      "sd": float(v.std(ddof=1)) if v.size > 1 else None,
                      "ess": chain.ess.get(name), "rhat": chain.rhat.get(name),
                      "acceptance": chain.acceptance.get(name)}
    return {"units": "standardized response", "center": chain.center, "scale": chain.scale,
            "retained": chain.size, "chains": chain.n_chains, "parameters": cols,
            "b": chain.cfg.b, "eps": chain.cfg.eps,
            "mean_outliers": float(np.mean(chain.n_outliers))}


# -- commands ------------------------------------------------------------------

@click.group()
@click.version_option(__version__, prog_name="robustgp")
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="INI file with per-command defaults; flags on the command line win.")
@click.pass_context
def main(ctx, config_path):
    """Robust Gaussian process regression with a Huber likelihood."""
    if config_path:
        ctx.default_map = load_ini(config_path)


def dataset_options(func):
    opts = [
        click.option("--dataset", type=click.Choice(DATASETS), default="neal", show_default=True),
        click.option("--noise", default=None, help="family[:p1[,p2]], e.g. student-t:10 or normal:0.01,0.08"),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None),
        click.option("--target", default=None, help="Target column (header name or 0-based index)."),
        click.option("--standardize/--no-standardize", default=False,
                     help="Median/MAD scale CSV inputs."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


@main.command()
@dataset_options
@click.option("--replicates", type=int, default=10, show_default=True, help="Friedman replicates.")
@click.option("--n-test", type=int, default=10000, show_default=True, help="Friedman test-set size.")
@guarded
def generate(dataset, noise, seed, csv_path, target, standardize, out_dir, replicates, n_test):
    """Write training CSVs (with an is_outlier column) and a noise-free test CSV."""
    if dataset == "csv":
        raise ConfigError("dataset", "generate supports neal and friedman")
    t0 = time.perf_counter()
    sets = make_datasets(dataset, noise, seed, replicates, n_test=n_test)
    out = ensure_dir(out_dir)
    files = []
    for r, ds in sets:
        name = f"{dataset}_train.csv" if len(sets) == 1 else f"{dataset}_train_r{r:02d}.csv"
        write_dataset_csv(out / name, ds.X, ds.y, ds.outlier_mask)
        files.append(name)
    test_name = f"{dataset}_test.csv"
    write_dataset_csv(out / test_name, sets[0][1].X_test, sets[0][1].y_test)
    files.append(test_name)
    manifest = base_manifest("generate", {"dataset": dataset, "noise": sets[0][1].meta["noise"],
                                          "seed": seed, "replicates": len(sets)}, seed)
    manifest["timings"] = {"generate": time.perf_counter() - t0}
    finish_manifest(out, manifest, files)
    click.echo(f"wrote {len(files)} data files to {out}")


@main.command()
@dataset_options
@guarded
def diagnose(dataset, noise, seed, csv_path, target, standardize, out_dir):
    """Per-point projection statistics and downweighting for a training set."""
    _, ds = make_datasets(dataset, noise, seed, 1, csv_path, target, standardize, n_test=1)[0]
    try:
        rw = input_weights(ds.X)
    except DegenerateDataError as exc:
        raise DegenerateDataError(f"{dataset} inputs ({ds.n} x {ds.d}): {exc}") from exc
    out = ensure_dir(out_dir)
    regime = "squared" if rw.squared_regime else "raw"
    rows = [(i, rw.ps[i], rw.weights[i], rw.dof[i], rw.thresholds[i], regime, rw.flagged[i],
             ds.outlier_mask[i]) for i in range(ds.n)]
    write_rows(out / "diagnose.csv",
               ["index", "ps", "weight", "dof", "threshold", "regime", "flagged", "is_outlier"], rows)
    manifest = base_manifest("diagnose", {"dataset": dataset, "noise": ds.meta.get("noise"), "seed": seed,
                                          "csv": csv_path, "target": target}, seed)
    manifest["results"] = {"n": ds.n, "flagged": int(rw.flagged.sum()), "regime": regime}
    finish_manifest(out, manifest, ["diagnose.csv"])
    click.echo(f"{int(rw.flagged.sum())} of {ds.n} points downweighted")


def model_options(func):
    opts = [
        click.option("--model", type=click.Choice(MODELS), default="huber-la", show_default=True),
        click.option("--b", "b", type=float, default=HuberConfig.b, show_default=True,
                     help="Huber threshold on standardized residuals."),
        click.option("--eps", type=float, default=HuberConfig.eps, show_default=True),
        click.option("--restarts", type=int, default=5, show_default=True,
                     help="Random optimizer starts (gp, huber-la)."),
        click.option("--weights/--no-weights", "use_weights", default=True,
                     help="Use projection-statistic weights (huber models)."),
        click.option("--total", type=int, default=10000, show_default=True, help="Sampler sweeps per chain."),
        click.option("--burn-in", type=int, default=None, help="Default: total // 5."),
        click.option("--thin", type=int, default=4, show_default=True),
        click.option("--chains", type=int, default=2, show_default=True),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


@main.command()
@dataset_options
@model_options
@click.option("--replicate", type=int, default=0, show_default=True, help="Friedman replicate to fit.")
@guarded
def fit(dataset, noise, seed, csv_path, target, standardize, out_dir, model, b, eps, restarts,
        use_weights, total, burn_in, thin, chains, replicate):
    """Fit one model, predict on the test inputs and write all artifacts."""
    cfg = huber_config(b, eps)
    settings = chain_settings(total, burn_in, thin, chains, seed)
    if restarts < 0:
        raise ConfigError("restarts", "must be non-negative")
    timings = {}
    t0 = time.perf_counter()
    sets = make_datasets(dataset, noise, seed, replicate + 1, csv_path, target, standardize)
    _, ds = sets[replicate]
    Xs, ys = (ds.X_test, ds.y_test) if ds.X_test is not None else (ds.X, ds.y)
    out = ensure_dir(out_dir)
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pred, hyper, converged, chain = fit_and_predict(model, ds, Xs, cfg, restarts, seed, settings, use_weights)
    timings["fit_predict"] = time.perf_counter() - t0
    report = metrics(pred, ys)

    lo, hi = pred.band(2.0)
    xcols = [f"x{k + 1}" for k in range(Xs.shape[1])]
    write_rows(out / "predictions.csv", xcols + ["mean", "var", "lo2sd", "hi2sd"],
               (list(Xs[i]) + [pred.mean[i], pred.var[i], lo[i], hi[i]] for i in range(Xs.shape[0])))
    write_json(out / "hyperparameters.json", {"model": model, **hyper})
    write_json(out / "metrics.json", {**report.as_dict(), "evaluated_on": "test" if ds.X_test is not None
                                      else "train"})
    files = ["predictions.csv", "hyperparameters.json", "metrics.json"]
    if chain is not None:
        write_chain(out / "chain.csv", chain)
        files.append("chain.csv")
    config = {"dataset": dataset, "noise": ds.meta.get("noise"), "seed": seed, "model": model,
              "b": b, "eps": eps, "restarts": restarts, "weights": use_weights, "replicate": replicate,
              "csv": csv_path, "target": target, "standardize": standardize}
    if model == "huber-mcmc":
        config.update(total=settings.total, burn_in=settings.burn_in, thin=settings.thin, chains=chains)
    manifest = base_manifest("fit", config, seed)
    manifest["timings"] = timings
    manifest["results"] = {"metrics": report.as_dict(), "converged": bool(converged)}
    finish_manifest(out, manifest, files)
    click.echo(f"{model}: rmse={report.rmse:.6g} mae={report.mae:.6g} nlp={report.nlp:.6g}")
    if not converged:
        raise NotConverged(f"{model} did not converge; best iterate written to {out}")


def write_chain(path, chain):
    d = chain.draws.shape[1] - 3
    header = ["chain", "iteration", "log_target", "sigma_g2", "beta", "amplitude"]
    header += [f"length_scale{k + 1}" for k in range(d)] + ["n_outliers"]
    rows = ([r["chain"], r["iteration"], r["log_target"], r["sigma_g2"], r["beta"], r["amplitude"],
             *r["length_scales"], r["n_outliers"]] for r in chain.records())
    write_rows(path, header, rows)


# -- bench ---------------------------------------------------------------------

def pool_size(requested=None):
    """Worker count: ``requested`` or all cores, capped by ROBUSTGP_THREADS."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("ROBUSTGP_THREADS")
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ConfigError("ROBUSTGP_THREADS", f"expected an integer, got {cap!r}") from None
    return max(1, n)


def run_cell(cell):
    """One grid cell; failures become a status string so the grid carries on."""
    key, model, train, Xs, ys, cfg, restarts, seed, settings, use_weights = cell
    try:
        pred, _, converged, _ = fit_and_predict(model, train, Xs, cfg, restarts, seed, settings, use_weights)
        rep = metrics(pred, ys)
        return key + (rep.rmse, rep.mae, rep.nlp, "ok" if converged else "not_converged")
    except NUMERIC_ERRORS + (ValueError,) as exc:
        return key + (float("nan"),) * 3 + (f"error:{type(exc).__name__}",)


def build_grid(datasets, noises, models, seeds, replicates, kfold, csv_path, target, standardize,
               cfg, restarts, settings, use_weights, n_test):
    cells = []
    for dataset in datasets:
        if dataset == "csv":
            _, full = make_datasets("csv", None, 0, 1, csv_path, target, standardize)[0]
            for seed in seeds:
                folds = kfold_split(full.n, kfold, seed) if kfold else [(np.arange(full.n), np.arange(full.n))]
                for f, (tr, te) in enumerate(folds):
                    for model in models:
                        key = ("csv", "", model, seed, 0, f)
                        cells.append((key, model, full.subset(tr), full.X[te], full.y[te], cfg, restarts,
                                      seed, settings, use_weights))
            continue
        for noise in noises or [DEFAULT_NOISE[dataset]]:
            label = parse_noise(noise).label()
            for seed in seeds:
                reps = replicates if dataset == "friedman" else 1
                for r, ds in make_datasets(dataset, noise, seed, reps, n_test=n_test):
                    for model in models:
                        key = (dataset, label, model, seed, r, 0)
                        cells.append((key, model, ds, ds.X_test, ds.y_test, cfg, restarts, seed,
                                      settings, use_weights))
    return cells


def summarize(rows):
    """Median rmse/mae/nlp per (dataset, noise, model) over successful runs."""
    groups = {}
    for row in rows:
        groups.setdefault(row[:3], []).append(row)
    out = []
    for key in sorted(groups):
        ok = [r for r in groups[key] if r[-1] in ("ok", "not_converged")]
        med = [float(np.median([r[i] for r in ok])) if ok else float("nan") for i in (6, 7, 8)]
        out.append(key + (len(groups[key]), len(ok), *med))
    return out


@main.command()
@click.option("--dataset", "datasets", multiple=True, default=("neal",), show_default=True)
@click.option("--noise", "noises", multiple=True, default=(), help="Repeatable; dataset default when omitted.")
@click.option("--model", "models", multiple=True, default=("gp", "huber-la"), show_default=True)
@click.option("--seed", "seeds", multiple=True, type=int, default=(0,), show_default=True)
@click.option("--replicates", type=int, default=10, show_default=True)
@click.option("--n-test", type=int, default=10000, show_default=True)
@click.option("--kfold", type=int, default=None, help="k-fold cross-validation for CSV data.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.option("--target", default=None)
@click.option("--standardize/--no-standardize", default=False)
@click.option("--b", "b", type=float, default=HuberConfig.b, show_default=True)
@click.option("--eps", type=float, default=HuberConfig.eps, show_default=True)
@click.option("--restarts", type=int, default=5, show_default=True)
@click.option("--weights/--no-weights", "use_weights", default=True)
@click.option("--total", type=int, default=10000, show_default=True)
@click.option("--burn-in", type=int, default=None)
@click.option("--thin", type=int, default=4, show_default=True)
@click.option("--chains", type=int, default=2, show_default=True)
@click.option("--workers", type=int, default=None, help="Worker processes (capped by ROBUSTGP_THREADS).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True)
@guarded
def bench(datasets, noises, models, seeds, replicates, n_test, kfold, csv_path, target, standardize, b, eps,
          restarts, use_weights, total, burn_in, thin, chains, workers, out_dir):
    """Run a dataset x noise x model grid and write results.csv and summary.csv."""
    datasets, noises, models = split_multi(datasets), split_multi(noises), split_multi(models)
    seeds = [int(s) for s in split_multi(seeds)]
    for d in datasets:
        if d not in DATASETS:
            raise ConfigError("dataset", f"unknown dataset {d!r}; expected one of {DATASETS}")
    for m in models:
        if m not in MODELS:
            raise ConfigError("model", f"unknown model {m!r}; expected one of {MODELS}")
    if kfold is not None and "csv" not in datasets:
        raise ConfigError("kfold", "only applies to --dataset csv")
    cfg = huber_config(b, eps)
    settings = chain_settings(total, burn_in, thin, chains, seeds[0] if seeds else 0)
    out = ensure_dir(out_dir)

    t0 = time.perf_counter()
    cells = build_grid(datasets, noises, models, seeds, replicates, kfold, csv_path, target, standardize,
                       cfg, restarts, settings, use_weights, n_test)
    t_grid = time.perf_counter() - t0
    n_workers = pool_size(workers)
    t0 = time.perf_counter()
    if n_workers == 1 or len(cells) == 1:
        rows = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(run_cell, cells))
    t_run = time.perf_counter() - t0

    write_rows(out / "results.csv", RESULT_COLUMNS, rows)
    write_rows(out / "summary.csv", ["dataset", "noise", "model", "runs", "ok", "rmse_median",
                                     "mae_median", "nlp_median"], summarize(rows))
    config = {"datasets": datasets, "noises": noises, "models": models, "seeds": seeds,
              "replicates": replicates, "n_test": n_test, "kfold": kfold, "csv": csv_path, "target": target,
              "standardize": standardize, "b": b, "eps": eps, "restarts": restarts, "weights": use_weights,
              "total": total, "burn_in": settings.burn_in, "thin": thin, "chains": chains}
    manifest = base_manifest("bench", config, seeds[0] if seeds else None)
    manifest["timings"] = {"grid": t_grid, "runs": t_run, "workers": n_workers}
    manifest["results"] = {"schema_version": RESULTS_SCHEMA, "columns": RESULT_COLUMNS, "rows": len(rows),
                           "failed": sum(1 for r in rows if r[-1].startswith("error"))}
    finish_manifest(out, manifest, ["results.csv", "summary.csv"])
    click.echo(f"{len(rows)} runs written to {out / 'results.csv'}")


# -- manifest ------------------------------------------------------------------

def base_manifest(command, config, seed):
    return {"command": command, "version": __version__, "results_schema_version": RESULTS_SCHEMA,
            "seed": seed, "config": config,
            "numba": os.environ.get("ROBUSTGP_NUMBA", "1")}


def finish_manifest(out, manifest, files):
    for name in files:
        p = out / name
        if not p.is_file() or p.stat().st_size == 0:
            raise OSError(f"expected output {p} is missing or empty")
    manifest["files"] = sorted(files)
    manifest["created"] = datetime.now(timezone.utc).isoformat()
    write_json(out / "manifest.json", manifest)


if __name__ == "__main__":  # pragma: no cover
    main()
