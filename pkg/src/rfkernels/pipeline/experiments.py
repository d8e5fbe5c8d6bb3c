"""Experiment runners behind the command line.

Each runner writes into ``<out>/<name>/<seed>/`` and returns the summary it
stored as ``summary.json``. Outputs depend only on the configuration and the
seed; the benchmark's ``time_s`` column is only filled in when the
configuration sets ``timing = true``, which gives up that guarantee.
"""
from __future__ import annotations

import json
import math
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import forest as forest_mod
from ..forest import cross_gram, fit_forest, gram
from ..igb import LOGISTIC, SQUARED, igb_flow
from ..importance import evaluate_importance, gvi, mda, mdi
from ..kpca import kpca_fit, kpca_project, linear_gram, linear_probe, rbf_gram, silhouette
from ..rkhs import effective_sample_size
from ..scenarios import Scenario, generate_scenario, minmax_scale
from ..trees import Dataset, GrowConfig
from .synthetic import generate
from .tables import RawTable, TableSpec, load_csv, preprocess_fit_transform, table_from_arrays


def _sub_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(seed), *key]).generate_state(1)[0])


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _write_json(path: Path, obj) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


def _clean(v):
    """JSON-safe copy: NaN becomes null, tuples become lists."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return None if math.isnan(float(v)) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def output_dir(out_root, name: str, seed: int) -> Path:
    d = Path(out_root) / name / str(seed)
    d.mkdir(parents=True, exist_ok=True)
    return d


def forest_variant(name: str, p: int, task: str = "classify") -> GrowConfig:
    """Grow settings of the named forest family.

    ``ET`` Extra-Trees, ``ET5`` Extra-Trees of depth 5, ``BRF`` greedy trees
    on bootstrap samples, ``Unif`` Extra-Trees looking at one random axis per
    split (a data-light, nearly uniform partition).
    """
    mf = p if task == "regress" else max(1, int(math.isqrt(p)))
    common = dict(threshold_support="samples", stop_on_pure=True)
    if name == "ET":
        return GrowConfig("extra_trees", max_features=mf, **common)
    if name == "ET5":
        return GrowConfig("extra_trees", max_depth=5, max_features=mf, **common)
    if name == "BRF":
        return GrowConfig("breiman_greedy", max_features=mf, bootstrap=True)
    if name == "Unif":
        return GrowConfig("extra_trees", max_features=1, **common)
    raise ValueError(f"unknown forest variant {name!r}")


def load_raw(cfg: dict, seed: int) -> RawTable:
    """Raw table from the configured CSV or synthetic generator."""
    if cfg.get("dataset"):
        kinds = {c: "categorical" for c in cfg.get("categorical", ())}
        spec = TableSpec(cfg["target"], cfg["task"], kinds)
        return load_csv(cfg["dataset"], spec)
    X, y, task = generate(cfg["generator"], cfg["n"], rng=_sub_seed(seed, 1),
                          noise=cfg.get("noise"), p=cfg.get("p", 5))
    return table_from_arrays(X, y, task)


def split_train_test(raw: RawTable, test_fraction: float, seed: int) -> tuple[RawTable, RawTable]:
    perm = np.random.default_rng(_sub_seed(seed, 2)).permutation(raw.n)
    n_test = int(round(test_fraction * raw.n))
    if n_test < 1 or n_test >= raw.n:
        raise ValueError("test split would be empty or take every row")
    return raw.take(np.sort(perm[n_test:])), raw.take(np.sort(perm[:n_test]))


def _prepared(cfg: dict, seed: int, split: bool = True):
    raw = load_raw(cfg, seed)
    if split:
        tr, te = split_train_test(raw, cfg["test_fraction"], seed)
    else:
        tr, te = raw, raw
    train, test, state = preprocess_fit_transform(tr, te)
    return train, test, raw.task, state


def run_kpca_experiment(cfg: dict, seed: int, out_root, threads: int = 1) -> dict:
    """Kernel PCA comparison on a 70/30 split (by default).

    Every kernel is fitted on the train split; silhouette and the linear
    probe only ever see test projections.
    """
    train, test, task, state = _prepared(cfg, seed)
    q = cfg["components"]
    methods: list[tuple[str, str, str, Callable[[], tuple[np.ndarray, np.ndarray]], Any]] = []
    forests = {}
    for kernel in cfg["kernels"]:
        if kernel == "linear":
            methods.append(("linear", "linear", "", lambda: (linear_gram(train.X), linear_gram(test.X, train.X)), None))
        elif kernel == "rbf":
            methods.append(("rbf", "rbf", "", lambda: (rbf_gram(train.X), rbf_gram(test.X, train.X)), None))
        else:
            for fv in cfg["forests"]:
                if fv not in forests:
                    gc = forest_variant(fv, train.p, task)
                    fseed = _sub_seed(seed, 3, list(cfg["forests"]).index(fv))
                    forests[fv] = fit_forest(train, None, gc, cfg["M"], seed=fseed, threads=threads)
                f = forests[fv]
                methods.append((f"{kernel}-{fv}", kernel, fv,
                                lambda f=f, kernel=kernel: (gram(f, None, kernel).matrix,
                                                            cross_gram(f, test.X, train.X, kernel)), f))
    neff = {fv: 100.0 * effective_sample_size(f)[1] / train.n for fv, f in forests.items()}
    rows, score_rows = [], []
    baseline = None
    results = []
    for name, kernel, fv, build, _ in methods:
        Ktr, Kte = build()
        model = kpca_fit(Ktr, q)
        Str = model.train_scores
        Ste = kpca_project(model, Kte)
        sil = silhouette(Ste, test.y) if task == "classify" and Ste.shape[1] > 0 else None
        rep = linear_probe(Str, train.y, Ste, test.y, task)
        results.append((name, kernel, fv, sil, rep.probe_metric, Ste))
        if kernel == "linear" and task == "regress":
            baseline = rep.probe_metric
    for name, kernel, fv, sil, metric, Ste in results:
        ri = None
        if task == "regress" and baseline is not None and baseline > 0:
            ri = 100.0 * (metric - baseline) / baseline
        rows.append(dict(method=name, kernel=kernel, forest=fv, silhouette=sil,
                         probe_metric=metric, relative_improvement=ri,
                         n_eff_pct=neff.get(fv)))
        for i in range(Ste.shape[0]):
            c1 = Ste[i, 0] if Ste.shape[1] > 0 else None
            c2 = Ste[i, 1] if Ste.shape[1] > 1 else None
            score_rows.append([name, _fmt(c1), _fmt(c2), _fmt(test.y[i])])
    d = output_dir(out_root, cfg["name"], seed)
    _write_csv(d / "scores.csv", ["method", "component_1", "component_2", "label"], score_rows)
    _write_csv(d / "table.csv",
               ["method", "kernel", "forest", "silhouette", "probe_metric", "relative_improvement", "n_eff_pct"],
               [[r["method"], r["kernel"], r["forest"], _fmt(r["silhouette"]), _fmt(r["probe_metric"]),
                 _fmt(r["relative_improvement"]), _fmt(r["n_eff_pct"])] for r in rows])
    summary = _clean(dict(experiment="kpca", seed=seed, task=task, n_train=train.n, n_test=test.n,
                          p=train.p, features=state.feature_names(), config=cfg, rows=rows))
    _write_json(d / "summary.json", summary)
    return summary


def benchmark_forest_config(p: int, min_samples_leaf: int = 5) -> GrowConfig:
    """Extra-Trees used for the importance benchmark: ``floor(sqrt p)`` axes per split."""
    return GrowConfig("extra_trees", max_features=max(1, math.isqrt(p)),
                      min_samples_leaf=min_samples_leaf, threshold_support="samples")


def benchmark_replicate(scenario_id: str, replicate: int, seed: int, n: int = 500, M: int = 500,
                        min_samples_leaf: int = 5, n_permutations: int = 5, threads: int = 1) -> dict:
    """One replicate: data, forest, three importance vectors and their metrics."""
    rseed = _sub_seed(seed, 10, replicate)
    sc = Scenario(scenario_id, n=n, seed=rseed)
    X, y, S = generate_scenario(sc)
    data = Dataset(minmax_scale(X), y)
    f = fit_forest(data, None, benchmark_forest_config(sc.p, min_samples_leaf), M,
                   seed=_sub_seed(rseed, 11), threads=threads)
    reports = {
        "GVI": gvi(f),
        "MDI": mdi(f),
        "MDA": mda(f, n_permutations=n_permutations, rng=_sub_seed(rseed, 12)),
    }
    out = {}
    for method, rep in reports.items():
        pk, sep, rho = evaluate_importance(rep.scores, S, reports["MDA"].scores)
        out[method] = dict(precision_k=pk, separation=sep, spearman_vs_mda=rho,
                           time_s=rep.elapsed_seconds, scores=rep.scores)
    return out


def run_gvi_benchmark(scenarios, R: int = 20, seed: int = 0, n: int = 500, M: int = 500,
                      min_samples_leaf: int = 5, n_permutations: int = 5, threads: int = 1,
                      progress: Callable[[str, int], None] | None = None) -> tuple[list[dict], list[dict]]:
    """Mean metrics per (scenario, method) over ``R`` replicates.

    Returns the aggregated rows and the per-replicate records.
    """
    rows, records = [], []
    for sid in scenarios:
        per = {m: [] for m in ("GVI", "MDI", "MDA")}
        for r in range(R):
            rep = benchmark_replicate(sid, r, seed, n, M, min_samples_leaf, n_permutations, threads)
            for m, v in rep.items():
                per[m].append(v)
                records.append(dict(scenario=sid, replicate=r, method=m,
                                    **{k: v[k] for k in ("precision_k", "separation", "spearman_vs_mda", "time_s")}))
            if progress is not None:
                progress(sid, r)
        for m in ("GVI", "MDI", "MDA"):
            vals = per[m]
            rho = [v["spearman_vs_mda"] for v in vals if not math.isnan(v["spearman_vs_mda"])]
            rows.append(dict(
                scenario=sid, method=m,
                precision_k=float(np.mean([v["precision_k"] for v in vals])),
                separation=float(np.mean([v["separation"] for v in vals])),
                spearman_vs_mda=float(np.mean(rho)) if rho else float("nan"),
                time_s=float(np.mean([v["time_s"] for v in vals])),
            ))
    return rows, records


TABLE1_COLUMNS = ["scenario", "method", "precision_k", "separation", "spearman_vs_mda", "time_s"]


def run_gvi_experiment(cfg: dict, seed: int, out_root, threads: int = 1) -> dict:
    rows, records = run_gvi_benchmark(cfg["scenarios"], cfg["replicates"], seed, cfg["n"], cfg["M"],
                                      cfg["min_samples_leaf"], cfg["n_permutations"], threads)
    d = output_dir(out_root, cfg["name"], seed)
    if not cfg.get("timing"):
        # wall-clock times differ between runs; leave them out unless asked for
        rows = [dict(r, time_s=None) for r in rows]
    _write_csv(d / "table.csv", TABLE1_COLUMNS,
               [[r["scenario"], r["method"]] + [_fmt(r[k]) for k in TABLE1_COLUMNS[2:]] for r in rows])
    _write_csv(d / "scores.csv", ["scenario", "replicate", "method", "precision_k", "separation", "spearman_vs_mda"],
               [[r["scenario"], str(r["replicate"]), r["method"], _fmt(r["precision_k"]),
                 _fmt(r["separation"]), _fmt(r["spearman_vs_mda"])] for r in records])
    deterministic = [{k: v for k, v in r.items() if k != "time_s"} for r in rows]
    summary = _clean(dict(experiment="gvi-bench", seed=seed, config=cfg, rows=deterministic))
    _write_json(d / "summary.json", summary)
    return summary


def run_igb_experiment(cfg: dict, seed: int, out_root, threads: int = 1) -> dict:
    train, _, task, _ = _prepared(cfg, seed, split=False)
    loss_name = cfg["loss"] or ("logistic" if task == "classify" else "squared")
    loss = LOGISTIC if loss_name == "logistic" else SQUARED
    gc = GrowConfig("softmax", max_depth=cfg["depth"], n_candidates=cfg["K"], beta=cfg["beta"],
                    filter_candidates=False)
    trace = igb_flow(loss, train, None, gc, lam=cfg["lambda"], T_end=cfg["T_end"],
                     M_per_step=cfg["M_per_step"], seed=_sub_seed(seed, 4), mode=cfg["mode"],
                     threads=threads)
    d = output_dir(out_root, cfg["name"], seed)
    trace.to_csv(d / "table.csv")
    summary = _clean(dict(experiment="igb-trace", seed=seed, loss=loss_name, n=train.n,
                          n_steps=trace.n_steps, initial_risk=trace.risks[0], final_risk=trace.risks[-1],
                          descent_violations=len(trace.descent_violations()), config=cfg))
    _write_json(d / "summary.json", summary)
    return summary


def run_gram_experiment(cfg: dict, seed: int, out_root, threads: int = 1) -> dict:
    train, _, task, _ = _prepared(cfg, seed, split=False)
    gc = forest_variant(cfg["forest"], train.p, task)
    f = fit_forest(train, None, gc, cfg["M"], seed=_sub_seed(seed, 5), threads=threads)
    bundle = gram(f, None, cfg["kernel"])
    bundle = forest_mod.GramBundle(bundle.matrix, bundle.kernel_tag, bundle.points,
                                   bundle.forest_fingerprint, seed, bundle.M)
    d = output_dir(out_root, cfg["name"], seed)
    bundle.to_csv(d / "table.csv")
    K = bundle.matrix
    summary = _clean(dict(experiment="gram", seed=seed, kernel=cfg["kernel"], forest=cfg["forest"],
                          M=cfg["M"], s=bundle.s, min_eigenvalue=float(np.linalg.eigvalsh(K).min()),
                          max_entry=float(K.max()), row_mean_min=float(K.mean(axis=1).min()),
                          row_mean_max=float(K.mean(axis=1).max()), config=cfg))
    _write_json(d / "summary.json", summary)
    return summary


def run_neff_experiment(cfg: dict, seed: int, out_root, threads: int = 1) -> dict:
    train, _, task, _ = _prepared(cfg, seed, split=False)
    rows = []
    for k, fv in enumerate(cfg["forests"]):
        f = fit_forest(train, None, forest_variant(fv, train.p, task), cfg["M"],
                       seed=_sub_seed(seed, 6, k), threads=threads)
        per, glob = effective_sample_size(f)
        rows.append(dict(forest=fv, n_eff=glob, n_eff_pct=100.0 * glob / train.n,
                         per_point_min=float(per.min()), per_point_median=float(np.median(per)),
                         per_point_max=float(per.max())))
    d = output_dir(out_root, cfg["name"], seed)
    cols = ["forest", "n_eff", "n_eff_pct", "per_point_min", "per_point_median", "per_point_max"]
    _write_csv(d / "table.csv", cols, [[r["forest"]] + [_fmt(r[c]) for c in cols[1:]] for r in rows])
    summary = _clean(dict(experiment="neff", seed=seed, n=train.n, rows=rows, config=cfg))
    _write_json(d / "summary.json", summary)
    return summary


RUNNERS = {
    "kpca": run_kpca_experiment,
    "gvi-bench": run_gvi_experiment,
    "igb-trace": run_igb_experiment,
    "gram": run_gram_experiment,
    "neff": run_neff_experiment,
}
