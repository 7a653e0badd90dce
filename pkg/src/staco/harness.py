"""Experiment runner: repeated training runs, ablations and evaluation.

Runs are executed by a bounded worker pool; all file output happens on the
calling thread, one file at a time, through atomic replace.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import core, optim
from .config import ExperimentConfig
from .core import ConfigError, TPAUCProblem
from .data import (Dataset, load_libsvm, split_head_tail, subsample_positives, summarize,
                   synth_gaussian)
from .metrics import evaluate, rate_key, roc_points
from .scorers import LinearScorer, MlpScorer, Scorer, from_json

log = logging.getLogger("staco")

_TRAINERS = {
    "staco1": optim.staco1_train,
    "staco2": optim.staco2_train,
    "ce": optim.baseline_ce_train,
    "auc_pairwise": optim.baseline_auc_pairwise_train,
}


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_data(ec: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)`` as described by the ``[data]`` section."""
    d = ec.data
    if ec.synth is not None:
        sy = ec.synth
        args = (sy["n_pos"], sy["n_neg"], sy["d"], float(sy.get("separation", 3.0)))
        seed = sy.get("seed", 0)
        train = synth_gaussian(*args, seed=seed)
        test = synth_gaussian(*args, seed=sy.get("test_seed", seed + 1))
    else:
        nf = d.get("n_features")
        train = load_libsvm(ec.resolve(d["train"]), nf)
        if "test" in d:
            test = load_libsvm(ec.resolve(d["test"]), nf or train.d)
            if test.d != train.d:
                raise ConfigError(f"data.test: {test.d} features, train has {train.d}")
        else:
            train, test = split_head_tail(train, float(d.get("train_frac", 0.8)))
    keep = float(d.get("keep_frac", 1.0))
    if keep < 1.0:
        train = subsample_positives(train, keep, d.get("seed", 0))
    return train, test


def make_scorer(ec: ExperimentConfig, d: int, seed: int) -> Scorer:
    m = ec.model
    if m["kind"] == "mlp":
        return MlpScorer.init_random(d, m["hidden"], seed=seed, scale=float(m["init_scale"]))
    return LinearScorer(d, bias=m["bias"])


def train_one(ec: ExperimentConfig, train: Dataset, seed: int, **overrides):
    """Train one run; returns ``(scorer, trace)``."""
    cfg = ec.optim.replace(seed=seed, **overrides)
    scorer0 = make_scorer(ec, train.d, seed)
    fn = _TRAINERS[ec.method]
    if ec.method in ("staco1", "staco2"):
        res = fn(train, cfg, scorer0, backend=ec.backend)
    else:
        res = fn(train, cfg, scorer0)
    return res.scorer, res.trace


def _run_metrics(ec, train, test, scorer) -> dict:
    out = {}
    for name, ds in (("train", train), ("test", test)):
        rep = evaluate(scorer.scores(ds.features), ds.labels, ec.rates)
        out[f"{name}_auc"] = rep.auc
        for k, v in rep.tpauc.items():
            out[f"{name}_tpauc_{k}"] = v
    prob = TPAUCProblem(train, ec.optim.theta0, ec.optim.theta1, ec.optim.loss)
    out["train_obj_eq1"] = core.exact_objective_eq1(prob, scorer)
    return out


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _check_train(ec: ExperimentConfig, train: Dataset):
    train.require_both_classes()
    ec.optim.validate(train.n_pos, train.n_neg)


def run_experiment(ec: ExperimentConfig, out_dir, seeds=None, workers=None) -> dict:
    """Train once per seed; write ``trace_<seed>.csv``, ``params_<seed>.json`` and ``summary.json``."""
    out_dir = Path(out_dir)
    seeds = list(seeds if seeds is not None else ec.seeds)
    train, test = load_data(ec)
    _check_train(ec, train)
    info = summarize(train)
    log.info("train: n=%d d=%d n+=%d n-=%d", info.n, info.d, info.n_pos, info.n_neg)

    def job(seed):
        scorer, trace = train_one(ec, train, seed)
        log.info("seed %d done", seed)
        return seed, scorer, trace, _run_metrics(ec, train, test, scorer)

    results = _pool_map(job, seeds, workers or ec.workers)
    runs = []
    for seed, scorer, trace, mets in results:
        atomic_write(out_dir / f"trace_{seed}.csv", trace.to_csv())
        atomic_write(out_dir / f"params_{seed}.json", scorer.to_json())
        runs.append({"seed": seed, **mets})
    summary = {
        "method": ec.method,
        "model": ec.model["kind"],
        "seeds": seeds,
        "metrics": {
            k: {"mean": float(np.mean([r[k] for r in runs])),
                "std": float(np.std([r[k] for r in runs]))}
            for k in runs[0] if k != "seed"
        },
        "runs": runs,
    }
    atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def iters_to_target(trace, target: float) -> float:
    """First recorded iteration whose exact objective is <= target, else inf."""
    for r in trace:
        if r.obj_eq1 <= target:
            return float(r.iter)
    return math.inf


def resolve_target(ec: ExperimentConfig, train: Dataset) -> float:
    ab = ec.ablate
    if "target" in ab:
        return float(ab["target"])
    if "target_factor" in ab:
        if ec.model["kind"] != "linear" or ec.model["bias"]:
            raise ConfigError("ablate.target_factor: reference optimum needs a bias-free linear model")
        prob = TPAUCProblem(train, ec.optim.theta0, ec.optim.theta1, ec.optim.loss)
        _, ref = optim.full_batch_subgradient(prob, train.d, iters=int(ab.get("reference_iters", 20_000)))
        log.info("reference objective %.6g", ref)
        return float(ab["target_factor"]) * ref
    raise ConfigError("ablate: target or target_factor required for ablate-batch")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def ablate_batch(ec: ExperimentConfig, out_dir, values=None, seeds=None, target=None) -> list:
    """Median iterations-to-target per negative batch size B; writes ``ablate_batch.csv``."""
    if values is None:
        values = ec.ablate.get("b_values", [4, 16, 64])
    values = [int(v) for v in values]
    if not values:
        raise ConfigError("ablate.b_values: empty list")
    seeds = list(seeds if seeds is not None else ec.seeds)
    train, _ = load_data(ec)
    _check_train(ec, train)
    for b in values:
        ec.optim.replace(B=b).validate(train.n_pos, train.n_neg)
    target = resolve_target(ec, train) if target is None else float(target)
    jobs = [(b, s) for b in values for s in seeds]
    hits = _pool_map(lambda j: iters_to_target(train_one(ec, train, j[1], B=j[0])[1], target),
                     jobs, ec.workers)
    rows = []
    for k, b in enumerate(values):
        med = float(np.median(hits[k * len(seeds):(k + 1) * len(seeds)]))
        if math.isinf(med):
            log.warning("B=%d: median run never reached target %.6g", b, target)
        rows.append((b, med))
    atomic_write(Path(out_dir) / "ablate_batch.csv", _csv(["B", "iters_to_target_median"], rows))
    return rows


def ablate_gamma(ec: ExperimentConfig, out_dir, values=None, seeds=None) -> list:
    """STACO2 final exact objective and test TPAUC per gamma; writes ``ablate_gamma.csv``.

    Values are means over seeds; the test TPAUC uses the first evaluation rate pair.
    """
    if values is None:
        values = ec.ablate.get("gamma_values", [300.0, 500.0, 1000.0, 1e7])
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("ablate.gamma_values: empty list")
    if not all(g > 0 for g in values):
        raise ConfigError("ablate.gamma_values: gamma must be positive")
    seeds = list(seeds if seeds is not None else ec.seeds)
    ec2 = ExperimentConfig(**{**ec.__dict__, "method": "staco2"})
    train, test = load_data(ec2)
    _check_train(ec2, train)
    for g in values:
        ec2.optim.replace(gamma=g).validate(train.n_pos, train.n_neg)
    prob = TPAUCProblem(train, ec.optim.theta0, ec.optim.theta1, ec.optim.loss)
    t0, t1 = ec.rates[0]

    def job(j):
        scorer, _ = train_one(ec2, train, j[1], gamma=j[0])
        rep = evaluate(scorer.scores(test.features), test.labels, [(t0, t1)])
        return core.exact_objective_eq1(prob, scorer), rep.tpauc[rate_key(t0, t1)]

    jobs = [(g, s) for g in values for s in seeds]
    res = _pool_map(job, jobs, ec.workers)
    rows = []
    for k, g in enumerate(values):
        chunk = np.array(res[k * len(seeds):(k + 1) * len(seeds)])
        rows.append((g, float(chunk[:, 0].mean()), float(chunk[:, 1].mean())))
    atomic_write(Path(out_dir) / "ablate_gamma.csv", _csv(["gamma", "final_obj", "final_tpauc"],
                                                          [(repr(g), repr(o), repr(t)) for g, o, t in rows]))
    return rows


def evaluate_params(ec: ExperimentConfig, params_path, split: str = "test"):
    """Metric report of a saved parameter snapshot on the configured split.

    The returned report carries the ROC vertices in an extra ``roc`` attribute.
    """
    scorer = from_json(Path(params_path).read_text())
    train, test = load_data(ec)
    ds = test if split == "test" else train
    if scorer.d != ds.d:
        raise ConfigError(f"parameter snapshot has d={scorer.d}, data has d={ds.d}")
    scores = scorer.scores(ds.features)
    rep = evaluate(scores, ds.labels, ec.rates)
    rep.roc = roc_points(scores, ds.labels)
    return rep
