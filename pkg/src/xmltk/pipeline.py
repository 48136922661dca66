"""End-to-end commands: train, ensemble, predict, evaluate, report.

Artifacts live under ``paths.model_dir`` together with ``manifest.json``,
which records per command the configuration digest, seed, durations and the
collections whose gold labels the command read.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpus, decoder, ensemble, features, metrics, plotting, search, svm
from .config import ConfigError, PipelineConfig, with_seed

logger = logging.getLogger(__name__)

INDIVIDUAL = ("svm", "knn", "decoder")
ALL_MODELS = INDIVIDUAL + ("ensemble",)
ARTIFACTS = {
    "svm": ("svm.bin", "svm_terms.tsv"),
    "knn": ("knn.idx",),
    "decoder": ("decoder.ckpt",),
    "ensemble": ("ensemble.bin",),
}
DISPLAY = {"svm": "SVM", "knn": "BM25 k-NN", "decoder": "GRU decoder", "ensemble": "SVM-rank ensemble"}


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------- manifest

def _manifest_path(cfg: PipelineConfig) -> Path:
    return cfg.model_dir / "manifest.json"


def read_manifest(cfg: PipelineConfig) -> dict:
    p = _manifest_path(cfg)
    if not p.exists():
        return {"commands": {}}
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


def _record(cfg: PipelineConfig, name: str, entry: dict) -> None:
    man = read_manifest(cfg)
    entry = {"config_sha256": cfg.digest(), "seed": cfg.seed, **entry}
    man["commands"][name] = entry
    with open(_manifest_path(cfg), "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- data

def preflight(cfg: PipelineConfig, needs=("train", "vocab")) -> None:
    missing = []
    for name in needs:
        try:
            p = cfg.path(name)
        except ConfigError:
            missing.append(f"paths.{name} (unset)")
            continue
        if not p.exists():
            missing.append(f"paths.{name} = {p}")
    if missing:
        raise PipelineError("missing input files: " + ", ".join(missing))


def load_training(cfg: PipelineConfig):
    """Split the training collection and count label frequencies on its training side."""
    articles = corpus.load_articles(cfg.path("train"))
    vocab = corpus.load_vocabulary(cfg.path("vocab"))
    if not 0 < cfg.split.holdout_fraction < 1:
        raise PipelineError("holdout is empty: split.holdout_fraction must lie in (0, 1)")
    sp = corpus.split(articles, cfg.split.holdout_fraction, cfg.seed)
    vocab = corpus.count_frequencies(vocab, sp.train)
    return sp, vocab


def load_eval(cfg: PipelineConfig, name: str = "dev") -> list:
    return corpus.load_articles(cfg.path(name))


# ---------------------------------------------------------------- training

def _train_svm(cfg, sp, vocab, out: Path):
    f = cfg.features
    tv = features.build_term_vocabulary(sp.train, f.min_df, f.max_df_ratio, f.include_title, f.ngram_order)
    X = [features.tfidf(a, tv) for a in sp.train]
    model = svm.train_ovr(list(zip(X, [a.gold_labels for a in sp.train])), vocab, cfg.svm, dim=len(tv))
    svm.save(model, out / "svm.bin")
    tv.save_tsv(out / "svm_terms.tsv")
    return {"trained_labels": len(model.labels), "features": len(tv)}


def _train_knn(cfg, sp, vocab, out: Path):
    idx = search.build_index(sp.train, vocab, cfg.index.k1, cfg.index.b)
    search.save(idx, out / "knn.idx")
    return {"documents": idx.n_docs}


def _train_decoder(cfg, sp, vocab, out: Path):
    hist = decoder.TrainingHistory()
    model = decoder.train_decoder(sp.train, vocab, cfg.decoder, hist)
    decoder.save(model, out / "decoder.ckpt")
    hist.write_log(out / "decoder_loss.tsv")
    return {"gradcheck_max_rel_error": hist.gradcheck_error, "epoch_loss": hist.epoch_loss}


_TRAINERS = {"svm": _train_svm, "knn": _train_knn, "decoder": _train_decoder}


def cmd_train(cfg: PipelineConfig, model: str) -> Path:
    if model not in _TRAINERS:
        raise PipelineError(f"unknown model {model!r}; choose from {', '.join(INDIVIDUAL)}")
    preflight(cfg)
    cfg = with_seed(cfg)
    out = cfg.model_dir
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sp, vocab = load_training(cfg)
    t1 = time.perf_counter()
    info = _TRAINERS[model](cfg, sp, vocab, out)
    t2 = time.perf_counter()
    _record(cfg, f"train:{model}", {
        "artifacts": list(ARTIFACTS[model]),
        "durations_s": {"load": round(t1 - t0, 3), "train": round(t2 - t1, 3)},
        "gold_read": ["train[split=train]"],
        "n_train": len(sp.train),
        "n_holdout": len(sp.holdout),
        **info,
    })
    return out / ARTIFACTS[model][0]


# ---------------------------------------------------------------- loading and scoring

class Models:
    """Lazily loaded artifacts of one model directory."""

    def __init__(self, model_dir: Path):
        self.dir = Path(model_dir)
        self._cache = {}

    def missing(self, names: Sequence[str]) -> list:
        """Artifact file names absent from the directory, in model order."""
        return [a for n in names for a in ARTIFACTS[n] if not (self.dir / a).exists()]

    def get(self, name: str):
        if name not in self._cache:
            if self.missing([name]):
                raise PipelineError(f"artifacts for {name} not found in {self.dir}: {', '.join(self.missing([name]))}")
            if name == "svm":
                self._cache[name] = (svm.load(self.dir / "svm.bin"),
                                     features.TermVocabulary.load_tsv(self.dir / "svm_terms.tsv"))
            elif name == "knn":
                self._cache[name] = search.load(self.dir / "knn.idx")
            elif name == "decoder":
                self._cache[name] = decoder.load(self.dir / "decoder.ckpt")
            else:
                self._cache[name] = ensemble.load(self.dir / "ensemble.bin")
        return self._cache[name]


def model_outputs(cfg: PipelineConfig, models: Models, name: str, articles: Sequence) -> list:
    """``(predicted set, label scores)`` per article for one individual model."""
    if name == "svm":
        m, tv = models.get("svm")
        X = [features.tfidf(a, tv) for a in articles]
        sets = svm.predict_batch(m, X)
        return list(zip(sets, svm.score_batch(m, X, m.shift_units)))
    if name == "knn":
        idx = models.get("knn")
        out = []
        for a in articles:
            s = search.knn_labels(idx, a, cfg.knn)
            out.append(({c for c, v in s.items() if v > cfg.knn.label_threshold}, s))
        return out
    if name == "decoder":
        return decoder.predict_batch(models.get("decoder"), articles)
    raise PipelineError(f"unknown model {name!r}")


def all_scores(cfg, models: Models, articles, cache: dict | None = None) -> dict:
    out = {}
    for name in INDIVIDUAL:
        res = cache[name] if cache and name in cache else model_outputs(cfg, models, name, articles)
        out[name] = [s for _, s in res]
    return out


# ---------------------------------------------------------------- ensemble

def cmd_ensemble(cfg: PipelineConfig, figures: bool = True) -> Path:
    preflight(cfg, ("train", "vocab", "dev"))
    cfg = with_seed(cfg)
    models = Models(cfg.model_dir)
    missing = models.missing(INDIVIDUAL)
    if missing:
        raise PipelineError(f"missing individual model artifacts in {cfg.model_dir}: " + ", ".join(missing))
    e = cfg.ensemble
    t0 = time.perf_counter()
    sp, _ = load_training(cfg)
    holdout = sp.holdout
    if not holdout:
        raise PipelineError("holdout split is empty")
    dev = load_eval(cfg, "dev")
    if not dev:
        raise PipelineError("development set is empty")

    hold_scores = all_scores(cfg, models, holdout)
    thresholds = ensemble.calibrate_candidate_thresholds(hold_scores, holdout, band=tuple(e.band))
    cands = ensemble.candidates(hold_scores, thresholds)
    feats, stats = ensemble.batch_features(hold_scores, cands)
    golds = [a.gold_labels for a in holdout]
    rank = ensemble.train_rank(feats, golds, C=e.C, max_pairs=e.max_pairs, seed=cfg.seed,
                               decision_threshold=e.decision_threshold, stats=stats)
    rank.candidate_thresholds = thresholds
    t1 = time.perf_counter()

    dev_scores = all_scores(cfg, models, dev)
    dev_cands = ensemble.candidates(dev_scores, thresholds)
    norm_stats = (rank.norm_min, rank.norm_max) if e.normalization == "stored" else None
    dev_feats, _ = ensemble.batch_features(dev_scores, dev_cands, norm_stats)
    dev_golds = [a.gold_labels for a in dev]
    if e.tune:
        rank.decision_threshold = ensemble.tune_threshold(rank, dev_feats, dev_golds, tuple(e.interval), e.steps)
    ensemble.save(rank, cfg.model_dir / "ensemble.bin")
    t2 = time.perf_counter()

    mean_gold = corpus.mean_labels_per_article(holdout)
    per_article = {n: ensemble.predicted_count(hold_scores[n], thresholds[n]) / len(holdout) for n in INDIVIDUAL}
    recall = [len(c & g) / len(g) for c, g in zip(cands, golds) if g]
    if figures:
        grid = np.linspace(e.interval[0], e.interval[1], e.steps)
        f1 = [metrics.micro_prf(list(zip(ensemble.predict_sets(rank, dev_feats, t), dev_golds)))[2] for t in grid]
        plotting.plot_threshold_sweep(grid, f1, rank.decision_threshold, cfg.model_dir / "ensemble_threshold.png")
    _record(cfg, "ensemble", {
        "artifacts": ["ensemble.bin"],
        "durations_s": {"fit": round(t1 - t0, 3), "tune": round(t2 - t1, 3)},
        "gold_read": ["train[split=holdout]", "dev"],
        "calibrated_thresholds": thresholds,
        "holdout_mean_gold": mean_gold,
        "holdout_predicted_per_article": per_article,
        "candidate_recall": float(np.mean(recall)) if recall else 0.0,
        "weights": rank.weights.tolist(),
        "offset": rank.offset,
        "decision_threshold": rank.decision_threshold,
        "normalization": e.normalization,
        "norm_stats": {"min": rank.norm_min.tolist(), "max": rank.norm_max.tolist()},
        "n_holdout": len(holdout),
    })
    return cfg.model_dir / "ensemble.bin"


def ensemble_outputs(cfg, models: Models, articles, cache: dict | None = None) -> list:
    rank = models.get("ensemble")
    if not articles:
        return []
    scores = all_scores(cfg, models, articles, cache)
    return ensemble.predict_ensemble(rank, scores, cfg.ensemble.normalization)


def predict_all(cfg: PipelineConfig, articles, names=ALL_MODELS) -> dict:
    models = Models(cfg.model_dir)
    out = {}
    for name in names:
        if name == "ensemble":
            out[name] = ensemble_outputs(cfg, models, articles, out)
        else:
            out[name] = model_outputs(cfg, models, name, articles) if articles else []
    return out


# ---------------------------------------------------------------- predict / evaluate

def write_predictions(articles, outputs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for art, (labels, scores) in zip(articles, outputs):
            rec = {"id": art.id, "labels": sorted(labels),
                   "scores": {c: float(scores[c]) for c in sorted(labels)}}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_predictions(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["id"]] = set(rec["labels"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise PipelineError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return out


def cmd_predict(cfg: PipelineConfig, model: str, input_path, output_path) -> Path:
    if model not in ALL_MODELS:
        raise PipelineError(f"unknown model {model!r}; choose from {', '.join(ALL_MODELS)}")
    cfg = with_seed(cfg)
    models = Models(cfg.model_dir)
    needed = INDIVIDUAL + ("ensemble",) if model == "ensemble" else (model,)
    missing = models.missing(needed)
    if missing:
        raise PipelineError("missing model artifacts: " + ", ".join(missing))
    articles = corpus.load_articles(input_path)
    if model == "ensemble":
        outputs = ensemble_outputs(cfg, models, articles)
    else:
        outputs = model_outputs(cfg, models, model, articles) if articles else []
    write_predictions(articles, outputs, output_path)
    return Path(output_path)


def cmd_evaluate(pred_path, gold_path, json_path=None) -> dict:
    preds = read_predictions(pred_path)
    gold = {a.id: a.gold_labels for a in corpus.load_articles(gold_path)}
    ps = metrics.PredictionSet.from_maps(preds, gold)
    result = metrics.evaluate(ps)
    if json_path:
        metrics.write_json({"predictions": result}, json_path)
    return result


# ---------------------------------------------------------------- report

def cmd_report(cfg: PipelineConfig, split_name: str = "dev", out_dir=None, figures: bool = True) -> dict:
    """Evaluate all four systems on one collection; write tables and figures."""
    cfg = with_seed(cfg)
    out = Path(out_dir) if out_dir else cfg.model_dir / f"report_{split_name}"
    out.mkdir(parents=True, exist_ok=True)
    articles = load_eval(cfg, split_name)
    outputs = predict_all(cfg, articles)
    results = {}
    for name in ALL_MODELS:
        write_predictions(articles, outputs[name], out / f"predictions_{name}.jsonl")
        results[DISPLAY[name]] = metrics.evaluate(list(zip([o[0] for o in outputs[name]],
                                                          [a.gold_labels for a in articles])))
    with open(out / "micro.tsv", "w", encoding="utf-8") as fh:
        fh.write("model\tmuP\tmuR\tmuF1\n")
        for name, r in results.items():
            fh.write(f"{name}\t{r['muP']:.6f}\t{r['muR']:.6f}\t{r['muF1']:.6f}\n")
    with open(out / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("metric\t" + "\t".join(results) + "\n")
        for row in metrics.METRIC_ROWS:
            fh.write(row + "\t" + "\t".join(f"{results[n][row]:.6f}" for n in results) + "\n")
    metrics.write_json(results, out / "metrics.json")
    text = metrics.report(results)
    (out / "report.txt").write_text(text, encoding="utf-8")
    if figures:
        plotting.plot_micro_comparison(results, out / "micro.png")
        plotting.plot_metric_grid(results, out / "metrics.png")
        log = cfg.model_dir / "decoder_loss.tsv"
        if log.exists():
            plotting.plot_loss_curve(*plotting.read_loss_log(log), out / "decoder_loss.png")
    return results


def table2(results: dict) -> str:
    lines = [f"{'model':<20}{'µP':>9}{'µR':>9}{'µF1':>9}"]
    for name, r in results.items():
        lines.append(f"{name:<20}{r['muP']:>9.4f}{r['muR']:>9.4f}{r['muF1']:>9.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- tuning and checks

def cmd_tune_threshold(cfg: PipelineConfig, model: str = "ensemble", interval=None, steps: int | None = None) -> dict:
    """Grid-search a decision threshold on the development set.

    The ensemble artifact is rewritten with the best value; for the SVM and
    k-NN models the best value is reported and stored in the manifest.
    """
    cfg = with_seed(cfg)
    preflight(cfg, ("dev",))
    models = Models(cfg.model_dir)
    dev = load_eval(cfg, "dev")
    if not dev:
        raise PipelineError("development set is empty")
    golds = [a.gold_labels for a in dev]
    steps = steps or cfg.ensemble.steps
    if model == "ensemble":
        interval = interval or cfg.ensemble.interval
        rank = models.get("ensemble")
        scores = all_scores(cfg, models, dev)
        cands = ensemble.candidates(scores, rank.candidate_thresholds)
        stats = (rank.norm_min, rank.norm_max) if cfg.ensemble.normalization == "stored" else None
        feats, _ = ensemble.batch_features(scores, cands, stats)
        best = ensemble.tune_threshold(rank, feats, golds, tuple(interval), steps)
        rank.decision_threshold = best
        ensemble.save(rank, cfg.model_dir / "ensemble.bin")
    elif model in ("svm", "knn"):
        interval = interval or ((-1.0, 0.5) if model == "svm" else (0.1, 0.5))
        if model == "svm":
            m, tv = models.get("svm")
            M = m.decision_matrix(features.to_csr([features.tfidf(a, tv) for a in dev], m.dim), m.shift_units)
            score_rows = [dict(zip(m.labels, row)) for row in M]
        else:
            score_rows = [s for _, s in model_outputs(cfg, models, "knn", dev)]
        best, best_f = interval[0], -1.0
        for t in np.linspace(interval[0], interval[1], steps):
            sets = [{c for c, v in s.items() if v > t} for s in score_rows]
            f = metrics.micro_prf(list(zip(sets, golds)))[2]
            if f > best_f:
                best, best_f = float(t), f
    else:
        raise PipelineError(f"cannot tune model {model!r}")
    entry = {"model": model, "interval": list(interval), "steps": steps, "threshold": best,
             "gold_read": ["dev"]}
    _record(cfg, f"tune-threshold:{model}", entry)
    return entry


def cmd_ingest_check(cfg: PipelineConfig) -> dict:
    preflight(cfg)
    sp, vocab = load_training(cfg)
    info = {
        "labels": len(vocab) - 1,
        "train_articles": len(sp.train) + len(sp.holdout),
        "split": {"train": len(sp.train), "holdout": len(sp.holdout)},
        "mean_labels_per_article": corpus.mean_labels_per_article(sp.train + sp.holdout),
        "labels_at_or_above_svm_cutoff": sum(1 for c, f in vocab.frequency.items()
                                             if f >= cfg.svm.min_label_frequency),
        "articles_without_labels": sum(1 for a in sp.train + sp.holdout if not a.gold_labels),
    }
    for name in ("dev", "test"):
        try:
            p = cfg.path(name)
        except ConfigError:
            continue
        if p.exists():
            arts = corpus.load_articles(p)
            unknown = sorted({c for a in arts for c in a.gold_labels if c not in vocab})
            info[name] = {"articles": len(arts), "mean_labels_per_article": corpus.mean_labels_per_article(arts),
                          "unknown_labels": unknown}
    return info


def run_all(cfg: PipelineConfig, figures: bool = True) -> dict:
    """Train the three models and the ensemble, then report on the dev set."""
    timings = {}
    for m in INDIVIDUAL:
        t = time.perf_counter()
        cmd_train(cfg, m)
        timings[m] = time.perf_counter() - t
    t = time.perf_counter()
    cmd_ensemble(cfg, figures=figures)
    timings["ensemble"] = time.perf_counter() - t
    t = time.perf_counter()
    results = cmd_report(cfg, "dev", figures=figures)
    timings["report"] = time.perf_counter() - t
    logger.info("timings: %s", {k: round(v, 1) for k, v in timings.items()})
    return results
