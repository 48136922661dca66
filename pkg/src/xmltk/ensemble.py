"""Pairwise ranking-SVM ensemble over the scores of three base models.

Every (article, candidate label) pair gets seven features: the three
min-max normalized model scores, their pairwise products and their full
product. A bias-free linear ranker is fit on relevant-minus-irrelevant
feature differences with the same squared-hinge dual coordinate descent
used by the one-vs-rest SVM.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import dcd
from .metrics import micro_prf

logger = logging.getLogger(__name__)

MODELS = ("svm", "knn", "decoder")
N_FEATURES = 7
MAGIC = b"XMLTKRNK"
VERSION = 1


@dataclass
class RankModel:
    weights: np.ndarray
    decision_threshold: float = -0.0233
    C: float = 0.1
    # score origin fitted on the training holdout; decisions compare w.f - offset
    offset: float = 0.0
    norm_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    norm_max: np.ndarray = field(default_factory=lambda: np.ones(3))
    candidate_thresholds: dict = field(default_factory=dict)

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features) @ self.weights - self.offset


# ---------------------------------------------------------------- candidates

def predicted_count(scores: Sequence[Mapping], threshold: float) -> int:
    return sum(sum(1 for v in s.values() if v > threshold) for s in scores)


def calibrate_threshold(scores: Sequence[Mapping], mean_gold: float, current: float | None = None,
                        band: tuple = (1.9, 2.1), factor: float = 2.0) -> float:
    """Threshold giving about ``factor`` times ``mean_gold`` predictions per article.

    A ``current`` threshold already inside ``band`` is returned unchanged.
    """
    n = len(scores)
    if n == 0:
        raise ValueError("no articles to calibrate on")
    lo, hi = band[0] * mean_gold, band[1] * mean_gold
    if current is not None and lo <= predicted_count(scores, current) / n <= hi:
        return current
    pool = np.sort(np.fromiter((v for s in scores for v in s.values()), dtype=np.float64))[::-1]
    target = int(round(factor * mean_gold * n))
    if pool.size == 0:
        logger.warning("model produced no scores; candidate target unreachable")
        return float("inf")
    if target >= pool.size:
        thr = float(np.nextafter(pool[-1], -np.inf))
        logger.warning("only %d scores available for a target of %d; using the minimal threshold",
                       pool.size, target)
        return thr
    # count(t) = #(pool > t) is non-increasing in t: bisect over the sorted values
    asc = pool[::-1]
    best = None
    left, right = 0, asc.size - 1
    while left <= right:
        mid = (left + right) // 2
        cnt = asc.size - np.searchsorted(asc, asc[mid], side="right")
        if best is None or abs(cnt - target) < abs(best[1] - target):
            best = (asc[mid], cnt)
        if cnt > target:
            left = mid + 1
        elif cnt < target:
            right = mid - 1
        else:
            break
    thr, cnt = best
    if not lo <= cnt / n <= hi:
        logger.warning("closest achievable mean is %.3f labels per article (band %.3f-%.3f)", cnt / n, lo, hi)
    return float(thr)


def calibrate_candidate_thresholds(model_scores: Mapping[str, Sequence[Mapping]], articles: Sequence,
                                   current: Mapping | None = None, band: tuple = (1.9, 2.1)) -> dict:
    """Per-model thresholds so each model predicts about twice the gold labels."""
    if not articles:
        raise ValueError("no articles to calibrate on")
    mean_gold = sum(len(a.gold_labels) for a in articles) / len(articles)
    current = current or {}
    return {name: calibrate_threshold(sc, mean_gold, current.get(name), band)
            for name, sc in model_scores.items()}


def candidates(model_scores: Mapping[str, Sequence[Mapping]], thresholds: Mapping) -> list[set]:
    """Union over models of the labels scoring above each model's threshold."""
    n = len(next(iter(model_scores.values())))
    out = [set() for _ in range(n)]
    for name, sc in model_scores.items():
        thr = thresholds[name]
        for i, s in enumerate(sc):
            out[i].update(c for c, v in s.items() if v > thr)
    return out


# ---------------------------------------------------------------- features

def normalize_scores(values: Sequence[float], lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Min-max scaling to [0, 1]; a constant pool maps to 0.5.

    With explicit ``lo``/``hi`` the result is clipped into [0, 1].
    """
    v = np.asarray(values, dtype=np.float64)
    if lo is None:
        lo = float(v.min()) if v.size else 0.0
        hi = float(v.max()) if v.size else 0.0
    if hi <= lo:
        return np.full(v.shape, 0.5)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def build_features(s_svm: float, s_knn: float, s_dec: float) -> np.ndarray:
    a, b, c = s_svm, s_knn, s_dec
    return np.array([a, b, c, a * b, a * c, b * c, a * b * c])


def batch_features(model_scores: Mapping[str, Sequence[Mapping]], cands: Sequence[set],
                   stats: tuple | None = None) -> tuple[list, tuple]:
    """Feature matrix per article over its sorted candidates.

    Returns ``(per_article, (mins, maxs))`` where ``per_article`` holds
    ``(labels, (k, 7) array)`` and the statistics are those used for scaling:
    computed from this batch's candidate pool unless ``stats`` is given.
    A label missing from the SVM scores (no classifier trained) takes the
    larger of its normalized k-NN and decoder scores; other missing scores are 0.
    """
    mins, maxs = np.zeros(3), np.ones(3)
    raw = {}
    for j, name in enumerate(MODELS):
        sc = model_scores[name]
        pool = [sc[i][c] for i, cs in enumerate(cands) for c in cs if c in sc[i]]
        if stats is None:
            mins[j] = min(pool) if pool else 0.0
            maxs[j] = max(pool) if pool else 0.0
        else:
            mins[j], maxs[j] = stats[0][j], stats[1][j]
        raw[name] = sc
    out = []
    for i, cs in enumerate(cands):
        labels = sorted(cs)
        cols, present = [], []
        for j, name in enumerate(MODELS):
            present.append(np.array([c in raw[name][i] for c in labels], dtype=bool))
            vals = np.array([raw[name][i].get(c, 0.0) for c in labels])
            norm = normalize_scores(vals, mins[j], maxs[j]) if labels else vals
            cols.append(np.where(present[j], norm, 0.0))
        # the SVM has no classifier for rare labels: borrow the stronger of the other two votes
        if labels:
            cols[0] = np.where(present[0], cols[0], np.maximum(cols[1], cols[2]))
        F = np.zeros((len(labels), N_FEATURES))
        if labels:
            a, b, c = cols
            F = np.column_stack([a, b, c, a * b, a * c, b * c, a * b * c])
        out.append((labels, F))
    return out, (mins, maxs)


# ---------------------------------------------------------------- ranker

def pair_differences(feats: Sequence, golds: Sequence, max_pairs: int = 50, seed: int = 0) -> np.ndarray:
    """Relevant-minus-irrelevant feature differences, at most ``max_pairs`` per article."""
    rng = np.random.default_rng(seed)
    rows = []
    for (labels, F), gold in zip(feats, golds):
        rel = [k for k, c in enumerate(labels) if c in gold]
        irr = [k for k, c in enumerate(labels) if c not in gold]
        if not rel or not irr:
            continue
        pairs = [(r, s) for r in rel for s in irr]
        if len(pairs) > max_pairs:
            pick = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
            pairs = [pairs[k] for k in pick]
        rows.extend(F[r] - F[s] for r, s in pairs)
    return np.array(rows).reshape(-1, N_FEATURES)


def fit_ranker(diffs: np.ndarray, C: float = 0.1, tol: float = 1e-4, max_iter: int = 1000, seed: int = 0) -> np.ndarray:
    if diffs.shape[0] == 0:
        logger.warning("no training pairs; returning a zero-weight ranker")
        return np.zeros(N_FEATURES)
    w, _ = dcd.solve(diffs, np.ones(diffs.shape[0]), C=C, tol=tol, max_iter=max_iter, seed=seed)
    return w


def best_cut(scores: np.ndarray, is_gold: np.ndarray, n_gold: int) -> float:
    """Cut on ``scores`` maximizing micro F1 when predicting ``score > cut``."""
    if scores.size == 0 or np.all(scores == scores[0]):
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s, g = scores[order], is_gold[order].astype(np.int64)
    tp = np.cumsum(g)
    k = np.arange(1, s.size + 1)
    f1 = 2 * tp / (k + n_gold)
    # a cut can only fall between distinct scores
    valid = np.append(s[1:] < s[:-1], True)
    f1 = np.where(valid, f1, -1.0)
    j = int(np.argmax(f1))
    return float((s[j] + s[j + 1]) / 2) if j + 1 < s.size else float(s[j] - 1.0)


def train_rank(feats: Sequence, golds: Sequence, C: float = 0.1, max_pairs: int = 50, seed: int = 0,
               decision_threshold: float = -0.0233, stats: tuple | None = None) -> RankModel:
    """Fit the ranker on holdout candidates and set its score origin."""
    diffs = pair_differences(feats, golds, max_pairs, seed)
    w = fit_ranker(diffs, C=C, seed=seed)
    model = RankModel(weights=w, decision_threshold=decision_threshold, C=C)
    if stats is not None:
        model.norm_min, model.norm_max = np.asarray(stats[0]), np.asarray(stats[1])
    if np.any(w):
        scores = np.concatenate([F @ w for _, F in feats]) if feats else np.zeros(0)
        is_gold = np.array([c in g for (labels, _), g in zip(feats, golds) for c in labels], dtype=bool)
        model.offset = best_cut(scores, is_gold, sum(len(g) for g in golds))
    return model


def predict_sets(model: RankModel, feats: Sequence, threshold: float | None = None) -> list[set]:
    thr = model.decision_threshold if threshold is None else threshold
    out = []
    for labels, F in feats:
        if not labels:
            out.append(set())
            continue
        d = model.decision(F)
        out.append({c for c, v in zip(labels, d) if v > thr})
    return out


def tune_threshold(model: RankModel, feats: Sequence, golds: Sequence, interval: tuple = (-0.5, 0.5),
                   steps: int = 201) -> float:
    """Grid value maximizing micro F1; ties go to the smaller threshold."""
    if not golds:
        raise ValueError("empty development set")
    grid = np.linspace(interval[0], interval[1], steps)
    best_t, best_f = grid[0], -1.0
    for t in grid:
        f = micro_prf(list(zip(predict_sets(model, feats, t), golds)))[2]
        if f > best_f:
            best_t, best_f = t, f
    return float(best_t)


def predict_ensemble(model: RankModel, model_scores: Mapping[str, Sequence[Mapping]],
                     normalization: str = "batch") -> list[tuple[set, dict]]:
    """Ensemble labels and decision scores for a batch of articles."""
    cands = candidates(model_scores, model.candidate_thresholds)
    stats = (model.norm_min, model.norm_max) if normalization == "stored" else None
    feats, _ = batch_features(model_scores, cands, stats)
    out = []
    for labels, F in feats:
        d = model.decision(F) if labels else np.zeros(0)
        scores = dict(zip(labels, d.tolist()))
        out.append(({c for c, v in scores.items() if v > model.decision_threshold}, scores))
    return out


def save(model: RankModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<7d", *np.asarray(model.weights, dtype=np.float64)))
        fh.write(struct.pack("<3d", model.decision_threshold, model.C, model.offset))
        fh.write(struct.pack("<3d", *model.norm_min))
        fh.write(struct.pack("<3d", *model.norm_max))
        fh.write(struct.pack("<I", len(model.candidate_thresholds)))
        for name in sorted(model.candidate_thresholds):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<d", model.candidate_thresholds[name]))


def load(path) -> RankModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a rank model file")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported rank model version {version}")
    off = 12
    w = np.array(struct.unpack_from("<7d", buf, off))
    off += 56
    thr, C, offset = struct.unpack_from("<3d", buf, off)
    off += 24
    mins = np.array(struct.unpack_from("<3d", buf, off))
    off += 24
    maxs = np.array(struct.unpack_from("<3d", buf, off))
    off += 24
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    th = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode("utf-8")
        off += ln
        (th[name],) = struct.unpack_from("<d", buf, off)
        off += 8
    return RankModel(w, thr, C, offset, mins, maxs, th)
