"""Micro, macro and example-based precision / recall / F1 for label sets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

METRIC_ROWS = ("muF1", "muP", "muR", "MaF1", "MaP", "MaR", "EbF1", "EbP", "EbR")
_DISPLAY = {"muF1": "µF1", "muP": "µP", "muR": "µR"}
MACRO_CONVENTION = "macro averages run over labels present in gold or predictions"


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    ids: tuple
    predicted: tuple  # frozensets, aligned with ids
    gold: tuple

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "PredictionSet":
        pairs = list(pairs)
        return cls(tuple(range(len(pairs))),
                   tuple(frozenset(p) for p, _ in pairs),
                   tuple(frozenset(g) for _, g in pairs))

    @classmethod
    def from_maps(cls, predicted: Mapping, gold: Mapping) -> "PredictionSet":
        missing_pred = sorted(set(gold) - set(predicted))
        missing_gold = sorted(set(predicted) - set(gold))
        if missing_pred or missing_gold:
            raise MetricsError(
                f"article ids differ: missing predictions for {missing_pred}, missing gold for {missing_gold}")
        ids = sorted(gold)
        return cls(tuple(ids), tuple(frozenset(predicted[i]) for i in ids), tuple(frozenset(gold[i]) for i in ids))

    def __len__(self) -> int:
        return len(self.ids)


def _as_set(preds) -> PredictionSet:
    ps = preds if isinstance(preds, PredictionSet) else PredictionSet.from_pairs(preds)
    if len(ps) == 0:
        raise MetricsError("no articles to evaluate")
    return ps


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def micro_prf(preds) -> tuple[float, float, float]:
    ps = _as_set(preds)
    tp = fp = fn = 0
    for p, g in zip(ps.predicted, ps.gold):
        inter = len(p & g)
        tp += inter
        fp += len(p) - inter
        fn += len(g) - inter
    P = _ratio(tp, tp + fp)
    R = _ratio(tp, tp + fn)
    return P, R, _f1(P, R)


def per_label_counts(preds) -> dict:
    ps = _as_set(preds)
    counts = {}
    for p, g in zip(ps.predicted, ps.gold):
        for c in p | g:
            tp, fp, fn = counts.get(c, (0, 0, 0))
            counts[c] = (tp + (c in p and c in g), fp + (c in p and c not in g), fn + (c in g and c not in p))
    return counts


def macro_prf(preds) -> tuple[float, float, float]:
    counts = per_label_counts(preds)
    if not counts:
        return 0.0, 0.0, 0.0
    ps_, rs_, fs_ = [], [], []
    for c in sorted(counts):
        tp, fp, fn = counts[c]
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        ps_.append(p)
        rs_.append(r)
        fs_.append(_f1(p, r))
    n = len(counts)
    return sum(ps_) / n, sum(rs_) / n, sum(fs_) / n


def example_prf(preds) -> tuple[float, float, float]:
    ps = _as_set(preds)
    sp = sr = sf = 0.0
    for p, g in zip(ps.predicted, ps.gold):
        if not p and not g:
            sp += 1.0
            sr += 1.0
            sf += 1.0
            continue
        inter = len(p & g)
        pp = _ratio(inter, len(p))
        rr = _ratio(inter, len(g))
        sp += pp
        sr += rr
        sf += _f1(pp, rr)
    n = len(ps)
    return sp / n, sr / n, sf / n


def evaluate(preds) -> dict:
    ps = _as_set(preds)
    mp, mr, mf = micro_prf(ps)
    Mp, Mr, Mf = macro_prf(ps)
    ep, er, ef = example_prf(ps)
    return {"muF1": mf, "muP": mp, "muR": mr, "MaF1": Mf, "MaP": Mp, "MaR": Mr,
            "EbF1": ef, "EbP": ep, "EbR": er}


def format_table(results: Mapping[str, Mapping[str, float]], rows=METRIC_ROWS) -> str:
    """Plain-text table with one column per system and one row per metric."""
    names = list(results)
    width = max([10] + [len(n) for n in names])
    lines = ["Metric  " + "".join(n.rjust(width + 2) for n in names)]
    for r in rows:
        cells = "".join(f"{results[n][r]:.4f}".rjust(width + 2) for n in names)
        lines.append(_DISPLAY.get(r, r).ljust(8) + cells)
    return "\n".join(lines)


def report(results: Mapping[str, Mapping[str, float]]) -> str:
    return f"# {MACRO_CONVENTION}\n" + format_table(results) + "\n"


def write_json(results: Mapping, path) -> None:
    payload = {"convention": MACRO_CONVENTION, "results": results}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
