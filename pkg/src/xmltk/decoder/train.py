"""Training, gradient checking, inference and checkpoints for the decoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .._binio import read_container, write_container
from ..corpus import Article, LabelVocabulary
from ..features import build_term_vocabulary
from .model import (Batch, DecoderConfig, DecoderModel, DecoderTrace, decode_batch, encoding_matrix,
                    forward_backward, init_model, make_batch, _attention)
from .nn import probability

logger = logging.getLogger(__name__)

MAGIC = b"XMLTKDEC"
VERSION = 1


class DivergenceError(RuntimeError):
    pass


class GradientCheckError(RuntimeError):
    pass


@dataclass
class TrainingHistory:
    steps: list = field(default_factory=list)  # (step, loss)
    epoch_loss: list = field(default_factory=list)
    gradcheck_error: float | None = None

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step\tloss\n")
            for s, l in self.steps:
                fh.write(f"{s}\t{l:.10g}\n")


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / (||a|| + ||b||), zero when both vanish."""
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def numeric_gradient(model: DecoderModel, batch: Batch, name: str, coords, eps: float = 1e-5) -> np.ndarray:
    p = model.params[name]
    out = np.empty(len(coords))
    for j, c in enumerate(coords):
        old = p[c]
        p[c] = old + eps
        lp, _ = forward_backward(model, batch, need_grad=False)
        p[c] = old - eps
        lm, _ = forward_backward(model, batch, need_grad=False)
        p[c] = old
        out[j] = (lp - lm) / (2 * eps)
    return out


def gradient_check(model: DecoderModel, batch: Batch, eps: float = 1e-5, per_param: int | None = 12,
                   seed: int = 0) -> dict:
    """Compare backprop against central differences, parameter by parameter.

    With ``per_param=None`` every entry is checked; otherwise a random sample
    of entries with nonzero analytic gradient (plus zero-gradient ones if too
    few) is used. Returns the relative error per parameter.
    """
    _, grads = forward_backward(model, batch)
    rng = np.random.default_rng(seed)
    errors = {}
    for name in sorted(model.params):
        shape = model.params[name].shape
        every = list(np.ndindex(*shape))
        if per_param is None or len(every) <= per_param:
            coords = every
        else:
            nz = [every[i] for i in np.flatnonzero(grads[name].ravel())]
            pool = nz if len(nz) >= per_param else every
            pick = rng.choice(len(pool), size=per_param, replace=False)
            coords = [pool[i] for i in sorted(pick)]
        num = numeric_gradient(model, batch, name, coords, eps)
        ana = np.array([grads[name][c] for c in coords])
        errors[name] = relative_error(ana, num)
    return errors


def _lr_at(cfg: DecoderConfig, step: int, total: int) -> float:
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    if cfg.lr_decay == "linear":
        span = max(1, total - cfg.warmup_steps)
        return cfg.learning_rate * max(0.0, 1.0 - (step - cfg.warmup_steps) / span)
    return cfg.learning_rate


class _Adam:
    def __init__(self, params: dict, b1=0.9, b2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _free_sequences(model: DecoderModel, batch: Batch) -> list:
    E = np.asarray(batch.A @ model.params["term_emb"])
    return [tr.predicted if tr.predicted[-1] == model.stop else tr.predicted + [model.stop]
            for tr in decode_batch(model, E)]


def train_decoder(articles: Sequence[Article], vocab: LabelVocabulary, cfg: DecoderConfig | None = None,
                  history: TrainingHistory | None = None) -> DecoderModel:
    """Mini-batch training with warmup, linear decay and encoder dropout.

    The first batch is gradient-checked before any update.
    """
    cfg = cfg or DecoderConfig()
    if not articles:
        raise ValueError("no training articles")
    history = history if history is not None else TrainingHistory()
    term_vocab = build_term_vocabulary(articles, cfg.min_df, cfg.max_df_ratio)
    model = init_model(cfg, term_vocab, vocab, n_train=len(articles))
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(articles)
    per_epoch = -(-n // cfg.batch_size)
    total = per_epoch * cfg.epochs
    opt = _Adam(model.params) if cfg.optimizer == "adam" else None
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            batch = make_batch(model, [articles[i] for i in idx])
            if cfg.head == "gru" and cfg.loss == "boll" and cfg.boll_inputs == "free":
                batch.seqs = _free_sequences(model, batch)
            if step == 0 and cfg.gradcheck:
                errs = gradient_check(model, batch, seed=cfg.seed)
                worst = max(errs.values())
                history.gradcheck_error = worst
                if worst > cfg.gradcheck_tol:
                    raise GradientCheckError(f"gradient check failed: {errs}")
                logger.info("gradient check passed (max relative error %.2e)", worst)
            dmask = None
            if cfg.dropout > 0:
                keep = 1.0 - cfg.dropout
                dmask = (rng.random((len(idx), cfg.embedding_dim)) < keep) / keep
            loss, grads = forward_backward(model, batch, dmask)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at step {step} (epoch {epoch})")
            lr = _lr_at(cfg, step, total)
            if opt is not None:
                opt.step(model.params, grads, lr)
            else:
                for k in sorted(model.params):
                    model.params[k] -= lr * grads[k]
            for k, v in model.params.items():
                if not np.isfinite(v).all():
                    raise DivergenceError(f"parameter {k} became non-finite at step {step}")
            history.steps.append((step, loss))
            losses.append(loss)
            step += 1
        history.epoch_loss.append(float(np.mean(losses)))
        logger.info("epoch %d: mean loss %.5f", epoch, history.epoch_loss[-1])
    return model


def dataset_loss(model: DecoderModel, articles: Sequence[Article]) -> float:
    """Mean loss over ``articles`` without dropout."""
    batch = make_batch(model, articles)
    return forward_backward(model, batch, need_grad=False)[0]


def trace_labels(model: DecoderModel, trace: DecoderTrace) -> set:
    """Codes emitted along a decoded trace, the stop label excluded."""
    return {model.codes[i] for i in trace.predicted if i != model.stop}


def predict_batch(model: DecoderModel, articles: Sequence[Article], threshold: float | None = None) -> list:
    """Return ``(label set, label scores)`` per article.

    Scores are label probabilities; the GRU head reports the per-label
    maximum over its decoded steps and predicts exactly the decoded labels.
    """
    threshold = model.cfg.threshold if threshold is None else threshold
    if not articles:
        return []
    p = model.params
    E = np.asarray(encoding_matrix(model, articles) @ p["term_emb"])
    codes = model.codes[:-1]
    out = []
    if model.cfg.head == "gru":
        for tr in decode_batch(model, E):
            probs = probability(tr.logits.max(axis=0))[:-1]
            out.append((trace_labels(model, tr), dict(zip(codes, probs.tolist()))))
        return out
    h = E if model.cfg.head == "linear" else E + _attention(p, E)[1]
    probs = probability(h @ p["W_out"].T + p["b_out"])[:, :-1]
    for row in probs:
        labels = {codes[i] for i in np.flatnonzero(row > threshold)}
        out.append((labels, dict(zip(codes, row.tolist()))))
    return out


def predict_decoder(model: DecoderModel, article: Article, threshold: float | None = None) -> tuple[set, dict]:
    return predict_batch(model, [article], threshold)[0]


def save(model: DecoderModel, path) -> None:
    meta = {"config": model.cfg.to_dict(), "terms": model.terms, "codes": model.codes,
            "frequency": model.frequency.tolist()}
    write_container(path, MAGIC, VERSION, meta, model.params)


def load(path) -> DecoderModel:
    meta, arrays = read_container(path, MAGIC, VERSION)
    cfg = DecoderConfig(**meta["config"])
    return DecoderModel(cfg, meta["terms"], meta["codes"], meta["frequency"], arrays)
