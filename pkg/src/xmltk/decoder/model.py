"""Decoder model: bag-of-embeddings encoder plus linear, label-attention or GRU head.

Every forward pass here has a matching hand-written backward pass. Batched
arrays use the layout (batch, ...) and, for the GRU, (batch, step, ...).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..corpus import Article, LabelVocabulary
from ..features import TermVocabulary
from .nn import MASK_VALUE, bce_grad, bce_loss, bce_rows, sigmoid, softmax

HEADS = ("linear", "label_attention", "gru")
LOSSES = ("boll", "ill")
ORDERS = ("ascending", "descending")
GRU_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class DecoderConfig:
    head: str = "gru"
    loss: str = "boll"
    order: str = "ascending"
    masked: bool = False
    embedding_dim: int = 64
    hidden_dim: int = 64
    max_steps: int = 30
    batch_size: int = 8
    learning_rate: float = 2e-5
    warmup_steps: int = 4000
    lr_decay: str = "linear"
    dropout: float = 0.1
    epochs: int = 3
    optimizer: str = "adam"
    threshold: float = 0.5
    # inputs fed to the GRU while training with BOLL: gold sequence or own greedy decode
    boll_inputs: str = "free"
    min_df: int = 1
    max_df_ratio: float = 1.0
    encoder_kind: str = "bag-of-embeddings"
    gradcheck: bool = True
    gradcheck_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be at least 2")
        if self.encoder_kind != "bag-of-embeddings":
            raise ValueError(f"unknown encoder {self.encoder_kind!r}")
        if self.boll_inputs not in ("teacher", "free"):
            raise ValueError(f"unknown boll_inputs {self.boll_inputs!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("linear", "none"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecoderTrace:
    logits: np.ndarray  # (T, n_outputs), unmasked
    predicted: list  # output index chosen at each step
    targets: list | None = None  # gold output index per step (teacher forcing)

    @property
    def length(self) -> int:
        return len(self.predicted) if self.targets is None else len(self.targets)


class DecoderModel:
    def __init__(self, cfg: DecoderConfig, terms: Sequence[str], codes: Sequence[str],
                 frequency: Sequence[int], params: dict):
        self.cfg = cfg
        self.terms = list(terms)
        self.term_index = {t: i for i, t in enumerate(self.terms)}
        self.codes = list(codes)  # output space, stop label last
        self.code_index = {c: i for i, c in enumerate(self.codes)}
        self.frequency = np.asarray(frequency, dtype=np.int64)
        self.params = params
        n_labels = self.n_outputs - 1
        # position of each real label under ascending (frequency, index) order
        order = sorted(range(n_labels), key=lambda i: (int(self.frequency[i]), i))
        self.rank = np.full(self.n_outputs, -1, dtype=np.int64)
        self.rank[order] = np.arange(n_labels)

    @property
    def n_outputs(self) -> int:
        return len(self.codes)

    @property
    def stop(self) -> int:
        return self.n_outputs - 1

    @property
    def start(self) -> int:
        return self.n_outputs

    @property
    def dim(self) -> int:
        return self.cfg.embedding_dim

    def copy(self) -> "DecoderModel":
        return DecoderModel(self.cfg, self.terms, self.codes, self.frequency,
                            {k: v.copy() for k, v in self.params.items()})

    def sort_labels(self, indices) -> list:
        """Gold output indices in the configured frequency order, stop appended."""
        idx = sorted(set(int(i) for i in indices if int(i) != self.stop), key=lambda i: self.rank[i])
        if self.cfg.order == "descending":
            idx.reverse()
        return idx + [self.stop]

    def gold_indices(self, labels) -> list:
        return [self.code_index[c] for c in labels if c in self.code_index]


def init_model(cfg: DecoderConfig, term_vocab: TermVocabulary, vocab: LabelVocabulary,
               n_train: int | None = None) -> DecoderModel:
    """Random initialization; label embeddings start as the encoding of their text."""
    from ..features import tokenize

    rng = np.random.default_rng(cfg.seed)
    D, H = cfg.embedding_dim, cfg.hidden_dim
    terms = term_vocab.ordered_terms()
    codes = vocab.codes
    NL = len(codes)
    freq = np.array([vocab.frequency.get(c, 0) for c in codes], dtype=np.int64)
    p = {"term_emb": rng.normal(0.0, 0.1, size=(len(terms), D))}

    label_emb = rng.normal(0.0, 0.1, size=(NL + 1, D))
    tindex = {t: i for i, t in enumerate(terms)}
    for j, c in enumerate(codes[:-1]):
        rows = [tindex[t] for t in tokenize(vocab.label_text(c)) if t in tindex]
        if rows:
            label_emb[j] = p["term_emb"][rows].mean(axis=0)
    p["label_emb"] = label_emb

    h_out = H if cfg.head == "gru" else D
    p["W_out"] = rng.normal(0.0, 1.0 / math.sqrt(h_out), size=(NL, h_out))
    b = np.zeros(NL)
    if n_train:
        prior = np.clip(freq[:-1] / n_train, 1e-4, 1 - 1e-4)
        b[:-1] = np.log(prior / (1 - prior))
    p["b_out"] = b
    if cfg.head == "gru":
        s = 1.0 / math.sqrt(H)
        for g in "zrh":
            p[f"W_{g}"] = rng.uniform(-s, s, size=(H, 2 * D))
            p[f"U_{g}"] = rng.uniform(-s, s, size=(H, H))
            p[f"b_{g}"] = np.zeros(H)
        if H != D:
            p["P_init"] = rng.uniform(-s, s, size=(H, D))
    return DecoderModel(cfg, terms, codes, freq, p)


# ---------------------------------------------------------------- encoder

def encoding_matrix(model: DecoderModel, articles: Sequence[Article]) -> sp.csr_matrix:
    """Rows average the in-vocabulary token occurrences of each article."""
    from ..features import tokenize

    rows, cols, vals = [], [], []
    for i, art in enumerate(articles):
        ids = [model.term_index[t] for t in tokenize(art.text) if t in model.term_index]
        if not ids:
            continue
        u, c = np.unique(ids, return_counts=True)
        rows.extend([i] * len(u))
        cols.extend(u.tolist())
        vals.extend((c / len(ids)).tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(articles), len(model.terms)))


def encode(article: Article, model: DecoderModel) -> np.ndarray:
    A = encoding_matrix(model, [article])
    return np.asarray(A @ model.params["term_emb"])[0]


# ---------------------------------------------------------------- heads

def _attention(p, e):
    K = p["label_emb"][:-2]
    scale = 1.0 / math.sqrt(K.shape[1])
    a = softmax(e @ K.T * scale)
    return a, a @ K


def forward_linear(embedding: np.ndarray, model: DecoderModel) -> np.ndarray:
    p = model.params
    return embedding @ p["W_out"].T + p["b_out"]


def forward_label_attention(embedding: np.ndarray, model: DecoderModel) -> np.ndarray:
    p = model.params
    _, o = _attention(p, embedding)
    return (embedding + o) @ p["W_out"].T + p["b_out"]


def attention_output(embedding: np.ndarray, model: DecoderModel) -> np.ndarray:
    return _attention(model.params, embedding)[1]


def _h0(p, e):
    return e @ p["P_init"].T if "P_init" in p else e.copy()


def gru_cell(p, x, h):
    z = sigmoid(x @ p["W_z"].T + h @ p["U_z"].T + p["b_z"])
    r = sigmoid(x @ p["W_r"].T + h @ p["U_r"].T + p["b_r"])
    hh = np.tanh(x @ p["W_h"].T + (r * h) @ p["U_h"].T + p["b_h"])
    return (1.0 - z) * h + z * hh, (z, r, hh)


def allowed_mask(model: DecoderModel, prev: np.ndarray, visited: np.ndarray | None, step: int) -> np.ndarray:
    """Boolean (B, n_outputs) array of labels that may be emitted next."""
    B = prev.shape[0]
    ok = np.ones((B, model.n_outputs), dtype=bool)
    if visited is not None:
        ok &= ~visited
    if model.cfg.masked and step > 0:
        prev_rank = model.rank[prev][:, None]
        if model.cfg.order == "descending":
            ok &= model.rank[None, :] < prev_rank
        else:
            ok &= model.rank[None, :] > prev_rank
    ok[:, model.stop] = True
    return ok


def mask_logits(logits: np.ndarray, prev_label: int | None, order: str, vocab: LabelVocabulary) -> np.ndarray:
    """Disallow labels that do not come strictly after ``prev_label`` in frequency order.

    Labels compare by ``(frequency, index)``; the stop label (last index) is
    always allowed. With no previous label nothing is masked.
    """
    out = np.array(logits, dtype=np.float64, copy=True)
    if prev_label is None:
        return out
    codes = vocab.codes
    key = [(vocab.frequency.get(c, 0), i) for i, c in enumerate(codes)]
    pk = key[prev_label]
    for i in range(len(codes) - 1):
        later = key[i] < pk if order == "descending" else key[i] > pk
        if not later:
            out[i] = MASK_VALUE
    return out


def decode_batch(model: DecoderModel, E: np.ndarray, max_steps: int | None = None) -> list[DecoderTrace]:
    """Greedy decoding for a batch of encoder outputs (no dropout)."""
    p = model.params
    max_steps = max_steps or model.cfg.max_steps
    B = E.shape[0]
    h = _h0(p, E)
    prev = np.full(B, model.start)
    visited = np.zeros((B, model.n_outputs), dtype=bool)
    done = np.zeros(B, dtype=bool)
    logits_seq = [[] for _ in range(B)]
    preds = [[] for _ in range(B)]
    for t in range(max_steps):
        x = np.concatenate([E, p["label_emb"][prev]], axis=1)
        h, _ = gru_cell(p, x, h)
        logits = h @ p["W_out"].T + p["b_out"]
        ok = allowed_mask(model, prev, visited, t)
        choice = np.argmax(np.where(ok, logits, MASK_VALUE), axis=1)
        for b in np.flatnonzero(~done):
            logits_seq[b].append(logits[b])
            preds[b].append(int(choice[b]))
        visited[np.arange(B), choice] = True
        done |= choice == model.stop
        prev = choice
        if done.all():
            break
    return [DecoderTrace(np.array(logits_seq[b]), preds[b]) for b in range(B)]


def decode_gru(embedding: np.ndarray, model: DecoderModel, max_steps: int | None = None) -> DecoderTrace:
    if model.cfg.head != "gru":
        raise ValueError("decode_gru needs a model with a GRU head")
    return decode_batch(model, np.asarray(embedding)[None, :], max_steps)[0]


def teacher_forced_trace(embedding: np.ndarray, model: DecoderModel, sequence: Sequence[int]) -> DecoderTrace:
    """Run the GRU feeding ``sequence[t-1]`` as the previous label at step t."""
    p = model.params
    e = np.asarray(embedding)[None, :]
    h = _h0(p, e)
    prev = model.start
    out = []
    for target in sequence:
        x = np.concatenate([e, p["label_emb"][[prev]]], axis=1)
        h, _ = gru_cell(p, x, h)
        out.append((h @ p["W_out"].T + p["b_out"])[0])
        prev = target
    return DecoderTrace(np.array(out), [int(np.argmax(l)) for l in out], list(sequence))


# ---------------------------------------------------------------- losses on traces

def loss_boll(trace: DecoderTrace, gold: np.ndarray) -> float:
    """BCE of the element-wise maximum of the step logits against the gold set.

    ``gold`` is a multi-hot vector over the outputs; its stop entry is forced to 1.
    """
    if trace.logits.shape[0] == 0:
        raise ValueError("empty trace")
    y = np.asarray(gold, dtype=np.float64).copy()
    y[-1] = 1.0
    return bce_loss(trace.logits.max(axis=0), y)


def loss_ill(trace: DecoderTrace, gold_sequence: Sequence[int]) -> float:
    """Sum over steps of BCE between step logits and a one-hot gold label."""
    n = trace.logits.shape[1]
    total = 0.0
    for t, g in enumerate(gold_sequence):
        y = np.zeros(n)
        y[g] = 1.0
        total += bce_loss(trace.logits[t], y)
    return total


# ---------------------------------------------------------------- batched training pass

@dataclass
class Batch:
    A: sp.csr_matrix  # (B, V) token averaging matrix
    Y: np.ndarray  # (B, n_outputs) multi-hot gold, stop entry = 1
    seqs: list = field(default_factory=list)  # GRU input/target sequences


def make_batch(model: DecoderModel, articles: Sequence[Article], sequences: list | None = None) -> Batch:
    A = encoding_matrix(model, articles)
    Y = np.zeros((len(articles), model.n_outputs))
    seqs = []
    for i, art in enumerate(articles):
        gi = model.gold_indices(art.gold_labels)
        Y[i, gi] = 1.0
        seqs.append(model.sort_labels(gi))
    Y[:, model.stop] = 1.0
    return Batch(A, Y, sequences if sequences is not None else seqs)


def forward_backward(model: DecoderModel, batch: Batch, dmask: np.ndarray | None = None,
                     need_grad: bool = True) -> tuple[float, dict | None]:
    """Mean loss over the batch and, optionally, gradients for every parameter."""
    p = model.params
    cfg = model.cfg
    B = batch.A.shape[0]
    e = np.asarray(batch.A @ p["term_emb"])
    ed = e * dmask if dmask is not None else e
    g = {}

    if cfg.head in ("linear", "label_attention"):
        if cfg.head == "linear":
            h = ed
        else:
            K = p["label_emb"][:-2]
            scale = 1.0 / math.sqrt(K.shape[1])
            a = softmax(ed @ K.T * scale)
            h = ed + a @ K
        logits = h @ p["W_out"].T + p["b_out"]
        loss = float(bce_rows(logits, batch.Y).mean())
        if not need_grad:
            return loss, None
        dlog = bce_grad(logits, batch.Y) / B
        g["W_out"] = dlog.T @ h
        g["b_out"] = dlog.sum(axis=0)
        dh = dlog @ p["W_out"]
        ded = dh.copy()
        if cfg.head == "label_attention":
            dK = a.T @ dh
            da = dh @ K.T
            ds = a * (da - np.sum(a * da, axis=1, keepdims=True))
            dK += scale * ds.T @ ed
            ded += scale * ds @ K
            g["label_emb"] = np.zeros_like(p["label_emb"])
            g["label_emb"][:-2] = dK
        return loss, _finish(model, batch, g, ded, dmask)

    # GRU head with teacher-forced (or externally supplied) input sequences
    seqs = batch.seqs
    T = max(len(s) for s in seqs)
    prev = np.full((B, T), model.start)
    tgt = np.full((B, T), model.stop)
    mask = np.zeros((B, T))
    for b, s in enumerate(seqs):
        n = len(s)
        tgt[b, :n] = s
        prev[b, 1:n] = s[:-1]
        mask[b, :n] = 1.0

    D = cfg.embedding_dim
    h = _h0(p, ed)
    hs, caches, logits = [], [], np.zeros((B, T, model.n_outputs))
    for t in range(T):
        x = np.concatenate([ed, p["label_emb"][prev[:, t]]], axis=1)
        h_new, (z, r, hh) = gru_cell(p, x, h)
        m = mask[:, t:t + 1]
        caches.append((x, h, z, r, hh, m))
        h = m * h_new + (1.0 - m) * h
        hs.append(h)
        logits[:, t] = h @ p["W_out"].T + p["b_out"]

    dlog = np.zeros_like(logits)
    if cfg.loss == "ill":
        Yt = np.zeros_like(logits)
        Yt[np.arange(B)[:, None], np.arange(T)[None, :], tgt] = 1.0
        per = bce_rows(logits, Yt) * mask
        loss = float(per.sum(axis=1).mean())
        if need_grad:
            dlog = bce_grad(logits, Yt) * mask[:, :, None] / B
    else:
        masked = np.where(mask[:, :, None] > 0, logits, -np.inf)
        arg = masked.argmax(axis=1)  # (B, n_outputs), first maximal step
        agg = np.take_along_axis(logits, arg[:, None, :], axis=1)[:, 0]
        loss = float(bce_rows(agg, batch.Y).mean())
        if need_grad:
            dagg = bce_grad(agg, batch.Y) / B
            bi, li = np.meshgrid(np.arange(B), np.arange(model.n_outputs), indexing="ij")
            dlog[bi, arg, li] = dagg
    if not need_grad:
        return loss, None

    for k in GRU_NAMES + ("W_out", "b_out"):
        g[k] = np.zeros_like(p[k])
    g["label_emb"] = np.zeros_like(p["label_emb"])
    ded = np.zeros_like(ed)
    dh_next = np.zeros((B, cfg.hidden_dim))
    for t in reversed(range(T)):
        x, h_prev, z, r, hh, m = caches[t]
        g["W_out"] += dlog[:, t].T @ hs[t]
        g["b_out"] += dlog[:, t].sum(axis=0)
        dh = dh_next + dlog[:, t] @ p["W_out"]
        dh_new = m * dh
        dh_prev = (1.0 - m) * dh
        dz = dh_new * (hh - h_prev)
        dhh = dh_new * z
        dh_prev += dh_new * (1.0 - z)
        dah = dhh * (1.0 - hh * hh)
        g["W_h"] += dah.T @ x
        g["U_h"] += dah.T @ (r * h_prev)
        g["b_h"] += dah.sum(axis=0)
        drh = dah @ p["U_h"]
        dr = drh * h_prev
        dh_prev += drh * r
        dx = dah @ p["W_h"]
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        for name, da in (("z", daz), ("r", dar)):
            g[f"W_{name}"] += da.T @ x
            g[f"U_{name}"] += da.T @ h_prev
            g[f"b_{name}"] += da.sum(axis=0)
            dh_prev += da @ p[f"U_{name}"]
            dx += da @ p[f"W_{name}"]
        ded += dx[:, :D]
        np.add.at(g["label_emb"], prev[:, t], dx[:, D:])
        dh_next = dh_prev
    if "P_init" in p:
        g["P_init"] = dh_next.T @ ed
        ded += dh_next @ p["P_init"]
    else:
        ded += dh_next
    return loss, _finish(model, batch, g, ded, dmask)


def _finish(model, batch, g, ded, dmask):
    de = ded * dmask if dmask is not None else ded
    g["term_emb"] = np.asarray(batch.A.T @ de)
    for k, v in model.params.items():
        if k not in g:
            g[k] = np.zeros_like(v)
    return g
