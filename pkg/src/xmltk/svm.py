"""One-vs-rest linear SVM with a post-training decision-plane shift."""

from __future__ import annotations

import logging
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import dcd
from .features import SparseVector, to_csr

logger = logging.getLogger(__name__)

MAGIC = b"XMLTKSVM"
VERSION = 1
_PAIR = np.dtype([("index", "<u4"), ("weight", "<f8")])


@dataclass
class SvmConfig:
    C: float = 1.0
    min_label_frequency: int = 20
    plane_shift: float = -0.3
    max_iterations: int = 200
    tolerance: float = 1e-2
    seed: int = 0
    # "margin": shift compared with raw w.x + b; "distance": with (w.x + b) / ||w||
    shift_units: str = "margin"
    label_block: int = 256

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.min_label_frequency < 1:
            raise ValueError("min_label_frequency must be at least 1")
        if self.shift_units not in ("distance", "margin"):
            raise ValueError(f"unknown shift_units {self.shift_units!r}")


class SvmOvrModel:
    def __init__(self, dim: int, labels: list, weights: list, biases: list,
                 plane_shift: float = -0.3, shift_units: str = "margin"):
        self.dim = dim
        self.labels = list(labels)
        self.weights = list(weights)  # SparseVector per label
        self.biases = np.asarray(biases, dtype=np.float64)
        self.plane_shift = plane_shift
        self.shift_units = shift_units
        self._dense = None

    @property
    def trained_labels(self) -> set:
        return set(self.labels)

    def _matrix(self):
        if self._dense is None:
            W = np.zeros((self.dim, len(self.labels)))
            for j, w in enumerate(self.weights):
                W[w.indices, j] = w.weights
            norms = np.sqrt(np.einsum("dl,dl->l", W, W))
            self._dense = (W, norms)
        return self._dense

    def decision_matrix(self, X, units: str = "distance") -> np.ndarray:
        """Decision values for every (row of X, trained label), shape (n, L).

        ``units="distance"`` divides the raw margin by ``||w||`` (labels with
        ``w = 0`` keep the raw value).
        """
        W, norms = self._matrix()
        raw = np.asarray(sp.csr_matrix(X) @ W) + self.biases
        if units == "margin":
            return raw
        return raw / np.where(norms > 0, norms, 1.0)

    def __eq__(self, other):
        if not isinstance(other, SvmOvrModel):
            return NotImplemented
        return (self.dim == other.dim and self.labels == other.labels
                and self.weights == other.weights
                and np.array_equal(self.biases, other.biases)
                and self.plane_shift == other.plane_shift
                and self.shift_units == other.shift_units)


def _label_counts(golds: Sequence) -> Counter:
    c = Counter()
    for g in golds:
        c.update(g)
    return c


def train_ovr(train: Sequence, vocab, cfg: SvmConfig | None = None, dim: int | None = None) -> SvmOvrModel:
    """Train one binary squared-hinge SVM per label frequent enough.

    Args:
        train: sequence of ``(SparseVector, gold label set)``.
        vocab: label vocabulary; fixes the order in which labels are stored.
        cfg: solver and cutoff settings.
        dim: feature dimension; inferred from the data when omitted.
    """
    cfg = cfg or SvmConfig()
    if not train:
        raise ValueError("empty training set")
    vectors = [x for x, _ in train]
    golds = [set(g) for _, g in train]
    max_idx = max((int(v.indices[-1]) for v in vectors if len(v)), default=-1)
    if dim is None:
        dim = max_idx + 1
    elif max_idx >= dim:
        raise ValueError(f"feature index {max_idx} outside dimension {dim}")

    n = len(train)
    counts = _label_counts(golds)
    labels = []
    for code in vocab.codes:
        if code == vocab.stop_label:
            continue
        f = counts.get(code, 0)
        if f < cfg.min_label_frequency:
            continue
        if f == n:
            logger.warning("label %s is positive for every training article; skipped", code)
            continue
        labels.append(code)

    # constant-1 column carries the bias
    X = sp.hstack([to_csr(vectors, dim), sp.csr_matrix(np.ones((n, 1)))], format="csr")
    weights, biases = [], []
    for start in range(0, len(labels), cfg.label_block):
        block = labels[start:start + cfg.label_block]
        Y = np.full((n, len(block)), -1.0)
        col = {c: j for j, c in enumerate(block)}
        for i, g in enumerate(golds):
            for c in g:
                j = col.get(c)
                if j is not None:
                    Y[i, j] = 1.0
        W, info = dcd.solve(X, Y, C=cfg.C, tol=cfg.tolerance, max_iter=cfg.max_iterations, seed=cfg.seed)
        if not info.converged.all():
            logger.info("%d of %d labels hit the iteration cap", int((~info.converged).sum()), len(block))
        if not np.isfinite(W).all():
            raise FloatingPointError("non-finite SVM weights")
        for j in range(len(block)):
            w = W[:dim, j]
            nz = np.flatnonzero(w)
            weights.append(SparseVector(nz, w[nz]))
            biases.append(float(W[dim, j]))
    logger.info("trained %d binary classifiers (%d labels below f_min=%d)",
                len(labels), sum(1 for c in counts if counts[c] < cfg.min_label_frequency),
                cfg.min_label_frequency)
    return SvmOvrModel(dim, labels, weights, biases, cfg.plane_shift, cfg.shift_units)


def score(model: SvmOvrModel, x: SparseVector) -> dict:
    """Signed distance of ``x`` to every trained hyper-plane."""
    X = to_csr([x], model.dim)
    row = model.decision_matrix(X)[0]
    return dict(zip(model.labels, row.tolist()))


def score_batch(model: SvmOvrModel, vectors: Sequence[SparseVector], units: str = "distance") -> list[dict]:
    M = model.decision_matrix(to_csr(list(vectors), model.dim), units)
    return [dict(zip(model.labels, row.tolist())) for row in M]


def predict_batch(model: SvmOvrModel, vectors: Sequence[SparseVector], shift: float | None = None) -> list[set]:
    """Labels whose decision value exceeds the plane shift, in ``model.shift_units``."""
    shift = model.plane_shift if shift is None else shift
    M = model.decision_matrix(to_csr(list(vectors), model.dim), model.shift_units)
    return [{model.labels[j] for j in np.flatnonzero(row > shift)} for row in M]


def predict(model: SvmOvrModel, x: SparseVector, shift: float | None = None) -> set:
    return predict_batch(model, [x], shift)[0]


def save(model: SvmOvrModel, path) -> None:
    units = 0 if model.shift_units == "distance" else 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIdBI", VERSION, model.dim, model.plane_shift, units, len(model.labels)))
        for code, w, b in zip(model.labels, model.weights, model.biases):
            raw = code.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<dI", float(b), len(w)))
            pairs = np.empty(len(w), dtype=_PAIR)
            pairs["index"] = w.indices
            pairs["weight"] = w.weights
            fh.write(pairs.tobytes())


def load(path) -> SvmOvrModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an SVM model file")
    off = len(MAGIC)
    version, dim, shift, units, n_labels = struct.unpack_from("<IIdBI", buf, off)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported SVM model version {version}")
    off += struct.calcsize("<IIdBI")
    labels, weights, biases = [], [], []
    for _ in range(n_labels):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        labels.append(buf[off:off + ln].decode("utf-8"))
        off += ln
        b, nnz = struct.unpack_from("<dI", buf, off)
        off += struct.calcsize("<dI")
        pairs = np.frombuffer(buf, dtype=_PAIR, count=nnz, offset=off)
        off += nnz * _PAIR.itemsize
        weights.append(SparseVector(pairs["index"].astype(np.int64), pairs["weight"].copy()))
        biases.append(b)
    return SvmOvrModel(dim, labels, weights, biases, shift, "distance" if units == 0 else "margin")

