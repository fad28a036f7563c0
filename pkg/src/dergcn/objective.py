"""Residual classifier head and the training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DegenerateLabelSet, NegativeCoefficient, ShapeMismatch
from .numerics import Tensor
from .params import ParamStore, uniform_fan_in

PROB_FLOOR = 1e-12


@dataclass
class ClassifierParams:
    W_f: Tensor
    b_f: Tensor
    W_a: Tensor
    b_a: Tensor

    @property
    def num_classes(self) -> int:
        return self.W_a.shape[1]

    @classmethod
    def from_store(cls, store, prefix: str = "clf") -> "ClassifierParams":
        return cls(*(store[f"{prefix}.{k}"] for k in ("W_f", "b_f", "W_a", "b_a")))


def init_classifier(store: ParamStore, dim: int, num_classes: int, rng: np.random.Generator,
                    prefix: str = "clf") -> ClassifierParams:
    store.add(f"{prefix}.W_f", uniform_fan_in(rng, (dim, dim), dim))
    store.add(f"{prefix}.b_f", uniform_fan_in(rng, (dim,), dim))
    store.add(f"{prefix}.W_a", uniform_fan_in(rng, (dim, num_classes), dim))
    store.add(f"{prefix}.b_a", uniform_fan_in(rng, (num_classes,), dim))
    return ClassifierParams.from_store(store, prefix)


def classify(E, p: ClassifierParams) -> Tensor:
    """softmax((E + ReLU(E W_f + b_f)) W_a + b_a), row-wise."""
    E = nx.as_tensor(E)
    if E.shape[-1] != p.W_f.shape[0]:
        raise ShapeMismatch(f"classify: embedding dim {E.shape[-1]} != {p.W_f.shape[0]}")
    alpha = E + nx.relu(E @ p.W_f + p.b_f)
    return nx.softmax(alpha @ p.W_a + p.b_a, axis=-1)


def predict_label(P) -> np.ndarray | int:
    """Argmax; ties go to the lowest index."""
    P = P.data if isinstance(P, Tensor) else np.asarray(P)
    out = np.argmax(P, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    margin: float = 1.0


def sample_triplets(labels, per_class_quota: int, rng_seed, margin: float = 1.0) -> list:
    """Up to ``per_class_quota`` (anchor, positive) pairs per class, one negative each.

    Every class with at least two members gets its own quota regardless of
    its frequency, which is what balances rare classes against common ones.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DegenerateLabelSet("triplets need at least two classes")
    if per_class_quota <= 0:
        return []
    rng = np.random.default_rng(rng_seed)
    out = []
    for c in classes:
        members = np.nonzero(labels == c)[0]
        m = len(members)
        if m < 2:
            continue
        others = np.nonzero(labels != c)[0]
        take = min(per_class_quota, m * (m - 1))
        for code in np.sort(rng.choice(m * (m - 1), size=take, replace=False)):
            a, q = divmod(int(code), m - 1)
            p = q if q < a else q + 1
            neg = int(others[rng.integers(len(others))])
            out.append(Triplet(int(members[a]), int(members[p]), neg, margin))
    return out


def triplet_loss(triplets: list, embeddings) -> Tensor:
    """Mean of max(d(a, p) - d(a, n) + margin, 0) with Euclidean d; 0 if empty."""
    if not triplets:
        return Tensor(0.0)
    E = nx.as_tensor(embeddings)
    a = np.array([t.anchor for t in triplets])
    p = np.array([t.positive for t in triplets])
    n = np.array([t.negative for t in triplets])
    b = np.array([t.margin for t in triplets])
    Ea = E[a]
    gap = nx.euclidean_distance(Ea, E[p]) - nx.euclidean_distance(Ea, E[n]) + b
    return nx.mean(nx.relu(gap))


def global_ce_loss(P_all, y_all, dialogue_sizes=None) -> Tensor:
    """Base-2 cross-entropy summed over dialogues, divided by the utterance count.

    ``y_all`` may be one-hot rows or class indices. Probabilities are
    clamped to [1e-12, 1] before the log.
    """
    P = nx.as_tensor(P_all)
    y = np.asarray(y_all)
    if y.ndim == 2:
        if y.shape != P.shape:
            raise ShapeMismatch(f"one-hot labels {y.shape} vs probabilities {P.shape}")
        y = np.argmax(y, axis=1)
    if len(y) != P.shape[0]:
        raise ShapeMismatch(f"{len(y)} labels for {P.shape[0]} rows")
    total = int(np.sum(dialogue_sizes)) if dialogue_sizes is not None else len(y)
    if total != len(y):
        raise ShapeMismatch(f"dialogue sizes sum to {total}, expected {len(y)}")
    picked = P[np.arange(len(y)), y]
    logp = nx.log2(nx.clip(picked, PROB_FLOOR, 1.0))
    return nx.scalar_mul(nx.tsum(logp), -1.0 / total)


DEFAULT_COEFFS = {"triplet": 1.0, "node_recon": 0.5, "edge_contrastive": 0.5}


def total_loss(ce, triplet, node_recon, edge_contrastive, coeffs: dict | None = None) -> Tensor:
    c = dict(DEFAULT_COEFFS)
    c.update(coeffs or {})
    if any(v < 0 for v in c.values()):
        raise NegativeCoefficient(f"loss coefficients must be >= 0: {c}")
    out = nx.as_tensor(ce)
    for key, part in (("triplet", triplet), ("node_recon", node_recon),
                      ("edge_contrastive", edge_contrastive)):
        if c[key] != 0:
            out = out + nx.scalar_mul(part, c[key])
    return out
