"""Cross-relation attention over per-relation node embeddings.

Embeddings are stacked along a relation axis of shape (n, N, d). Each
relation's query attends over all relations' keys; the fused view of
relation ``target`` adds the attention-weighted values of the *other*
relations onto its own embedding. The final output averages the fused
views over targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import RelationOutOfRange, ShapeMismatch, TooFewRelations
from .numerics import Tensor
from .params import ParamStore, uniform_fan_in


@dataclass
class MitParams:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    conv: dict            # "Q"/"K"/"V" -> (kernel (d, d, k), bias (d,))
    scale: str = "dim"    # "dim" divides logits by d, "sqrt" by sqrt(d)

    @property
    def dim(self) -> int:
        return self.W_Q.shape[1]

    @property
    def epsilon(self) -> float:
        return float(self.dim) if self.scale == "dim" else float(np.sqrt(self.dim))

    @classmethod
    def from_store(cls, store, prefix: str = "mit", scale: str = "dim") -> "MitParams":
        conv = {k: (store[f"{prefix}.conv_{k}.w"], store[f"{prefix}.conv_{k}.b"])
                for k in ("Q", "K", "V")}
        return cls(store[f"{prefix}.W_Q"], store[f"{prefix}.W_K"], store[f"{prefix}.W_V"],
                   conv, scale)


def init_mit(store: ParamStore, dim: int, rng: np.random.Generator, kernel: int = 1,
             prefix: str = "mit", scale: str = "dim") -> MitParams:
    for k in ("Q", "K", "V"):
        store.add(f"{prefix}.W_{k}", uniform_fan_in(rng, (dim, dim), dim))
    for k in ("Q", "K", "V"):
        store.add(f"{prefix}.conv_{k}.w", uniform_fan_in(rng, (dim, dim, kernel), dim * kernel))
        store.add(f"{prefix}.conv_{k}.b", uniform_fan_in(rng, (dim,), dim * kernel))
    return MitParams.from_store(store, prefix, scale)


def stack_relations(I_rel) -> Tensor:
    if isinstance(I_rel, np.ndarray):
        I_rel = Tensor(I_rel)
    if isinstance(I_rel, Tensor):
        if I_rel.ndim != 3:
            raise ShapeMismatch(f"stacked relations must be (n, N, d), got {I_rel.shape}")
        return I_rel
    if len({t.shape for t in I_rel}) != 1:
        raise ShapeMismatch(f"relation embeddings disagree: {[t.shape for t in I_rel]}")
    return nx.stack(list(I_rel), axis=1)


def project_qkv(I_rel, p: MitParams) -> tuple:
    """Q, K, V stacks (n, N, d): linear projection then a conv over the relation axis."""
    X = stack_relations(I_rel)
    if X.shape[1] < 2:
        raise TooFewRelations(f"need at least 2 relations, got {X.shape[1]}")
    out = []
    for k, W in (("Q", p.W_Q), ("K", p.W_K), ("V", p.W_V)):
        w, b = p.conv[k]
        out.append(nx.conv1d(X @ W, w, b))
    return tuple(out)


def relation_attention_scores(Q, K, node: int | None = None, epsilon: float | None = None) -> Tensor:
    """Row-softmax of Q K^T / epsilon over relations: (n, N, N), or (N, N) for one node."""
    Q, K = nx.as_tensor(Q), nx.as_tensor(K)
    if Q.shape != K.shape or Q.ndim != 3 or Q.shape[1] == 0:
        raise ShapeMismatch(f"relation_attention_scores: Q {Q.shape}, K {K.shape}")
    eps = float(Q.shape[2]) if epsilon is None else float(epsilon)
    if node is not None:
        Q, K = Q[node:node + 1], K[node:node + 1]
    logits = nx.scalar_mul(Q @ nx.transpose(K, (0, 2, 1)), 1.0 / eps)
    att = nx.softmax(logits, axis=-1)
    return att.reshape(att.shape[1:]) if node is not None else att


def cross_relation_fuse(I_rel, att, V, target: int | None = None) -> Tensor:
    """I^target + sum over r != target of att[target, r] * V^r.

    Returns (n, N, d) for all targets, or (n, d) when ``target`` is given.
    """
    X = stack_relations(I_rel)
    V = stack_relations(V)
    att = nx.as_tensor(att)
    N = X.shape[1]
    if target is not None and not 0 <= target < N:
        raise RelationOutOfRange(f"target relation {target} not in [0, {N})")
    off = Tensor(1.0 - np.eye(N))
    fused = X + (att * off) @ V
    return fused[:, target] if target is not None else fused


def mit_forward(I_rel, p: MitParams) -> Tensor:
    """Mean over targets of the cross-relation fused views: (n, d)."""
    X = stack_relations(I_rel)
    Q, K, V = project_qkv(X, p)
    att = relation_attention_scores(Q, K, epsilon=p.epsilon)
    return nx.mean(cross_relation_fuse(X, att, V), axis=1)
