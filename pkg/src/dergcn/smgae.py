"""Self-supervised masked graph autoencoder.

Nodes and edges are masked with learned tokens, the masked view is
encoded by a relational GCN and decoded by single-head graph attention.
Training signals are a cosine reconstruction loss over masked nodes and
a contrastive loss that ranks each masked edge above sampled non-edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import (EmptyPositives, RatioOutOfRange, ShapeMismatch, StaleMaskPlan,
                     UnknownRelation)
from .graph import MultiRelGraph
from .numerics import Tensor
from .params import ParamStore, uniform_fan_in


@dataclass
class MaskPlan:
    masked_nodes: np.ndarray
    masked_edges: np.ndarray
    node_token: Tensor       # (d,)
    edge_token: Tensor       # (1,)


@dataclass
class RgcnParams:
    W_rel: list      # per layer: list of (d_in, d_out), one per relation
    W_self: list     # per layer: (d_in, d_out)

    @property
    def num_layers(self) -> int:
        return len(self.W_self)

    @property
    def num_relations(self) -> int:
        return len(self.W_rel[0])

    @classmethod
    def from_store(cls, store, num_layers: int, num_relations: int,
                   prefix: str = "rgcn") -> "RgcnParams":
        return cls(
            W_rel=[[store[f"{prefix}.l{t}.W_r{r}"] for r in range(num_relations)]
                   for t in range(num_layers)],
            W_self=[store[f"{prefix}.l{t}.W_self"] for t in range(num_layers)],
        )


@dataclass
class GatDecoderParams:
    W_dec: Tensor    # (d_in, d_out)
    a_src: Tensor    # (d_out,)  first half of the attention vector
    a_dst: Tensor    # (d_out,)  second half
    bias: Tensor     # (d_out,)
    slope: float = 0.2

    @classmethod
    def from_store(cls, store, prefix: str = "gat", slope: float = 0.2) -> "GatDecoderParams":
        return cls(*(store[f"{prefix}.{k}"] for k in ("W_dec", "a_src", "a_dst", "bias")),
                   slope=slope)


def init_rgcn(store: ParamStore, dims: list, num_relations: int, rng: np.random.Generator,
              prefix: str = "rgcn") -> RgcnParams:
    """``dims`` lists layer widths, e.g. [d_in, d_hidden, d_out]."""
    for t, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        for r in range(num_relations):
            store.add(f"{prefix}.l{t}.W_r{r}", uniform_fan_in(rng, (din, dout), din))
        store.add(f"{prefix}.l{t}.W_self", uniform_fan_in(rng, (din, dout), din))
    return RgcnParams.from_store(store, len(dims) - 1, num_relations, prefix)


def init_gat(store: ParamStore, din: int, dout: int, rng: np.random.Generator,
             prefix: str = "gat", slope: float = 0.2) -> GatDecoderParams:
    store.add(f"{prefix}.W_dec", uniform_fan_in(rng, (din, dout), din))
    store.add(f"{prefix}.a_src", uniform_fan_in(rng, (dout,), 2 * dout))
    store.add(f"{prefix}.a_dst", uniform_fan_in(rng, (dout,), 2 * dout))
    store.add(f"{prefix}.bias", uniform_fan_in(rng, (dout,), din))
    return GatDecoderParams.from_store(store, prefix, slope)


def init_mask_tokens(store: ParamStore, dim: int, prefix: str = "smgae") -> tuple:
    return (store.add(f"{prefix}.node_token", np.zeros(dim)),
            store.add(f"{prefix}.edge_token", np.zeros(1)))


# ----------------------------------------------------------------------------
# masking


def _check_ratio(x: float, what: str) -> None:
    if not 0.0 < x < 1.0:
        raise RatioOutOfRange(f"{what} ratio must lie in (0, 1), got {x}")


def sample_masks(g: MultiRelGraph, node_ratio: float, edge_ratio: float, rng_seed,
                 node_token: Tensor | None = None, edge_token: Tensor | None = None) -> MaskPlan:
    """Uniformly mask ceil(ratio * count) nodes and edges without replacement."""
    _check_ratio(node_ratio, "node")
    _check_ratio(edge_ratio, "edge")
    rng = np.random.default_rng(rng_seed)
    n, m = g.num_nodes, g.num_edges
    kn = math.ceil(node_ratio * n) if n else 0
    ke = math.ceil(edge_ratio * m) if m else 0
    nodes = np.sort(rng.choice(n, size=kn, replace=False)) if kn else np.zeros(0, np.int64)
    edges = np.sort(rng.choice(m, size=ke, replace=False)) if ke else np.zeros(0, np.int64)
    d = g.nodes.shape[1]
    return MaskPlan(nodes.astype(np.int64), edges.astype(np.int64),
                    node_token if node_token is not None else Tensor(np.zeros(d)),
                    edge_token if edge_token is not None else Tensor(np.zeros(1)))


@dataclass
class MaskedView:
    graph: MultiRelGraph         # masked features and weights
    source: MultiRelGraph        # untouched original
    plan: MaskPlan


def apply_masks(g: MultiRelGraph, plan: MaskPlan) -> MaskedView:
    """Substitute mask tokens; rows and weights outside the plan are copied bit for bit."""
    n, m = g.num_nodes, g.num_edges
    if np.any(plan.masked_nodes < 0) or np.any(plan.masked_nodes >= n):
        raise StaleMaskPlan("mask plan names nodes outside the graph")
    if np.any(plan.masked_edges < 0) or np.any(plan.masked_edges >= m):
        raise StaleMaskPlan("mask plan names edges outside the graph")
    if plan.node_token.shape != (g.nodes.shape[1],):
        raise StaleMaskPlan(f"node token {plan.node_token.shape} for dim {g.nodes.shape[1]}")
    nodes = nx.replace_rows(g.nodes, plan.masked_nodes, plan.node_token) \
        if len(plan.masked_nodes) else g.nodes
    weight = nx.replace_rows(g.weight, plan.masked_edges, plan.edge_token) \
        if len(plan.masked_edges) else g.weight
    return MaskedView(g.with_features(nodes, weight), g, plan)


# ----------------------------------------------------------------------------
# encoder


def _as_view(gv) -> tuple:
    if isinstance(gv, MaskedView):
        return gv.graph, gv.source.weight
    return gv, gv.weight


def edge_coefficients(g: MultiRelGraph, ref_weight: Tensor) -> Tensor:
    """Per-edge factor (w / c) * e_tilde.

    ``w`` is the (possibly masked) weight, ``c`` the neighbourhood size of
    the source under the edge's relation and ``e_tilde = w / max`` with the
    max taken over the unmasked weights of that neighbourhood.
    """
    R = g.num_relations
    seg = g.src * R + g.rel
    nseg = g.num_nodes * R
    counts = np.bincount(seg, minlength=nseg).astype(np.float64)
    peak = nx.segment_max(ref_weight, seg, nseg)
    peak_e = peak[seg]
    if np.any(peak_e.data <= 0):
        raise ValueError("neighbourhood weights must be positive")
    e_tilde = g.weight / peak_e
    return g.weight * e_tilde * (1.0 / counts[seg])


def rgcn_encode(gv, p: RgcnParams, self_weight: float = 1.0, per_relation: bool = False):
    """Relational GCN over the graph (or masked view).

    Each layer: ReLU(sum_r sum_j coef_ij W_r I_j + self_weight * W_self I_i).
    With ``per_relation`` the last layer also returns, for every relation r,
    ReLU(relation-r messages + self term), giving one embedding per relation.
    """
    g, ref = _as_view(gv)
    if g.num_edges and int(g.rel.max()) >= p.num_relations:
        raise UnknownRelation(f"relation id {int(g.rel.max())} has no weights")
    n = g.num_nodes
    coef = edge_coefficients(g, ref) if g.num_edges else None
    by_rel = [np.nonzero(g.rel == r)[0] for r in range(p.num_relations)]
    h = g.nodes
    rel_out = None
    for t in range(p.num_layers):
        if h.shape[1] != p.W_self[t].shape[0]:
            raise ShapeMismatch(f"layer {t}: input dim {h.shape[1]} != {p.W_self[t].shape[0]}")
        self_term = nx.scalar_mul(h @ p.W_self[t], self_weight)
        aggs = []
        for r, idx in enumerate(by_rel):
            if len(idx) == 0:
                aggs.append(None)
                continue
            msg = (h[g.dst[idx]] @ p.W_rel[t][r]) * coef[idx].reshape(-1, 1)
            aggs.append(nx.segment_sum(msg, g.src[idx], n))
        total = self_term
        for a in aggs:
            if a is not None:
                total = total + a
        last = t == p.num_layers - 1
        if last and per_relation:
            rel_out = [nx.relu(self_term if a is None else self_term + a) for a in aggs]
        h = nx.relu(total)
    return (h, rel_out) if per_relation else h


# ----------------------------------------------------------------------------
# decoder


def attention_pairs(g: MultiRelGraph) -> tuple:
    """Unique (i, j) neighbour pairs across relations plus one self pair per node."""
    n = g.num_nodes
    keys = np.unique(np.concatenate([g.src * n + g.dst, np.arange(n) * (n + 1)]))
    return keys // n, keys % n


def gat_decode(gv, I, p: GatDecoderParams, return_attention: bool = False):
    """Single-head graph attention over neighbours plus self.

    score(i, j) = leaky_relu(a_src . P_i + a_dst . P_j) with P = I W_dec;
    Z_i = sum_j softmax_j(score) P_j + bias.
    """
    g, _ = _as_view(gv)
    I = nx.as_tensor(I)
    if I.shape[0] != g.num_nodes or I.shape[1] != p.W_dec.shape[0]:
        raise ShapeMismatch(f"gat_decode: I {I.shape}, nodes {g.num_nodes}, W {p.W_dec.shape}")
    proj = I @ p.W_dec
    src, dst = attention_pairs(g)
    left = nx.tsum(proj * p.a_src, axis=1)
    right = nx.tsum(proj * p.a_dst, axis=1)
    score = nx.leaky_relu(left[src] + right[dst], p.slope)
    att = nx.segment_softmax(score, src, g.num_nodes)
    Z = nx.segment_sum(proj[dst] * att.reshape(-1, 1), src, g.num_nodes) + p.bias
    if return_attention:
        return Z, (src, dst, att)
    return Z


# ----------------------------------------------------------------------------
# losses


def node_recon_loss(xi, Z, masked_nodes, lam_reg: float = 0.0, params=()) -> Tensor:
    """Mean (1 - cos) over masked nodes plus lam_reg * sum ||W||_F^2.

    A zero vector on either side counts as maximally dissimilar (term 1).
    """
    xi, Z = nx.as_tensor(xi), nx.as_tensor(Z)
    if xi.shape != Z.shape:
        raise ShapeMismatch(f"node_recon_loss: {xi.shape} vs {Z.shape}")
    if lam_reg < 0:
        raise ValueError("lam_reg must be non-negative")
    rows = np.asarray(masked_nodes, dtype=np.int64)
    reg = None
    for w in params:
        term = nx.frobenius_sq(w)
        reg = term if reg is None else reg + term
    if len(rows) == 0:
        base = Tensor(0.0)
    else:
        x_r, z_r = xi.data[rows], Z.data[rows]
        ok = (np.abs(x_r).sum(axis=1) > 0) & (np.abs(z_r).sum(axis=1) > 0)
        good = rows[ok]
        dead = float(len(rows) - len(good))
        if len(good):
            cos = nx.cosine_similarity(xi[good], Z[good])
            base = nx.scalar_mul(nx.tsum(1.0 - cos) + dead, 1.0 / len(rows))
        else:
            base = Tensor(1.0)
    if reg is not None and lam_reg > 0:
        return base + nx.scalar_mul(reg, lam_reg)
    return base


def sample_negatives(g: MultiRelGraph, edges, k: int, rng_seed) -> list:
    """For each edge id, up to ``k`` same-dialogue non-neighbours under its relation."""
    rng = np.random.default_rng(rng_seed)
    present = set(zip(g.src.tolist(), g.dst.tolist(), g.rel.tolist()))
    members = {}
    for node, dia in enumerate(g.node_dialogue.tolist()):
        members.setdefault(dia, []).append(node)
    out = []
    for e in np.asarray(edges, dtype=np.int64):
        i, r = int(g.src[e]), int(g.rel[e])
        cand = [j for j in members[int(g.node_dialogue[i])]
                if j != i and (i, j, r) not in present]
        take = min(k, len(cand))
        out.append(np.sort(rng.choice(cand, size=take, replace=False)).astype(np.int64)
                   if take else np.zeros(0, np.int64))
    return out


def edge_contrastive_loss(D, anchors, positives, negatives: list) -> Tensor:
    """Mean over anchors of -sum_pos log softmax over {pos} + negatives.

    Similarity is the dot product of the rows of ``D``. ``anchors`` and
    ``positives`` list one masked edge each; ``negatives[e]`` holds the
    negative node ids for that edge.
    """
    D = nx.as_tensor(D)
    anchors = np.asarray(anchors, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    if len(anchors) == 0:
        raise EmptyPositives("no masked edges to reconstruct")
    if len(negatives) != len(anchors) or len(positives) != len(anchors):
        raise ShapeMismatch("anchors, positives and negatives must align")
    a_idx, b_idx, grp, is_pos = [], [], [], []
    for e, (a, pos) in enumerate(zip(anchors, positives)):
        cand = [int(pos)] + [int(j) for j in negatives[e]]
        a_idx += [int(a)] * len(cand)
        b_idx += cand
        grp += [e] * len(cand)
        is_pos += [True] + [False] * (len(cand) - 1)
    a_idx, b_idx = np.array(a_idx), np.array(b_idx)
    grp, is_pos = np.array(grp), np.array(is_pos)
    sims = nx.tsum(D[a_idx] * D[b_idx], axis=1)
    lse = nx.segment_logsumexp(sims, grp, len(anchors))
    per_edge = lse - sims[np.nonzero(is_pos)[0]]
    n_anchor = len(np.unique(anchors))
    return nx.scalar_mul(nx.tsum(per_edge), 1.0 / n_anchor)
