"""Weighted multi-relational utterance graphs.

Relations are catalogued with the two speaker relations first
(same speaker, different speaker) followed by one relation per event
type. Edges are stored as parallel arrays; an edge ``(src, dst)`` puts
``dst`` in the neighbourhood of ``src`` and carries a message from
``dst`` into ``src`` during encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import EmptyNeighborhood, NonBinaryMembership, ShapeMismatch
from .numerics import Tensor
from .params import ParamStore, uniform_fan_in

SAME_SPEAKER, INTER_SPEAKER = 0, 1


@dataclass
class Utterance:
    speaker: int
    label: int
    feat_t: np.ndarray
    feat_a: np.ndarray
    feat_v: np.ndarray
    event_ids: frozenset = frozenset()

    def features(self, modality: str) -> np.ndarray:
        return getattr(self, f"feat_{modality}")


@dataclass
class Dialogue:
    id: str
    utterances: list
    events: dict = field(default_factory=dict)  # event id -> event type

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"dialogue {self.id!r} has no utterances")
        for u in self.utterances:
            unknown = set(u.event_ids) - set(self.events)
            if unknown:
                raise ValueError(f"dialogue {self.id!r}: undeclared events {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def labels(self) -> np.ndarray:
        return np.array([u.label for u in self.utterances], dtype=np.int64)

    @property
    def speakers(self) -> np.ndarray:
        return np.array([u.speaker for u in self.utterances], dtype=np.int64)

    def features(self, modality: str) -> np.ndarray:
        return np.stack([u.features(modality) for u in self.utterances])

    def truncated(self, window: int | None) -> "Dialogue":
        """The last ``window`` utterances (all of them when ``window`` is None)."""
        if window is None or window >= len(self.utterances):
            return self
        keep = self.utterances[-window:]
        used = set().union(*(u.event_ids for u in keep))
        return Dialogue(self.id, keep, {e: t for e, t in self.events.items() if e in used})

    def membership(self, event_type: int) -> np.ndarray:
        """(n, k) 0/1 matrix of utterances against the events of one type."""
        ids = sorted(e for e, t in self.events.items() if t == event_type)
        A = np.zeros((len(self.utterances), len(ids)))
        for i, u in enumerate(self.utterances):
            for c, e in enumerate(ids):
                if e in u.event_ids:
                    A[i, c] = 1.0
        return A


def relation_catalog(num_event_types: int) -> list:
    return ["speaker:same", "speaker:inter"] + [f"event:{k}" for k in range(num_event_types)]


@dataclass
class MultiRelGraph:
    nodes: Tensor                 # (n, d) fused features
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    weight: Tensor                # (m,)
    relations: list
    node_dialogue: np.ndarray = None
    dialogue_ids: list = field(default_factory=list)

    def __post_init__(self):
        n = self.nodes.shape[0]
        if self.node_dialogue is None:
            self.node_dialogue = np.zeros(n, dtype=np.int64)
        if np.any(self.src == self.dst):
            raise ValueError("self-edges are not stored")

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def edges(self) -> list:
        w = self.weight.data
        return [(int(s), int(d), int(r), float(x))
                for s, d, r, x in zip(self.src, self.dst, self.rel, w)]

    def with_features(self, nodes: Tensor, weight: Tensor) -> "MultiRelGraph":
        return MultiRelGraph(nodes, self.src, self.dst, self.rel, weight, self.relations,
                             self.node_dialogue, self.dialogue_ids)

    def dump(self) -> str:
        name = ",".join(self.dialogue_ids) or "-"
        lines = [f"# graph {name} nodes {self.num_nodes} edges {self.num_edges}"]
        lines += [f"# relation {k} {r}" for k, r in enumerate(self.relations)]
        lines += [f"{s} {d} {r} {x!r}" for s, d, r, x in self.edges()]
        return "\n".join(lines) + "\n"

    @staticmethod
    def union(graphs: list) -> "MultiRelGraph":
        """Disjoint union; node ids are offset, no cross-graph edges appear."""
        if len({tuple(g.relations) for g in graphs}) != 1:
            raise ValueError("graphs disagree on the relation catalog")
        offs = np.cumsum([0] + [g.num_nodes for g in graphs])
        return MultiRelGraph(
            nodes=nx.concat([g.nodes for g in graphs], axis=0),
            src=np.concatenate([g.src + o for g, o in zip(graphs, offs)]).astype(np.int64),
            dst=np.concatenate([g.dst + o for g, o in zip(graphs, offs)]).astype(np.int64),
            rel=np.concatenate([g.rel for g in graphs]).astype(np.int64),
            weight=nx.concat([g.weight for g in graphs], axis=0),
            relations=list(graphs[0].relations),
            node_dialogue=np.concatenate([np.full(g.num_nodes, k) for k, g in enumerate(graphs)]),
            dialogue_ids=[i for g in graphs for i in (g.dialogue_ids or ["-"])],
        )


def parse_dump(text: str) -> dict:
    """Inverse of ``MultiRelGraph.dump``: relation catalog and edge records."""
    relations, edges, header = {}, [], None
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "#":
            if parts[1] == "relation":
                relations[int(parts[2])] = parts[3]
            elif parts[1] == "graph":
                header = {"name": parts[2], "nodes": int(parts[4]), "edges": int(parts[6])}
            continue
        s, d, r, w = parts
        edges.append((int(s), int(d), int(r), float(w)))
    return {"header": header, "relations": [relations[k] for k in sorted(relations)],
            "edges": edges}


# ----------------------------------------------------------------------------
# event relations


def build_event_edges(A, relation_id: int) -> tuple:
    """Edges from a 0/1 membership matrix: i~j iff they share an event.

    Returns ``(src, dst, rel, weight)`` with weight = number of shared
    events (raw co-membership count, never clamped).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeMismatch(f"membership matrix must be 2-D, got {A.shape}")
    if not np.all((A == 0) | (A == 1)):
        raise NonBinaryMembership("membership entries must be 0 or 1")
    co = A @ A.T
    np.fill_diagonal(co, 0.0)
    src, dst = np.nonzero(np.minimum(co, 1.0) == 1.0)
    return (src.astype(np.int64), dst.astype(np.int64),
            np.full(len(src), relation_id, dtype=np.int64), co[src, dst])


# ----------------------------------------------------------------------------
# speaker relations


@dataclass
class SpeakerEdgeParams:
    W1: Tensor   # (hidden, 1)
    W2: Tensor   # (2d, hidden)
    b1: Tensor   # (hidden,)
    b2: Tensor   # (hidden,)

    @classmethod
    def from_store(cls, store, prefix: str) -> "SpeakerEdgeParams":
        return cls(*(store[f"{prefix}.{k}"] for k in ("W1", "W2", "b1", "b2")))


def init_speaker_edge(store: ParamStore, prefix: str, dim: int, hidden: int,
                      rng: np.random.Generator) -> SpeakerEdgeParams:
    store.add(f"{prefix}.W1", uniform_fan_in(rng, (hidden, 1), hidden))
    store.add(f"{prefix}.W2", uniform_fan_in(rng, (2 * dim, hidden), 2 * dim))
    store.add(f"{prefix}.b1", uniform_fan_in(rng, (hidden,), hidden))
    store.add(f"{prefix}.b2", uniform_fan_in(rng, (hidden,), 2 * dim))
    return SpeakerEdgeParams.from_store(store, prefix)


def speaker_edge_scores(X, src, dst, indicator, p: SpeakerEdgeParams) -> Tensor:
    """Similarity scores for many pairs: W1 (ReLU(W2 [x_i, x_j * ind] + b2) + b1)."""
    X = nx.as_tensor(X)
    ind = np.asarray(indicator, dtype=np.float64).reshape(-1, 1)
    if p.W2.shape[0] != 2 * X.shape[1]:
        raise ShapeMismatch(f"speaker edge params expect dim {p.W2.shape[0] // 2}, got {X.shape[1]}")
    pair = nx.concat([X[np.asarray(src)], X[np.asarray(dst)] * ind], axis=1)
    hidden = nx.relu(pair @ p.W2 + p.b2) + p.b1
    return (hidden @ p.W1).reshape(-1)


def speaker_edge_score(xi_i, xi_j, indicator: int, p: SpeakerEdgeParams) -> Tensor:
    if indicator not in (0, 1):
        raise ValueError("indicator must be 0 or 1")
    X = nx.stack([nx.as_tensor(xi_i), nx.as_tensor(xi_j)], axis=0)
    if X.ndim != 2:
        raise ShapeMismatch("speaker_edge_score expects two vectors")
    return speaker_edge_scores(X, [0], [1], [indicator], p).reshape(())


def speaker_edge_weights(scores: dict) -> dict:
    """Softmax of neighbour scores; keys are neighbour ids."""
    if not scores:
        raise EmptyNeighborhood("node has no neighbours")
    keys = list(scores)
    vals = nx.stack([nx.as_tensor(scores[k]).reshape(()) for k in keys], axis=0)
    w = nx.softmax(vals, axis=0)
    return {k: w[i] for i, k in enumerate(keys)}


def speaker_pairs(speakers, window: int | None = None) -> list:
    """(i, j, relation) for the nearest earlier and later turn of every speaker.

    ``window`` bounds |i - j| when set.
    """
    speakers = list(speakers)
    n = len(speakers)
    out = []
    for i in range(n):
        nbrs = set()
        for s in sorted(set(speakers)):
            for rng_ in (range(i - 1, -1, -1), range(i + 1, n)):
                for j in rng_:
                    if window is not None and abs(i - j) > window:
                        break
                    if speakers[j] == s:
                        nbrs.add(j)
                        break
        for j in sorted(nbrs):
            out.append((i, j, SAME_SPEAKER if speakers[i] == speakers[j] else INTER_SPEAKER))
    return out


def assemble_graph(d: Dialogue, fused, speaker_params: dict, num_event_types: int,
                   window: int | None = None) -> MultiRelGraph:
    """Graph for one dialogue: learned speaker weights plus co-membership event weights."""
    fused = nx.as_tensor(fused)
    n = len(d)
    if fused.shape[0] != n:
        raise ShapeMismatch(f"{fused.shape[0]} fused vectors for {n} utterances")
    relations = relation_catalog(num_event_types)
    srcs, dsts, rels, weights = [], [], [], []
    pairs = speaker_pairs(d.speakers, window)
    for r in (SAME_SPEAKER, INTER_SPEAKER):
        sel = [(i, j) for i, j, rr in pairs if rr == r]
        if not sel:
            continue
        s = np.array([i for i, _ in sel], dtype=np.int64)
        t = np.array([j for _, j in sel], dtype=np.int64)
        rho = speaker_edge_scores(fused, s, t, np.ones(len(s)), speaker_params[r])
        weights.append(nx.segment_softmax(rho, s, n))
        srcs.append(s)
        dsts.append(t)
        rels.append(np.full(len(s), r, dtype=np.int64))
    for k in range(num_event_types):
        s, t, rr, w = build_event_edges(d.membership(k), 2 + k)
        if len(s):
            srcs.append(s)
            dsts.append(t)
            rels.append(rr)
            weights.append(Tensor(w))
    if srcs:
        src, dst, rel = np.concatenate(srcs), np.concatenate(dsts), np.concatenate(rels)
        weight = nx.concat(weights, axis=0)
    else:
        src = dst = rel = np.zeros(0, dtype=np.int64)
        weight = Tensor(np.zeros(0))
    return MultiRelGraph(fused, src, dst, rel, weight, relations, dialogue_ids=[d.id])
