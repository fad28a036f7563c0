"""End-to-end pipeline: encode, fuse, build graphs, SMGAE, MIT, classify."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import TrainConfig
from .encoder import BiGruParams, encode_lockstep, gru_cell, gru_from_store, init_bigru
from .fusion import MODALITIES, FusionParams, fuse_dialogue, init_fusion, normalize_hidden
from .graph import (INTER_SPEAKER, SAME_SPEAKER, MultiRelGraph, SpeakerEdgeParams,
                    assemble_graph, init_speaker_edge, relation_catalog)
from .mit import MitParams, init_mit, mit_forward
from .numerics import Tensor
from .objective import (ClassifierParams, classify, global_ce_loss, init_classifier,
                        sample_triplets, total_loss, triplet_loss)
from .params import ParamStore, uniform_fan_in
from .smgae import (GatDecoderParams, RgcnParams, apply_masks, edge_contrastive_loss,
                    gat_decode, init_gat, init_mask_tokens, init_rgcn, node_recon_loss,
                    rgcn_encode, sample_masks, sample_negatives)


@dataclass
class ModelMeta:
    dims: dict
    num_classes: int
    num_event_types: int

    @property
    def relations(self) -> list:
        return relation_catalog(self.num_event_types)

    def to_dict(self) -> dict:
        return {"dims": dict(self.dims), "num_classes": self.num_classes,
                "num_event_types": self.num_event_types, "relations": self.relations}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelMeta":
        return cls(dict(d["dims"]), int(d["num_classes"]), int(d["num_event_types"]))


def _hidden_width(cfg: TrainConfig) -> int:
    return cfg.hidden_dim * (1 if cfg.encoder == "gru" else 2)


def fused_width(cfg: TrainConfig) -> int:
    w = _hidden_width(cfg)
    return 3 * w if cfg.fusion_mode == "concat" else w


def build_params(cfg: TrainConfig, meta: ModelMeta, seed: int | None = None) -> ParamStore:
    """Fresh parameters; creation order is fixed so checkpoints line up."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParamStore()
    for m in MODALITIES:
        init_bigru(store, f"enc.{m}", meta.dims[m], cfg.hidden_dim, rng,
                   bidirectional=cfg.encoder != "gru")
    hw = _hidden_width(cfg)
    if cfg.fusion_mode == "attention":
        init_fusion(store, hw, rng)
    fw = fused_width(cfg)
    for r in (SAME_SPEAKER, INTER_SPEAKER):
        init_speaker_edge(store, f"spk.r{r}", fw, cfg.speaker_hidden, rng)
    R = len(meta.relations)
    init_rgcn(store, [fw] + [cfg.rgcn_dim] * cfg.rgcn_layers, R, rng)
    init_mask_tokens(store, fw)
    init_gat(store, cfg.rgcn_dim, fw, rng, slope=cfg.gat_slope)
    store.add("smgae.W_edge", uniform_fan_in(rng, (fw, cfg.edge_dim), fw))
    if cfg.use_mit:
        init_mit(store, cfg.rgcn_dim, rng, kernel=cfg.mit_kernel, scale=cfg.mit_scale)
    init_classifier(store, cfg.rgcn_dim, meta.num_classes, rng)
    return store


def _encoder(store, cfg: TrainConfig, m: str):
    fwd = gru_from_store(store, f"enc.{m}.fwd")
    if cfg.encoder == "gru":
        return fwd
    return BiGruParams(fwd, gru_from_store(store, f"enc.{m}.bwd"))


def encode_modalities(store, cfg: TrainConfig, dialogue) -> dict:
    xs = [Tensor(dialogue.features(m)) for m in MODALITIES]
    ps = [_encoder(store, cfg, m) for m in MODALITIES]
    if cfg.encoder == "none":
        # every utterance is its own length-1 sequence: one step from a zero state
        out = []
        for x, p in zip(xs, ps):
            zero = Tensor(np.zeros((x.shape[0], p.hidden_dim)))
            out.append(nx.concat([gru_cell(x, zero, p.forward), gru_cell(x, zero, p.backward)],
                                 axis=1))
    else:
        out = encode_lockstep(xs, ps)
    return dict(zip(MODALITIES, out))


def fuse_utterances(store, cfg: TrainConfig, dialogue) -> Tensor:
    H = {m: normalize_hidden(psi, psi.shape[1])
         for m, psi in encode_modalities(store, cfg, dialogue).items()}
    if cfg.fusion_mode == "add":
        return H["t"] + H["a"] + H["v"]
    if cfg.fusion_mode == "concat":
        return nx.concat([H["t"], H["a"], H["v"]], axis=1)
    fused, _ = fuse_dialogue(H, FusionParams.from_store(store), cfg.fusion_window,
                             cfg.fusion_norm)
    return fused


def build_batch_graph(store, cfg: TrainConfig, meta: ModelMeta, dialogues: list) -> tuple:
    spk = {r: SpeakerEdgeParams.from_store(store, f"spk.r{r}") for r in (SAME_SPEAKER, INTER_SPEAKER)}
    graphs, labels = [], []
    for d in dialogues:
        d = d.truncated(cfg.context_window)
        fused = fuse_utterances(store, cfg, d)
        graphs.append(assemble_graph(d, fused, spk, meta.num_event_types, cfg.graph_window))
        labels.append(d.labels)
    return MultiRelGraph.union(graphs), np.concatenate(labels), [len(l) for l in labels]


def _rgcn(store, cfg, meta) -> RgcnParams:
    return RgcnParams.from_store(store, cfg.rgcn_layers, len(meta.relations))


def embed(store, cfg: TrainConfig, meta: ModelMeta, graph: MultiRelGraph) -> Tensor:
    I, I_rel = rgcn_encode(graph, _rgcn(store, cfg, meta), cfg.self_weight, per_relation=True)
    if not cfg.use_mit:
        return I
    return mit_forward(I_rel, MitParams.from_store(store, scale=cfg.mit_scale))


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


@dataclass
class ForwardResult:
    P: Tensor
    E: Tensor
    graph: MultiRelGraph
    labels: np.ndarray
    sizes: list
    losses: dict | None = None
    total: Tensor | None = None


def smgae_losses(store, cfg: TrainConfig, meta: ModelMeta, graph: MultiRelGraph,
                 seed: int) -> dict:
    """Masked reconstruction losses on one (batch) graph.

    The target is the live fused features, so the reconstruction gradient
    reaches the encoders through both sides of the cosine.
    """
    ss = np.random.SeedSequence(seed).spawn(2)
    node_tok, edge_tok = store["smgae.node_token"], store["smgae.edge_token"]
    plan = sample_masks(graph, cfg.node_mask_ratio, cfg.edge_mask_ratio, ss[0], node_tok, edge_tok)
    view = apply_masks(graph, plan)
    I = rgcn_encode(view, _rgcn(store, cfg, meta), cfg.self_weight)
    gat = GatDecoderParams.from_store(store, slope=cfg.gat_slope)
    Z = gat_decode(view, I, gat)
    recon = node_recon_loss(graph.nodes, Z, plan.masked_nodes, cfg.lam_reg, [gat.W_dec])
    out = {"node_recon": recon, "edge_contrastive": Tensor(0.0), "plan": plan, "Z": Z}
    if len(plan.masked_edges):
        negs = sample_negatives(graph, plan.masked_edges, cfg.negatives, ss[1])
        D = Z @ store["smgae.W_edge"]
        out["edge_contrastive"] = edge_contrastive_loss(
            D, graph.src[plan.masked_edges], graph.dst[plan.masked_edges], negs)
    return out


def forward(store, cfg: TrainConfig, meta: ModelMeta, dialogues: list, train: bool = False,
            seed: int = 0) -> ForwardResult:
    """Run the pipeline on a batch of dialogues; with ``train`` also build the loss."""
    graph, labels, sizes = build_batch_graph(store, cfg, meta, dialogues)
    E = embed(store, cfg, meta, graph)
    if not train:
        return ForwardResult(classify(E, ClassifierParams.from_store(store)), E, graph, labels, sizes)
    ss = np.random.SeedSequence(seed).spawn(3)
    E_in = dropout(E, cfg.dropout, np.random.default_rng(ss[0]))
    P = classify(E_in, ClassifierParams.from_store(store))
    ce = global_ce_loss(P, labels, sizes)
    if cfg.coeff_triplet > 0 and len(np.unique(labels)) >= 2:
        trips = sample_triplets(labels, cfg.triplet_quota, ss[1], cfg.margin)
        trip = triplet_loss(trips, E)
    else:
        trip = Tensor(0.0)
    losses = {"ce": ce, "triplet": trip, "node_recon": Tensor(0.0),
              "edge_contrastive": Tensor(0.0)}
    coeffs = cfg.coeffs
    if cfg.use_smgae and (cfg.coeff_node > 0 or cfg.coeff_edge > 0):
        sm = smgae_losses(store, cfg, meta, graph, int(ss[2].generate_state(1)[0]))
        losses["node_recon"] = sm["node_recon"]
        losses["edge_contrastive"] = sm["edge_contrastive"]
    else:
        coeffs = dict(coeffs, node_recon=0.0, edge_contrastive=0.0)
    total = total_loss(losses["ce"], losses["triplet"], losses["node_recon"],
                       losses["edge_contrastive"], coeffs)
    return ForwardResult(P, E, graph, labels, sizes, losses, total)
