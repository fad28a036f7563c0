import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dergcn import numerics as nx
from dergcn.errors import EmptyPositives, RatioOutOfRange, StaleMaskPlan, UnknownRelation
from dergcn.graph import MultiRelGraph
from dergcn.numerics import Tensor
from dergcn.params import ParamStore
from dergcn.smgae import (GatDecoderParams, MaskPlan, RgcnParams, apply_masks,
                          edge_contrastive_loss, gat_decode, init_gat, init_rgcn,
                          node_recon_loss, rgcn_encode, sample_masks, sample_negatives)
from dergcn.training import Adam


def random_graph(rng, n=5, d=3, R=2, p_edge=0.5):
    src, dst, rel = [], [], []
    for i in range(n):
        for j in range(n):
            for r in range(R):
                if i != j and rng.random() < p_edge:
                    src.append(i), dst.append(j), rel.append(r)
    return MultiRelGraph(Tensor(rng.normal(size=(n, d))), np.array(src, np.int64),
                         np.array(dst, np.int64), np.array(rel, np.int64),
                         Tensor(rng.uniform(0.5, 2.0, size=len(src))),
                         [f"r{r}" for r in range(R)])


def empty_graph(X, R=1):
    z = np.zeros(0, np.int64)
    return MultiRelGraph(Tensor(X), z, z, z, Tensor(np.zeros(0)), [f"r{r}" for r in range(R)])


def plan_for(g, nodes=(), edges=(), token=None):
    d = g.nodes.shape[1]
    return MaskPlan(np.array(nodes, np.int64), np.array(edges, np.int64),
                    Tensor(np.full(d, 9.0) if token is None else token), Tensor([7.0]))


def rgcn_oracle(g, W_rel, W_self):
    """Direct double sum over relations and neighbours for one layer."""
    X, w = g.nodes.data, g.weight.data
    n = len(X)
    out = X @ W_self
    for i in range(n):
        for r in range(len(W_rel)):
            nb = [e for e in range(g.num_edges) if g.src[e] == i and g.rel[e] == r]
            if not nb:
                continue
            peak = max(w[e] for e in nb)
            for e in nb:
                out[i] += (w[e] / len(nb)) * (w[e] / peak) * (X[g.dst[e]] @ W_rel[r])
    return np.maximum(out, 0)


# ---------------------------------------------------------------- masking

def test_mask_counts_use_ceiling():
    g = empty_graph(np.zeros((10, 2)))
    assert len(sample_masks(g, 1e-9, 0.5, 0).masked_nodes) == 1
    g = random_graph(np.random.default_rng(0), n=6)
    plan = sample_masks(g, 0.5, 0.3, 0)
    assert len(plan.masked_nodes) == 3
    assert len(plan.masked_edges) == math.ceil(0.3 * g.num_edges)


def test_mask_sampling_is_deterministic():
    g = random_graph(np.random.default_rng(1))
    a, b = sample_masks(g, 0.3, 0.3, 42), sample_masks(g, 0.3, 0.3, 42)
    np.testing.assert_array_equal(a.masked_nodes, b.masked_nodes)
    np.testing.assert_array_equal(a.masked_edges, b.masked_edges)


def test_mask_sampling_is_uniform():
    g = empty_graph(np.zeros((8, 2)))
    hits = np.zeros(8)
    for seed in range(1000):
        hits[sample_masks(g, 0.5, 0.5, seed).masked_nodes] += 1
    assert np.all(np.abs(hits - 500) <= 60)


def test_ratio_bounds():
    g = empty_graph(np.zeros((3, 2)))
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(RatioOutOfRange):
            sample_masks(g, bad, 0.5, 0)
        with pytest.raises(RatioOutOfRange):
            sample_masks(g, 0.5, bad, 0)


def test_empty_plan_is_identity():
    g = random_graph(np.random.default_rng(2))
    v = apply_masks(g, plan_for(g)).graph
    np.testing.assert_array_equal(v.nodes.data, g.nodes.data)
    np.testing.assert_array_equal(v.weight.data, g.weight.data)


def test_all_nodes_plan():
    g = random_graph(np.random.default_rng(3))
    v = apply_masks(g, plan_for(g, nodes=range(g.num_nodes))).graph
    assert np.all(v.nodes.data == 9.0)


def test_single_node_plan_is_local():
    g = random_graph(np.random.default_rng(4))
    v = apply_masks(g, plan_for(g, nodes=[3])).graph
    differs = np.any(v.nodes.data != g.nodes.data, axis=1)
    np.testing.assert_array_equal(np.nonzero(differs)[0], [3])


def test_stale_plan():
    g = random_graph(np.random.default_rng(5))
    with pytest.raises(StaleMaskPlan):
        apply_masks(g, plan_for(g, nodes=[g.num_nodes]))
    with pytest.raises(StaleMaskPlan):
        apply_masks(g, plan_for(g, edges=[g.num_edges]))


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_masking_keeps_source_and_unmasked_entries(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n=n)
    nodes0, w0 = g.nodes.data.copy(), g.weight.data.copy()
    plan = sample_masks(g, 0.4, 0.4, seed, Tensor(rng.normal(size=3)), Tensor([0.3]))
    v = apply_masks(g, plan).graph
    keep_n = np.setdiff1d(np.arange(n), plan.masked_nodes)
    keep_e = np.setdiff1d(np.arange(g.num_edges), plan.masked_edges)
    assert v.nodes.data[keep_n].tobytes() == nodes0[keep_n].tobytes()
    assert v.weight.data[keep_e].tobytes() == w0[keep_e].tobytes()
    assert g.nodes.data.tobytes() == nodes0.tobytes()
    assert g.weight.data.tobytes() == w0.tobytes()


# ---------------------------------------------------------------- encoder

def layer_params(W_rel, W_self):
    return RgcnParams([[Tensor(w) for w in W_rel]], [Tensor(W_self)])


def test_rgcn_zero_weights():
    g = random_graph(np.random.default_rng(6))
    p = layer_params([np.zeros((3, 2))] * 2, np.zeros((3, 2)))
    assert np.all(rgcn_encode(g, p).data == 0)


def test_rgcn_self_term_only():
    x = np.array([[0.5, -1.0, 2.0]])
    p = layer_params([np.zeros((3, 3))], np.eye(3))
    np.testing.assert_array_equal(rgcn_encode(empty_graph(x), p).data, np.maximum(x, 0))


def test_rgcn_matches_double_sum_oracle():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(3, 2))
    src, dst = np.array([0, 0, 1, 2]), np.array([1, 2, 0, 0])
    g = MultiRelGraph(Tensor(X), src, dst, np.zeros(4, np.int64),
                      Tensor([1.0, 2.0, 0.5, 3.0]), ["r0"])
    W_rel, W_self = [rng.normal(size=(2, 2))], rng.normal(size=(2, 2))
    out = rgcn_encode(g, layer_params(W_rel, W_self)).data
    np.testing.assert_allclose(out, rgcn_oracle(g, W_rel, W_self), rtol=1e-12)


def test_rgcn_masked_weights_use_unmasked_peak():
    rng = np.random.default_rng(8)
    g = random_graph(rng, n=4, R=1, p_edge=1.0)
    W = [rng.normal(size=(3, 3))], rng.normal(size=(3, 3))
    plan = plan_for(g, edges=[0])
    out = rgcn_encode(apply_masks(g, plan), layer_params(*W)).data
    masked = apply_masks(g, plan).graph
    # oracle: masked weight divided by the original neighbourhood max
    w, w0 = masked.weight.data, g.weight.data
    X = g.nodes.data
    expect = X @ W[1]
    for i in range(4):
        nb = [e for e in range(g.num_edges) if g.src[e] == i]
        peak = max(w0[e] for e in nb)
        for e in nb:
            expect[i] += (w[e] / len(nb)) * (w[e] / peak) * (X[g.dst[e]] @ W[0][0])
    np.testing.assert_allclose(out, np.maximum(expect, 0), rtol=1e-12)


def test_rgcn_unknown_relation():
    g = random_graph(np.random.default_rng(9), R=3, p_edge=1.0)
    with pytest.raises(UnknownRelation):
        rgcn_encode(g, layer_params([np.zeros((3, 2))] * 2, np.zeros((3, 2))))


@settings(max_examples=30)
@given(st.permutations(range(5)), st.integers(0, 10_000))
def test_rgcn_permutation_equivariance(perm, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    store = ParamStore()
    p = init_rgcn(store, [3, 4, 2], 2, rng)
    perm = np.array(perm)
    inv = np.argsort(perm)           # old id -> new id
    h = MultiRelGraph(Tensor(g.nodes.data[perm]), inv[g.src], inv[g.dst], g.rel, g.weight,
                      g.relations)
    np.testing.assert_allclose(rgcn_encode(h, p).data, rgcn_encode(g, p).data[perm], atol=1e-12)


def test_rgcn_per_relation_outputs():
    rng = np.random.default_rng(10)
    g = random_graph(rng)
    p = init_rgcn(ParamStore(), [3, 2], 2, rng)
    h, per = rgcn_encode(g, p, per_relation=True)
    assert len(per) == 2 and all(t.shape == h.shape for t in per)


# ---------------------------------------------------------------- decoder

def gat_params(W, a_src, a_dst, bias=None):
    bias = np.zeros(len(a_src)) if bias is None else bias
    return GatDecoderParams(Tensor(W), Tensor(a_src), Tensor(a_dst), Tensor(bias))


def test_gat_isolated_node():
    rng = np.random.default_rng(11)
    I, W = rng.normal(size=(1, 3)), rng.normal(size=(3, 2))
    Z, (_, _, att) = gat_decode(empty_graph(np.zeros((1, 3))), I,
                                gat_params(W, rng.normal(size=2), rng.normal(size=2)),
                                return_attention=True)
    np.testing.assert_array_equal(att.data, [1.0])
    np.testing.assert_allclose(Z.data, I @ W, rtol=1e-15)


def test_gat_symmetric_neighbours():
    g = MultiRelGraph(Tensor(np.zeros((3, 2))), np.array([0, 0]), np.array([1, 2]),
                      np.zeros(2, np.int64), Tensor([1.0, 1.0]), ["r0"])
    I = np.tile([0.4, -0.2], (3, 1))
    rng = np.random.default_rng(12)
    _, (src, _, att) = gat_decode(g, I, gat_params(rng.normal(size=(2, 2)), rng.normal(size=2),
                                                   rng.normal(size=2)), return_attention=True)
    np.testing.assert_allclose(att.data[src == 0], [1 / 3] * 3, rtol=1e-14)


def test_gat_scalar_oracle():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(3, 2))
    g = MultiRelGraph(Tensor(X), np.array([0, 1, 2]), np.array([1, 2, 0]),
                      np.zeros(3, np.int64), Tensor([1.0, 1.0, 1.0]), ["r0"])
    W, a_s, a_d, b = rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
    Z = gat_decode(g, X, gat_params(W, a_s, a_d, b)).data
    P = X @ W
    lrelu = lambda v: v if v > 0 else 0.2 * v
    for i, nbrs in {0: [0, 1], 1: [1, 2], 2: [0, 2]}.items():
        sc = [lrelu(a_s @ P[i] + a_d @ P[j]) for j in nbrs]
        att = np.exp(sc) / np.exp(sc).sum()
        np.testing.assert_allclose(Z[i], sum(a * P[j] for a, j in zip(att, nbrs)) + b, rtol=1e-12)


@settings(max_examples=40)
@given(st.integers(1, 7), st.integers(0, 10_000))
def test_gat_attention_rows_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n=n)
    p = init_gat(ParamStore(), 3, 2, rng)
    _, (src, _, att) = gat_decode(g, rng.normal(size=(n, 3)), p, return_attention=True)
    sums = np.bincount(src, weights=att.data, minlength=n)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)


# ---------------------------------------------------------------- losses

def test_recon_examples():
    xi = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert node_recon_loss(xi, xi, [0, 1]).item() == pytest.approx(0.0, abs=1e-15)
    ortho = np.array([[0.0, 3.0], [-1.0, 0.0]])
    assert node_recon_loss(xi, ortho, [0, 1]).item() == pytest.approx(1.0, abs=1e-15)
    loss = node_recon_loss([[1.0, 0.0]], [[1.0, 1.0]], [0]).item()
    assert loss == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-15)
    assert loss == pytest.approx(0.29289, abs=1e-5)


def test_recon_zero_vector_counts_as_dissimilar():
    assert node_recon_loss([[0.0, 0.0], [1.0, 0.0]], [[1.0, 1.0], [1.0, 0.0]],
                           [0, 1]).item() == pytest.approx(0.5)


def test_recon_regulariser():
    W = Tensor(np.array([[1.0, 2.0]]))
    xi = np.array([[1.0, 1.0]])
    assert node_recon_loss(xi, 3 * xi, [0], 0.1, [W]).item() == pytest.approx(0.5)


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.floats(0.01, 10))
def test_recon_nonnegative_and_zero_on_collinear(seed, scale):
    rng = np.random.default_rng(seed)
    xi, Z = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert node_recon_loss(xi, Z, [0, 2, 3]).item() >= 0
    assert node_recon_loss(xi, scale * xi, [0, 2, 3]).item() == pytest.approx(0.0, abs=1e-12)


def test_edge_contrastive_examples():
    D = np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]])
    assert edge_contrastive_loss(D, [0], [1], [np.array([], np.int64)]).item() == 0.0
    loss = edge_contrastive_loss(D, [0], [1], [np.array([2])]).item()
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(EmptyPositives):
        edge_contrastive_loss(D, [], [], [])


def test_edge_contrastive_vanishes_as_positive_dominates():
    prev = math.inf
    for s in (1.0, 1.5, 2.0, 3.0, 4.0):
        D = np.array([[s, 0.0], [s, 0.0], [0.0, 1.0]])
        loss = edge_contrastive_loss(D, [0], [1], [np.array([2])]).item()
        assert 0 < loss < prev
        prev = loss
    assert prev < 1e-6


def test_negatives_are_non_neighbours():
    g = random_graph(np.random.default_rng(14), n=6, p_edge=0.3)
    present = set(zip(g.src.tolist(), g.dst.tolist(), g.rel.tolist()))
    negs = sample_negatives(g, np.arange(g.num_edges), 5, 0)
    for e, ns in enumerate(negs):
        for j in ns:
            assert j != g.src[e] and (int(g.src[e]), int(j), int(g.rel[e])) not in present


def test_smgae_gradient_through_encoder_and_decoder():
    rng = np.random.default_rng(15)
    g = random_graph(rng, n=4)
    store = ParamStore()
    p = init_rgcn(store, [3, 3], 2, rng)
    gp = init_gat(store, 3, 3, rng)
    plan = plan_for(g, nodes=[1, 2], edges=[0], token=rng.normal(size=3))

    def f(X):
        h = g.with_features(X, g.weight)
        v = apply_masks(h, plan)
        Z = gat_decode(v, rgcn_encode(v, p), gp)
        return node_recon_loss(h.nodes, Z, plan.masked_nodes) + \
            edge_contrastive_loss(Z, [0], [1], [np.array([2, 3])])

    assert nx.finite_diff_check(f, rng.normal(size=(4, 3))) < 1e-4


def test_recon_training_decreases_loss():
    rng = np.random.default_rng(16)
    g = random_graph(rng, n=6, d=4)
    store = ParamStore()
    p = init_rgcn(store, [4, 8, 8], 2, rng)
    gp = init_gat(store, 8, 4, rng)
    plan = sample_masks(g, 0.3, 0.3, 0, store.add("tok", np.zeros(4)), store.add("etok", np.zeros(1)))
    opt = Adam(store, 3e-4)
    losses = []
    for _ in range(51):
        store.zero_grad()
        v = apply_masks(g, plan)
        loss = node_recon_loss(g.nodes, gat_decode(v, rgcn_encode(v, p), gp), plan.masked_nodes)
        losses.append(loss.item())
        nx.backward(loss)
        opt.step()
    assert all(b < a for a, b in zip(losses, losses[1:]))
