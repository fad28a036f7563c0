"""Bidirectional GRU encoding of one modality stream.

Weights act on the concatenation ``[h_prev, x_t]``; the candidate state
sees ``[r * h_prev, x_t]`` (a standard GRU cell).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import EmptySequence, ShapeMismatch
from .numerics import Tensor
from .params import ParamStore, uniform_fan_in


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1] - self.hidden_dim


@dataclass
class BiGruParams:
    forward: GruParams
    backward: GruParams

    @property
    def hidden_dim(self) -> int:
        return self.forward.hidden_dim


def init_gru(store: ParamStore, prefix: str, input_dim: int, hidden_dim: int,
             rng: np.random.Generator) -> GruParams:
    fan = hidden_dim + input_dim
    mats = {}
    for gate in ("z", "r", "h"):
        mats[f"W_{gate}"] = store.add(f"{prefix}.W_{gate}",
                                      uniform_fan_in(rng, (hidden_dim, fan), fan))
    for gate in ("z", "r", "h"):
        mats[f"b_{gate}"] = store.add(f"{prefix}.b_{gate}",
                                      uniform_fan_in(rng, (hidden_dim,), fan))
    return GruParams(**mats)


def gru_from_store(store, prefix: str) -> GruParams:
    return GruParams(**{k: store[f"{prefix}.{k}"] for k in ("W_z", "W_r", "W_h", "b_z", "b_r", "b_h")})


def init_bigru(store: ParamStore, prefix: str, input_dim: int, hidden_dim: int,
               rng: np.random.Generator, bidirectional: bool = True) -> BiGruParams | GruParams:
    fwd = init_gru(store, prefix + ".fwd", input_dim, hidden_dim, rng)
    if not bidirectional:
        return fwd
    bwd = init_gru(store, prefix + ".bwd", input_dim, hidden_dim, rng)
    return BiGruParams(fwd, bwd)


def gru_cell(x_t, h_prev, p: GruParams) -> Tensor:
    """One GRU step on row vectors ``x_t`` (1, input_dim), ``h_prev`` (1, hidden)."""
    x_t, h_prev = nx.as_tensor(x_t), nx.as_tensor(h_prev)
    x_t = x_t.reshape(1, -1) if x_t.ndim == 1 else x_t
    h_prev = h_prev.reshape(1, -1) if h_prev.ndim == 1 else h_prev
    if x_t.shape[1] != p.input_dim or h_prev.shape[1] != p.hidden_dim:
        raise ShapeMismatch(f"gru_cell: x {x_t.shape}, h {h_prev.shape}, "
                            f"expects ({p.input_dim}, {p.hidden_dim})")
    hx = nx.concat([h_prev, x_t], axis=1)
    z = nx.sigmoid(hx @ p.W_z.T + p.b_z)
    r = nx.sigmoid(hx @ p.W_r.T + p.b_r)
    cand = nx.tanh(nx.concat([r * h_prev, x_t], axis=1) @ p.W_h.T + p.b_h)
    return (1.0 - z) * h_prev + z * cand


def _directions(p) -> list:
    return [(p, False)] if isinstance(p, GruParams) else [(p.forward, False), (p.backward, True)]


def encode_lockstep(seqs: list, params: list) -> list:
    """Encode several equal-length streams at once.

    Every direction of every stream advances in one batched recurrence;
    input projections are hoisted out of the loop and backward directions
    see their inputs pre-reversed. Values match stepping ``gru_cell``.
    """
    xs = [nx.as_tensor(x) for x in seqs]
    xs = [x.reshape(1, -1) if x.ndim == 1 else x for x in xs]
    T = xs[0].shape[0]
    if T == 0:
        raise EmptySequence("encoder needs at least one step")
    runs = []
    for x, p in zip(xs, params):
        first = p if isinstance(p, GruParams) else p.forward
        if x.shape[0] != T:
            raise ShapeMismatch("lockstep streams must share their length")
        if x.shape[1] != first.input_dim:
            raise ShapeMismatch(f"encoder: input dim {x.shape[1]} != {first.input_dim}")
        runs.extend((x, g, rev) for g, rev in _directions(p))
    hd = runs[0][1].hidden_dim
    u_zr, x_zr, u_h, x_h = [], [], [], []
    for x, g, rev in runs:
        xin = x[::-1] if rev else x
        w_zr = nx.concat([g.W_z, g.W_r], axis=0)                 # (2h, h+d)
        u_zr.append(w_zr[:, :hd].T)
        x_zr.append(xin @ w_zr[:, hd:].T + nx.concat([g.b_z, g.b_r]))
        u_h.append(g.W_h[:, :hd].T)
        x_h.append(xin @ g.W_h[:, hd:].T + g.b_h)
    U_zr, X_zr = nx.stack(u_zr), nx.stack(x_zr)                  # (S, h, 2h), (S, T, 2h)
    U_h, X_h = nx.stack(u_h), nx.stack(x_h)
    h = Tensor(np.zeros((len(runs), 1, hd)))
    steps = []
    for t in range(T):
        gates = nx.sigmoid(h @ U_zr + X_zr[:, t:t + 1])
        z, r = gates[:, :, :hd], gates[:, :, hd:]
        cand = nx.tanh((r * h) @ U_h + X_h[:, t:t + 1])
        h = h + z * (cand - h)
        steps.append(h)
    Hs = nx.concat(steps, axis=1)                                # (S, T, h)
    out, k = [], 0
    for p in params:
        parts = []
        for _, rev in _directions(p):
            parts.append(Hs[k, ::-1] if rev else Hs[k])
            k += 1
        out.append(parts[0] if len(parts) == 1 else nx.concat(parts, axis=1))
    return out


def bigru_encode(seq, p: BiGruParams | GruParams) -> Tensor:
    """Encode a (T, input_dim) sequence into (T, 2*hidden) rows ``[fwd_t : bwd_t]``.

    Passing a bare ``GruParams`` runs the forward direction only.
    """
    x = nx.as_tensor(seq) if not isinstance(seq, list) else nx.stack(seq, axis=0)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[0] == 0:
        raise EmptySequence("bigru_encode needs at least one step")
    return encode_lockstep([x], [p])[0]
