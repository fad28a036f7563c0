"""Cross-modal attention fusion of the per-modality hidden sequences.

Hidden sequences are softmax-normalised along the sequence axis, mean
pooled over a window around each utterance, scored per modality and
mixed by the normalised scores into one fused vector per utterance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DegenerateNormalizer, EmptySequence, NonFinite, ShapeMismatch
from .numerics import Tensor
from .params import ParamStore

MODALITIES = ("t", "a", "v")
CLAMP = 50.0
MIN_DENOM = 1e-8


@dataclass
class FusionParams:
    W: dict     # modality -> (d,) score vector
    lam: dict   # modality -> (1,) mixing coefficient
    b: dict     # modality -> (d,) bias

    @classmethod
    def from_store(cls, store, prefix: str = "fusion") -> "FusionParams":
        return cls(W={m: store[f"{prefix}.W_{m}"] for m in MODALITIES},
                   lam={m: store[f"{prefix}.lam_{m}"] for m in MODALITIES},
                   b={m: store[f"{prefix}.b_{m}"] for m in MODALITIES})


def init_fusion(store: ParamStore, dim: int, rng: np.random.Generator,
                prefix: str = "fusion") -> FusionParams:
    # Positive scores at init keep the ratio normaliser away from zero.
    lo, hi = 0.5 / np.sqrt(dim), 1.5 / np.sqrt(dim)
    for m in MODALITIES:
        store.add(f"{prefix}.W_{m}", rng.uniform(lo, hi, size=dim))
    for m in MODALITIES:
        store.add(f"{prefix}.lam_{m}", np.ones(1))
    for m in MODALITIES:
        store.add(f"{prefix}.b_{m}", np.ones(dim))
    return FusionParams.from_store(store, prefix)


def normalize_hidden(psi, d_modality: int) -> Tensor:
    """Column-wise softmax of ``psi / sqrt(d_modality)`` over the sequence axis."""
    if d_modality <= 0:
        raise ValueError("d_modality must be positive")
    psi = nx.as_tensor(psi)
    if psi.ndim != 2 or psi.shape[0] == 0:
        raise EmptySequence("normalize_hidden expects a nonempty (T, d) matrix")
    eps = 1.0 / np.sqrt(d_modality)
    return nx.softmax(nx.scalar_mul(nx.clip(psi, -CLAMP, CLAMP), eps), axis=0)


def pool_modalities(H_t, H_a, H_v) -> tuple:
    out = []
    for H in (H_t, H_a, H_v):
        H = nx.as_tensor(H)
        if H.ndim != 2 or H.shape[0] == 0:
            raise EmptySequence("pool_modalities needs nonempty matrices")
        out.append(nx.mean(H, axis=0))
    return tuple(out)


def _scores(pooled: dict, own: dict, p: FusionParams) -> Tensor:
    """Unnormalised modality scores; works on (d,) vectors or (T, d) rows."""
    cols = []
    for m in MODALITIES:
        acc = p.lam[m] * own[m] + p.b[m]
        for other in MODALITIES:
            if other != m:
                acc = acc + p.lam[other] * pooled[other]
        act = nx.tanh(acc)
        cols.append(nx.tsum(act * p.W[m], axis=-1, keepdims=True))
    return nx.concat(cols, axis=-1)


def _normalise(omega: Tensor, mode: str) -> Tensor:
    if mode == "softmax":
        return nx.softmax(omega, axis=-1)
    total = nx.tsum(omega, axis=-1, keepdims=True)
    if np.any(np.abs(total.data) < MIN_DENOM):
        raise DegenerateNormalizer("modality scores sum to (nearly) zero")
    try:
        w = nx.div(omega, total)
    except NonFinite as exc:
        raise DegenerateNormalizer("normalised modality weights are not finite") from exc
    return w


def modal_attention_weights(H_t, H_a, H_v, xi_t, xi_a, xi_v, p: FusionParams,
                            mode: str = "ratio") -> Tensor:
    """Normalised weights (t, a, v) as a length-3 tensor.

    Each H term is mean-pooled before entering the score so that every
    summand is a d-vector.
    """
    pooled = dict(zip(MODALITIES, pool_modalities(H_t, H_a, H_v)))
    own = dict(zip(MODALITIES, (nx.as_tensor(xi_t), nx.as_tensor(xi_a), nx.as_tensor(xi_v))))
    dims = {t.shape[-1] for t in list(pooled.values()) + list(own.values())}
    dims |= {p.W[m].shape[0] for m in MODALITIES}
    if len(dims) != 1:
        raise ShapeMismatch(f"fusion dims disagree: {sorted(dims)}")
    return _normalise(_scores(pooled, own, p), mode)


def fuse_modalities(xi_t, xi_a, xi_v, weights) -> Tensor:
    xs = [nx.as_tensor(x) for x in (xi_t, xi_a, xi_v)]
    if len({x.shape for x in xs}) != 1:
        raise ShapeMismatch(f"fuse_modalities: {[x.shape for x in xs]}")
    w = nx.as_tensor(weights)
    return xs[0] * w[..., 0:1] + xs[1] * w[..., 1:2] + xs[2] * w[..., 2:3]


def window_matrix(T: int, half_width: int | None) -> np.ndarray:
    """Row i averages rows [i-w, i+w] clipped to the dialogue; None = all rows."""
    if half_width is None:
        return np.full((T, T), 1.0 / T)
    A = np.zeros((T, T))
    for i in range(T):
        lo, hi = max(0, i - half_width), min(T, i + half_width + 1)
        A[i, lo:hi] = 1.0 / (hi - lo)
    return A


def fuse_dialogue(H: dict, p: FusionParams, half_width: int | None = 0,
                  mode: str = "ratio") -> tuple:
    """Fused (T, d) features and (T, 3) weights for every utterance at once."""
    T = H["t"].shape[0]
    A = Tensor(window_matrix(T, half_width))
    pooled = {m: A @ H[m] for m in MODALITIES}
    weights = _normalise(_scores(pooled, pooled, p), mode)
    fused = fuse_modalities(pooled["t"], pooled["a"], pooled["v"], weights)
    return fused, weights
