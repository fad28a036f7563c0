"""Training loop, evaluation, checkpoints and ablations."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .config import TrainConfig, variant_config
from .data import Dataset
from .errors import ConfigInvalid, DimensionMismatch
from .metrics import MetricsReport
from .model import ModelMeta, build_params, forward, smgae_losses, build_batch_graph
from .objective import predict_label
from .params import ParamStore

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "train_loss", "ce", "triplet", "node_recon", "edge_contrastive",
               "val_wa", "val_wf1")
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class Adam:
    """Adam with coupled L2: the decay term is added to the gradient."""

    def __init__(self, params: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                 l2: float = 0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.l2 = lr, beta1, beta2, eps, l2
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.l2:
                g = g + self.l2 * p.data
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ----------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: ParamStore
    config: TrainConfig
    meta: ModelMeta
    epoch: int = 0

    def manifest(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "config_hash": self.config.hash(),
            "config": self.config.to_dict(),
            "meta": self.meta.to_dict(),
            "relations": self.meta.relations,
            "epoch": self.epoch,
            "params": [{"name": k, "shape": list(t.shape)} for k, t in self.params.items()],
        }

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            def put(name, data):
                info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o644 << 16
                zf.writestr(info, data)
            put("manifest.json", json.dumps(self.manifest(), sort_keys=True, indent=1))
            for k, t in self.params.items():
                put(f"params/{k}.f64", np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            man = json.loads(zf.read("manifest.json"))
            if man["format_version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {man['format_version']}")
            store = ParamStore()
            for entry in man["params"]:
                raw = zf.read(f"params/{entry['name']}.f64")
                arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
                store.add(entry["name"], arr)
        cfg = TrainConfig.from_dict(man["config"])
        if cfg.hash() != man["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        return cls(store, cfg, ModelMeta.from_dict(man["meta"]), int(man["epoch"]))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ----------------------------------------------------------------------------
# data plumbing


def split_indices(n: int, fractions, seed: int) -> tuple:
    """Seeded partition of range(n) into train / val / test index arrays."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
            np.sort(order[n_train + n_val:]))


def split_dataset(ds: Dataset, cfg: TrainConfig) -> dict:
    tr, va, te = split_indices(len(ds), cfg.split, cfg.seed)
    return {"train": ds.subset(tr), "val": ds.subset(va), "test": ds.subset(te)}


def meta_for(ds: Dataset) -> ModelMeta:
    return ModelMeta(dict(ds.dims), ds.num_classes, ds.num_event_types)


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def predict(store, cfg: TrainConfig, meta: ModelMeta, dialogues: list, batch_size: int = 32) -> tuple:
    ys, preds = [], []
    for batch in _batches(list(dialogues), batch_size):
        out = forward(store, cfg, meta, batch, train=False)
        ys.append(out.labels)
        preds.append(predict_label(out.P))
    if not ys:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(ys), np.concatenate(preds)


def evaluate(checkpoint: Checkpoint, dataset) -> MetricsReport:
    """Inference metrics (no dropout, no masking) on a Dataset or dialogue list."""
    dialogues = dataset.dialogues if isinstance(dataset, Dataset) else list(dataset)
    meta = checkpoint.meta
    if isinstance(dataset, Dataset):
        if dataset.dims != meta.dims or dataset.num_classes != meta.num_classes \
                or dataset.num_event_types != meta.num_event_types:
            raise DimensionMismatch("dataset dims do not match the checkpoint")
    y, p = predict(checkpoint.params, checkpoint.config, meta, dialogues,
                   checkpoint.config.batch_size)
    return MetricsReport.from_predictions(y, p, meta.num_classes)


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint: Checkpoint           # best validation WF1
    final: Checkpoint                # last epoch
    log: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)

    def log_csv(self) -> str:
        return metrics_csv(self.log)


def metrics_csv(log: list) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for row in log:
        lines.append(",".join(str(row[c]) if c == "epoch" else repr(float(row[c]))
                              for c in LOG_COLUMNS))
    return "\n".join(lines) + "\n"


def _snapshot(store: ParamStore, cfg, meta, epoch) -> Checkpoint:
    return Checkpoint(store.copy(), cfg, meta, epoch)


def train(cfg: TrainConfig, dataset: Dataset, splits: dict | None = None) -> TrainResult:
    """Train on the train split, select on validation WF1.

    Seeds derive from ``cfg.seed`` only, so identical inputs give
    identical logs and checkpoints.
    """
    cfg.validate()
    splits = splits or split_dataset(dataset, cfg)
    train_set = splits["train"]
    if len(np.unique(train_set.labels())) < 2:
        raise ConfigInvalid("training split needs at least two classes")
    meta = meta_for(dataset)
    store = build_params(cfg, meta)
    best = _snapshot(store, cfg, meta, 0)
    best_wf1 = -1.0
    opt = Adam(store, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.l2)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    log = []
    dialogues = list(train_set.dialogues)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dialogues))
        sums = {c: 0.0 for c in LOG_COLUMNS[1:6]}
        n_batches = 0
        for batch_idx in _batches(list(order), cfg.batch_size):
            batch = [dialogues[i] for i in batch_idx]
            store.zero_grad()
            out = forward(store, cfg, meta, batch, train=True, seed=int(rng.integers(2 ** 62)))
            nx.backward(out.total)
            opt.step()
            sums["train_loss"] += out.total.item()
            for k in ("ce", "triplet", "node_recon", "edge_contrastive"):
                sums[k] += out.losses[k].item()
            n_batches += 1
        val = evaluate(Checkpoint(store, cfg, meta, epoch), splits["val"]) \
            if len(splits["val"]) else None
        row = {"epoch": epoch, **{k: v / max(n_batches, 1) for k, v in sums.items()},
               "val_wa": val.wa if val else 0.0, "val_wf1": val.wf1 if val else 0.0}
        log.append(row)
        logger.info("epoch %d loss %.4f val WF1 %.4f", epoch, row["train_loss"], row["val_wf1"])
        if row["val_wf1"] > best_wf1:
            best_wf1 = row["val_wf1"]
            best = _snapshot(store, cfg, meta, epoch)
    return TrainResult(best, _snapshot(store, cfg, meta, cfg.epochs), log, splits)


def initial_checkpoint(cfg: TrainConfig, dataset: Dataset) -> Checkpoint:
    meta = meta_for(dataset)
    return Checkpoint(build_params(cfg, meta), cfg, meta, 0)


def ablate(cfg: TrainConfig, dataset: Dataset, variant: str) -> MetricsReport:
    """Train the variant under the same seed/split and report test metrics."""
    vcfg = variant_config(cfg, variant)
    result = train(vcfg, dataset, split_dataset(dataset, cfg))
    return evaluate(result.checkpoint, result.splits["test"])


def reconstruction_cosine(checkpoint: Checkpoint, dialogues: list, seed: int = 0) -> float:
    """Mean cos(fused, reconstruction) over masked nodes of ``dialogues`` (no dropout)."""
    cfg, meta, store = replace(checkpoint.config), checkpoint.meta, checkpoint.params
    total, count = 0.0, 0
    for k, batch in enumerate(_batches(list(dialogues), cfg.batch_size)):
        graph, _, _ = build_batch_graph(store, cfg, meta, batch)
        sm = smgae_losses(store, cfg, meta, graph, seed + k)
        rows = sm["plan"].masked_nodes
        xi, Z = graph.nodes.data[rows], sm["Z"].data[rows]
        cos = (xi * Z).sum(1) / (np.linalg.norm(xi, axis=1) * np.linalg.norm(Z, axis=1))
        total += float(cos.sum())
        count += len(rows)
    return total / max(count, 1)
