"""Training configuration."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigInvalid, UnknownVariant

SEED_ENV = "DERGCN_SEED"

VARIANTS = ("full", "add-fusion", "concat-fusion", "no-context", "uni-gru",
            "ce-only", "no-smgae", "no-mit")


@dataclass
class TrainConfig:
    # optimisation protocol
    learning_rate: float = 0.0003
    batch_size: int = 32
    epochs: int = 60
    dropout: float = 0.25
    l2: float = 0.0001
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    split: tuple = (0.70, 0.06, 0.24)   # train / val / test
    seed: int = 0
    # architecture
    hidden_dim: int = 16
    encoder: str = "bigru"              # bigru | gru | none
    context_window: int | None = None   # keep only the last K utterances
    fusion_mode: str = "attention"      # attention | add | concat
    fusion_norm: str = "ratio"          # ratio | softmax
    fusion_window: int | None = 0       # half-width of the pooling window; None = dialogue
    graph_window: int | None = None
    speaker_hidden: int = 32
    rgcn_dim: int = 128
    rgcn_layers: int = 2
    self_weight: float = 1.0
    edge_dim: int = 16
    gat_slope: float = 0.2
    use_mit: bool = True
    mit_kernel: int = 1
    mit_scale: str = "dim"
    # self-supervision
    use_smgae: bool = True
    node_mask_ratio: float = 0.3
    edge_mask_ratio: float = 0.3
    negatives: int = 5
    lam_reg: float = 0.0001
    # objective
    coeff_triplet: float = 1.0
    coeff_node: float = 0.5
    coeff_edge: float = 0.5
    margin: float = 1.0
    triplet_quota: int = 8
    variant: str = "full"
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        bad = []
        if self.learning_rate < 0:
            bad.append("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            bad.append("batch_size >= 1 and epochs >= 0 required")
        if not 0 <= self.dropout < 1:
            bad.append("dropout must lie in [0, 1)")
        if self.l2 < 0 or self.lam_reg < 0:
            bad.append("regularisation weights must be >= 0")
        if self.optimizer != "adam":
            bad.append("only the adam optimizer is available")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            bad.append("split must be three non-negative fractions summing to 1")
        if self.encoder not in ("bigru", "gru", "none"):
            bad.append(f"unknown encoder {self.encoder!r}")
        if self.fusion_mode not in ("attention", "add", "concat"):
            bad.append(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.fusion_norm not in ("ratio", "softmax"):
            bad.append(f"unknown fusion_norm {self.fusion_norm!r}")
        if self.mit_scale not in ("dim", "sqrt"):
            bad.append(f"unknown mit_scale {self.mit_scale!r}")
        if self.context_window is not None and self.context_window < 1:
            bad.append("context_window must be >= 1")
        if self.use_smgae:
            for name in ("node_mask_ratio", "edge_mask_ratio"):
                if not 0 < getattr(self, name) < 1:
                    bad.append(f"{name} must lie in (0, 1)")
        if min(self.coeff_triplet, self.coeff_node, self.coeff_edge) < 0:
            bad.append("loss coefficients must be >= 0")
        if self.rgcn_layers < 1:
            bad.append("rgcn_layers must be >= 1")
        if self.variant not in VARIANTS:
            bad.append(f"unknown variant {self.variant!r}")
        if bad:
            raise ConfigInvalid("; ".join(bad))

    @property
    def coeffs(self) -> dict:
        return {"triplet": self.coeff_triplet, "node_recon": self.coeff_node,
                "edge_contrastive": self.coeff_edge}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigInvalid(f"unknown config fields: {sorted(extra)}")
        d = dict(d)
        if "split" in d:
            d["split"] = tuple(d["split"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_env_seed(self) -> "TrainConfig":
        raw = os.environ.get(SEED_ENV)
        return replace(self, seed=int(raw)) if raw not in (None, "") else self


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return TrainConfig.from_dict(json.load(fh))


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Config for one ablation; ``full`` returns the config unchanged."""
    changes = {
        "full": {},
        "add-fusion": {"fusion_mode": "add"},
        "concat-fusion": {"fusion_mode": "concat"},
        "no-context": {"encoder": "none"},
        "uni-gru": {"encoder": "gru"},
        "ce-only": {"coeff_triplet": 0.0},
        "no-smgae": {"use_smgae": False},
        "no-mit": {"use_mit": False},
    }
    if variant not in changes:
        raise UnknownVariant(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return replace(cfg, variant=variant, **changes[variant])
