"""Planted-structure synthetic dialogues and the line-delimited dataset format.

File layout (UTF-8)::

    #dergcn-dataset 1
    #dims t=16 a=12 v=8 classes=6 event_types=2
    #event,<dialogue_id>,<event_id>,<event_type>
    <dialogue_id>,<utt_index>,<speaker>,<label>,<e1;e2;..>,<feat_t...>,<feat_a...>,<feat_v...>

Floats are written with ``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpec
from .graph import Dialogue, Utterance

FORMAT_VERSION = 1


@dataclass
class SynthSpec:
    num_dialogues: int = 200
    min_utterances: int = 4
    max_utterances: int = 10
    num_speakers: int = 2
    num_classes: int = 6
    num_event_types: int = 2
    dim_t: int = 16
    dim_a: int = 12
    dim_v: int = 8
    imbalance: float = 10.0
    signal: dict = field(default_factory=lambda: {"t": 3.0, "a": 2.0, "v": 1.5})
    noise: float = 1.0
    dialogue_shift: float = 0.5
    event_signal: float = 0.8
    events_per_type: tuple = (1, 2)
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.num_dialogues < 1:
            problems.append("num_dialogues must be >= 1")
        if not 1 <= self.min_utterances <= self.max_utterances:
            problems.append("need 1 <= min_utterances <= max_utterances")
        if self.num_speakers < 1:
            problems.append("num_speakers must be >= 1")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if self.num_event_types < 0:
            problems.append("num_event_types must be >= 0")
        if min(self.dim_t, self.dim_a, self.dim_v) < 2:
            problems.append("modal dims must be >= 2")
        if self.imbalance < 1:
            problems.append("imbalance ratio must be >= 1")
        if self.noise < 0 or self.dialogue_shift < 0:
            problems.append("noise levels must be >= 0")
        if not 0 <= self.event_signal <= 1:
            problems.append("event_signal must lie in [0, 1]")
        if set(self.signal) != {"t", "a", "v"}:
            problems.append("signal needs keys t, a, v")
        lo, hi = self.events_per_type
        if not 0 <= lo <= hi:
            problems.append("events_per_type must be an ordered non-negative pair")
        if problems:
            raise InvalidSpec("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidSpec(f"unknown SynthSpec fields: {sorted(extra)}")
        d = dict(d)
        if "events_per_type" in d:
            d["events_per_type"] = tuple(d["events_per_type"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["events_per_type"] = list(self.events_per_type)
        return out


@dataclass
class Dataset:
    dialogues: list
    dims: dict
    num_classes: int
    num_event_types: int

    def __len__(self) -> int:
        return len(self.dialogues)

    def subset(self, idx) -> "Dataset":
        return Dataset([self.dialogues[i] for i in idx], dict(self.dims),
                       self.num_classes, self.num_event_types)

    def labels(self) -> np.ndarray:
        return np.concatenate([d.labels for d in self.dialogues])

    def by_id(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.id == dialogue_id:
                return d
        raise KeyError(f"no dialogue {dialogue_id!r}")


def class_counts(total: int, num_classes: int, imbalance: float) -> np.ndarray:
    """Exact per-class counts, geometric from ``imbalance`` down to 1 (largest remainder)."""
    k = np.arange(num_classes)
    w = imbalance ** ((num_classes - 1 - k) / (num_classes - 1))
    raw = total * w / w.sum()
    counts = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Dialogues whose labels are recoverable from features, events and context.

    Features are ``signal * class_mean + noise * (gaussian + shift * dialogue_offset)``.
    Each event groups an anchor utterance with 1-2 others drawn from the
    anchor's class with probability ``event_signal``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dims = {"t": spec.dim_t, "a": spec.dim_a, "v": spec.dim_v}
    means = {m: rng.normal(size=(spec.num_classes, d)) for m, d in dims.items()}
    lengths = rng.integers(spec.min_utterances, spec.max_utterances + 1, size=spec.num_dialogues)
    counts = class_counts(int(lengths.sum()), spec.num_classes, spec.imbalance)
    labels = rng.permutation(np.repeat(np.arange(spec.num_classes), counts))
    dialogues, pos = [], 0
    for n_d, T in enumerate(lengths):
        lab = labels[pos:pos + T]
        pos += T
        offset = {m: rng.normal(size=d) for m, d in dims.items()}
        speakers = [int(rng.integers(spec.num_speakers))]
        for _ in range(T - 1):
            if spec.num_speakers > 1 and rng.random() < 0.7:
                choices = [s for s in range(spec.num_speakers) if s != speakers[-1]]
                speakers.append(int(choices[rng.integers(len(choices))]))
            else:
                speakers.append(speakers[-1])
        members = [set() for _ in range(T)]
        events = {}
        for etype in range(spec.num_event_types):
            lo, hi = spec.events_per_type
            for _ in range(int(rng.integers(lo, hi + 1))):
                if T < 2:
                    break
                eid = len(events)
                events[eid] = etype
                anchor = int(rng.integers(T))
                group = {anchor}
                for _ in range(int(rng.integers(1, 3))):
                    rest = [j for j in range(T) if j not in group]
                    if not rest:
                        break
                    same = [j for j in rest if lab[j] == lab[anchor]]
                    pool = same if same and rng.random() < spec.event_signal else rest
                    group.add(int(pool[rng.integers(len(pool))]))
                for j in group:
                    members[j].add(eid)
        utts = []
        for i in range(T):
            feats = {}
            for m, d in dims.items():
                feats[m] = (spec.signal[m] * means[m][lab[i]]
                            + spec.noise * (rng.normal(size=d) + spec.dialogue_shift * offset[m]))
            utts.append(Utterance(speakers[i], int(lab[i]), feats["t"], feats["a"], feats["v"],
                                  frozenset(members[i])))
        dialogues.append(Dialogue(f"d{n_d:04d}", utts, events))
    return Dataset(dialogues, dims, spec.num_classes, spec.num_event_types)


def load_spec(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        return SynthSpec.from_dict(json.load(fh))


# ----------------------------------------------------------------------------
# file format


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_dataset(ds: Dataset) -> str:
    lines = [f"#dergcn-dataset {FORMAT_VERSION}",
             f"#dims t={ds.dims['t']} a={ds.dims['a']} v={ds.dims['v']} "
             f"classes={ds.num_classes} event_types={ds.num_event_types}"]
    for d in ds.dialogues:
        for eid in sorted(d.events):
            lines.append(f"#event,{d.id},{eid},{d.events[eid]}")
    for d in ds.dialogues:
        for i, u in enumerate(d.utterances):
            ev = ";".join(str(e) for e in sorted(u.event_ids))
            vals = [_fmt(x) for m in ("t", "a", "v") for x in u.features(m)]
            lines.append(",".join([d.id, str(i), str(u.speaker), str(u.label), ev] + vals))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    dims, events, rows = None, {}, {}
    meta = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        if line.startswith("#dergcn-dataset"):
            version = int(line.split()[1])
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported dataset version {version}")
        elif line.startswith("#dims"):
            meta = dict(kv.split("=") for kv in line.split()[1:])
            dims = {m: int(meta[m]) for m in ("t", "a", "v")}
        elif line.startswith("#event,"):
            _, did, eid, etype = line.split(",")
            events.setdefault(did, {})[int(eid)] = int(etype)
        elif line.startswith("#"):
            continue
        else:
            if dims is None:
                raise ValueError("dataset is missing its #dims header")
            parts = line.split(",")
            width = 5 + dims["t"] + dims["a"] + dims["v"]
            if len(parts) != width:
                raise ValueError(f"line {lineno}: {len(parts)} fields, expected {width}")
            did, idx, spk, lab, ev = parts[:5]
            vals = np.array([float(x) for x in parts[5:]])
            a, b = dims["t"], dims["t"] + dims["a"]
            eids = frozenset(int(e) for e in ev.split(";") if e)
            rows.setdefault(did, []).append((int(idx), Utterance(
                int(spk), int(lab), vals[:a], vals[a:b], vals[b:], eids)))
    dialogues = []
    for did, items in rows.items():
        items.sort(key=lambda x: x[0])
        dialogues.append(Dialogue(did, [u for _, u in items], events.get(did, {})))
    return Dataset(dialogues, dims, int(meta["classes"]), int(meta["event_types"]))


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())
