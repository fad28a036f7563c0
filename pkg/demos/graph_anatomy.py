"""Build the multi-relational graph of one hand-made dialogue and read it back.

Four utterances alternate between two speakers; one event joins the first
three turns and a second event joins the last two.
"""

import numpy as np

from dergcn.graph import Dialogue, Utterance, assemble_graph, init_speaker_edge, parse_dump
from dergcn.params import ParamStore

rng = np.random.default_rng(1)
feats = lambda: rng.normal(size=3)
events = {0: 0, 1: 1}            # event id -> event type
members = [{0}, {0}, {0, 1}, {1}]
utts = [Utterance(speaker=i % 2, label=0, feat_t=feats(), feat_a=feats(), feat_v=feats(),
                  event_ids=frozenset(m)) for i, m in enumerate(members)]
dialogue = Dialogue("demo", utts, events)

store = ParamStore()
speaker_params = {r: init_speaker_edge(store, f"spk{r}", 4, 8, rng) for r in (0, 1)}
fused = rng.normal(size=(4, 4))  # stand-in for the fused utterance features
graph = assemble_graph(dialogue, fused, speaker_params, num_event_types=2)

text = graph.dump()
print(text)

parsed = parse_dump(text)
for k, name in enumerate(parsed["relations"]):
    edges = [e for e in parsed["edges"] if e[2] == k]
    print(f"{name:<14} {len(edges):>2} edges")

# Speaker weights are a softmax over each node's neighbourhood; event weights count shared events.
w, src, rel = graph.weight.data, graph.src, graph.rel
for i in range(4):
    print(f"node {i}: inter-speaker weights sum to {w[(src == i) & (rel == 1)].sum():.12f}")
