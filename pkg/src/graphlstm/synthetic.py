"""Synthetic relation datasets with controllable path structure.

The path task: two marked mentions sit far apart on a token chain; the
gold label is positive iff an undirected path of at most ``hops`` edges
connects them through at least one edge carrying a designated marker
label.  Negatives mirror the positives' local edge statistics (dead-end
marker and filler edges near the mentions), so a model must trace the
connecting path rather than spot an incident label.
"""

from __future__ import annotations

import numpy as np

from .embeddings import Vocabulary, WordEmbeddingTable
from .graph import Instance, RelationSchema, instance_from_dict

MARKER_LABEL = "marker"
FILLER_LABEL = "filler"
POSITIVE_LABEL = "linked"
SCHEMA_LABELS = [POSITIVE_LABEL, "None"]

WORD_POOL = [f"tok{i:02d}" for i in range(40)]


def path_task_schema() -> RelationSchema:
    return RelationSchema(list(SCHEMA_LABELS))


def marker_path_exists(graph, start: int, goal: int, label: str,
                       max_hops: int) -> bool:
    """Is there a simple undirected path start..goal of <= max_hops edges
    with at least one edge carrying ``label``?"""

    def dfs(node, depth, used, visited):
        if depth > max_hops:
            return False
        if node == goal and used:
            return True
        if depth == max_hops:
            return False
        for k in graph.out_adj[node] + graph.in_adj[node]:
            e = graph.edges[k]
            nxt = e.target if e.source == node else e.source
            if nxt in visited:
                continue
            if dfs(nxt, depth + 1, used or e.label == label,
                   visited | {nxt}):
                return True
        return False

    return dfs(start, 0, False, {start})


def _arc(rng, a: int, b: int, label: str) -> dict:
    if rng.integers(0, 2):
        a, b = b, a
    return {"head": int(a), "dep": int(b), "label": label}


def _sample_instance(rng, hops: int, min_tokens: int, max_tokens: int,
                     positive: bool, negative_variant: int) -> dict:
    n = int(rng.integers(min_tokens, max_tokens + 1))
    gap = hops + 2
    a = int(rng.integers(0, n - gap)) if n - gap > 0 else 0
    slack = n - 1 - (a + gap)
    b = a + gap + (int(rng.integers(0, slack + 1)) if slack > 0 else 0)
    tokens = [WORD_POOL[int(rng.integers(0, len(WORD_POOL)))] for _ in range(n)]
    others = [t for t in range(n) if t not in (a, b)]
    arcs: list[dict] = []

    if positive:
        mids = list(rng.choice(others, size=hops - 1, replace=False)) \
            if hops > 1 else []
        path = [a] + [int(m) for m in mids] + [b]
        marker_leg = int(rng.integers(0, hops))
        for leg in range(hops):
            lab = MARKER_LABEL if leg == marker_leg else FILLER_LABEL
            arcs.append(_arc(rng, path[leg], path[leg + 1], lab))
    elif negative_variant == 1 and hops >= 2:
        # a short path exists but carries no marker
        mids = list(rng.choice(others, size=hops - 1, replace=False)) \
            if hops > 1 else []
        path = [a] + [int(m) for m in mids] + [b]
        for leg in range(hops):
            arcs.append(_arc(rng, path[leg], path[leg + 1], FILLER_LABEL))
    elif negative_variant == 2:
        # dead-end marker near one mention, dead-end filler near the other,
        # mirroring the positives' local statistics
        near_a = [t for t in others if abs(t - b) >= hops]
        near_b = [t for t in others if abs(t - a) >= hops]
        if near_a and near_b:
            m1 = int(near_a[int(rng.integers(0, len(near_a)))])
            m2 = int(near_b[int(rng.integers(0, len(near_b)))])
            if m1 != m2:
                arcs.append(_arc(rng, a, m1, MARKER_LABEL))
                arcs.append(_arc(rng, m2, b, FILLER_LABEL))
    elif negative_variant == 3 and len(others) >= 2:
        # marker somewhere else entirely
        x, y = (int(v) for v in rng.choice(others, size=2, replace=False))
        arcs.append(_arc(rng, x, y, MARKER_LABEL))

    # a little filler noise between non-mention tokens
    for _ in range(int(rng.integers(0, 3))):
        if len(others) >= 2:
            x, y = (int(v) for v in rng.choice(others, size=2, replace=False))
            arcs.append(_arc(rng, x, y, FILLER_LABEL))
    seen = set()
    unique_arcs = []
    for arc in arcs:
        key = (arc["head"], arc["dep"], arc["label"])
        if key not in seen:
            seen.add(key)
            unique_arcs.append(arc)
    arcs = unique_arcs

    slot_of_a = 1 if rng.integers(0, 2) else 2
    return {
        "sentences": [{"tokens": tokens, "arcs": arcs, "root": 0}],
        "entities": [
            {"slot": slot_of_a, "sentence": 0, "span": [a, a]},
            {"slot": 3 - slot_of_a, "sentence": 0, "span": [b, b]},
        ],
        "label": POSITIVE_LABEL if positive else "None",
        "_mention_positions": [a, b],
    }


def make_path_task(n_instances: int, seed: int, hops: int = 2,
                   min_tokens: int = 6, max_tokens: int = 12) -> list[dict]:
    """Balanced positive/negative instances; gold labels are verified
    against the path checker on the fully built graph."""
    if min_tokens < hops + 3:
        raise ValueError(f"need at least {hops + 3} tokens so the chain "
                         f"alone cannot connect the mentions in {hops} hops")
    rng = np.random.default_rng(seed)
    out: list[dict] = []
    schema = path_task_schema()
    variant_cycle = 0
    while len(out) < n_instances:
        positive = len(out) % 2 == 0
        if not positive:
            variant_cycle += 1
        for _ in range(80):
            obj = _sample_instance(rng, hops, min_tokens, max_tokens,
                                   positive, 1 + variant_cycle % 3)
            a, b = obj.pop("_mention_positions")
            inst = instance_from_dict(obj, schema)
            actually = marker_path_exists(inst.graph, a, b, MARKER_LABEL, hops)
            if actually == positive:
                out.append(obj)
                break
        else:
            raise RuntimeError("could not sample a consistent instance")
    return out


def chain_task(n_instances: int, n_tokens: int, seed: int) -> list[dict]:
    """Plain token chains (adjacency edges only) for throughput runs."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_instances):
        tokens = [WORD_POOL[int(rng.integers(0, len(WORD_POOL)))]
                  for _ in range(n_tokens)]
        out.append({
            "sentences": [{"tokens": tokens, "arcs": [], "root": 0}],
            "entities": [{"slot": 1, "sentence": 0, "span": [0, 0]},
                         {"slot": 2, "sentence": 0, "span": [n_tokens - 1,
                                                             n_tokens - 1]}],
            "label": POSITIVE_LABEL if k % 2 == 0 else "None",
        })
    return out


def instances_from_dicts(dicts: list[dict],
                         schema: RelationSchema | None = None) -> list[Instance]:
    schema = schema or path_task_schema()
    return [instance_from_dict(obj, schema) for obj in dicts]


def synthetic_word_table(d_w: int, seed: int,
                         scale: float = 0.5) -> tuple[Vocabulary, WordEmbeddingTable]:
    """Frozen random word vectors covering the synthetic word pool."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(list(WORD_POOL))
    vectors = rng.uniform(-scale, scale, (len(vocab), d_w))
    return vocab, WordEmbeddingTable(vectors=vectors, frozen=True)


def write_synthetic_embeddings(path, d_w: int, seed: int) -> None:
    vocab, table = synthetic_word_table(d_w, seed)
    with open(path, "w", encoding="utf-8") as fh:
        for i, word in enumerate(vocab.words[:-1]):
            vals = " ".join(repr(float(v)) for v in table.vectors[i])
            fh.write(f"{word} {vals}\n")
