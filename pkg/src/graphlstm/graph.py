"""Document graphs over multi-sentence inputs.

Nodes are tokens; directed labeled edges come from dependency arcs,
within-sentence adjacency ("next_tok" / "prev_tok"), and a discourse link
from each sentence head to the next sentence's head.  Also provides the
edge split into left-to-right and right-to-left DAG components, bounded
reachability, instance/schema loading, and dataset statistics.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field

DEPENDENCY = "dependency"
ADJACENCY = "adjacency"
DISCOURSE = "discourse"

NEXT_TOKEN_LABEL = "next_tok"
PREV_TOKEN_LABEL = "prev_tok"
NEXT_SENTENCE_LABEL = "next_sent"

NONE_LABEL = "None"
BINARY_LABELS = ("No", "Yes")


@dataclass(frozen=True)
class Token:
    index: int
    surface: str
    sentence_index: int


@dataclass(frozen=True)
class EdgeTriple:
    source: int
    target: int
    label: str
    kind: str = DEPENDENCY

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"self-loop at token {self.source}")


class DocumentGraph:
    """Tokens plus labeled directed edges with incoming/outgoing indices.

    Immutable after construction.  ``in_adj[j]`` / ``out_adj[j]`` hold the
    positions (into ``edges``) of edges arriving at / leaving token j, in
    edge-list order; together they partition-index the edge list.
    """

    def __init__(self, tokens: list[Token], edges: list[EdgeTriple]):
        n = len(tokens)
        for pos, tok in enumerate(tokens):
            if tok.index != pos:
                raise ValueError(f"token indices must be dense 0..{n - 1}")
        for a, b in zip(tokens, tokens[1:]):
            if b.sentence_index < a.sentence_index:
                raise ValueError("sentence indices must be non-decreasing")
        seen: set[tuple[int, int, str]] = set()
        kept: list[EdgeTriple] = []
        for e in edges:
            if not (0 <= e.source < n and 0 <= e.target < n):
                raise ValueError(f"edge ({e.source}, {e.target}, {e.label!r}) "
                                 f"references a missing token (have {n})")
            key = (e.source, e.target, e.label)
            if key in seen:
                warnings.warn(f"dropping duplicate edge {key}", stacklevel=2)
                continue
            seen.add(key)
            kept.append(e)
        self.tokens = list(tokens)
        self.edges = kept
        self.in_adj: list[list[int]] = [[] for _ in range(n)]
        self.out_adj: list[list[int]] = [[] for _ in range(n)]
        for pos, e in enumerate(self.edges):
            self.out_adj[e.source].append(pos)
            self.in_adj[e.target].append(pos)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_sentences(self) -> int:
        return self.tokens[-1].sentence_index + 1 if self.tokens else 0

    def in_edges(self, j: int) -> list[EdgeTriple]:
        return [self.edges[k] for k in self.in_adj[j]]

    def out_edges(self, j: int) -> list[EdgeTriple]:
        return [self.edges[k] for k in self.out_adj[j]]

    def edge_labels(self) -> set[str]:
        return {e.label for e in self.edges}

    def __repr__(self):
        return (f"DocumentGraph({self.n_tokens} tokens, {len(self.edges)} edges, "
                f"{self.n_sentences} sentences)")


@dataclass
class Sentence:
    """One parsed sentence: tokens, (head, dependent, label) arcs, head index."""

    tokens: list[str]
    arcs: list[tuple[int, int, str]] = field(default_factory=list)
    root: int = 0


def build_graph(sentences: list[Sentence]) -> DocumentGraph:
    """Assemble the document graph for a sequence of parsed sentences.

    Emits every dependency arc (head -> dependent), both adjacency edges
    between consecutive tokens of each sentence, and one discourse edge
    from each sentence head to the next sentence's head.
    """
    if not sentences:
        raise ValueError("no sentences")
    tokens: list[Token] = []
    offsets: list[int] = []
    for s_idx, sent in enumerate(sentences):
        if not sent.tokens:
            raise ValueError(f"sentence {s_idx} is empty")
        offsets.append(len(tokens))
        for w in sent.tokens:
            tokens.append(Token(len(tokens), w, s_idx))

    edges: list[EdgeTriple] = []
    for s_idx, sent in enumerate(sentences):
        off = offsets[s_idx]
        m = len(sent.tokens)
        for head, dep, label in sent.arcs:
            if not (0 <= head < m and 0 <= dep < m):
                raise ValueError(
                    f"sentence {s_idx}: arc ({head}, {dep}, {label!r}) "
                    f"dangles outside {m} tokens")
            edges.append(EdgeTriple(off + head, off + dep, label, DEPENDENCY))
        for k in range(m - 1):
            edges.append(EdgeTriple(off + k, off + k + 1, NEXT_TOKEN_LABEL, ADJACENCY))
            edges.append(EdgeTriple(off + k + 1, off + k, PREV_TOKEN_LABEL, ADJACENCY))
        if not 0 <= sent.root < m:
            raise ValueError(f"sentence {s_idx}: head index {sent.root} out of range")
    for s_idx in range(len(sentences) - 1):
        head_here = offsets[s_idx] + sentences[s_idx].root
        head_next = offsets[s_idx + 1] + sentences[s_idx + 1].root
        edges.append(EdgeTriple(head_here, head_next, NEXT_SENTENCE_LABEL, DISCOURSE))
    return DocumentGraph(tokens, edges)


@dataclass
class SplitDAGs:
    forward: DocumentGraph
    backward: DocumentGraph


def topological_order(g: DocumentGraph) -> list[int]:
    """Kahn's algorithm; raises if the graph has a directed cycle."""
    indeg = [len(g.in_adj[j]) for j in range(g.n_tokens)]
    queue = deque(j for j in range(g.n_tokens) if indeg[j] == 0)
    order = []
    while queue:
        j = queue.popleft()
        order.append(j)
        for k in g.out_adj[j]:
            t = g.edges[k].target
            indeg[t] -= 1
            if indeg[t] == 0:
                queue.append(t)
    if len(order) != g.n_tokens:
        raise ValueError("graph contains a directed cycle")
    return order


def split_dags(g: DocumentGraph) -> SplitDAGs:
    """Partition edges into a left-to-right and a right-to-left component.

    An edge (i, j, l) goes to the forward component iff i < j; both results
    are verified acyclic (token order is a topological order for each).
    """
    fwd = [e for e in g.edges if e.source < e.target]
    bwd = [e for e in g.edges if e.source > e.target]
    forward = DocumentGraph(g.tokens, fwd)
    backward = DocumentGraph(g.tokens, bwd)
    topological_order(forward)
    topological_order(backward)
    return SplitDAGs(forward=forward, backward=backward)


def reachable_within(g: DocumentGraph, j: int, t: int, directed: bool = False) -> set[int]:
    """Tokens within t edges of token j (BFS).

    ``directed`` follows edge direction; otherwise direction is ignored.
    """
    if not 0 <= j < g.n_tokens:
        raise ValueError(f"token {j} out of range")
    if t < 0:
        raise ValueError("hop count must be non-negative")
    seen = {j}
    frontier = [j]
    for _ in range(t):
        nxt = []
        for v in frontier:
            neighbors = [g.edges[k].target for k in g.out_adj[v]]
            if not directed:
                neighbors += [g.edges[k].source for k in g.in_adj[v]]
            for w in neighbors:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    return seen


@dataclass(frozen=True)
class EntityMention:
    """A token span filling one slot of the relation."""

    span: tuple[int, ...]
    slot: int

    def __post_init__(self):
        if not self.span:
            raise ValueError("entity mention span is empty")
        if self.slot < 1:
            raise ValueError("entity slots are numbered from 1")


@dataclass
class Instance:
    graph: DocumentGraph
    mentions: list[EntityMention]
    gold: str | None  # None only for prediction-time inputs

    def __post_init__(self):
        slots = sorted(m.slot for m in self.mentions)
        if len(self.mentions) < 2 or slots != list(range(1, len(slots) + 1)):
            raise ValueError(f"need slots 1..N each exactly once, got {slots}")
        self.mentions = sorted(self.mentions, key=lambda m: m.slot)
        for m in self.mentions:
            for idx in m.span:
                if not 0 <= idx < self.graph.n_tokens:
                    raise ValueError(f"mention token {idx} out of range")

    @property
    def n_sentences(self) -> int:
        return self.graph.n_sentences


class RelationSchema:
    """Ordered relation labels, exactly one of which is the None label."""

    def __init__(self, labels: list[str]):
        if labels.count(NONE_LABEL) != 1:
            raise ValueError(f"schema must contain {NONE_LABEL!r} exactly once")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels in schema")
        self.labels = list(labels)
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        if label not in self._index:
            raise ValueError(f"label {label!r} not in schema {self.labels}")
        return self._index[label]

    def binarize(self, label: str) -> str:
        """Group every non-None label as "Yes"; None maps to "No"."""
        self.index(label)
        return BINARY_LABELS[0] if label == NONE_LABEL else BINARY_LABELS[1]

    def binary_index(self, label: str) -> int:
        return BINARY_LABELS.index(self.binarize(label))


@dataclass
class DatasetStats:
    avg_tokens: float
    avg_sentences: float
    cross_fraction: float  # fraction of instances spanning >= 2 sentences


def dataset_stats(instances: list[Instance]) -> DatasetStats:
    if not instances:
        raise ValueError("no instances")
    n = len(instances)
    toks = sum(inst.graph.n_tokens for inst in instances) / n
    sents = sum(inst.n_sentences for inst in instances) / n
    cross = sum(1 for inst in instances if inst.n_sentences >= 2) / n
    return DatasetStats(avg_tokens=toks, avg_sentences=sents, cross_fraction=cross)


# ---------------------------------------------------------------------------
# line-delimited JSON instance files
# ---------------------------------------------------------------------------


def load_schema(path) -> RelationSchema:
    """Read the relation label list, one label per line, in order."""
    with open(path, encoding="utf-8") as fh:
        labels = [line.strip() for line in fh if line.strip()]
    return RelationSchema(labels)


def save_schema(schema: RelationSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in schema.labels:
            fh.write(lab + "\n")


def instance_from_dict(obj: dict, schema: RelationSchema | None = None) -> Instance:
    sentences = [
        Sentence(
            tokens=list(s["tokens"]),
            arcs=[(a["head"], a["dep"], a["label"]) for a in s.get("arcs", [])],
            root=s.get("root", 0),
        )
        for s in obj["sentences"]
    ]
    graph = build_graph(sentences)
    offsets = []
    total = 0
    for s in sentences:
        offsets.append(total)
        total += len(s.tokens)
    mentions = []
    for ent in obj["entities"]:
        s_idx = ent["sentence"]
        if not 0 <= s_idx < len(sentences):
            raise ValueError(f"entity names missing sentence {s_idx}")
        a, b = ent["span"]  # inclusive within the sentence
        if not (0 <= a <= b < len(sentences[s_idx].tokens)):
            raise ValueError(f"entity span [{a}, {b}] outside sentence {s_idx}")
        span = tuple(range(offsets[s_idx] + a, offsets[s_idx] + b + 1))
        mentions.append(EntityMention(span=span, slot=ent["slot"]))
    label = obj.get("label")
    if schema is not None and label is not None:
        schema.index(label)
    return Instance(graph=graph, mentions=mentions, gold=label)


def load_instances(path, schema: RelationSchema | None = None) -> list[Instance]:
    """Read one JSON instance per line (see README for the schema)."""
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                instances.append(instance_from_dict(obj, schema))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}, line {lineno}: {exc}") from exc
    if not instances:
        raise ValueError(f"{path}: no instances found")
    return instances


def save_instances(dicts: list[dict], path) -> None:
    """Write raw instance dicts as line-delimited JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        for obj in dicts:
            fh.write(json.dumps(obj) + "\n")
