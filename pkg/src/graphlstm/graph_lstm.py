"""Graph-state LSTM encoder.

Every token holds a hidden/cell pair; all of them advance simultaneously
for a fixed number of transition steps.  At each step a node reads the
summed representations of its incoming and outgoing edges (step-invariant,
precomputed once) and the summed previous-step states of its incoming and
outgoing neighbors, then applies one gated cell update.  Because a step
reads only the previous state (double buffering), node updates within a
step can run in any order, or in parallel, with bit-identical results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoding import (
    GATES,
    CellCounter,
    EncoderTables,
    GraphArrays,
    PreparedGraph,
    candidate_activation,
    edge_input,
    edge_inputs,
    glorot_uniform,
)
from .graph import DocumentGraph
from .tensor import Rng, Tensor

cell_counter = CellCounter()


@dataclass
class GrnParams:
    """Shared edge-input map plus eight weight matrices per gate family.

    ``W``/``U`` read incoming edge inputs and neighbor states, ``Wh``/``Uh``
    are their outgoing-direction counterparts (the hatted matrices).
    """

    W1: Tensor
    b1: Tensor
    W: dict[str, Tensor]
    Wh: dict[str, Tensor]
    U: dict[str, Tensor]
    Uh: dict[str, Tensor]
    b: dict[str, Tensor]

    def named(self, prefix: str = "grn") -> dict[str, Tensor]:
        out = {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1}
        for x in GATES:
            out[f"{prefix}.W_{x}"] = self.W[x]
            out[f"{prefix}.Wh_{x}"] = self.Wh[x]
            out[f"{prefix}.U_{x}"] = self.U[x]
            out[f"{prefix}.Uh_{x}"] = self.Uh[x]
            out[f"{prefix}.b_{x}"] = self.b[x]
        return out


def init_grn_params(d_h: int, d_word: int, d_edge: int, rng: Rng,
                    dtype=T.DEFAULT_DTYPE) -> GrnParams:
    W1 = glorot_uniform(rng, (d_h, d_edge + d_word), dtype)
    b1 = T.zeros((d_h,), dtype)
    W, Wh, U, Uh, b = {}, {}, {}, {}, {}
    for x in GATES:
        W[x] = glorot_uniform(rng, (d_h, d_h), dtype)
        Wh[x] = glorot_uniform(rng, (d_h, d_h), dtype)
        U[x] = glorot_uniform(rng, (d_h, d_h), dtype)
        Uh[x] = glorot_uniform(rng, (d_h, d_h), dtype)
        b[x] = T.zeros((d_h,), dtype)
    return GrnParams(W1=W1, b1=b1, W=W, Wh=Wh, U=U, Uh=Uh, b=b)


@dataclass
class GraphState:
    """All per-token states at one transition step; step 0 is all zeros."""

    step: int
    h: Tensor  # (|V|, d_h)
    c: Tensor  # (|V|, d_h)


def initial_state(n_tokens: int, d_h: int, dtype=T.DEFAULT_DTYPE) -> GraphState:
    return GraphState(step=0, h=T.zeros((n_tokens, d_h), dtype),
                      c=T.zeros((n_tokens, d_h), dtype))


def node_inputs(graph: DocumentGraph, j: int, arrays: GraphArrays,
                tables: EncoderTables, params: GrnParams) -> tuple[Tensor, Tensor]:
    """Incoming and outgoing edge-input sums for one node (reference path).

    Scans the whole edge list; the batched encoder must agree with this.
    Outgoing edge representations use the node's own word embedding, since
    the node is their source.
    """
    d_h = params.b1.shape[0]
    dtype = params.W1.dtype
    xs_in, xs_out = [], []
    for k, e in enumerate(graph.edges):
        if e.target == j:
            xs_in.append(edge_input(e.source, arrays.label_ids[k], arrays,
                                    tables, params.W1, params.b1))
        if e.source == j:
            xs_out.append(edge_input(e.source, arrays.label_ids[k], arrays,
                                     tables, params.W1, params.b1))
    x_i = T.sum_vectors(xs_in, (1, d_h), dtype=dtype)
    x_o = T.sum_vectors(xs_out, (1, d_h), dtype=dtype)
    return x_i, x_o


@dataclass
class StepContext:
    """Per-graph precomputation reused across transition steps.

    Edge inputs are step-invariant, so their per-node sums and the
    x-dependent gate pre-activations (including biases) are fixed once;
    the dropout mask on edge inputs is likewise drawn once per instance
    and held fixed across steps.  The four gate families are stacked
    column-wise (order i, o, f, u) so one matmul serves all gates.
    """

    arrays: GraphArrays
    n: int
    d_h: int
    dtype: object
    base: Tensor   # (|V|, 4 * d_h) gate pre-activations from edge inputs
    UT: Tensor     # (d_h, 4 * d_h) stacked transposed incoming-state maps
    UhT: Tensor    # (d_h, 4 * d_h) outgoing counterparts
    candidate: str


def make_step_context(graph: DocumentGraph, arrays: GraphArrays,
                      tables: EncoderTables, params: GrnParams, *,
                      candidate: str = "sigmoid", dropout_rate: float = 0.0,
                      rng: Rng | None = None, training: bool = False) -> StepContext:
    candidate_activation(candidate)  # validate early
    n = graph.n_tokens
    d_h = params.b1.shape[0]
    dtype = params.W1.dtype
    X = edge_inputs(arrays, tables, params.W1, params.b1)
    if training and dropout_rate > 0.0 and X.shape[0] > 0:
        X = T.dropout(X, dropout_rate, rng, training)
    XI = T.segment_sum(X, arrays.tgt, n)
    XO = T.segment_sum(X, arrays.src, n)
    WT = T.transpose(T.concat([params.W[x] for x in GATES], axis=0))
    WhT = T.transpose(T.concat([params.Wh[x] for x in GATES], axis=0))
    b_cat = T.concat([params.b[x] for x in GATES], axis=0)
    base = T.add_bias(T.add(T.matmul(XI, WT), T.matmul(XO, WhT)), b_cat)
    UT = T.transpose(T.concat([params.U[x] for x in GATES], axis=0))
    UhT = T.transpose(T.concat([params.Uh[x] for x in GATES], axis=0))
    return StepContext(arrays=arrays, n=n, d_h=d_h, dtype=dtype, base=base,
                       UT=UT, UhT=UhT, candidate=candidate)


def _split_gates(pre: Tensor, d_h: int, candidate: str) -> dict[str, Tensor]:
    if candidate == "sigmoid":
        acts = T.sigmoid(pre)
        return {x: T.slice_cols(acts, k * d_h, (k + 1) * d_h)
                for k, x in enumerate(GATES)}
    sig = T.sigmoid(T.slice_cols(pre, 0, 3 * d_h))
    gates = {x: T.slice_cols(sig, k * d_h, (k + 1) * d_h)
             for k, x in enumerate(GATES[:3])}
    gates["u"] = T.tanh(T.slice_cols(pre, 3 * d_h, 4 * d_h))
    return gates


def transition_step(state: GraphState, ctx: StepContext) -> GraphState:
    """One synchronous update of every node from the previous graph state."""
    arrays = ctx.arrays
    # neighbor-state sums read only the previous step, in edge-list order
    HI = T.segment_sum(T.gather_rows(state.h, arrays.src), arrays.tgt, ctx.n)
    HO = T.segment_sum(T.gather_rows(state.h, arrays.tgt), arrays.src, ctx.n)
    pre = T.add(T.add(ctx.base, T.matmul(HI, ctx.UT)), T.matmul(HO, ctx.UhT))
    gates = _split_gates(pre, ctx.d_h, ctx.candidate)
    c_t = T.add(T.mul(gates["f"], state.c), T.mul(gates["i"], gates["u"]))
    h_t = T.mul(gates["o"], T.tanh(c_t))
    cell_counter.add(ctx.n)
    return GraphState(step=state.step + 1, h=h_t, c=c_t)


def encode(graph: DocumentGraph, arrays: GraphArrays, tables: EncoderTables,
           params: GrnParams, steps: int, *, candidate: str = "sigmoid",
           dropout_rate: float = 0.0, rng: Rng | None = None,
           training: bool = False) -> GraphState:
    """Apply ``steps`` transition steps from the all-zero state."""
    if steps < 0:
        raise ValueError("step count must be non-negative")
    state = initial_state(graph.n_tokens, params.b1.shape[0], params.W1.dtype)
    if steps == 0:
        return state
    ctx = make_step_context(graph, arrays, tables, params, candidate=candidate,
                            dropout_rate=dropout_rate, rng=rng, training=training)
    for _ in range(steps):
        state = transition_step(state, ctx)
    return state


MASKS = ("all", "forward", "backward", "concat")


def encode_masked(prepared: PreparedGraph, tables: EncoderTables, params,
                  steps: int, mask: str, **kw) -> GraphState:
    """Run the graph-state model on the full graph or a split component.

    ``forward``/``backward`` restrict the graph to one DAG component;
    ``concat`` runs both restricted encoders (params must then be a
    (forward, backward) pair) and concatenates their final states.
    """
    if mask not in MASKS:
        raise ValueError(f"mask must be one of {MASKS}, got {mask!r}")
    if mask == "all":
        return encode(prepared.graph, prepared.arrays, tables, params, steps, **kw)
    if mask in ("forward", "backward"):
        comp, arrays = prepared.component(mask)
        return encode(comp, arrays, tables, params, steps, **kw)
    p_fwd, p_bwd = params
    gf = encode(prepared.forward, prepared.arrays_forward, tables, p_fwd, steps, **kw)
    gb = encode(prepared.backward, prepared.arrays_backward, tables, p_bwd, steps, **kw)
    return GraphState(step=steps, h=T.concat([gf.h, gb.h], axis=1),
                      c=T.concat([gf.c, gb.c], axis=1))


# ---------------------------------------------------------------------------
# per-node update engine (double-buffer contract)
# ---------------------------------------------------------------------------


from .tensor import _sigmoid_values as _np_sigmoid  # same kernel as the tape op


@dataclass
class NodewiseContext:
    n: int
    d_h: int
    base: np.ndarray          # (|V|, 4 * d_h)
    UT: np.ndarray            # (d_h, 4 * d_h)
    UhT: np.ndarray
    in_srcs: list[list[int]]   # per node: sources of incoming edges, edge order
    out_tgts: list[list[int]]  # per node: targets of outgoing edges, edge order
    candidate: str


def make_nodewise_context(graph: DocumentGraph, arrays: GraphArrays,
                          tables: EncoderTables, params: GrnParams, *,
                          candidate: str = "sigmoid") -> NodewiseContext:
    ctx = make_step_context(graph, arrays, tables, params, candidate=candidate)
    in_srcs = [[graph.edges[k].source for k in g_in] for g_in in graph.in_adj]
    out_tgts = [[graph.edges[k].target for k in g_out] for g_out in graph.out_adj]
    return NodewiseContext(
        n=ctx.n,
        d_h=ctx.d_h,
        base=ctx.base.data,
        UT=ctx.UT.data,
        UhT=ctx.UhT.data,
        in_srcs=in_srcs,
        out_tgts=out_tgts,
        candidate=candidate,
    )


def transition_step_nodewise(h_prev: np.ndarray, c_prev: np.ndarray,
                             nctx: NodewiseContext, order=None,
                             threads: int | None = None):
    """One transition step computed node by node.

    Reads only ``h_prev``/``c_prev`` and writes a fresh buffer, so the
    node order (or a thread pool) cannot change the result: the update of
    each node is a pure function of the previous graph state.
    """
    act = _np_sigmoid if nctx.candidate == "sigmoid" else np.tanh
    h_new = np.empty_like(h_prev)
    c_new = np.empty_like(c_prev)
    d = h_prev.shape[1]

    def update(j: int) -> None:
        hi = np.zeros(d, dtype=h_prev.dtype)
        for s in nctx.in_srcs[j]:
            hi += h_prev[s]
        ho = np.zeros(d, dtype=h_prev.dtype)
        for t in nctx.out_tgts[j]:
            ho += h_prev[t]
        pre = nctx.base[j] + hi @ nctx.UT + ho @ nctx.UhT
        i = _np_sigmoid(pre[:d])
        o = _np_sigmoid(pre[d:2 * d])
        f = _np_sigmoid(pre[2 * d:3 * d])
        u = act(pre[3 * d:])
        c_new[j] = f * c_prev[j] + i * u
        h_new[j] = o * np.tanh(c_new[j])

    node_order = list(range(nctx.n)) if order is None else list(order)
    if sorted(node_order) != list(range(nctx.n)):
        raise ValueError("node order must be a permutation of all nodes")
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(update, node_order))
    else:
        for j in node_order:
            update(j)
    cell_counter.add(nctx.n)
    return h_new, c_new


def encode_nodewise(graph: DocumentGraph, arrays: GraphArrays,
                    tables: EncoderTables, params: GrnParams, steps: int, *,
                    candidate: str = "sigmoid", order=None,
                    threads: int | None = None):
    """Encode with the per-node engine; returns plain (h, c) arrays."""
    nctx = make_nodewise_context(graph, arrays, tables, params,
                                 candidate=candidate)
    d_h = params.b1.shape[0]
    h = np.zeros((graph.n_tokens, d_h), dtype=params.W1.dtype)
    c = np.zeros_like(h)
    for _ in range(steps):
        h, c = transition_step_nodewise(h, c, nctx, order=order, threads=threads)
    return h, c
