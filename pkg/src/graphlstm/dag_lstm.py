"""Bidirectional DAG LSTM baseline encoder.

The document graph is split into left-to-right and right-to-left DAG
components; each is walked sequentially in topological order, one gated
cell per token, with a separate forget gate per incoming edge.  The final
per-token state is the concatenation of both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .encoding import (
    GATES,
    CellCounter,
    EncoderTables,
    GraphArrays,
    candidate_activation,
    edge_inputs,
    glorot_uniform,
)
from .graph import DocumentGraph, split_dags, topological_order
from .tensor import Rng, Tensor

cell_counter = CellCounter()


@dataclass
class DagDirectionParams:
    """Parameters of one directional DAG LSTM."""

    W1: Tensor
    b1: Tensor
    W: dict[str, Tensor]
    U: dict[str, Tensor]
    b: dict[str, Tensor]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1}
        for x in GATES:
            out[f"{prefix}.W_{x}"] = self.W[x]
            out[f"{prefix}.U_{x}"] = self.U[x]
            out[f"{prefix}.b_{x}"] = self.b[x]
        return out


@dataclass
class DagLstmParams:
    fwd: DagDirectionParams
    bwd: DagDirectionParams

    def named(self, prefix: str = "dag") -> dict[str, Tensor]:
        out = self.fwd.named(f"{prefix}.fwd")
        out.update(self.bwd.named(f"{prefix}.bwd"))
        return out


def init_direction_params(d_h: int, d_in: int, rng: Rng,
                          dtype=T.DEFAULT_DTYPE) -> DagDirectionParams:
    W1 = glorot_uniform(rng, (d_h, d_in), dtype)
    b1 = T.zeros((d_h,), dtype)
    W, U, b = {}, {}, {}
    for x in GATES:
        W[x] = glorot_uniform(rng, (d_h, d_h), dtype)
        U[x] = glorot_uniform(rng, (d_h, d_h), dtype)
        b[x] = T.zeros((d_h,), dtype)
    return DagDirectionParams(W1=W1, b1=b1, W=W, U=U, b=b)


def init_dag_params(d_h: int, d_word: int, d_edge: int, rng: Rng,
                    dtype=T.DEFAULT_DTYPE) -> DagLstmParams:
    d_in = d_edge + d_word
    return DagLstmParams(fwd=init_direction_params(d_h, d_in, rng, dtype),
                         bwd=init_direction_params(d_h, d_in, rng, dtype))


@dataclass
class NodeStates:
    """Per-token hidden and cell rows, each of shape (1, d_h)."""

    h: list[Tensor]
    c: list[Tensor]

    def h_matrix(self) -> Tensor:
        return T.concat(self.h, axis=0)


def _processing_order(dag: DocumentGraph, direction: str) -> list[int]:
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    n = dag.n_tokens
    order = list(range(n)) if direction == "forward" else list(range(n - 1, -1, -1))
    pos = {j: p for p, j in enumerate(order)}
    if all(pos[e.source] < pos[e.target] for e in dag.edges):
        return order
    # not a split component in this direction; fall back to a generic
    # topological order (raises on cycles)
    return topological_order(dag)


def encode_dag(dag: DocumentGraph, arrays: GraphArrays, tables: EncoderTables,
               params: DagDirectionParams, direction: str, *,
               candidate: str = "sigmoid", dropout_rate: float = 0.0,
               rng: Rng | None = None, training: bool = False) -> NodeStates:
    """Run the gated DAG transition over every node in topological order.

    For node j: the representations of incoming edges and the states of
    incoming nodes are each summed; input/output/candidate gates read the
    sums, one forget gate per incoming edge reads that edge and its source
    state; sources with no incoming edges use zero sums.
    """
    n = dag.n_tokens
    d_h = params.b1.shape[0]
    dtype = params.W1.dtype
    act = candidate_activation(candidate)
    order = _processing_order(dag, direction)

    X = edge_inputs(arrays, tables, params.W1, params.b1)
    if training and dropout_rate > 0.0 and X.shape[0] > 0:
        X = T.dropout(X, dropout_rate, rng, training)

    # i/o/u read the same summed inputs: stack them into one matmul;
    # the per-edge forget gate keeps its own maps
    iou = ("i", "o", "u")
    WT = T.transpose(T.concat([params.W[x] for x in iou], axis=0))
    UT = T.transpose(T.concat([params.U[x] for x in iou], axis=0))
    b_iou = T.concat([params.b[x] for x in iou], axis=0)
    WfT = T.transpose(params.W["f"])
    UfT = T.transpose(params.U["f"])
    zero = T.zeros((1, d_h), dtype=dtype)
    h: list[Tensor | None] = [None] * n
    c: list[Tensor | None] = [None] * n

    for j in order:
        in_ids = dag.in_adj[j]
        if in_ids:
            srcs = [dag.edges[k].source for k in in_ids]
            for s in srcs:
                if h[s] is None:
                    raise ValueError("cycle detected: predecessor not yet encoded")
            Xe = T.gather_rows(X, in_ids)
            Hp = T.concat([h[s] for s in srcs], axis=0)
            Cp = T.concat([c[s] for s in srcs], axis=0)
            x_in = T.sum_rows(Xe)
            h_in = T.sum_rows(Hp)
            forget = T.sigmoid(T.add_bias(
                T.add(T.matmul(Xe, WfT), T.matmul(Hp, UfT)), params.b["f"]))
            forget_cell = T.sum_rows(T.mul(forget, Cp))
        else:
            x_in, h_in, forget_cell = zero, zero, zero
        pre = T.add_bias(T.add(T.matmul(x_in, WT), T.matmul(h_in, UT)), b_iou)
        if candidate == "sigmoid":
            acts = T.sigmoid(pre)
            i_g = T.slice_cols(acts, 0, d_h)
            o_g = T.slice_cols(acts, d_h, 2 * d_h)
            u_g = T.slice_cols(acts, 2 * d_h, 3 * d_h)
        else:
            sig = T.sigmoid(T.slice_cols(pre, 0, 2 * d_h))
            i_g = T.slice_cols(sig, 0, d_h)
            o_g = T.slice_cols(sig, d_h, 2 * d_h)
            u_g = act(T.slice_cols(pre, 2 * d_h, 3 * d_h))
        c_j = T.add(T.mul(i_g, u_g), forget_cell)
        h_j = T.mul(o_g, T.tanh(c_j))
        h[j], c[j] = h_j, c_j

    cell_counter.add(n)
    return NodeStates(h=h, c=c)


def encode_bidirectional(graph: DocumentGraph, arrays_by_direction,
                         tables: EncoderTables, params: DagLstmParams, *,
                         candidate: str = "sigmoid", dropout_rate: float = 0.0,
                         rng: Rng | None = None, training: bool = False) -> Tensor:
    """Encode both split components and concatenate per-node states.

    ``arrays_by_direction`` maps "forward"/"backward" to the GraphArrays of
    the respective component (see encoding.prepare_graph); returns a
    (|V|, 2 * d_h) matrix.
    """
    split = split_dags(graph)
    fwd = encode_dag(split.forward, arrays_by_direction["forward"], tables,
                     params.fwd, "forward", candidate=candidate,
                     dropout_rate=dropout_rate, rng=rng, training=training)
    bwd = encode_dag(split.backward, arrays_by_direction["backward"], tables,
                     params.bwd, "backward", candidate=candidate,
                     dropout_rate=dropout_rate, rng=rng, training=training)
    rows = [T.concat([fwd.h[j], bwd.h[j]], axis=1) for j in range(graph.n_tokens)]
    return T.concat(rows, axis=0)
