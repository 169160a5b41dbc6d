"""Entity-mention pooling and the softmax relation classifier.

The concatenated mention states feed a single affine layer followed by a
softmax over the relation labels (two classes when binarized, the full
schema otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoding import glorot_uniform
from .graph import EntityMention
from .tensor import Rng, Tensor

POOLING_MODES = ("mean", "first", "last")


@dataclass
class ClassifierParams:
    W0: Tensor  # (n_classes, n_mentions * d_out)
    b0: Tensor  # (n_classes,)

    def named(self, prefix: str = "cls") -> dict[str, Tensor]:
        return {f"{prefix}.W0": self.W0, f"{prefix}.b0": self.b0}

    @property
    def n_classes(self) -> int:
        return self.W0.shape[0]


def init_classifier(n_classes: int, n_mentions: int, d_out: int, rng: Rng,
                    dtype=T.DEFAULT_DTYPE) -> ClassifierParams:
    W0 = glorot_uniform(rng, (n_classes, n_mentions * d_out), dtype)
    b0 = T.zeros((n_classes,), dtype)
    return ClassifierParams(W0=W0, b0=b0)


def mention_state(states: Tensor, mention: EntityMention,
                  pooling: str = "mean") -> Tensor:
    """Pool the span's token states into one (1, d) row.

    Mean pooling by default; "first"/"last" take a single token state.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"pooling must be one of {POOLING_MODES}")
    span = mention.span
    if not span:
        raise ValueError("empty mention span")
    if pooling == "first":
        return T.gather_rows(states, [span[0]])
    if pooling == "last":
        return T.gather_rows(states, [span[-1]])
    rows = T.gather_rows(states, list(span))
    return T.scale(T.sum_rows(rows), 1.0 / len(span))


def logits_for(mention_states: list[Tensor], params: ClassifierParams, *,
               dropout_rate: float = 0.0, rng: Rng | None = None,
               training: bool = False) -> Tensor:
    """Affine layer over the concatenated mention states; returns (1, L)."""
    x = T.concat(mention_states, axis=1)
    expected = params.W0.shape[1]
    if x.shape[1] != expected:
        raise ValueError(
            f"classifier expects width {expected}, got {x.shape[1]} "
            f"({len(mention_states)} mentions)")
    if training and dropout_rate > 0.0:
        x = T.dropout(x, dropout_rate, rng, training)
    return T.add_bias(T.matmul(x, T.transpose(params.W0)), params.b0)


def predict(mention_states: list[Tensor], params: ClassifierParams, *,
            dropout_rate: float = 0.0, rng: Rng | None = None,
            training: bool = False) -> tuple[np.ndarray, Tensor]:
    """Class probabilities for one instance.

    Returns (probs, logits); probs use the same max-subtracted softmax as
    the loss, so they match the training-path probabilities bit for bit.
    """
    logits = logits_for(mention_states, params, dropout_rate=dropout_rate,
                        rng=rng, training=training)
    z = logits.data[0] - logits.data[0].max()
    e = np.exp(z)
    probs = e / e.sum()
    return probs, logits
