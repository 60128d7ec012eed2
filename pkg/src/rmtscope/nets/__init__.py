"""Desk-scale models producing checkpoints and activation dumps.

`mlp` trains a fully connected classifier with an optional lazy-training
scale on the final softmax; `transformer` is a minimal pre-norm decoder-only
language model with exact hand-written backpropagation.  Both are pure
numpy, binary64 end to end, and deterministic for fixed seeds.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class EvalResult:
    metric: str  # "perplexity" | "accuracy"
    value: float
    n_items: int


from .mlp import MLPConfig, mlp_eval, mlp_train  # noqa: E402
from .transformer import (  # noqa: E402
    TransformerConfig,
    dump_activations,
    perplexity,
    token_accuracy,
    transformer_forward,
    transformer_train,
)

__all__ = [
    "EvalResult",
    "MLPConfig",
    "mlp_eval",
    "mlp_train",
    "TransformerConfig",
    "dump_activations",
    "perplexity",
    "token_accuracy",
    "transformer_forward",
    "transformer_train",
]
