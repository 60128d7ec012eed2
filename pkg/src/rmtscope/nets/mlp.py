"""Fully connected classifier with an optional lazy-training output scale.

The final softmax input is multiplied by alpha and the cross-entropy loss by
1/alpha^2, so alpha = 1 reduces exactly to standard softmax cross-entropy
while large alpha keeps the trained weights close to their initialization
(the "lazy" regime).  Training is plain mini-batch gradient descent with a
fixed learning rate -- deterministic for a fixed seed -- and layers listed
in freeze_layers receive no updates.

Defaults (ReLU hidden units, lr, batch size, epochs) are package decisions
exposed through the config; nothing here is tuned per dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericsError
from ..linalg import make_rng
from ..tensorstore import TensorMap
from . import EvalResult

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class MLPConfig:
    layer_dims: tuple[int, ...]
    alpha: float = 1.0
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    freeze_layers: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims must list input and output sizes")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError("layer dimensions must be positive")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        n_layers = len(self.layer_dims) - 1
        if any(not 0 <= i < n_layers for i in self.freeze_layers):
            raise ValueError(f"freeze_layers must index layers 0..{n_layers - 1}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @classmethod
    def from_json(cls, obj: dict) -> "MLPConfig":
        obj = dict(obj)
        obj["layer_dims"] = tuple(obj["layer_dims"])
        obj["freeze_layers"] = frozenset(obj.get("freeze_layers", ()))
        return cls(**obj)


def init_params(config: MLPConfig) -> Params:
    """He initialization, weight shapes [out, in]."""
    rng = make_rng(config.seed)
    params: Params = {}
    for i in range(config.n_layers):
        fan_in = config.layer_dims[i]
        fan_out = config.layer_dims[i + 1]
        params[f"layers.{i}.weight"] = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        params[f"layers.{i}.bias"] = np.zeros(fan_out)
    return params


def params_to_map(params: Params, metadata: dict[str, str] | None = None) -> TensorMap:
    entries = {name: arr.astype(np.float32) for name, arr in params.items()}
    return TensorMap(entries=entries, metadata=dict(metadata or {}))


def map_to_params(tmap: TensorMap) -> Params:
    return {name: np.asarray(arr, dtype=np.float64) for name, arr in tmap.entries.items()}


def _infer_n_layers(params: Params) -> int:
    layers = {int(name.split(".")[1]) for name in params if name.startswith("layers.")}
    if not layers or layers != set(range(max(layers) + 1)):
        raise ValueError("weights do not define a contiguous layer stack")
    return max(layers) + 1


def _forward(params: Params, x: np.ndarray, n_layers: int) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Returns final-layer pre-activation logits plus per-layer caches."""
    acts = [x]
    pres = []
    a = x
    for i in range(n_layers - 1):
        z = a @ params[f"layers.{i}.weight"].T + params[f"layers.{i}.bias"]
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    logits = a @ params[f"layers.{n_layers - 1}.weight"].T + params[f"layers.{n_layers - 1}.bias"]
    return logits, acts, pres


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mlp_loss_and_grads(params: Params, config: MLPConfig, x: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Scaled cross-entropy -mean(log softmax(alpha z)[y]) / alpha^2 and its grads."""
    n = x.shape[0]
    alpha = config.alpha
    logits, acts, pres = _forward(params, x, config.n_layers)
    logp = _log_softmax(alpha * logits)
    loss = float(-logp[np.arange(n), y].mean() / alpha**2)

    p = np.exp(logp)
    p[np.arange(n), y] -= 1.0
    dz = p / (n * alpha)  # d loss / d logits
    grads: Params = {}
    for i in range(config.n_layers - 1, -1, -1):
        grads[f"layers.{i}.weight"] = dz.T @ acts[i]
        grads[f"layers.{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            da = dz @ params[f"layers.{i}.weight"]
            dz = da * (pres[i - 1] > 0.0)
    return loss, grads


@dataclass
class MLPTrainResult:
    config: MLPConfig
    init_map: TensorMap
    final_map: TensorMap
    checkpoints: list[tuple[int, TensorMap]]
    epoch_losses: list[float]
    init_params: Params
    final_params: Params


def mlp_train(
    config: MLPConfig,
    x: np.ndarray,
    y: np.ndarray,
    checkpoint_every: int | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> MLPTrainResult:
    """Mini-batch gradient descent; deterministic for a fixed seed.

    Epoch checkpoints (metadata "step" = epoch) are collected every
    `checkpoint_every` epochs when requested; the initial weights are always
    kept so weight movement can be measured afterwards.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != config.layer_dims[0]:
        raise ValueError(f"data dim {x.shape} does not match input size {config.layer_dims[0]}")
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if int(y.max()) >= config.layer_dims[-1]:
        raise ValueError("label exceeds output dimension")

    params = init_params(config)
    init_map = params_to_map(params, metadata={"step": "0"})
    init_copy = {k: v.copy() for k, v in params.items()}
    rng = make_rng(config.seed + 1)
    n = x.shape[0]
    checkpoints: list[tuple[int, TensorMap]] = []
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = mlp_loss_and_grads(params, config, x[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericsError(f"training diverged: non-finite loss at epoch {epoch}")
            losses.append(loss)
            for i in range(config.n_layers):
                if i in config.freeze_layers:
                    continue
                params[f"layers.{i}.weight"] -= config.lr * grads[f"layers.{i}.weight"]
                params[f"layers.{i}.bias"] -= config.lr * grads[f"layers.{i}.bias"]
        epoch_losses.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, epoch_losses[-1])
        if checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            checkpoints.append((epoch + 1, params_to_map(params, metadata={"step": str(epoch + 1)})))
    return MLPTrainResult(
        config=config,
        init_map=init_map,
        final_map=params_to_map(params, metadata={"step": str(config.epochs)}),
        checkpoints=checkpoints,
        epoch_losses=epoch_losses,
        init_params=init_copy,
        final_params=params,
    )


def mlp_eval(weights: TensorMap | Params, x: np.ndarray, y: np.ndarray) -> EvalResult:
    """Argmax accuracy; ties resolve to the lowest class index."""
    params = map_to_params(weights) if isinstance(weights, TensorMap) else weights
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_layers = _infer_n_layers(params)
    if x.shape[1] != params["layers.0.weight"].shape[1]:
        raise ValueError(
            f"data dim {x.shape[1]} does not match first layer input {params['layers.0.weight'].shape[1]}"
        )
    logits, _, _ = _forward(params, x, n_layers)
    preds = np.argmax(logits, axis=1)
    return EvalResult(metric="accuracy", value=float((preds == y).mean()), n_items=int(x.shape[0]))


def weight_movement(init: Params | TensorMap, final: Params | TensorMap) -> float:
    """Aggregate relative movement ||W_final - W_init||_F / ||W_init||_F over weight matrices."""
    a = map_to_params(init) if isinstance(init, TensorMap) else init
    b = map_to_params(final) if isinstance(final, TensorMap) else final
    num = 0.0
    den = 0.0
    for name, w0 in a.items():
        if not name.endswith(".weight"):
            continue
        num += float(np.sum((b[name] - w0) ** 2))
        den += float(np.sum(w0**2))
    return float(np.sqrt(num) / np.sqrt(den))
