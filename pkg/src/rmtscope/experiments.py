"""Desk-scale ablation experiments: decile sweeps, fine-tune ordering, lazy regime.

Each function returns plain row dictionaries (one tidy record per
measurement) so the CLI can serialize them to CSV/JSON and tests can assert
on them directly.
"""

from __future__ import annotations

import numpy as np

from . import surgery
from .nets import mlp as mlp_mod
from .nets import transformer as tf_mod
from .nets.mlp import MLPConfig
from .nets.transformer import TransformerConfig
from .tensorstore import RoleKind, TensorMap, TokenStream, classify_role

SWEEPABLE_KINDS = (
    RoleKind.QUERY,
    RoleKind.KEY,
    RoleKind.VALUE,
    RoleKind.ATTN_OUTPUT,
    RoleKind.UP,
    RoleKind.DOWN,
    RoleKind.GATE,
)


def present_kinds(tmap: TensorMap, rules=None) -> list[RoleKind]:
    """Sweepable role kinds that actually occur among 2-D tensors."""
    found = {classify_role(name, rules).kind for name, arr in tmap.entries.items() if arr.ndim == 2}
    return [k for k in SWEEPABLE_KINDS if k in found]


def decile_sweep_lm(
    config: TransformerConfig,
    weights: TensorMap,
    eval_tokens: TokenStream,
    kinds: list[RoleKind] | None = None,
) -> list[dict]:
    """Per-role, per-decile perplexity deltas against the unmodified model.

    The first row is the empty plan (decile 0): the surgery short-circuits
    to bit-identical tensors, so its delta is exactly zero by construction.
    """
    if kinds is None:
        kinds = present_kinds(weights)
    if not kinds:
        raise ValueError("no sweepable matrix kinds in the checkpoint")
    base = tf_mod.perplexity(config, weights, eval_tokens).value
    empty_plan = surgery.SurgeryPlan(kinds=tuple(kinds), ranks=())
    noop_map, _ = surgery.apply_plan(weights, empty_plan)
    noop = tf_mod.perplexity(config, noop_map, eval_tokens).value
    rows = [{"role": "none", "decile": 0, "metric": "perplexity", "base": base, "value": noop, "delta": noop - base}]
    for kind in kinds:
        for decile in range(1, 11):
            plan = surgery.SurgeryPlan(kinds=(kind,), decile=decile)
            modified, _ = surgery.apply_plan(weights, plan)
            value = tf_mod.perplexity(config, modified, eval_tokens).value
            rows.append(
                {
                    "role": kind.value,
                    "decile": decile,
                    "metric": "perplexity",
                    "base": base,
                    "value": value,
                    "delta": value - base,
                }
            )
    return rows


def decile_sweep_mlp(weights: TensorMap, x: np.ndarray, y: np.ndarray) -> list[dict]:
    """Accuracy deltas per weight matrix per decile (each matrix is a "role")."""
    base = mlp_mod.mlp_eval(weights, x, y).value
    params = mlp_mod.map_to_params(weights)
    rows = [{"role": "none", "decile": 0, "metric": "accuracy", "base": base, "value": base, "delta": 0.0}]
    matrix_names = sorted(n for n, a in params.items() if a.ndim == 2)
    for name in matrix_names:
        for decile in range(1, 11):
            modified = dict(params)
            k = min(params[name].shape)
            ranks = surgery.decile_partition(k).ranks(decile)
            modified[name] = surgery.remove_ranks(params[name], ranks)
            value = mlp_mod.mlp_eval(modified, x, y).value
            rows.append(
                {
                    "role": name,
                    "decile": decile,
                    "metric": "accuracy",
                    "base": base,
                    "value": value,
                    "delta": value - base,
                }
            )
    return rows


def finetune_order(
    config: TransformerConfig,
    pretrained: TensorMap,
    task_b_train: TokenStream,
    task_b_eval: TokenStream,
    deciles: tuple[int, ...] = (1, 10),
    ft_steps: int = 400,
    ft_lr: float = 0.5,
    seed: int = 0,
    batch_windows: int = 8,
    kinds: list[RoleKind] | None = None,
) -> list[dict]:
    """Remove-then-finetune vs finetune-then-remove on a second task.

    The removal targets every sweepable matrix kind (embeddings excluded).
    Both orders share the fine-tuning seed; the clean fine-tuned model (row
    order="finetune-only") is also the base for the finetune-then-remove arm.
    """
    if kinds is None:
        kinds = present_kinds(pretrained)

    def metrics(weights: TensorMap) -> tuple[float, float]:
        ppl = tf_mod.perplexity(config, weights, task_b_eval).value
        acc = tf_mod.token_accuracy(config, weights, task_b_eval).value
        return ppl, acc

    clean = tf_mod.transformer_train(
        config, task_b_train, steps=ft_steps, lr=ft_lr, seed=seed, batch_windows=batch_windows, init=pretrained
    ).final_map
    ppl, acc = metrics(clean)
    rows = [{"decile": 0, "order": "finetune-only", "perplexity": ppl, "accuracy": acc}]
    for decile in deciles:
        plan = surgery.SurgeryPlan(kinds=tuple(kinds), decile=decile)
        removed_first, _ = surgery.apply_plan(pretrained, plan)
        rtf = tf_mod.transformer_train(
            config, task_b_train, steps=ft_steps, lr=ft_lr, seed=seed, batch_windows=batch_windows, init=removed_first
        ).final_map
        ppl, acc = metrics(rtf)
        rows.append({"decile": decile, "order": "remove-then-finetune", "perplexity": ppl, "accuracy": acc})

        removed_after, _ = surgery.apply_plan(clean, plan)
        ppl, acc = metrics(removed_after)
        rows.append({"decile": decile, "order": "finetune-then-remove", "perplexity": ppl, "accuracy": acc})
    return rows


def _eval_with_fraction_removed(result: mlp_mod.MLPTrainResult, fraction: float, x, y) -> float:
    """Accuracy after zeroing the smallest fraction (by count) of singular values
    in every weight matrix except the final classifier layer."""
    params = dict(result.final_params)
    n_layers = result.config.n_layers
    for i in range(n_layers - 1):
        name = f"layers.{i}.weight"
        k = min(params[name].shape)
        ranks = surgery.smallest_fraction_ranks(k, fraction)
        params[name] = surgery.remove_ranks(params[name], ranks)
    return mlp_mod.mlp_eval(params, x, y).value


def lazy_sweep(
    base_config: MLPConfig,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    alphas: tuple[float, ...] = (1.0, 15.0),
    fractions: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
) -> dict:
    """Feature-learning vs lazy training, then bottom-spectrum removal curves.

    Returns {"rows": [...], "movement": {alpha: relative weight movement},
    "accuracy": {alpha: clean test accuracy}}.  Drops are normalized by the
    clean accuracy of the same model so the two regimes are comparable
    despite different starting accuracies.
    """
    rows = []
    movement: dict[float, float] = {}
    accuracy: dict[float, float] = {}
    for alpha in alphas:
        config = MLPConfig(
            layer_dims=base_config.layer_dims,
            alpha=alpha,
            lr=base_config.lr,
            epochs=base_config.epochs,
            batch_size=base_config.batch_size,
            seed=base_config.seed,
            freeze_layers=base_config.freeze_layers,
        )
        result = mlp_mod.mlp_train(config, x_train, y_train)
        movement[alpha] = mlp_mod.weight_movement(result.init_params, result.final_params)
        clean = mlp_mod.mlp_eval(result.final_params, x_test, y_test).value
        accuracy[alpha] = clean
        for fraction in fractions:
            acc = clean if fraction == 0.0 else _eval_with_fraction_removed(result, fraction, x_test, y_test)
            rows.append(
                {
                    "alpha": alpha,
                    "fraction": fraction,
                    "accuracy": acc,
                    "drop": clean - acc,
                    "norm_drop": (clean - acc) / clean if clean > 0 else 0.0,
                }
            )
    return {"rows": rows, "movement": movement, "accuracy": accuracy}


def frozen_mass_experiment(
    layer_dims: tuple[int, ...],
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    freeze_layers: frozenset[int] = frozenset({0, 1}),
    mass_fraction: float = 0.8,
    lr: float = 0.05,
    epochs: int = 30,
    batch_size: int = 64,
    seed: int = 0,
) -> list[dict]:
    """Train with and without early layers frozen, then strip 80% of the
    singular-value mass from those layers and compare the damage."""
    rows = []
    for variant, frozen in (("trained", frozenset()), ("frozen", freeze_layers)):
        config = MLPConfig(
            layer_dims=layer_dims, alpha=1.0, lr=lr, epochs=epochs, batch_size=batch_size, seed=seed, freeze_layers=frozen
        )
        result = mlp_mod.mlp_train(config, x_train, y_train)
        before = mlp_mod.mlp_eval(result.final_params, x_test, y_test).value
        params = dict(result.final_params)
        for i in sorted(freeze_layers):
            name = f"layers.{i}.weight"
            params[name] = surgery.remove_by_mass(params[name], mass_fraction)
        after = mlp_mod.mlp_eval(params, x_test, y_test).value
        rows.append(
            {
                "variant": variant,
                "accuracy_before": before,
                "accuracy_after": after,
                "mass_fraction": mass_fraction,
                "layers": sorted(freeze_layers),
            }
        )
    return rows
