"""Minimal pre-norm decoder-only transformer with exact backpropagation.

Blocks compute x + Att(LN(x)) then x + FFN(LN(x)): multi-head causal
attention with per-head 1/sqrt(d_k) scaling, and either a plain GELU
feedforward W_D gelu(W_U x + b_U) or a gated unit
[gelu(W_U x + b_U) * (W_G x + b_G)] W_D.  Learned absolute positional
embeddings are added at the input; a final layer norm feeds the output
projection.  Everything runs in binary64 numpy with hand-written gradients,
so training is bit-reproducible for fixed seeds and cheap to verify against
finite differences.

Tensor names ("blocks.<i>.attn.q_proj.weight", "blocks.<i>.mlp.down_proj.weight",
...) classify into the standard matrix roles, and activation dumps use the
weight tensor's name as the layer id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..errors import NumericsError, ToolkitError
from ..linalg import make_rng
from ..tensorstore import ActivationBatch, TensorMap, TokenStream, write_activations
from . import EvalResult

Params = dict[str, np.ndarray]

_LN_EPS = 1e-5
_SELECTOR_KINDS = ("query", "key", "value", "attn_output", "up", "down", "gate")


@dataclass(frozen=True)
class TransformerConfig:
    vocab: int
    d_model: int
    n_heads: int
    n_blocks: int
    d_ff: int
    ffn_kind: str = "plain"  # "plain" | "glu"
    context: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.vocab, self.d_model, self.n_heads, self.n_blocks, self.d_ff, self.context) < 1:
            raise ValueError("all size parameters must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.ffn_kind not in ("plain", "glu"):
            raise ValueError(f'ffn_kind must be "plain" or "glu", got {self.ffn_kind!r}')

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def from_json(cls, obj: dict) -> "TransformerConfig":
        return cls(**{k: obj[k] for k in obj if k in cls.__dataclass_fields__})


def expected_tensor_names(config: TransformerConfig) -> list[str]:
    names = ["embed.tokens.weight", "embed.pos.weight", "final_ln.weight", "final_ln.bias", "lm_head.weight"]
    for b in range(config.n_blocks):
        pre = f"blocks.{b}"
        names += [f"{pre}.ln1.weight", f"{pre}.ln1.bias", f"{pre}.ln2.weight", f"{pre}.ln2.bias"]
        names += [f"{pre}.attn.{p}_proj.weight" for p in ("q", "k", "v", "o")]
        names += [f"{pre}.mlp.up_proj.weight", f"{pre}.mlp.up_proj.bias", f"{pre}.mlp.down_proj.weight"]
        if config.ffn_kind == "glu":
            names += [f"{pre}.mlp.gate_proj.weight", f"{pre}.mlp.gate_proj.bias"]
    return names


def init_params(config: TransformerConfig) -> Params:
    rng = make_rng(config.seed)
    d, f, v, c = config.d_model, config.d_ff, config.vocab, config.context
    sd = 1.0 / math.sqrt(d)
    sf = 1.0 / math.sqrt(f)
    params: Params = {
        "embed.tokens.weight": rng.standard_normal((v, d)) * sd,
        "embed.pos.weight": rng.standard_normal((c, d)) * sd,
    }
    for b in range(config.n_blocks):
        pre = f"blocks.{b}"
        params[f"{pre}.ln1.weight"] = np.ones(d)
        params[f"{pre}.ln1.bias"] = np.zeros(d)
        for p in ("q", "k", "v", "o"):
            params[f"{pre}.attn.{p}_proj.weight"] = rng.standard_normal((d, d)) * sd
        params[f"{pre}.ln2.weight"] = np.ones(d)
        params[f"{pre}.ln2.bias"] = np.zeros(d)
        params[f"{pre}.mlp.up_proj.weight"] = rng.standard_normal((f, d)) * sd
        params[f"{pre}.mlp.up_proj.bias"] = np.zeros(f)
        if config.ffn_kind == "glu":
            params[f"{pre}.mlp.gate_proj.weight"] = rng.standard_normal((f, d)) * sd
            params[f"{pre}.mlp.gate_proj.bias"] = np.zeros(f)
        params[f"{pre}.mlp.down_proj.weight"] = rng.standard_normal((d, f)) * sf
    params["final_ln.weight"] = np.ones(d)
    params["final_ln.bias"] = np.zeros(d)
    params["lm_head.weight"] = rng.standard_normal((v, d)) * sd
    return params


def params_to_map(params: Params, metadata: dict[str, str] | None = None) -> TensorMap:
    return TensorMap(
        entries={name: arr.astype(np.float32) for name, arr in params.items()},
        metadata=dict(metadata or {}),
    )


def map_to_params(config: TransformerConfig, tmap: TensorMap) -> Params:
    params: Params = {}
    for name in expected_tensor_names(config):
        if name not in tmap.entries:
            raise ToolkitError(f"missing tensor {name!r} for the declared architecture")
        params[name] = np.asarray(tmap.entries[name], dtype=np.float64)
    return params


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * phi


def _layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def _layernorm_backward(dy: np.ndarray, cache):
    xhat, inv, gamma = cache
    dgamma = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbeta = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cached(config: TransformerConfig, params: Params, ids: np.ndarray):
    """Forward over an id batch [B, T]; returns logits, block caches, final cache."""
    b, t = ids.shape
    if t > config.context:
        raise ToolkitError(f"context overflow: sequence length {t} exceeds context {config.context}")
    if ids.size and int(ids.max()) >= config.vocab:
        raise ToolkitError(f"token id {int(ids.max())} >= vocab {config.vocab}")
    x = params["embed.tokens.weight"][ids] + params["embed.pos.weight"][:t]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scale = 1.0 / math.sqrt(config.d_k)
    caches = []
    for blk in range(config.n_blocks):
        pre = f"blocks.{blk}"
        h1, ln1c = _layernorm(x, params[f"{pre}.ln1.weight"], params[f"{pre}.ln1.bias"])
        q = _split_heads(h1 @ params[f"{pre}.attn.q_proj.weight"].T, config.n_heads)
        k = _split_heads(h1 @ params[f"{pre}.attn.k_proj.weight"].T, config.n_heads)
        v = _split_heads(h1 @ params[f"{pre}.attn.v_proj.weight"].T, config.n_heads)
        scores = (q @ k.swapaxes(-1, -2)) * scale
        scores = np.where(mask, -np.inf, scores)
        p = _softmax(scores)
        ctx = _merge_heads(p @ v)
        x = x + ctx @ params[f"{pre}.attn.o_proj.weight"].T
        h2, ln2c = _layernorm(x, params[f"{pre}.ln2.weight"], params[f"{pre}.ln2.bias"])
        u = h2 @ params[f"{pre}.mlp.up_proj.weight"].T + params[f"{pre}.mlp.up_proj.bias"]
        au = _gelu(u)
        if config.ffn_kind == "glu":
            g = h2 @ params[f"{pre}.mlp.gate_proj.weight"].T + params[f"{pre}.mlp.gate_proj.bias"]
            inner = au * g
        else:
            g = None
            inner = au
        x = x + inner @ params[f"{pre}.mlp.down_proj.weight"].T
        caches.append({"h1": h1, "ln1c": ln1c, "q": q, "k": k, "v": v, "p": p, "ctx": ctx,
                       "h2": h2, "ln2c": ln2c, "u": u, "au": au, "g": g, "inner": inner})
    xf, lnfc = _layernorm(x, params["final_ln.weight"], params["final_ln.bias"])
    logits = xf @ params["lm_head.weight"].T
    return logits, caches, (xf, lnfc, ids)


def forward(config: TransformerConfig, params: Params, ids: np.ndarray) -> np.ndarray:
    """Logits [B, T, vocab] for an id batch [B, T]."""
    logits, _, _ = _forward_cached(config, params, ids)
    return logits


def transformer_forward(config: TransformerConfig, weights: TensorMap, tokens: TokenStream) -> np.ndarray:
    """Logits [len, vocab] for one token sequence of length <= context."""
    params = map_to_params(config, weights)
    ids = np.asarray(tokens.tokens, dtype=np.int64)[None, :]
    return forward(config, params, ids)[0]


def loss_and_grads(
    config: TransformerConfig, params: Params, ids: np.ndarray, targets: np.ndarray
) -> tuple[float, Params]:
    """Mean next-token cross-entropy over the batch and its exact gradients."""
    b, t = ids.shape
    logits, caches, (xf, lnfc, _) = _forward_cached(config, params, ids)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(b)[:, None], np.arange(t)[None, :]
    loss = float(-logp[rows[0], rows[1], targets].mean())

    dlogits = np.exp(logp)
    np.subtract.at(dlogits, (rows[0], rows[1], targets), 1.0)
    dlogits /= b * t

    grads: Params = {name: np.zeros_like(arr) for name, arr in params.items()}
    grads["lm_head.weight"] = np.einsum("btv,btd->vd", dlogits, xf)
    dxf = dlogits @ params["lm_head.weight"]
    dx, dgf, dbf = _layernorm_backward(dxf, lnfc)
    grads["final_ln.weight"] = dgf
    grads["final_ln.bias"] = dbf

    scale = 1.0 / math.sqrt(config.d_k)
    for blk in range(config.n_blocks - 1, -1, -1):
        pre = f"blocks.{blk}"
        c = caches[blk]
        # FFN branch: x_out = x_mid + inner @ Wd.T
        dinner = dx @ params[f"{pre}.mlp.down_proj.weight"]
        grads[f"{pre}.mlp.down_proj.weight"] = np.einsum("btd,btf->df", dx, c["inner"])
        if config.ffn_kind == "glu":
            dau = dinner * c["g"]
            dg = dinner * c["au"]
            grads[f"{pre}.mlp.gate_proj.weight"] = np.einsum("btf,btd->fd", dg, c["h2"])
            grads[f"{pre}.mlp.gate_proj.bias"] = dg.sum(axis=(0, 1))
        else:
            dau = dinner
            dg = None
        du = dau * _gelu_grad(c["u"])
        grads[f"{pre}.mlp.up_proj.weight"] = np.einsum("btf,btd->fd", du, c["h2"])
        grads[f"{pre}.mlp.up_proj.bias"] = du.sum(axis=(0, 1))
        dh2 = du @ params[f"{pre}.mlp.up_proj.weight"]
        if dg is not None:
            dh2 += dg @ params[f"{pre}.mlp.gate_proj.weight"]
        dln2, dg2, db2 = _layernorm_backward(dh2, c["ln2c"])
        grads[f"{pre}.ln2.weight"] = dg2
        grads[f"{pre}.ln2.bias"] = db2
        dx = dx + dln2

        # Attention branch: x_mid = x_in + ctx @ Wo.T
        dctx = dx @ params[f"{pre}.attn.o_proj.weight"]
        grads[f"{pre}.attn.o_proj.weight"] = np.einsum("btd,bte->de", dx, c["ctx"])
        dctxh = _split_heads(dctx, config.n_heads)
        dp = dctxh @ c["v"].swapaxes(-1, -2)
        dv = c["p"].swapaxes(-1, -2) @ dctxh
        ds = c["p"] * (dp - (dp * c["p"]).sum(axis=-1, keepdims=True))
        ds *= scale
        dq = ds @ c["k"]
        dk = ds.swapaxes(-1, -2) @ c["q"]
        dqm, dkm, dvm = (_merge_heads(a) for a in (dq, dk, dv))
        h1 = c["h1"]
        grads[f"{pre}.attn.q_proj.weight"] = np.einsum("btd,bte->de", dqm, h1)
        grads[f"{pre}.attn.k_proj.weight"] = np.einsum("btd,bte->de", dkm, h1)
        grads[f"{pre}.attn.v_proj.weight"] = np.einsum("btd,bte->de", dvm, h1)
        dh1 = (
            dqm @ params[f"{pre}.attn.q_proj.weight"]
            + dkm @ params[f"{pre}.attn.k_proj.weight"]
            + dvm @ params[f"{pre}.attn.v_proj.weight"]
        )
        dln1, dg1, db1 = _layernorm_backward(dh1, c["ln1c"])
        grads[f"{pre}.ln1.weight"] = dg1
        grads[f"{pre}.ln1.bias"] = db1
        dx = dx + dln1

    np.add.at(grads["embed.tokens.weight"], ids, dx)
    grads["embed.pos.weight"][: ids.shape[1]] = dx.sum(axis=0)
    return loss, grads


def _eval_segments(length: int, context: int) -> list[tuple[int, int, int]]:
    """Windows (start, first_target, last_target) covering each target once.

    Streams longer than the context are scored with windows of `context`
    tokens advanced by context // 2, so every prediction sees at least half
    a window of history.
    """
    if length < 2:
        raise ValueError("need at least 2 tokens to score next-token predictions")
    if length <= context:
        return [(0, 1, length - 1)]
    stride = max(1, context // 2)
    starts = list(range(0, length - context, stride))
    if starts[-1] != length - context:
        starts.append(length - context)
    segments = []
    next_target = 1
    for a in starts:
        lo = max(next_target, a + 1)
        hi = a + context - 1
        if lo <= hi:
            segments.append((a, lo, hi))
            next_target = hi + 1
    return segments


def _target_log_probs(config: TransformerConfig, params: Params, tokens: np.ndarray, batch: int = 64):
    """Yields (log p(target), argmax-correct) arrays per scored target."""
    length = tokens.size
    segments = _eval_segments(length, config.context)
    for i in range(0, len(segments), batch):
        chunk = segments[i : i + batch]
        width = max(a_hi - a for a, _, a_hi in chunk) + 1
        ids = np.stack([tokens[a : a + width] for a, _, _ in chunk])
        logits = forward(config, params, ids)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        for row, (a, lo, hi) in enumerate(chunk):
            pos = np.arange(lo, hi + 1)
            tgt = tokens[pos]
            yield logp[row, pos - a - 1, tgt], np.argmax(logits[row, pos - a - 1], axis=-1) == tgt


def perplexity(config: TransformerConfig, weights: TensorMap | Params, tokens: TokenStream) -> EvalResult:
    """exp(mean next-token negative log-likelihood) in binary64."""
    if len(tokens) < 2:
        raise ValueError("token stream must hold at least 2 tokens")
    params = weights if isinstance(weights, dict) else map_to_params(config, weights)
    toks = np.asarray(tokens.tokens, dtype=np.int64)
    total = 0.0
    count = 0
    for logp, _ in _target_log_probs(config, params, toks):
        total += float(-logp.sum())
        count += logp.size
    return EvalResult(metric="perplexity", value=float(np.exp(total / count)), n_items=count)


def token_accuracy(config: TransformerConfig, weights: TensorMap | Params, tokens: TokenStream) -> EvalResult:
    """Fraction of argmax-correct next-token predictions."""
    if len(tokens) < 2:
        raise ValueError("token stream must hold at least 2 tokens")
    params = weights if isinstance(weights, dict) else map_to_params(config, weights)
    toks = np.asarray(tokens.tokens, dtype=np.int64)
    hits = 0
    count = 0
    for _, correct in _target_log_probs(config, params, toks):
        hits += int(correct.sum())
        count += correct.size
    return EvalResult(metric="accuracy", value=hits / count, n_items=count)


@dataclass
class TrainResult:
    config: TransformerConfig
    checkpoints: list[tuple[int, TensorMap]]
    losses: list[float]
    final_map: TensorMap
    final_params: Params


def transformer_train(
    config: TransformerConfig,
    tokens: TokenStream,
    steps: int,
    lr: float,
    seed: int = 0,
    checkpoint_every: int | None = None,
    batch_windows: int = 8,
    init: TensorMap | Params | None = None,
) -> TrainResult:
    """Plain SGD on next-token cross-entropy, deterministic for fixed seeds.

    Checkpoints (step 0, every `checkpoint_every` steps, and the final step)
    carry a "step" metadata entry and role-classifiable tensor names.  Pass
    `init` to fine-tune from existing weights instead of a fresh
    initialization.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t = config.context
    toks = np.asarray(tokens.tokens, dtype=np.int64)
    if toks.size < t + 1:
        raise ValueError(f"token stream too short: need at least {t + 1} tokens")
    if init is None:
        params = init_params(config)
    elif isinstance(init, TensorMap):
        params = map_to_params(config, init)
    else:
        params = {k: v.copy() for k, v in init.items()}

    rng = make_rng(seed)
    checkpoints: list[tuple[int, TensorMap]] = []

    def snapshot(step: int) -> None:
        checkpoints.append((step, params_to_map(params, metadata={"step": str(step)})))

    if checkpoint_every:
        snapshot(0)
    losses: list[float] = []
    for step in range(steps):
        starts = rng.integers(0, toks.size - t, size=batch_windows)
        windows = np.stack([toks[s : s + t + 1] for s in starts])
        loss, grads = loss_and_grads(config, params, windows[:, :t], windows[:, 1:])
        if not np.isfinite(loss):
            raise NumericsError(f"training diverged: non-finite loss at step {step}")
        losses.append(loss)
        for name, grad in grads.items():
            params[name] -= lr * grad
        if checkpoint_every and (step + 1) % checkpoint_every == 0 and step + 1 != steps:
            snapshot(step + 1)
    if checkpoint_every:
        snapshot(steps)
    final_map = params_to_map(params, metadata={"step": str(steps)})
    return TrainResult(config=config, checkpoints=checkpoints, losses=losses, final_map=final_map, final_params=params)


def _selector_layers(config: TransformerConfig, selector: dict) -> list[tuple[str, str]]:
    """Resolve a {"kinds": [...], "blocks": "all"|[...]} selector to (kind, tensor name)."""
    if not isinstance(selector, dict) or "kinds" not in selector:
        raise ValueError('invalid selector: expected {"kinds": [...], "blocks": "all"|[...]}')
    kinds = list(selector["kinds"])
    for kind in kinds:
        if kind not in _SELECTOR_KINDS:
            raise ValueError(f"invalid selector kind {kind!r}; choose from {_SELECTOR_KINDS}")
    blocks_obj = selector.get("blocks", "all")
    blocks = range(config.n_blocks) if blocks_obj == "all" else [int(b) for b in blocks_obj]
    if any(not 0 <= b < config.n_blocks for b in blocks):
        raise ValueError(f"invalid selector blocks {list(blocks)}; model has {config.n_blocks} blocks")
    tensor_for = {
        "query": "attn.q_proj.weight",
        "key": "attn.k_proj.weight",
        "value": "attn.v_proj.weight",
        "attn_output": "attn.o_proj.weight",
        "up": "mlp.up_proj.weight",
        "down": "mlp.down_proj.weight",
        "gate": "mlp.gate_proj.weight",
    }
    out = []
    for b in blocks:
        for kind in kinds:
            if kind == "gate" and config.ffn_kind != "glu":
                raise ValueError("invalid selector: model has no gate projection")
            out.append((kind, f"blocks.{b}.{tensor_for[kind]}"))
    return out


def dump_activations(
    config: TransformerConfig,
    weights: TensorMap | Params,
    tokens: TokenStream,
    selector: dict,
    path,
    n_windows: int | None = None,
) -> int:
    """Write the inputs of each selected weight matrix (post-LN, pre-matmul).

    The stream is consumed as consecutive non-overlapping windows of
    `context` tokens; one ActivationBatch per window per selected matrix is
    written, with the weight tensor's name as the layer id.  Returns the
    number of windows processed.
    """
    params = weights if isinstance(weights, dict) else map_to_params(config, weights)
    layers = _selector_layers(config, selector)
    toks = np.asarray(tokens.tokens, dtype=np.int64)
    available = toks.size // config.context
    windows = available if n_windows is None else min(n_windows, available)
    if windows < 1:
        raise ValueError("token stream too short for a single window")
    ids = np.stack([toks[i * config.context : (i + 1) * config.context] for i in range(windows)])
    _, caches, _ = _forward_cached(config, params, ids)

    tap_key = {"query": "h1", "key": "h1", "value": "h1", "attn_output": "ctx", "up": "h2", "gate": "h2", "down": "inner"}
    batches = []
    for w in range(windows):
        for kind, name in layers:
            blk = int(name.split(".")[1])
            values = caches[blk][tap_key[kind]][w]
            batches.append(ActivationBatch(layer_id=name, values=values))
    write_activations(
        batches,
        path,
        metadata={"d_model": str(config.d_model), "context": str(config.context), "windows": str(windows)},
    )
    return windows
