"""Bundled synthetic datasets: Gaussian class clusters and Markov token streams.

Both generators are pure functions of their seeds, so "bundled" means
regenerate-on-demand rather than files shipped in the repository.  The
labeled-vector container format ("x" [N, d] and "y" [N], binary32 with
integer-valued labels) also accepts externally produced datasets.
"""

from __future__ import annotations

import numpy as np

from ..linalg import make_rng
from ..tensorstore import TensorMap, TokenStream


def cluster_dataset(
    n: int,
    dim: int = 64,
    classes: int = 10,
    seed: int = 0,
    task_seed: int | None = None,
    mean_scale: float = 0.35,
    noise: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced Gaussian clusters: x = mean_class + noise * N(0, I).

    `task_seed` fixes the class means (defaults to `seed`); `seed` drives
    the samples, so train/test splits of the same task use one task_seed and
    two seeds.  Labels cycle 0..classes-1 so any prefix is near-balanced;
    rows are shuffled deterministically.
    """
    if n < classes:
        raise ValueError("need at least one sample per class")
    means = make_rng(seed if task_seed is None else task_seed).standard_normal((classes, dim)) * mean_scale
    rng = make_rng(seed)
    y = np.arange(n) % classes
    x = means[y] + rng.standard_normal((n, dim)) * noise
    perm = rng.permutation(n)
    return x[perm].astype(np.float64), y[perm].astype(np.int64)


def dataset_to_map(x: np.ndarray, y: np.ndarray) -> TensorMap:
    x = np.asarray(x, dtype=np.float32)
    y_arr = np.asarray(y, dtype=np.float32)
    if x.ndim != 2 or y_arr.ndim != 1 or x.shape[0] != y_arr.shape[0]:
        raise ValueError(f"expected x [N, d] and y [N], got {x.shape} and {y_arr.shape}")
    return TensorMap(entries={"x": x, "y": y_arr})


def dataset_from_map(tmap: TensorMap) -> tuple[np.ndarray, np.ndarray]:
    try:
        x = tmap.entries["x"]
        y = tmap.entries["y"]
    except KeyError as exc:
        raise ValueError(f'labeled-vector container must hold tensors "x" and "y"; missing {exc}') from exc
    y_int = np.asarray(y, dtype=np.float64)
    if not np.allclose(y_int, np.round(y_int)):
        raise ValueError('labels in "y" must be integer-valued')
    return np.asarray(x, dtype=np.float64), np.round(y_int).astype(np.int64)


def markov_tokens(
    vocab: int,
    length: int,
    seed: int = 0,
    task_seed: int = 0,
    noise: float = 0.02,
    lag: int = 1,
) -> TokenStream:
    """Mostly-deterministic cycle language: next = perm[token lag steps back].

    With probability `noise` the next token is uniform instead, which keeps
    the entropy rate positive.  lag=1 is a plain first-order chain; lag=2
    interleaves two chains, so predicting the next token requires looking
    past the current one -- a model without working attention cannot beat
    chance on it.  `task_seed` fixes the permutation (the "language");
    `seed` drives the sampling, so the same task can be sampled into
    disjoint train/eval streams.
    """
    if vocab < 2:
        raise ValueError("vocab must be >= 2")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must be in [0, 1]")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    perm = make_rng(task_seed).permutation(vocab)
    rng = make_rng(seed)
    toks = np.empty(length, dtype=np.uint32)
    buf = [int(v) for v in rng.integers(vocab, size=lag)]
    jumps = rng.random(length)
    randoms = rng.integers(vocab, size=length)
    for i in range(length):
        toks[i] = buf[-1]
        nxt = int(randoms[i]) if jumps[i] < noise else int(perm[buf[-lag]])
        buf.append(nxt)
        buf.pop(0)
    return TokenStream(vocab_size=vocab, tokens=toks)
