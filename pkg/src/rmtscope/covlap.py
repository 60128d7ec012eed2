"""Streaming activation covariance and singular-vector overlap profiles.

The covariance accumulator is a mergeable value (Welford-style batch
merging) whose finalized matrix equals the population covariance
sum((x - mean)(x - mean)^T) / count over all examples and tokens -- count
normalization, not count-1.

Overlap profiles take the absolute inner product |v_k . f_j| maximized over
eigenvectors f_j: singular-vector and eigenvector signs are arbitrary, so
the magnitude is the reproducible quantity.  Overlaps above 0.5 are flagged
in serialized output as presentation metadata, never as a hard threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import NumericsError, ToolkitError
from .tensorstore import ActivationBatch, MatrixRole, TensorMap, classify_role

FLAG_THRESHOLD = 0.5

_ORTHO_WARN = 1e-8
_ORTHO_FAIL = 1e-3


@dataclass
class CovAccumulator:
    dim: int
    count: int
    mean: np.ndarray
    comoment: np.ndarray  # sum of outer products of deviations

    @classmethod
    def empty(cls, dim: int) -> "CovAccumulator":
        if dim < 1:
            raise ValueError("dim must be positive")
        return cls(dim=dim, count=0, mean=np.zeros(dim), comoment=np.zeros((dim, dim)))


def cov_merge(a: CovAccumulator, b: CovAccumulator) -> CovAccumulator:
    """Combine two accumulators; order-insensitive up to rounding."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.count == 0:
        return CovAccumulator(b.dim, b.count, b.mean.copy(), b.comoment.copy())
    if b.count == 0:
        return CovAccumulator(a.dim, a.count, a.mean.copy(), a.comoment.copy())
    count = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / count)
    comoment = a.comoment + b.comoment + np.outer(delta, delta) * (a.count * b.count / count)
    return CovAccumulator(dim=a.dim, count=count, mean=mean, comoment=comoment)


def cov_update(acc: CovAccumulator, batch: ActivationBatch) -> CovAccumulator:
    """Fold one activation batch into the accumulator."""
    values = np.asarray(batch.values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != acc.dim:
        raise ValueError(f"dimension mismatch: batch {batch.layer_id!r} has shape {values.shape}, accumulator dim {acc.dim}")
    rows = values.shape[0]
    if rows == 0:
        return acc
    bmean = values.mean(axis=0)
    centered = values - bmean
    bcom = centered.T @ centered
    return cov_merge(acc, CovAccumulator(dim=acc.dim, count=rows, mean=bmean, comoment=bcom))


def cov_finalize(acc: CovAccumulator) -> np.ndarray:
    """Population covariance comoment / count, exactly symmetrized."""
    if acc.count < 2:
        raise ValueError(f"need at least 2 samples, have {acc.count}")
    f = acc.comoment / acc.count
    return (f + f.T) / 2.0


@dataclass
class OverlapProfile:
    """Per-rank maximum |v_k . f_j| with the matching eigenvector index."""

    overlaps: np.ndarray
    argmax: np.ndarray
    svals: np.ndarray | None = None
    step: int | None = None

    def flagged(self, threshold: float = FLAG_THRESHOLD) -> np.ndarray:
        return self.overlaps > threshold


def _orthonormality_error(basis: np.ndarray) -> float:
    gram = basis.T @ basis
    return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))


def overlap_profile(v: np.ndarray, f: np.ndarray, svals: np.ndarray | None = None) -> OverlapProfile:
    """Overlap of right singular vectors (columns of v) with eigenvectors f.

    Both bases must be orthonormal: deviations above 1e-8 warn, above 1e-3
    raise.  Ties in the maximizing eigenvector go to the smaller index.
    """
    v = np.asarray(v, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if v.ndim != 2 or f.ndim != 2 or v.shape[0] != f.shape[0]:
        raise ValueError(f"dimension mismatch: v {v.shape} vs f {f.shape}")
    for label, basis in (("singular vectors", v), ("eigenvectors", f)):
        err = _orthonormality_error(basis)
        if err > _ORTHO_FAIL:
            raise NumericsError(f"{label} are not orthonormal: max Gram deviation {err:.3e}")
        if err > _ORTHO_WARN:
            warnings.warn(f"{label} deviate from orthonormality by {err:.3e}; proceeding", stacklevel=2)
    gram = np.abs(v.T @ f)
    return OverlapProfile(
        overlaps=gram.max(axis=1),
        argmax=gram.argmax(axis=1),
        svals=None if svals is None else np.asarray(svals, dtype=np.float64),
    )


def find_role_tensor(tmap: TensorMap, role: MatrixRole, rules=None) -> str:
    matches = []
    for name, arr in tmap.entries.items():
        if arr.ndim != 2:
            continue
        got = classify_role(name, rules)
        if got.kind == role.kind and (role.block is None or got.block == role.block):
            matches.append(name)
    if not matches:
        raise ToolkitError(f"missing matrix: no tensor with role {role.kind.value} block {role.block}")
    if len(matches) > 1:
        raise ToolkitError(f"ambiguous role {role.kind.value} block {role.block}: matches {sorted(matches)}")
    return matches[0]


def covariance_from_batches(batches: list[ActivationBatch], dim: int) -> np.ndarray:
    acc = CovAccumulator.empty(dim)
    for batch in batches:
        acc = cov_update(acc, batch)
    return cov_finalize(acc)


def overlap_timeline(
    checkpoints: list[TensorMap],
    role: MatrixRole,
    dumps: list[list[ActivationBatch]],
    rules=None,
) -> list[OverlapProfile]:
    """One overlap profile per checkpoint, ordered by training step.

    Each checkpoint must contain exactly one matrix with the requested role,
    and the paired dump must contain batches whose layer_id equals that
    tensor's name.
    """
    if len(checkpoints) != len(dumps):
        raise ToolkitError(f"{len(checkpoints)} checkpoints but {len(dumps)} activation dumps")
    profiles: list[OverlapProfile] = []
    for i, (tmap, batches) in enumerate(zip(checkpoints, dumps)):
        name = find_role_tensor(tmap, role, rules)
        w = tmap.entries[name]
        layer_batches = [b for b in batches if b.layer_id == name]
        if not layer_batches:
            raise ToolkitError(f"missing activation dump for layer {name!r} at checkpoint {i}")
        cov = covariance_from_batches(layer_batches, dim=w.shape[1])
        eig = linalg.eigh(cov, name=f"cov({name})")
        dec = linalg.svd(w, name=name)
        k = dec.s.size
        profile = overlap_profile(dec.v[:, :k], eig.eigenvectors, svals=dec.s)
        step = tmap.step()
        profile.step = step if step is not None else i
        profiles.append(profile)
    profiles.sort(key=lambda p: p.step)
    return profiles
