"""Dense numerical kernels: SVD, symmetric eigendecomposition, RNG.

All decompositions run in binary64 regardless of the stored dtype and carry
contractual tolerances (orthogonality 1e-10, reconstruction 1e-8 relative).
Singular/eigen vectors get a deterministic sign: the largest-magnitude
component of each right singular vector (or eigenvector) is made positive,
ties broken by the lowest index, so downstream overlap profiles and golden
files are reproducible.

Randomness comes from the Philox 4x64 counter-based generator with normal
variates drawn by numpy's ziggurat sampler; a fixed seed always yields the
same matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericsError


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: Philox 4x64 keyed by the seed."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SVDResult:
    """Full decomposition a = u[:, :k] * s @ v[:, :k].T with k = min(m, n)."""

    u: np.ndarray  # (m, m), orthogonal
    s: np.ndarray  # (k,), descending, non-negative
    v: np.ndarray  # (n, n), orthogonal; columns are right singular vectors

    def reconstruct(self) -> np.ndarray:
        k = self.s.size
        return (self.u[:, :k] * self.s) @ self.v[:, :k].T


@dataclass
class EigResult:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns, aligned with eigenvalues


def _check_finite(a: np.ndarray, what: str, name: str | None) -> None:
    if not np.all(np.isfinite(a)):
        label = f" {name!r}" if name else ""
        raise NumericsError(f"non-finite input to {what}{label}")


def _fix_signs(vectors: np.ndarray, paired: np.ndarray | None = None, pairs: int = 0) -> None:
    """Make the largest-magnitude component of each column positive, in place.

    Columns below `pairs` flip the corresponding column of `paired` too, so
    the product of the factors is preserved.
    """
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        idx = int(np.argmax(np.abs(col)))
        if col[idx] < 0:
            vectors[:, j] = -col
            if paired is not None and j < pairs:
                paired[:, j] = -paired[:, j]


def svd(a: np.ndarray, name: str | None = None) -> SVDResult:
    """Full SVD with deterministic signs; computed in binary64."""
    a = np.asarray(a)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ValueError(f"svd expects a 2-D matrix, got shape {a.shape}")
    _check_finite(a, "svd", name)
    a64 = a.astype(np.float64, copy=False)
    try:
        u, s, vh = np.linalg.svd(a64, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        label = f" {name!r}" if name else ""
        raise NumericsError(f"SVD iteration failed to converge for matrix{label}: {exc}") from exc
    v = vh.T.copy()
    u = u.copy()
    k = s.size
    _fix_signs(v, paired=u, pairs=k)
    if u.shape[1] > k:
        _fix_signs(u[:, k:])
    return SVDResult(u=u, s=s, v=v)


def eigh(a: np.ndarray, name: str | None = None) -> EigResult:
    """Symmetric eigendecomposition, eigenvalues descending.

    The input must be symmetric to 1e-8 relative in max norm; it is
    symmetrized as (a + a.T)/2 before the decomposition.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"eigh expects a square matrix, got shape {a.shape}")
    _check_finite(a, "eigh", name)
    a64 = a.astype(np.float64, copy=False)
    scale = float(np.max(np.abs(a64))) if a64.size else 0.0
    asym = float(np.max(np.abs(a64 - a64.T)))
    if scale > 0 and asym > 1e-8 * scale:
        raise NumericsError(f"eigh input is not symmetric: max asymmetry {asym:.3e} vs scale {scale:.3e}")
    sym = (a64 + a64.T) / 2.0
    try:
        w, vec = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        label = f" {name!r}" if name else ""
        raise NumericsError(f"eigendecomposition failed to converge for matrix{label}: {exc}") from exc
    order = np.argsort(w)[::-1]
    w = w[order]
    vec = vec[:, order].copy()
    _fix_signs(vec)
    return EigResult(eigenvalues=w, eigenvectors=vec)


def gaussian_matrix(m: int, n: int, sigma: float, seed: int) -> np.ndarray:
    """i.i.d. normal(0, sigma^2) matrix, deterministic for a fixed seed."""
    if m < 1 or n < 1:
        raise ValueError("matrix dimensions must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = make_rng(seed)
    return rng.standard_normal((m, n)) * sigma


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix via QR of a Gaussian with positive R diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
