"""Marchenko-Pastur law evaluation, fitting, outlier counts, and KS distance.

Matrices are always analyzed in the orientation m <= n (transposing leaves
singular values unchanged), so a single parameterization

    nu_minus = sigma_tilde * (1 - sqrt(m/n))
    nu_plus  = sigma_tilde * (1 + sqrt(m/n))

covers every aspect ratio.  The density is the singular-value form of the MP
law; for square matrices it reduces to the quarter-circle.  The CDF is
computed by adaptive quadrature (one code path for all ratios) and outlier
counts use a finite-size buffer of 2 * n**(-2/3) -- the Tracy-Widom edge
scale -- to avoid flagging ordinary edge fluctuations at small sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import linalg
from .errors import NumericsError
from .tensorstore import MatrixRole

# Overlap / report presentation threshold; flagged in outputs, never a hard cut.
DEFAULT_BINS = 40


@dataclass(frozen=True)
class MPModel:
    """Fitted MP parameters for a matrix oriented so that m <= n."""

    sigma_tilde: float
    ratio: float  # m/n in (0, 1]
    nu_minus: float
    nu_plus: float
    m: int
    n: int


def mp_model(m: int, n: int, sigma_tilde: float) -> MPModel:
    if m < 1 or n < 1:
        raise ValueError("dimensions must be positive")
    if not sigma_tilde > 0:
        raise ValueError("sigma_tilde must be positive")
    m, n = min(m, n), max(m, n)
    ratio = m / n
    root = math.sqrt(ratio)
    return MPModel(
        sigma_tilde=float(sigma_tilde),
        ratio=ratio,
        nu_minus=float(sigma_tilde * (1.0 - root)),
        nu_plus=float(sigma_tilde * (1.0 + root)),
        m=m,
        n=n,
    )


def mp_bounds(m: int, n: int, sigma_tilde: float) -> tuple[float, float]:
    model = mp_model(m, n, sigma_tilde)
    return model.nu_minus, model.nu_plus


def mp_density(nu, model: MPModel):
    """Singular-value MP density; zero outside [nu_minus, nu_plus]."""
    nu_arr = np.asarray(nu, dtype=np.float64)
    out = np.zeros_like(nu_arr)
    lo, hi = model.nu_minus, model.nu_plus
    norm = math.pi * model.sigma_tilde**2 * model.ratio
    inside = (nu_arr >= lo) & (nu_arr <= hi)
    x = nu_arr[inside]
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.sqrt(np.maximum(hi * hi - x * x, 0.0) * np.maximum(x * x - lo * lo, 0.0)) / (norm * x)
    if lo == 0.0:
        # sqrt(x^2 - lo^2)/x -> 1 as x -> 0, giving the finite limit hi/norm.
        val = np.where(x == 0.0, hi / norm, val)
    out[inside] = val
    if np.ndim(nu) == 0:
        return float(out)
    return out


def mp_cdf(nu: float, model: MPModel) -> float:
    """CDF of the MP density by adaptive quadrature (abs tol 1e-8)."""
    if nu <= model.nu_minus:
        return 0.0
    if nu >= model.nu_plus:
        return 1.0
    val, _ = integrate.quad(
        lambda t: mp_density(t, model),
        model.nu_minus,
        nu,
        epsabs=1e-10,
        epsrel=1e-10,
        limit=200,
    )
    return min(max(float(val), 0.0), 1.0)


def mp_quantile(p: float, model: MPModel) -> float:
    """Inverse CDF by bisection on mp_cdf."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    lo, hi = model.nu_minus, model.nu_plus
    if p == 0.0:
        return lo
    if p == 1.0:
        return hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mp_cdf(mid, model) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * model.sigma_tilde:
            break
    return 0.5 * (lo + hi)


def fit_sigma(w: np.ndarray) -> float:
    """sigma_tilde from the empirical entry variance: std(entries) * sqrt(max dim)."""
    w = np.asarray(w, dtype=np.float64)
    if w.size < 2:
        raise ValueError("need at least 2 elements to fit sigma")
    if not np.all(np.isfinite(w)):
        raise NumericsError("non-finite input to fit_sigma")
    std = float(w.std())
    if std == 0.0:
        raise NumericsError("zero variance: constant matrix has no MP fit")
    return std * math.sqrt(max(w.shape))


def default_buffer(n: int) -> float:
    """Finite-size outlier buffer at the Tracy-Widom edge scale."""
    return 2.0 * n ** (-2.0 / 3.0)


def count_outliers(svals: np.ndarray, model: MPModel, buffer: float) -> tuple[int, int]:
    """Count singular values beyond the buffered MP bounds.

    left is zero by definition when nu_minus = 0 (square matrices).
    """
    if buffer < 0:
        raise ValueError("buffer must be non-negative")
    svals = np.asarray(svals, dtype=np.float64)
    right = int(np.sum(svals > model.nu_plus * (1.0 + buffer)))
    if model.nu_minus <= 0.0:
        left = 0
    else:
        left = int(np.sum(svals < model.nu_minus * (1.0 - buffer)))
    return left, right


def ks_distance(svals: np.ndarray, model: MPModel) -> float:
    """sup_x |ECDF(x) - mp_cdf(x)| evaluated at each sample from both sides."""
    svals = np.asarray(svals, dtype=np.float64)
    if svals.size == 0:
        raise ValueError("svals must be nonempty")
    x = np.sort(svals)
    n = x.size
    dist = 0.0
    for i, xi in enumerate(x, start=1):
        f = mp_cdf(float(xi), model)
        dist = max(dist, abs(i / n - f), abs((i - 1) / n - f))
    return min(dist, 1.0)


@dataclass
class SpectrumReport:
    role: MatrixRole
    name: str | None
    m: int
    n: int
    sigma_tilde: float
    mp: MPModel
    svals: np.ndarray
    left_outliers: int
    right_outliers: int
    ks: float
    buffer: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def spectrum_report(w: np.ndarray, role: MatrixRole, bins: int = DEFAULT_BINS, name: str | None = None) -> SpectrumReport:
    """Full per-matrix diagnostic: SVD, MP fit, buffered outliers, KS, histogram."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    w = np.asarray(w)
    svals = linalg.svd(w, name=name).s
    sigma_tilde = fit_sigma(w)
    model = mp_model(w.shape[0], w.shape[1], sigma_tilde)
    buffer = default_buffer(model.n)
    left, right = count_outliers(svals, model, buffer)
    ks = ks_distance(svals, model)
    hi = max(model.nu_plus, float(svals[0])) * 1.05
    counts, edges = np.histogram(svals, bins=bins, range=(0.0, hi))
    return SpectrumReport(
        role=role,
        name=name,
        m=int(w.shape[0]),
        n=int(w.shape[1]),
        sigma_tilde=sigma_tilde,
        mp=model,
        svals=svals,
        left_outliers=left,
        right_outliers=right,
        ks=ks,
        buffer=buffer,
        hist_edges=edges,
        hist_counts=counts,
    )


def pooled_spectrum_report(
    ws: list[np.ndarray],
    role: MatrixRole,
    bins: int = DEFAULT_BINS,
    name: str | None = None,
) -> SpectrumReport:
    """Pool singular values of same-shaped matrices (one role across blocks).

    sigma_tilde is the mean of the per-matrix fits; pooling the values into
    one histogram is this toolkit's reading of a per-role average spectrum.
    """
    if not ws:
        raise ValueError("no matrices to pool")
    shapes = {w.shape for w in ws}
    if len(shapes) > 1:
        raise ValueError(f"pooled matrices must share a shape, got {sorted(shapes)}")
    svals = np.sort(np.concatenate([linalg.svd(w).s for w in ws]))[::-1]
    sigma_tilde = float(np.mean([fit_sigma(w) for w in ws]))
    w0 = ws[0]
    model = mp_model(w0.shape[0], w0.shape[1], sigma_tilde)
    buffer = default_buffer(model.n)
    left, right = count_outliers(svals, model, buffer)
    ks = ks_distance(svals, model)
    hi = max(model.nu_plus, float(svals[0])) * 1.05
    counts, edges = np.histogram(svals, bins=bins, range=(0.0, hi))
    return SpectrumReport(
        role=role,
        name=name,
        m=int(w0.shape[0]),
        n=int(w0.shape[1]),
        sigma_tilde=sigma_tilde,
        mp=model,
        svals=svals,
        left_outliers=left,
        right_outliers=right,
        ks=ks,
        buffer=buffer,
        hist_edges=edges,
        hist_counts=counts,
    )


def report_to_dict(report: SpectrumReport, include_svals: bool = False) -> dict:
    out = {
        "role": {
            "kind": report.role.kind.value,
            "block": report.role.block,
            "step": report.role.step,
        },
        "name": report.name,
        "m": report.m,
        "n": report.n,
        "sigma_tilde": report.sigma_tilde,
        "nu_minus": report.mp.nu_minus,
        "nu_plus": report.mp.nu_plus,
        "ks": report.ks,
        "left_outliers": report.left_outliers,
        "right_outliers": report.right_outliers,
        "outlier_buffer": report.buffer,
        "histogram": {
            "edges": [float(e) for e in report.hist_edges],
            "counts": [int(c) for c in report.hist_counts],
        },
    }
    if include_svals:
        out["svals"] = [float(s) for s in report.svals]
    return out
