"""Filter scoring: Gaussian KL divergence, RMSPE ratio, RASD, coverage.

All scores compare an approximate filter against the exact dense filter on
the same simulated data.  The dense paths are guarded to desk-scale grids.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtri

__all__ = [
    "kl_gaussian",
    "rmspe_ratio",
    "rasd",
    "coverage",
    "SCORE_FIELDS",
    "write_scores",
]

SCORE_FIELDS = ["scenario", "method", "rep", "t", "kl", "rmspe_ratio",
                "coverage_90", "runtime_ms"]

_RIDGE = 1e-8


def _chol_logdet(mat: np.ndarray, ridge: float = 0.0):
    a = 0.5 * (mat + mat.T)
    if ridge:
        a = a + ridge * np.eye(a.shape[0])
    fac = cho_factor(a, lower=True)
    return fac, 2.0 * float(np.sum(np.log(np.diag(fac[0]))))


def kl_gaussian(mu_e: np.ndarray, cov_e: np.ndarray,
                mu_a: np.ndarray, cov_a: np.ndarray,
                ridge_fallback: bool = True) -> float:
    """KL( N(mu_e, cov_e) || N(mu_a, cov_a) ), closed form.

    Low-rank approximations can produce singular covariances; with
    ``ridge_fallback`` both inputs get the same small diagonal ridge when
    the plain factorization fails, keeping the score finite and comparable.
    """
    n = len(mu_e)
    if cov_e.shape != (n, n) or cov_a.shape != (n, n) or len(mu_a) != n:
        raise ValueError("dimension mismatch in kl_gaussian")
    try:
        fac_a, logdet_a = _chol_logdet(cov_a)
        _, logdet_e = _chol_logdet(cov_e)
    except np.linalg.LinAlgError:
        if not ridge_fallback:
            raise
        fac_a, logdet_a = _chol_logdet(cov_a, ridge=_RIDGE)
        _, logdet_e = _chol_logdet(cov_e, ridge=_RIDGE)
    diff = mu_a - mu_e
    tr = float(np.trace(cho_solve(fac_a, cov_e)))
    quad = float(diff @ cho_solve(fac_a, diff))
    return 0.5 * (tr + quad - n + logdet_a - logdet_e)


def rmspe_ratio(truth: np.ndarray, mu_hat: np.ndarray,
                mu_kf: np.ndarray) -> float:
    """Root mean squared error of a method relative to the exact filter."""
    num = float(np.sqrt(np.mean((mu_hat - truth) ** 2)))
    den = float(np.sqrt(np.mean((mu_kf - truth) ** 2)))
    if den == 0.0:
        raise ZeroDivisionError("exact filter has zero error; ratio undefined")
    return num / den


def rasd(mu_hat: np.ndarray, mu_kf: np.ndarray,
         variant: str = "root_mean") -> float:
    """Root aggregated squared difference of means over all (t, i).

    ``variant`` selects the aggregation: ``root_sum`` takes the plain root
    of the summed squares, ``root_mean`` divides by the number of entries
    first.  Both are reported because published values do not pin down the
    normalizer.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    mu_kf = np.asarray(mu_kf, dtype=float)
    if mu_hat.shape != mu_kf.shape:
        raise ValueError("shape mismatch in rasd")
    ss = float(np.sum((mu_hat - mu_kf) ** 2))
    if variant == "root_sum":
        return math.sqrt(ss)
    if variant == "root_mean":
        return math.sqrt(ss / mu_hat.size)
    raise ValueError(f"unknown rasd variant {variant!r}")


def coverage(mu: np.ndarray, variances: np.ndarray, truth: np.ndarray,
             level: float = 0.9) -> float:
    """Fraction of grid points whose central interval covers the truth."""
    z = ndtri(0.5 + level / 2.0)
    half = z * np.sqrt(np.maximum(variances, 0.0))
    return float(np.mean(np.abs(truth - mu) <= half))


def write_scores(rows: list[dict], path: str | None = None) -> str:
    """Serialize score rows in the canonical column order; returns the CSV."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SCORE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in SCORE_FIELDS})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
