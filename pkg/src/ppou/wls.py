"""Per-cluster weighted least squares via an SVD of the sqrt-weight scaled design."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AUTO_RIDGE_FACTOR = 1e-10


class EmptyClusterError(ValueError):
    """Total weight of a cluster is below the emptiness threshold."""


@dataclass
class WlsResult:
    coeffs: np.ndarray
    effective_rank: int
    residual_norm: float
    used_ridge: bool
    ridge: float = 0.0


def solve(design, weights, targets, ridge: float = 0.0, empty_tol: float | None = None) -> WlsResult:
    """Minimize ``sum_n w_n (y_n - P[n] . c)**2 + ridge * |c|**2``.

    The rows of ``design`` and ``targets`` are scaled by ``sqrt(w)`` and the
    problem is solved through a thin SVD. If the scaled design is rank
    deficient and ``ridge == 0`` a ridge of ``1e-10 * s_max**2`` is applied.

    Raises ``EmptyClusterError`` when ``sum(w) < empty_tol`` (default
    ``1e-10 * N``).
    """
    P = np.asarray(design, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise ValueError(f"design must be a non-empty 2D array, got shape {P.shape}")
    n, k = P.shape
    if w.shape != (n,) or y.shape != (n,):
        raise ValueError(f"weights {w.shape} and targets {y.shape} must have length {n}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
        raise FloatingPointError("non-finite entries in weighted least-squares problem")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if empty_tol is None:
        empty_tol = 1e-10 * n
    if w.sum() < empty_tol:
        raise EmptyClusterError(f"total weight {w.sum():.3e} below {empty_tol:.3e}")

    sw = np.sqrt(w)
    A = P * sw[:, None]
    b = y * sw
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    smax = s[0] if s.size else 0.0
    tol = max(n, k) * np.finfo(np.float64).eps * smax
    rank = int(np.count_nonzero(s > tol))
    used_ridge = False
    lam = float(ridge)
    if rank < k and lam == 0.0:
        lam = AUTO_RIDGE_FACTOR * smax**2
        used_ridge = True
    Ub = U.T @ b
    if lam > 0.0:
        filt = s / (s * s + lam)
    else:
        filt = 1.0 / s
    coeffs = Vt.T @ (filt * Ub)
    resid = np.linalg.norm(b - A @ coeffs)
    return WlsResult(coeffs, rank, float(resid), used_ridge or ridge > 0, lam)
