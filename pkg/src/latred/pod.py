"""Snapshot POD through the small correlation eigenproblem."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import LatredError

#: eigenvalues at or below this fraction of the largest one are never selected
RANK_CUTOFF = 1e-12


@dataclass
class SnapshotMatrix:
    columns: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.columns = np.atleast_2d(np.asarray(self.columns, dtype=float))
        if self.columns.ndim != 2:
            raise ValueError("snapshot matrix must be 2-D")
        if not self.labels:
            self.labels = [str(j) for j in range(self.columns.shape[1])]
        if len(self.labels) != self.columns.shape[1]:
            raise ValueError("one label per snapshot column expected")

    @property
    def n_u(self) -> int:
        return self.columns.shape[0]

    @property
    def n_s(self) -> int:
        return self.columns.shape[1]

    def appended(self, vectors, labels=None) -> "SnapshotMatrix":
        V = np.asarray(vectors, dtype=float).reshape(self.n_u, -1) if len(vectors) else np.empty((self.n_u, 0))
        if labels is None:
            labels = [f"+{j}" for j in range(V.shape[1])]
        return SnapshotMatrix(np.hstack([self.columns, V]), list(self.labels) + list(labels))


@dataclass
class ReducedBasis:
    C: np.ndarray
    lambdas: np.ndarray

    @property
    def n_c(self) -> int:
        return self.C.shape[1]

    @property
    def n_u(self) -> int:
        return self.C.shape[0]

    def weighted(self) -> np.ndarray:
        """C scaled by the singular values of the retained modes."""
        return self.C * np.sqrt(self.lambdas[: self.n_c])


def correlation_eigenpairs(S: np.ndarray):
    """Eigenpairs of S^T S sorted by decreasing eigenvalue.

    Taken from the singular values of S (lambda = sigma^2) rather than from
    the formed product: eigh(S^T S) loses the small eigenvalues to round-off
    of order eps * lambda_max, which caps the tail sum at ~1e-8 accuracy.
    """
    n_u, n_s = S.shape
    if n_u >= n_s:
        # thin QR keeps the SVD at n_s x n_s whatever the DOF count
        R = scipy.linalg.qr(S, mode="r")[0][:n_s]
        _, sig, Vt = scipy.linalg.svd(R)
    else:
        _, sig, Vt = scipy.linalg.svd(S, full_matrices=True)
        sig = np.concatenate([sig, np.zeros(n_s - sig.size)])
    return sig ** 2, Vt.T


def compute_pod_basis(S, n_c: int | None = None, eps: float | None = None) -> ReducedBasis:
    """POD basis of snapshot matrix ``S``.

    Truncate either at order ``n_c`` or by the ratio rule
    ``lambda_i / lambda_max > eps``.  With neither given, every numerically
    nonzero mode is kept.
    """
    if n_c is not None and eps is not None:
        raise ValueError("give either n_c or eps, not both")
    if eps is not None and not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    cols = S.columns if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    if cols.ndim == 1:
        cols = cols[:, None]
    lam, V = correlation_eigenpairs(cols)
    if lam.size == 0 or lam[0] <= 0.0:
        raise LatredError("snapshot matrix is zero")

    keep = lam > RANK_CUTOFF * lam[0]
    if eps is not None:
        keep &= lam / lam[0] > eps
    n_keep = int(np.count_nonzero(keep))
    if n_c is not None:
        n_keep = min(n_keep, int(n_c))

    C = cols @ V[:, :n_keep] / np.sqrt(lam[:n_keep])
    # modes with small lambda lose orthogonality (error ~ eps * lam_max / lam_i)
    Q, R = np.linalg.qr(C)
    C = Q * np.sign(np.diag(R))
    return ReducedBasis(C, lam)


def svd_truncation_error(basis: ReducedBasis, S=None) -> float:
    """Normalised snapshot truncation error from the eigenvalue tail."""
    lam = basis.lambdas
    total = lam.sum()
    return float(np.sqrt(lam[basis.n_c:].sum() / total)) if total > 0 else 0.0


def truncation_functional(C: np.ndarray, S) -> float:
    """Direct evaluation of sum_j ||S_j - C C^T S_j||^2."""
    cols = S.columns if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    R = cols - C @ (C.T @ cols)
    return float(np.sum(R * R))


def project(basis: ReducedBasis, v):
    v = np.asarray(v, dtype=float)
    coords = basis.C.T @ v
    return coords, float(np.linalg.norm(v - basis.C @ coords))


def orthonormality_defect(C: np.ndarray) -> float:
    return float(np.abs(C.T @ C - np.eye(C.shape[1])).max()) if C.shape[1] else 0.0
