"""Two-level solution of the reduced linearised systems.

The block system ``[[K_rr, K_rf], [K_fr, K_ff]] x = b`` (reduced coordinates
first, fully resolved DOFs second) is condensed on the fully resolved DOFs,
initialised in the span of the restricted basis, and finished with a
projected (augmented) preconditioned conjugate gradient.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sps

from .errors import BreakdownNonSPD, SingularKrr

log = logging.getLogger(__name__)

#: above this many fully resolved DOFs the Schur complement stays implicit
EXPLICIT_SCHUR_LIMIT = 2000


class _DenseFactor:
    """Cholesky when possible, LU otherwise.  ``spd`` tells which one was used."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        self.n = A.shape[0]
        self.spd = True
        if self.n == 0:
            return
        try:
            self._cho = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            self.spd = False
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
            d = np.abs(np.diag(lu))
            if d.min() <= 1e-14 * max(d.max(), 1e-300):
                raise SingularKrr("reduced block K_rr is singular")
            self._lu = (lu, piv)

    def solve(self, b):
        if self.n == 0:
            return np.zeros_like(b)
        if self.spd:
            return scipy.linalg.cho_solve(self._cho, b)
        return scipy.linalg.lu_solve(self._lu, b)


class CondensedSystem:
    """Primal Schur complement ``S = K_ff - K_fr K_rr^-1 K_rf`` and condensed rhs.

    ``rhs`` is the right-hand side of the block system, ordered (r, f).
    """

    def __init__(self, K_rr, K_rf, K_ff, rhs, explicit=None, _factor=None):
        K_rr = np.atleast_2d(np.asarray(K_rr, dtype=float))
        n_c = K_rr.shape[0] if K_rr.size else 0
        K_rf = np.asarray(K_rf, dtype=float).reshape(n_c, -1) if n_c else np.zeros((0, K_ff.shape[0]))
        self.n_c = n_c
        self.n_f = K_ff.shape[0]
        self.K_rr = K_rr.reshape(n_c, n_c)
        self.K_rf = K_rf
        self.K_ff = sps.csr_matrix(K_ff)
        self.Krr_solve = _factor or _DenseFactor(self.K_rr)
        self._Y = self.Krr_solve.solve(K_rf) if n_c else np.zeros((0, self.n_f))
        if explicit is None:
            explicit = self.n_f <= EXPLICIT_SCHUR_LIMIT
        self.S_P = (self.K_ff.toarray() - K_rf.T @ self._Y) if explicit else None
        if self.S_P is not None:
            self.S_P = 0.5 * (self.S_P + self.S_P.T)
        self.set_rhs(rhs)

    def set_rhs(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        self.rhs_r = rhs[: self.n_c]
        self.rhs_f = rhs[self.n_c:]
        self.R_C = self.rhs_f - self.K_rf.T @ self.Krr_solve.solve(self.rhs_r) if self.n_c else self.rhs_f.copy()

    def with_rhs(self, rhs) -> "CondensedSystem":
        new = object.__new__(CondensedSystem)
        new.__dict__.update(self.__dict__)
        new.set_rhs(rhs)
        return new

    @property
    def explicit(self) -> bool:
        return self.S_P is not None

    def matvec(self, v):
        if self.S_P is not None:
            return self.S_P @ v
        return self.K_ff @ v - self.K_rf.T @ (self._Y @ v)

    def matmat(self, V):
        if self.S_P is not None:
            return self.S_P @ V
        return self.K_ff @ V - self.K_rf.T @ (self._Y @ V)

    def diagonal(self):
        if self.S_P is not None:
            return np.diag(self.S_P).copy()
        return self.K_ff.diagonal() - np.einsum("ij,ij->j", self.K_rf, self._Y)


class SparseSystem:
    """A plain symmetric sparse system exposed with the CondensedSystem surface."""

    def __init__(self, K, rhs):
        self.K = sps.csr_matrix(K)
        self.n_f = self.K.shape[0]
        self.R_C = np.asarray(rhs, dtype=float)

    def matvec(self, v):
        return self.K @ v

    def matmat(self, V):
        return self.K @ V

    def diagonal(self):
        return self.K.diagonal()


def condense(K_rr, K_rf, K_ff, rhs, explicit=None) -> CondensedSystem:
    return CondensedSystem(K_rr, K_rf, K_ff, rhs, explicit=explicit)


@dataclass
class Augmentation:
    """Restricted basis ``C_f`` with an S-orthonormal, rank-filtered copy ``W``."""

    C_f: np.ndarray
    W: np.ndarray
    SW: np.ndarray

    @property
    def size(self) -> int:
        return self.W.shape[1]

    def projector(self, v):
        """P v = v - W W^T S v."""
        return v - self.W @ (self.SW.T @ v) if self.size else v

    def projector_T(self, v):
        return v - self.SW @ (self.W.T @ v) if self.size else v

    def dense_projector(self):
        n = self.W.shape[0]
        return np.eye(n) - self.W @ self.SW.T


def build_augmentation(sys, C_f, rank_tol: float = 1e-10) -> Augmentation:
    C_f = np.asarray(C_f, dtype=float).reshape(sys.n_f, -1)
    n = sys.n_f
    empty = Augmentation(C_f, np.zeros((n, 0)), np.zeros((n, 0)))
    if C_f.shape[1] == 0 or n == 0:
        return empty
    SC = sys.matmat(C_f)
    G = C_f.T @ SC
    G = 0.5 * (G + G.T)
    diag = np.diag(G)
    if diag.max() <= 0:
        if diag.min() < 0:
            raise BreakdownNonSPD("coarse matrix C_f^T S C_f is not positive")
        return empty
    cols = np.flatnonzero(diag > 1e-14 * diag.max())
    if np.any(diag < -1e-14 * diag.max()):
        raise BreakdownNonSPD("coarse matrix C_f^T S C_f has a negative diagonal entry")
    scale = 1.0 / np.sqrt(diag[cols])
    Gn = G[np.ix_(cols, cols)] * scale[:, None] * scale[None, :]
    w, V = scipy.linalg.eigh(Gn)
    if w[0] < -1e-8 * w[-1]:
        raise BreakdownNonSPD("coarse matrix C_f^T S C_f is indefinite")
    keep = w > rank_tol * w[-1]
    T = scale[:, None] * (V[:, keep] / np.sqrt(w[keep]))
    return Augmentation(C_f, C_f[:, cols] @ T, SC[:, cols] @ T)


def coarse_init(sys, aug: Augmentation):
    """Best approximation of the solution inside span(C_f) (S-energy sense)."""
    if aug.size == 0:
        return np.zeros(sys.n_f)
    return aug.W @ (aug.W.T @ sys.R_C)


def diagonal_preconditioner(sys):
    """Inverse of diag(S) as a vector; identity when a diagonal entry is not positive."""
    d = sys.diagonal()
    if d.size and np.any(d <= 0):
        log.warning("non-positive diagonal in condensed operator, using identity preconditioner")
        return np.ones_like(d)
    return 1.0 / d


@dataclass
class CgReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    precond_history: list = field(default_factory=list)
    converged: bool = False

    @property
    def monotone(self) -> bool:
        h = self.residual_history
        return all(b <= a for a, b in zip(h, h[1:]))


def augmented_pcg(sys, aug: Augmentation | None, tol: float = 1e-8, max_iters: int | None = None,
                  precond="diag", reorthogonalize: bool = False, min_iters: int = 0):
    """Augmented preconditioned CG on the condensed system.

    Returns ``(dU_C + dU_K, report)``.  Stops when ``||S x - R_C|| <= tol ||R_C||``
    (the plain residual history is recorded alongside the preconditioned one).
    Raises ``BreakdownNonSPD`` on a non-positive curvature.
    """
    n = sys.n_f
    b = sys.R_C
    if aug is None:
        aug = Augmentation(np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((n, 0)))
    if max_iters is None:
        # finite-precision CG on ill-conditioned spectra needs well beyond n steps
        max_iters = max(10 * n, 50)
    if isinstance(precond, str):
        Minv = diagonal_preconditioner(sys) if precond == "diag" else np.ones(n)
    else:
        Minv = np.asarray(precond, dtype=float)

    report = CgReport()
    b_norm = np.linalg.norm(b)
    if n == 0 or b_norm == 0.0:
        report.converged = True
        report.residual_history.append(0.0)
        return np.zeros(n), report
    b_pnorm = np.sqrt(b @ (Minv * b))

    x_C = coarse_init(sys, aug)
    r = aug.projector_T(b) if aug.size else b.copy()
    x_K = np.zeros(n)
    z = aug.projector(Minv * r)
    w = z.copy()
    past = []  # (w, S w, wSw) for optional full re-orthogonalisation

    def record(r):
        report.residual_history.append(float(np.linalg.norm(r) / b_norm))
        report.precond_history.append(float(np.sqrt(max(r @ (Minv * r), 0.0)) / b_pnorm))

    record(r)
    j = 0
    while True:
        if report.residual_history[-1] <= tol and j >= min_iters:
            report.converged = True
            break
        if j >= max_iters:
            break
        Sw = sys.matvec(w)
        wSw = Sw @ w
        if wSw <= 0.0:
            if not np.any(w):
                break
            raise BreakdownNonSPD(f"non-positive curvature {wSw:.3e} at CG iteration {j}")
        a = (r @ w) / wSw
        x_K += a * w
        r = r - a * Sw
        j += 1
        record(r)
        z = aug.projector(Minv * r)
        if reorthogonalize:
            past.append((w, Sw, wSw))
            w = z.copy()
            for wp, Swp, d in past:
                w -= (Swp @ z) / d * wp
        else:
            beta = (Sw @ z) / wSw
            w = z - beta * w
    report.iterations = j
    if not report.converged:
        log.debug("augmented PCG stopped at %d iterations, residual %.3e", j, report.residual_history[-1])
    return x_C + x_K, report


def back_substitute(sys: CondensedSystem, rhs_r, x_f):
    """Reduced unknowns from the fully resolved ones: K_rr^-1 (b_r - K_rf x_f)."""
    if sys.n_c == 0:
        return np.zeros(0)
    rhs_r = np.asarray(rhs_r, dtype=float)
    return sys.Krr_solve.solve(rhs_r - (sys.K_rf @ x_f if sys.n_f else 0.0))


def solve_block_system(K_rr, K_rf, K_ff, rhs, C_f=None, tol=1e-8, precond="diag",
                       max_iters=None, reorthogonalize=False):
    """condense -> augmented PCG -> back-substitute.  Returns ``(x, report)``."""
    sys = condense(K_rr, K_rf, K_ff, rhs)
    aug = build_augmentation(sys, C_f) if C_f is not None else None
    x_f, report = augmented_pcg(sys, aug, tol=tol, max_iters=max_iters, precond=precond,
                                reorthogonalize=reorthogonalize)
    x_r = back_substitute(sys, sys.rhs_r, x_f)
    return np.concatenate([x_r, x_f]), report
