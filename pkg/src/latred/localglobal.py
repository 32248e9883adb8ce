"""Local/global reduction: POD-reduced DOFs coupled to fully resolved ones.

The displacement increment is ``dU = A X`` with ``A = (P_r C | E_f^T)``: the
reduced DOFs follow the basis ``C`` while the DOFs around the damage front
are solved exactly.  ``X = (alpha, dU_f)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from . import krylov
from .errors import LatredError, NonConvergence, SingularTangent
from .lattice import (DamageState, LatticeModel, external_forces, internal_forces,
                      tangent_stiffness, update_damage)
from .nonlinear import IncrementControl, SolveHistory, run_increments
from .pod import ReducedBasis, SnapshotMatrix, compute_pod_basis

log = logging.getLogger(__name__)

#: singular values of P_r C below this are treated as collapsed directions
RANGE_TOL = 1e-8


@dataclass(frozen=True)
class SplitParams:
    rho_s: float = 2.5
    k_dam: float = 0.5
    k_locglo: float = 0.1

    def __post_init__(self):
        if self.rho_s <= 0:
            raise ValueError("rho_s must be positive")
        for name in ("k_dam", "k_locglo"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass
class Splitting:
    fully_resolved: np.ndarray
    n_u: int
    epoch: int = 0

    def __post_init__(self):
        f = np.unique(np.asarray(self.fully_resolved, dtype=np.int64))
        if f.size and (f[0] < 0 or f[-1] >= self.n_u):
            raise ValueError("fully resolved DOF out of range")
        self.fully_resolved = f

    @property
    def reduced(self) -> np.ndarray:
        mask = np.ones(self.n_u, dtype=bool)
        mask[self.fully_resolved] = False
        return np.flatnonzero(mask)

    @property
    def n_f(self) -> int:
        return len(self.fully_resolved)

    @property
    def n_r(self) -> int:
        return self.n_u - self.n_f

    @classmethod
    def empty(cls, n_u, epoch=0):
        return cls(np.zeros(0, dtype=np.int64), n_u, epoch)

    @classmethod
    def full(cls, n_u, epoch=0):
        return cls(np.arange(n_u), n_u, epoch)


@dataclass
class ReducedState:
    alpha_red: np.ndarray
    dU_f: np.ndarray

    @classmethod
    def split(cls, X, n_c):
        X = np.asarray(X, dtype=float)
        return cls(X[:n_c], X[n_c:])

    def stacked(self):
        return np.concatenate([self.alpha_red, self.dU_f])


def bar_centres(model: LatticeModel) -> np.ndarray:
    k, l = model.connectivity.T
    return 0.5 * (model.positions[k] + model.positions[l])


def select_fully_resolved(model: LatticeModel, d_prev, d_curr, params: SplitParams = SplitParams(),
                          epoch: int = 0) -> Splitting:
    """Greedy sphere covering of the bars with the largest damage increments."""
    dd = np.asarray(d_curr, dtype=float) - np.asarray(d_prev, dtype=float)
    n_u = model.n_free
    if dd.size == 0 or dd.max() <= 0.0:
        return Splitting.empty(n_u, epoch)
    gmax = dd.max()
    centres = bar_centres(model)
    k, l = model.connectivity.T
    resolved = np.zeros(model.n_nodes, dtype=bool)
    # a sphere narrower than its seed bar leaves the bar uncovered; never reseed it
    seeded = np.zeros(model.n_bars, dtype=bool)
    n_f = 0
    while True:
        remaining = ~(resolved[k] & resolved[l]) & ~seeded
        if not remaining.any():
            break
        cand = np.where(remaining, dd, -np.inf)
        b = int(np.argmax(cand))  # first index wins ties
        if cand[b] <= 0.0 or cand[b] < params.k_dam * gmax:
            break
        seeded[b] = True
        dist = np.linalg.norm(model.positions - centres[b], axis=1)
        resolved |= dist <= params.rho_s + 1e-12
        n_f = len(model.free_dofs_of_nodes(np.flatnonzero(resolved)))
        if n_f > params.k_locglo * n_u:
            break
    return Splitting(model.free_dofs_of_nodes(np.flatnonzero(resolved)), n_u, epoch)


class CouplingOperator:
    """``A = (P_r C | E_f^T)`` applied through index maps."""

    def __init__(self, C, split: Splitting):
        C = np.asarray(C, dtype=float)
        if C.ndim != 2 or C.shape[0] != split.n_u:
            raise ValueError(f"basis has {C.shape[0] if C.ndim else 0} rows, splitting expects {split.n_u}")
        self.C = C
        self.split = split
        self.f = split.fully_resolved
        self.r = split.reduced
        Cr = C.copy()
        Cr[self.f] = 0.0
        if Cr.shape[1]:
            # P_r C loses rank when the resolved set swallows basis support;
            # keep an orthonormal basis of its numerical range instead
            sv = np.linalg.svd(Cr, compute_uv=False)
            if sv.min() < RANGE_TOL * max(sv.max(), 1.0):
                Uc, sv, _ = np.linalg.svd(Cr, full_matrices=False)
                Cr = Uc[:, sv > RANGE_TOL]
                Cr[self.f] = 0.0
        self.Cr = Cr
        self.C_f = C[self.f]

    @property
    def n_c(self) -> int:
        return self.Cr.shape[1]

    @property
    def n_f(self) -> int:
        return len(self.f)

    @property
    def n_u(self) -> int:
        return self.C.shape[0]

    @property
    def shape(self):
        return (self.n_u, self.n_c + self.n_f)

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n_c + self.n_f:
            raise ValueError("state vector does not match basis and splitting")
        out = self.Cr @ X[: self.n_c]
        out[self.f] += X[self.n_c:]
        return out

    def apply_transpose(self, v):
        v = np.asarray(v, dtype=float)
        return np.concatenate([self.Cr.T @ v, v[self.f]])

    def extractor_r(self):
        n_r = len(self.r)
        return sps.csr_matrix((np.ones(n_r), (np.arange(n_r), self.r)), shape=(n_r, self.n_u))

    def extractor_f(self):
        return sps.csr_matrix((np.ones(self.n_f), (np.arange(self.n_f), self.f)), shape=(self.n_f, self.n_u))

    def projector_r(self):
        E = self.extractor_r()
        return (E.T @ E).tocsr()

    def dense(self):
        """Explicit A, for checks on small problems only."""
        return np.hstack([self.Cr, self.extractor_f().T.toarray()])


def build_coupling_operator(C, split: Splitting) -> CouplingOperator:
    if isinstance(C, ReducedBasis):
        C = C.C
    return CouplingOperator(C, split)


def reduced_residual(A: CouplingOperator, model: LatticeModel, state: DamageState, U_n, X, load_factor):
    """``A^T (F_int(U_n + A X) + F_ext)`` with damage following the trial displacement."""
    U = np.asarray(U_n, dtype=float) + A.apply(X)
    trial = update_damage(state, model, U)
    return A.apply_transpose(internal_forces(model, U, trial) + external_forces(model, load_factor))


@dataclass
class ReducedTangent:
    K_rr: np.ndarray
    K_rf: np.ndarray
    K_ff: sps.csr_matrix

    @property
    def K_fr(self):
        return self.K_rf.T

    def dense(self):
        return np.block([[self.K_rr, self.K_rf], [self.K_fr, self.K_ff.toarray()]])


def reduced_tangent(A: CouplingOperator, K) -> ReducedTangent:
    K = sps.csr_matrix(K)
    KC = K @ A.Cr
    K_rr = A.Cr.T @ KC
    return ReducedTangent(0.5 * (K_rr + K_rr.T), KC[A.f].T.copy(), K[A.f][:, A.f].tocsr())


def enrich_basis(S: SnapshotMatrix, local_solutions, n_c=None, eps=None, labels=None):
    """Append solutions to the snapshot store and recompute the POD basis.

    With an order truncation, ``n_c`` is the order wanted on the enriched
    store (callers add the number of appended vectors to keep the original
    modes).  Returns ``(basis, enriched snapshots)``.
    """
    V = [np.asarray(v, dtype=float) for v in local_solutions]
    S2 = S.appended(np.column_stack(V) if V else [], labels)
    return compute_pod_basis(S2, n_c=n_c, eps=eps), S2


class LocalGlobalSpace:
    """Unknowns ``X = (alpha, dU_f)``; linear systems through condensation + augmented CG.

    ``splitter(increment, d_prev, d_curr)`` may replace the damage heuristic
    (e.g. to force ``n_f = 0`` or ``n_f = n_u``).
    """

    name = "localglobal"

    def __init__(self, model: LatticeModel, snapshots: SnapshotMatrix, n_c=None, eps=None,
                 params: SplitParams = SplitParams(), cg_tol: float = 1e-8, precond="diag",
                 enrich: bool = True, splitter=None, compare_unaugmented: bool = False,
                 reorthogonalize: bool = False, on_indefinite: str = "direct"):
        if on_indefinite not in ("direct", "secant"):
            raise ValueError("on_indefinite is 'direct' or 'secant'")
        if snapshots.n_u != model.n_free:
            raise LatredError(f"snapshots have {snapshots.n_u} rows, lattice has {model.n_free} free DOFs")
        self.model = model
        self.snapshots = snapshots
        self.eps = eps
        self.basis = compute_pod_basis(snapshots, n_c=n_c, eps=eps)
        self.order = self.basis.n_c if eps is None else None
        self.params = params
        self.cg_tol = cg_tol
        self.precond = precond
        self.enrich = enrich
        self.splitter = splitter
        self.compare_unaugmented = compare_unaugmented
        self.reorthogonalize = reorthogonalize
        self.on_indefinite = on_indefinite
        self.increment = 0
        self.metrics = []
        self.split = Splitting.empty(model.n_free)
        self.A = CouplingOperator(self.basis.C, self.split)

    # -- space protocol -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.A.n_c + self.A.n_f

    @property
    def basis_matrix(self):
        return self.basis.C

    def expand(self, X):
        return self.A.apply(X)

    def restrict(self, v):
        return self.A.apply_transpose(v)

    def describe(self):
        return {"n_f": self.A.n_f, "n_c": self.A.n_c}

    def adapt(self, ctx):
        return None

    def start_increment(self, increment, d_prev, d_curr):
        self.increment = increment
        if self.splitter is not None:
            self.split = self.splitter(increment, d_prev, d_curr)
        else:
            self.split = select_fully_resolved(self.model, d_prev, d_curr, self.params, increment)
        self.A = CouplingOperator(self.basis.C, self.split)

    def end_increment(self, step):
        if not self.enrich:
            return
        order = None if self.order is None else self.order + 1
        basis, S2 = enrich_basis(self.snapshots, [step.dU], n_c=order, eps=self.eps,
                                 labels=[f"loc{self.increment}"])
        self.snapshots = S2
        self.basis = basis
        if self.order is not None:
            self.order = basis.n_c

    def solve(self, K, rhs_list, newton_iter=0, record=True):
        blocks = reduced_tangent(self.A, K)
        sys = krylov.condense(blocks.K_rr, blocks.K_rf, blocks.K_ff, rhs_list[0])
        try:
            aug = krylov.build_augmentation(sys, self.A.C_f) if self.A.n_f else None
        except krylov.BreakdownNonSPD:
            if self.on_indefinite == "secant":
                raise
            aug = "indefinite"
        out = []
        for k, rhs in enumerate(rhs_list):
            s = sys if k == 0 else sys.with_rhs(rhs)
            rep = None
            try:
                if aug == "indefinite":
                    raise krylov.BreakdownNonSPD("indefinite coarse matrix")
                x_f, rep = krylov.augmented_pcg(s, aug, tol=self.cg_tol, precond=self.precond,
                                                reorthogonalize=self.reorthogonalize)
            except krylov.BreakdownNonSPD as exc:
                if self.on_indefinite == "secant" or not s.explicit:
                    raise
                log.debug("increment %d: %s, direct condensed solve", self.increment, exc)
                x_f = _dense_solve(s.S_P, s.R_C)
            x_r = krylov.back_substitute(s, s.rhs_r, x_f)
            x = np.concatenate([x_r, x_f])
            if not np.all(np.isfinite(x)):
                raise SingularTangent("non-finite reduced Newton correction")
            out.append(x)
            if record and self.A.n_f:
                row = dict(increment=self.increment, newton_iter=newton_iter, system=k,
                           n_c=self.A.n_c, n_f=self.A.n_f, direct=rep is None,
                           iterations=rep.iterations if rep else 0,
                           converged=rep.converged if rep else True,
                           residual_history=rep.residual_history if rep else [],
                           monotone=rep.monotone if rep else True)
                if self.compare_unaugmented:
                    try:
                        _, plain = krylov.augmented_pcg(s, None, tol=self.cg_tol, precond=self.precond)
                        row["unaugmented_iterations"] = plain.iterations
                    except krylov.BreakdownNonSPD:
                        row["unaugmented_iterations"] = None
                self.metrics.append(row)
        return out


def _dense_solve(S, b):
    import scipy.linalg
    try:
        return scipy.linalg.solve(S, b, assume_a="sym")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularTangent(str(exc)) from exc


class PodSpace(LocalGlobalSpace):
    """Classic Galerkin POD: no fully resolved DOF, no enrichment."""

    name = "pod"

    def __init__(self, model, snapshots, n_c=None, eps=None):
        super().__init__(model, snapshots, n_c=n_c, eps=eps, enrich=False,
                         splitter=lambda inc, dp, dc: Splitting.empty(model.n_free, inc))


def newton_solve_fixed(space, model: LatticeModel, state: DamageState, U_n, load_factor: float,
                       tol: float = 1e-8, max_iters: int = 30, mode: str = "consistent"):
    """Load-controlled Newton in ``space``.  Returns ``(X, iterations)``."""
    f_R = space.restrict(model.f_unit)
    ref = abs(load_factor) * np.linalg.norm(f_R)
    X = np.zeros(space.dim)
    for it in range(max_iters + 1):
        U = U_n + space.expand(X)
        trial = update_damage(state, model, U)
        R_R = space.restrict(internal_forces(model, U, trial) + external_forces(model, load_factor))
        res = np.linalg.norm(R_R) / ref if ref > 0 else np.linalg.norm(R_R)
        if res <= tol:
            return X, it
        if it == max_iters:
            break
        K = tangent_stiffness(model, U, trial, mode)
        (dX,) = space.solve(K, [R_R], newton_iter=it)
        X = X + dX
    raise NonConvergence(f"reduced Newton did not converge in {max_iters} iterations", max_iters, res)


def newton_solve_localglobal(model: LatticeModel, state: DamageState, U_n, C, split: Splitting,
                             load_factor: float, tol: float = 1e-8, max_iters: int = 30,
                             cg_tol: float = 1e-8, mode: str = "consistent"):
    """Local/global Newton at fixed load.  Returns ``(X, metrics)``."""
    C = C.C if isinstance(C, ReducedBasis) else np.asarray(C, dtype=float)
    space = LocalGlobalSpace(model, SnapshotMatrix(C), cg_tol=cg_tol, enrich=False,
                             splitter=lambda inc, dp, dc: split)
    # keep the given basis verbatim rather than its POD
    space.basis = ReducedBasis(C, np.ones(C.shape[1]))
    space.start_increment(split.epoch, None, None)
    X, iters = newton_solve_fixed(space, model, state, U_n, load_factor, tol, max_iters, mode)
    return X, {"iterations": iters, "cg": space.metrics,
               "full_residual": _full_residual(model, state, U_n + space.expand(X), load_factor)}


def _full_residual(model, state, U, load_factor):
    trial = update_damage(state, model, U)
    R = internal_forces(model, U, trial) + external_forces(model, load_factor)
    return float(np.linalg.norm(R) / abs(load_factor)) if load_factor else float(np.linalg.norm(R))


def run_pod(model: LatticeModel, control: IncrementControl, n_increments: int,
            snapshots: SnapshotMatrix, n_c=None, eps=None) -> SolveHistory:
    return run_increments(model, control, n_increments, PodSpace(model, snapshots, n_c, eps))


def run_localglobal(model: LatticeModel, control: IncrementControl, n_increments: int,
                    snapshots: SnapshotMatrix, n_c=None, eps=None,
                    params: SplitParams = SplitParams(), cg_tol: float = 1e-8, **kw) -> SolveHistory:
    space = LocalGlobalSpace(model, snapshots, n_c, eps, params, cg_tol, **kw)
    return run_increments(model, control, n_increments, space)
