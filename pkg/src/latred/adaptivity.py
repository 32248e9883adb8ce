"""On-the-fly global corrections of the reduced basis.

When the local/global Newton has converged its own (reduced) residual but the
full residual is still large, a coarse projected CG on the full secant
system supplies a direction missing from the basis.  The direction is made
orthogonal (in the secant energy) to the current basis, normalised and
injected into both the basis and the snapshot store.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import krylov
from .errors import NegligibleCorrection
from .lattice import LatticeModel, tangent_stiffness
from .localglobal import CouplingOperator, LocalGlobalSpace, SplitParams
from .nonlinear import IncrementControl, run_increments
from .pod import ReducedBasis, SnapshotMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorrectionPolicy:
    eta_global: float = 1e-1
    eta_reduced: float = 1e-3
    krylov_tol_correction: float = 1e-1
    max_corrections_per_increment: int = 5

    def __post_init__(self):
        if not 0.0 < self.krylov_tol_correction < 1.0:
            raise ValueError("krylov_tol_correction must lie in (0, 1)")
        if self.eta_global <= 0 or self.eta_reduced <= 0:
            raise ValueError("residual thresholds must be positive")
        if self.max_corrections_per_increment < 0:
            raise ValueError("max_corrections_per_increment must be non-negative")

    @property
    def enabled(self) -> bool:
        return math.isfinite(self.eta_global) and self.max_corrections_per_increment > 0


@dataclass
class CorrectionRecord:
    increment: int
    newton_iter: int
    reduced_residual: float
    pre_residual: float
    post_residual: float = float("nan")
    krylov_iterations: int = 0
    n_c: int = 0
    n_f: int = 0


def global_correction(K_bar, R, C, policy: CorrectionPolicy = CorrectionPolicy()):
    """Unit vector ``dU_K / ||dU_K||`` from a coarse projected CG on ``K_bar dU = R``.

    Returns ``(v, report)``.  ``dU_K`` is K_bar-orthogonal to ``span(C)``.
    """
    C = C.C if isinstance(C, ReducedBasis) else np.asarray(C, dtype=float)
    sys = krylov.SparseSystem(K_bar, R)
    aug = krylov.build_augmentation(sys, C)
    x, report = krylov.augmented_pcg(sys, aug, tol=policy.krylov_tol_correction, min_iters=1)
    x_K = x - krylov.coarse_init(sys, aug)
    nx, nk = np.linalg.norm(x), np.linalg.norm(x_K)
    if nk < 1e-12 * nx or nk == 0.0:
        raise NegligibleCorrection("correction lies in the span of the basis")
    return x_K / nk, report


class AdaptiveSpace(LocalGlobalSpace):
    """Local/global space with gated global corrections."""

    name = "adaptive"

    def __init__(self, model: LatticeModel, snapshots: SnapshotMatrix, n_c=None, eps=None,
                 params: SplitParams = SplitParams(), policy: CorrectionPolicy = CorrectionPolicy(),
                 **kw):
        super().__init__(model, snapshots, n_c, eps, params, **kw)
        self.policy = policy
        self.corrections = []
        self._count = 0
        self._exhausted = False
        self._pending = None

    def start_increment(self, increment, d_prev, d_curr):
        super().start_increment(increment, d_prev, d_curr)
        self._count = 0
        self._exhausted = False

    def end_increment(self, step):
        if self._pending is not None:
            self._pending.post_residual = step.newton.full_residual
            self._pending = None
        super().end_increment(step)

    def adapt(self, ctx):
        res, full = ctx["residual"], ctx["full_residual"]
        if self._pending is not None and res < self.policy.eta_reduced:
            self._pending.post_residual = full
            self._pending = None
        p = self.policy
        if (not p.enabled or self._exhausted or self._count >= p.max_corrections_per_increment
                or not (res < p.eta_reduced and full > p.eta_global)):
            return None
        K_bar = tangent_stiffness(self.model, ctx["U"], ctx["state"], "secant")
        try:
            v, rep = global_correction(K_bar, ctx["R"], self.basis.C, p)
        except (NegligibleCorrection, krylov.BreakdownNonSPD) as exc:
            log.debug("increment %d: no correction (%s)", self.increment, exc)
            self._exhausted = True
            return None
        C = self.basis.C
        w = v - C @ (C.T @ v)
        w -= C @ (C.T @ w)
        nw = np.linalg.norm(w)
        if nw < 1e-10:
            self._exhausted = True
            return None
        self.basis = ReducedBasis(np.column_stack([C, w / nw]), np.append(self.basis.lambdas, 0.0))
        self.snapshots = self.snapshots.appended(v[:, None], [f"corr{self.increment}.{self._count}"])
        if self.order is not None:
            self.order += 1
        dU = ctx["dU"]
        self.A = CouplingOperator(self.basis.C, self.split)
        target = dU.copy()
        target[self.A.f] = 0.0
        alpha = np.linalg.lstsq(self.A.Cr, target, rcond=None)[0] if self.A.n_c else np.zeros(0)
        self._count += 1
        rec = CorrectionRecord(self.increment, ctx["iteration"], res, full, krylov_iterations=rep.iterations,
                               n_c=self.A.n_c, n_f=self.A.n_f)
        self.corrections.append(rec)
        self._pending = rec
        log.info("increment %d: global correction %d (full residual %.3e, %d CG iterations)",
                 self.increment, self._count, full, rep.iterations)
        return np.concatenate([alpha, dU[self.A.f]])


def adaptive_solve(model: LatticeModel, control: IncrementControl, snapshots: SnapshotMatrix,
                   n_increments: int, n_c=None, eps=None, split_params: SplitParams = SplitParams(),
                   policy: CorrectionPolicy = CorrectionPolicy(), **kw):
    """Local/global continuation with global corrections.  Returns ``(history, corrections)``."""
    space = AdaptiveSpace(model, snapshots, n_c, eps, split_params, policy, **kw)
    history = run_increments(model, control, n_increments, space)
    return history, space.corrections
