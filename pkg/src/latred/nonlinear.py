"""Tangent Newton and damage-controlled continuation.

Every increment prescribes the damage growth of one *controlling* bar: its
axial strain is pinned to the value at which its damage has grown by
``delta_d_max``, and the load factor becomes an unknown of a bordered Newton
system.  If the converged state shows another bar growing faster, that bar
takes over the control and the increment is re-solved.  Damage is monotone
along the path, so the limit point and the softening branch are followed
without special treatment.

The same driver runs the full-order reference and the reduced models; the
difference lies entirely in the *space* object that maps reduced unknowns to
displacement increments and solves the linearised systems.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (BreakdownNonSPD, ControlFailure, NonConvergence, SingularKrr,
                     SingularTangent)
from .lattice import (DamageState, LatticeModel, external_forces, internal_forces,
                      tangent_stiffness, update_damage)
from .pod import SnapshotMatrix

log = logging.getLogger(__name__)

_LINEAR_FAILURES = (SingularTangent, BreakdownNonSPD, SingularKrr)


@dataclass
class IncrementControl:
    delta_d_max: float = 0.1
    newton_tol: float = 1e-8
    newton_max_iters: int = 30
    load_bounds: tuple = (-math.inf, math.inf)
    tangent: str = "consistent"
    max_switches: int = 25

    def __post_init__(self):
        if not 0.0 < self.delta_d_max <= 1.0:
            raise ValueError("delta_d_max must lie in (0, 1]")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")


@dataclass
class IncrementRecord:
    increment: int
    U: np.ndarray
    dU: np.ndarray
    state: DamageState
    load_factor: float
    deflection: float
    newton_iters: int
    control_bar: int
    residual: float
    full_residual: float
    n_f: int = 0
    n_c: int = 0
    switches: int = 0
    cg_iterations: int = 0
    corrections: int = 0


@dataclass
class SolveHistory:
    records: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    corrections: list = field(default_factory=list)
    splittings: list = field(default_factory=list)
    basis: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    @property
    def load_factors(self) -> np.ndarray:
        return np.array([r.load_factor for r in self.records])

    @property
    def deflections(self) -> np.ndarray:
        return np.array([r.deflection for r in self.records])

    def snapshot_matrix(self, kind: str = "increment") -> SnapshotMatrix:
        if kind not in ("increment", "total"):
            raise ValueError("snapshot kind is 'increment' or 'total'")
        cols = [r.dU if kind == "increment" else r.U for r in self.records]
        return SnapshotMatrix(np.column_stack(cols), [f"inc{r.increment}" for r in self.records])

    def peak(self):
        lf = self.load_factors
        i = int(np.argmax(lf))
        return i, float(lf[i])


class FullSpace:
    """Identity space: every free DOF is an unknown; sparse LU solves."""

    name = "full"

    def __init__(self, model: LatticeModel):
        self.model = model
        self.increment = 0
        self.metrics = []

    @property
    def dim(self) -> int:
        return self.model.n_free

    def expand(self, X):
        return X

    def restrict(self, v):
        return v

    def solve(self, K, rhs_list, newton_iter=0, record=True):
        try:
            lu = spla.splu(K.tocsc())
        except RuntimeError as exc:
            raise SingularTangent(str(exc)) from exc
        out = [lu.solve(b) for b in rhs_list]
        if not all(np.all(np.isfinite(x)) for x in out):
            raise SingularTangent("non-finite solution of the tangent system")
        return out

    def adapt(self, ctx):
        return None

    def start_increment(self, increment, d_prev, d_curr):
        self.increment = increment

    def end_increment(self, result):
        pass

    def describe(self):
        return {"n_f": self.model.n_free, "n_c": 0}


@dataclass
class NewtonResult:
    X: np.ndarray
    dU: np.ndarray
    U: np.ndarray
    load_factor: float
    state: DamageState
    iterations: int
    residual: float
    full_residual: float
    mode: str


def newton_solve_full(model: LatticeModel, state: DamageState, U_prev, load_factor: float,
                      tol: float = 1e-8, max_iters: int = 30, mode: str = "consistent"):
    """Load-controlled tangent Newton.  Returns ``(dU, iterations)``."""
    U_prev = np.asarray(U_prev, dtype=float)
    F_ext = external_forces(model, load_factor)
    ref = np.linalg.norm(F_ext)
    dU = np.zeros_like(U_prev)
    for it in range(max_iters + 1):
        U = U_prev + dU
        trial = update_damage(state, model, U)
        R = internal_forces(model, U, trial) + F_ext
        res = np.linalg.norm(R) / ref if ref > 0 else np.linalg.norm(R)
        if res <= tol:
            return dU, it
        if it == max_iters:
            break
        K = tangent_stiffness(model, U, trial, mode)
        try:
            dU = dU + spla.splu(K.tocsc()).solve(R)
        except RuntimeError as exc:
            raise SingularTangent(str(exc)) from exc
    raise NonConvergence(f"Newton did not converge in {max_iters} iterations", max_iters, res)


def bordered_newton(space, model: LatticeModel, state: DamageState, U_n, lam0: float,
                    bar: int, eps_target: float, tol: float, max_iters: int,
                    mode: str = "consistent", X0=None) -> NewtonResult:
    """Newton on ``R(U_n + A X) + lam f = 0`` with the strain of ``bar`` pinned.

    Once the constraint holds, a step that does not reduce the residual is
    halved (a bar hovering on its damage threshold makes the residual kinked
    and plain Newton may cycle).
    """
    f = model.f_unit
    g = np.asarray(model.B[bar].todense()).ravel()
    eps0 = model.eps_prescribed[bar]
    con_tol = 1e-10 * max(1.0, abs(eps_target))

    def evaluate(X, lam):
        dU = space.expand(X)
        U = U_n + dU
        trial = update_damage(state, model, U)
        R = internal_forces(model, U, trial) + lam * f
        R_R = space.restrict(R)
        f_R = space.restrict(f)
        denom = abs(lam) * np.linalg.norm(f_R)
        res = np.linalg.norm(R_R) / denom if denom > 0 else np.linalg.norm(R_R)
        return dict(dU=dU, U=U, trial=trial, R=R, R_R=R_R, f_R=f_R, res=res,
                    con=g @ U + eps0 - eps_target)

    X = np.zeros(space.dim) if X0 is None else np.array(X0, dtype=float)
    lam = float(lam0)
    ev = evaluate(X, lam)
    it = 0
    while True:
        res, con = ev["res"], ev["con"]
        R = ev["R"]
        full_res = np.linalg.norm(R) / abs(lam) if lam != 0 else np.linalg.norm(R)
        converged = res <= tol and abs(con) <= con_tol
        log.debug("bar %d it %d: residual %.3e, constraint %.3e, load factor %.8g",
                  bar, it, res, con, lam)
        changed = space.adapt(dict(iteration=it, residual=res, full_residual=full_res, R=R,
                                   U=ev["U"], dU=ev["dU"], X=X, load_factor=lam, state=ev["trial"],
                                   converged=converged, mode=mode))
        if changed is not None:
            X = changed
            ev = evaluate(X, lam)
            continue
        if converged:
            return NewtonResult(X, ev["dU"], ev["U"], lam, ev["trial"], it, res, full_res, mode)
        if it >= max_iters:
            raise NonConvergence(f"bordered Newton did not converge in {max_iters} iterations "
                                 f"(residual {res:.3e})", it, res)
        gA = space.restrict(g)
        try:
            K = tangent_stiffness(model, ev["U"], ev["trial"], mode)
            xR, xF = space.solve(K, [ev["R_R"], ev["f_R"]], newton_iter=it)
        except _LINEAR_FAILURES as exc:
            if mode == "secant":
                raise
            log.debug("increment %s: %s, switching to secant tangent", space.increment, exc)
            mode = "secant"
            continue
        slope = gA @ xF
        if abs(slope) <= 1e-14 * np.linalg.norm(gA) * np.linalg.norm(xF):
            raise ControlFailure(f"load factor has no influence on the strain of bar {bar}")
        dlam = (-con - gA @ xR) / slope
        dX = xR + dlam * xF
        t = 1.0
        trial_ev = evaluate(X + dX, lam + dlam)
        if abs(con) <= con_tol:
            while trial_ev["res"] >= res and t > 1.0 / 64:
                t *= 0.5
                trial_ev = evaluate(X + t * dX, lam + t * dlam)
        X = X + t * dX
        lam += t * dlam
        ev = trial_ev
        it += 1


@dataclass
class StepResult:
    load_factor: float
    dU: np.ndarray
    state: DamageState
    newton: NewtonResult
    control_bar: int
    iterations: int
    switches: int


def _eligible(state: DamageState, delta):
    return (state.d + delta <= 1.0 + 1e-9) & (state.d < 1.0)


def _predict_bar(space, model, state, U_prev, eligible, delta):
    """Control bar and strain rates from a linear predictor under unit load.

    Bars are ranked by the strain rate relative to the strain still missing
    to reach their next damage level.
    """
    K = tangent_stiffness(model, U_prev, state, "secant")
    (xF,) = space.solve(K, [space.restrict(model.f_unit)], record=False)
    rate = model.B @ space.expand(xF)
    target = model.material.strain_for_damage(np.minimum(state.d + delta, 1.0), model.young,
                                              model.section)
    gap = np.maximum(target - np.abs(model.strains(U_prev)), 1e-300)
    score = np.where(eligible, np.abs(rate) / gap, -np.inf)
    return int(np.argmax(score)), rate


def arc_length_step(model: LatticeModel, state: DamageState, U_prev, control: IncrementControl,
                    load_factor_prev: float = 0.0, space=None, hint_bar=None) -> StepResult:
    """One damage-controlled increment: the largest damage growth equals ``delta_d_max``."""
    space = space or FullSpace(model)
    delta = control.delta_d_max
    eligible = _eligible(state, delta)
    if not np.any(eligible):
        raise ControlFailure("no bar can take the prescribed damage increment")
    U_prev = np.asarray(U_prev, dtype=float)
    eps_n = model.strains(U_prev)
    rate = None
    if hint_bar is not None and eligible[hint_bar] and abs(eps_n[hint_bar]) > 0:
        bar = int(hint_bar)
    else:
        bar, rate = _predict_bar(space, model, state, U_prev, eligible, delta)

    lam0 = load_factor_prev
    X0 = None
    total_iters = 0
    tried = set()
    mat = model.material
    for switch in range(control.max_switches + 1):
        tried.add(bar)
        if abs(eps_n[bar]) > 0:
            sign = math.copysign(1.0, eps_n[bar])
        else:
            if rate is None:
                _, rate = _predict_bar(space, model, state, U_prev, eligible, delta)
            sign = math.copysign(1.0, rate[bar]) if rate[bar] != 0 else 1.0
        d_target = min(state.d[bar] + delta, 1.0)
        eps_t = sign * float(mat.strain_for_damage(d_target, model.young[bar], model.section[bar]))
        try:
            res = bordered_newton(space, model, state, U_prev, lam0, bar, eps_t,
                                  control.newton_tol, control.newton_max_iters,
                                  control.tangent, X0)
        except NonConvergence:
            if control.tangent == "secant":
                raise
            res = bordered_newton(space, model, state, U_prev, lam0, bar, eps_t,
                                  control.newton_tol, 4 * control.newton_max_iters,
                                  "secant", X0)
        total_iters += res.iterations
        dd = res.state.d - state.d
        worst = int(np.argmax(dd))
        if dd[worst] <= delta * (1.0 + 1e-4):
            lo, hi = control.load_bounds
            if not lo <= res.load_factor <= hi:
                raise ControlFailure(f"load factor {res.load_factor:.6g} outside {control.load_bounds}")
            new_state = update_damage(state, model, res.U)
            return StepResult(res.load_factor, res.dU, new_state, res, bar, total_iters, switch)
        log.debug("increment %s: bar %d grows by %.4g > %.4g, switching control from bar %d",
                  getattr(space, "increment", "?"), worst, dd[worst], delta, bar)
        if worst in tried and switch > 2 * len(tried):
            break
        bar = worst
    raise ControlFailure("controlling bar selection did not settle")


def run_increments(model: LatticeModel, control: IncrementControl, n_increments: int,
                   space=None) -> SolveHistory:
    """Drive ``n_increments`` damage-controlled increments in the given space."""
    space = space or FullSpace(model)
    history = SolveHistory()
    history.metrics = space.metrics
    history.corrections = getattr(space, "corrections", [])
    state = DamageState.virgin(model.n_bars)
    d_prev = state.d.copy()
    U = np.zeros(model.n_free)
    lam = 0.0
    hint = None
    for inc in range(1, n_increments + 1):
        space.start_increment(inc, d_prev, state.d)
        if hasattr(space, "split") and space.split is not None:
            history.splittings.append((inc, space.split.fully_resolved.copy()))
        n_metrics = len(space.metrics)
        n_corr = len(getattr(space, "corrections", []))
        try:
            step = arc_length_step(model, state, U, control, lam, space, hint)
        except Exception as exc:
            exc.increment = inc
            exc.history = history
            raise
        space.end_increment(step)
        d_prev = state.d
        dd = step.state.d - state.d
        hint = int(np.argmax(dd))
        U = U + step.dU
        state = step.state
        lam = step.load_factor
        info = space.describe()
        history.records.append(IncrementRecord(
            increment=inc, U=U.copy(), dU=step.dU.copy(), state=state.copy(), load_factor=lam,
            deflection=model.deflection(U), newton_iters=step.iterations,
            control_bar=step.control_bar, residual=step.newton.residual,
            full_residual=step.newton.full_residual, n_f=info["n_f"], n_c=info["n_c"],
            switches=step.switches,
            cg_iterations=sum(m["iterations"] for m in space.metrics[n_metrics:]),
            corrections=len(getattr(space, "corrections", [])) - n_corr))
        log.info("increment %d: load factor %.6g, deflection %.6g, %d Newton iterations, n_f=%d n_c=%d",
                 inc, lam, history.records[-1].deflection, step.iterations, info["n_f"], info["n_c"])
    history.basis = getattr(space, "basis_matrix", None)
    return history


def run_reference(model: LatticeModel, control: IncrementControl, n_increments: int) -> SolveHistory:
    """Full-order damage-controlled simulation."""
    return run_increments(model, control, n_increments, FullSpace(model))
