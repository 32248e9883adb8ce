"""Scenario execution and output files."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .adaptivity import CorrectionPolicy, adaptive_solve
from .errors import LatredError, ScenarioError
from .lattice import LatticeModel, build_frame_lattice
from .localglobal import SplitParams, run_localglobal, run_pod
from .nonlinear import IncrementControl, SolveHistory, run_reference
from .pod import SnapshotMatrix, compute_pod_basis
from .scenario import Scenario

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    scenario: Scenario
    model: LatticeModel
    history: SolveHistory
    snapshot_source: str
    basis: np.ndarray | None


def control_of(scn: Scenario) -> IncrementControl:
    c = scn["control"]
    return IncrementControl(delta_d_max=c["delta_d_max"], newton_tol=c["newton_tol"],
                            newton_max_iters=c["newton_max_iters"], tangent=c["tangent"])


def resolve_snapshots(scn: Scenario, model: LatticeModel, snapshot=None):
    """Snapshot matrix for the reduced modes and a short description of its origin."""
    src = snapshot if snapshot is not None else scn["pod"]["snapshot"]
    kind = scn["pod"]["snapshot_kind"]
    n = scn["control"]["n_increments"]
    if src is None:
        raise ScenarioError(f"pod.snapshot: required for mode {scn.mode}")
    if isinstance(src, dict) or src == "self":
        overrides = {} if src == "self" else src
        source_model = build_frame_lattice(scn.frame_spec(overrides))
        log.info("computing snapshots from a reference run (%s)", "self" if src == "self" else overrides)
        S = run_reference(source_model, control_of(scn), n).snapshot_matrix(kind)
        desc = "self" if src == "self" else json.dumps(overrides, sort_keys=True)
    else:
        path = Path(src)
        if not path.is_absolute():
            path = scn.base_dir / path
        S = SnapshotMatrix(io.read_matrix(path))
        desc = str(src)
    if S.n_u != model.n_free:
        raise ScenarioError(f"snapshot has {S.n_u} rows but the lattice has {model.n_free} free DOFs")
    return S, desc


def run(scn: Scenario, snapshot=None) -> RunResult:
    model = build_frame_lattice(scn.frame_spec())
    ctl = control_of(scn)
    n = scn["control"]["n_increments"]
    pod, sp, pol, sol = scn["pod"], scn["split"], scn["policy"], scn["solver"]
    log.info("scenario %s: mode %s, %d free DOFs, %d bars", scn.name, scn.mode, model.n_free, model.n_bars)
    if scn.mode == "full":
        history = run_reference(model, ctl, n)
        basis = compute_pod_basis(history.snapshot_matrix(pod["snapshot_kind"])).C if len(history) else None
        return RunResult(scn, model, history, "", basis)

    S, desc = resolve_snapshots(scn, model, snapshot)
    if scn.mode == "pod":
        history = run_pod(model, ctl, n, S, pod["n_c"], pod["eps"])
    else:
        params = SplitParams(sp["rho_s"], sp["k_dam"], sp["k_locglo"])
        kw = dict(cg_tol=sol["cg_tol"], precond=sol["precond"], enrich=sol["enrich"],
                  compare_unaugmented=sol["compare_unaugmented"])
        if scn.mode == "localglobal":
            history = run_localglobal(model, ctl, n, S, pod["n_c"], pod["eps"], params, **kw)
        else:
            policy = CorrectionPolicy(pol["eta_global"], pol["eta_reduced"],
                                      pol["krylov_tol_correction"], pol["max_corrections_per_increment"])
            history, _ = adaptive_solve(model, ctl, S, n, pod["n_c"], pod["eps"], params, policy, **kw)
    return RunResult(scn, model, history, desc, history.basis)


def summary(result: RunResult) -> dict:
    h = result.history
    out = {
        "name": result.scenario.name,
        "mode": result.scenario.mode,
        "fingerprint": result.model.fingerprint(),
        "n_u": result.model.n_free,
        "n_bars": result.model.n_bars,
        "increments": len(h),
        "snapshot_source": result.snapshot_source,
        "cg_iterations": int(sum(r.cg_iterations for r in h.records)),
        "corrections": len(h.corrections),
        "scenario": result.scenario.to_dict(),
    }
    if len(h):
        i, peak = h.peak()
        out.update(peak_load=peak, peak_increment=i + 1, final_load=float(h.load_factors[-1]))
    return out


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = result.history
    io.write_history(out, h)
    if len(h):
        S = h.snapshot_matrix(result.scenario["pod"]["snapshot_kind"]).columns
        io.write_matrix(out / "snapshots.lrmat", S)
        io.write_matrix_csv(out / "snapshots.csv", S)
    if result.basis is not None:
        io.write_matrix(out / "basis.lrmat", result.basis)
    if h.splittings:
        write_splittings(out / "splitting.csv", result.model, h.splittings)
    (out / "run.json").write_text(json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
    return out


def write_splittings(path, model: LatticeModel, splittings):
    rows = []
    for inc, dofs in splittings:
        for i in dofs:
            dof = int(model.free_dofs[i])
            node = dof // 3
            x, y, z = model.positions[node]
            rows.append(dict(increment=inc, free_dof=int(i), node=node, axis="xyz"[dof % 3], x=x, y=y, z=z))
    io.write_table(path, ["increment", "free_dof", "node", "axis", "x", "y", "z"], rows)


def write_error(out_dir, exc: Exception) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {"status": "error", "error": type(exc).__name__, "message": str(exc),
              "increment": getattr(exc, "increment", None)}
    path = out / "error.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def compare(run_a, run_b) -> dict:
    """Peak-load error, curve distance and solver totals between two output directories."""
    a, b = Path(run_a), Path(run_b)
    try:
        meta_a = json.loads((a / "run.json").read_text())
        meta_b = json.loads((b / "run.json").read_text())
    except OSError as exc:
        raise LatredError(f"cannot read run summary: {exc}") from exc
    if meta_a["fingerprint"] != meta_b["fingerprint"]:
        raise LatredError("runs were made on different lattices")
    la, da, rows_a = io.read_loaddefl(a / "loaddefl.csv")
    lb, db, rows_b = io.read_loaddefl(b / "loaddefl.csv")
    n = min(len(la), len(lb))
    dist = float(np.sqrt(np.sum((la[:n] - lb[:n]) ** 2 + (da[:n] - db[:n]) ** 2)))
    pa, pb = la.max() if len(la) else float("nan"), lb.max() if len(lb) else float("nan")
    return {
        "run_a": str(a), "run_b": str(b),
        "increments": n,
        "peak_a": pa, "peak_b": pb,
        "peak_error_pct": 100.0 * (pb - pa) / pa,
        "curve_l2": dist,
        "curve_rel_l2": dist / float(np.sqrt(np.sum(la[:n] ** 2 + da[:n] ** 2))),
        "cg_iterations_a": sum(int(r["cg_iterations"]) for r in rows_a),
        "cg_iterations_b": sum(int(r["cg_iterations"]) for r in rows_b),
        "corrections_a": sum(int(r["corrections"]) for r in rows_a),
        "corrections_b": sum(int(r["corrections"]) for r in rows_b),
    }
