"""Reduced-order continuation for damageable bar lattices.

Snapshot POD bases, local/global enrichment around damaged zones, augmented
conjugate gradients on the condensed system, and gated global corrections.
"""
from .adaptivity import CorrectionPolicy, adaptive_solve, global_correction
from .errors import (BreakdownNonSPD, ControlFailure, LatredError, LatticeError, NegligibleCorrection,
                     NonConvergence, ScenarioError, SingularKrr, SingularTangent)
from .lattice import (DamageState, FrameSpec, LatticeModel, MaterialLaw, build_frame_lattice,
                      internal_forces, tangent_stiffness)
from .localglobal import (CouplingOperator, SplitParams, Splitting, run_localglobal, run_pod,
                          select_fully_resolved)
from .nonlinear import IncrementControl, SolveHistory, run_reference
from .pod import ReducedBasis, SnapshotMatrix, compute_pod_basis, svd_truncation_error
from .scenario import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"
