"""Damageable 3D bar lattice: geometry, damage law, force and stiffness assembly.

Sign convention: the internal force vector carries the minus sign, so that
equilibrium reads ``F_int(U) + F_ext = 0``.  ``tangent_stiffness`` returns the
positive stiffness ``-dF_int/dU``.

Displacement vectors handed to the assembly routines live on the *free* DOFs
(Dirichlet DOFs eliminated); ``LatticeModel.full_displacement`` expands them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

from .errors import LatticeError


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple


@dataclass(frozen=True)
class Bar:
    id: int
    k: int
    l: int
    section: float
    young: float


@dataclass(frozen=True)
class MaterialLaw:
    """Damage law ``d = min(1, max_t alpha * Y**beta)``.

    ``residual_stiffness`` floors the stiffness factor ``1 - d`` so that fully
    broken bars do not leave the structure singular.  Zero reproduces the bare
    law.  ``damage=False`` gives a linear elastic lattice.
    """

    alpha_dmg: float = math.sqrt(2.0)
    beta_dmg: float = 0.5
    residual_stiffness: float = 0.0
    damage: bool = True

    def __post_init__(self):
        if not (self.alpha_dmg > 0 and self.beta_dmg > 0):
            raise LatticeError("alpha_dmg and beta_dmg must be positive")
        if not 0.0 <= self.residual_stiffness < 1.0:
            raise LatticeError("residual_stiffness must lie in [0, 1)")

    def damage_driver(self, Y):
        """alpha * Y**beta, the quantity whose history maximum sets the damage."""
        if not self.damage:
            return np.zeros_like(Y)
        return self.alpha_dmg * np.power(Y, self.beta_dmg)

    def strain_for_damage(self, d, young, section):
        """Strain magnitude at which a virgin bar reaches damage ``d``."""
        Y = (d / self.alpha_dmg) ** (1.0 / self.beta_dmg)
        return np.sqrt(2.0 * Y / (young * section))


@dataclass
class DamageState:
    d: np.ndarray
    history: np.ndarray

    @classmethod
    def virgin(cls, n_bars: int) -> "DamageState":
        return cls(np.zeros(n_bars), np.zeros(n_bars))

    def copy(self) -> "DamageState":
        return DamageState(self.d.copy(), self.history.copy())


class LatticeModel:
    """Immutable description of a bar lattice.

    Parameters
    ----------
    positions : (n_p, 3) array of node coordinates.
    connectivity : (n_b, 2) node index pairs; each pair is stored with k < l.
    section, young : scalars or per-bar arrays.
    dirichlet : sequence of ``(dof, value)`` with ``dof = 3 * node + axis``.
    load_dofs : sequence of ``(dof, component)``; the stacked components are
        normalised to a unit vector.
    """

    def __init__(self, positions, connectivity, material: MaterialLaw = MaterialLaw(),
                 section=1.0, young=1.0, dirichlet: Sequence = (), load_dofs: Sequence = ()):
        pos = np.array(positions, dtype=float).reshape(-1, 3)
        con = np.array(connectivity, dtype=np.int64).reshape(-1, 2)
        if not np.all(np.isfinite(pos)):
            raise LatticeError("node positions must be finite")
        n_p, n_b = len(pos), len(con)
        if n_b == 0:
            raise LatticeError("lattice has no bars")
        if con.min() < 0 or con.max() >= n_p:
            raise LatticeError("bar references an unknown node")
        if np.any(con[:, 0] == con[:, 1]):
            raise LatticeError("bar with coincident extremities")
        con = np.sort(con, axis=1)
        section = np.broadcast_to(np.asarray(section, dtype=float), (n_b,)).copy()
        young = np.broadcast_to(np.asarray(young, dtype=float), (n_b,)).copy()
        if np.any(section <= 0) or np.any(young <= 0):
            raise LatticeError("sections and Young moduli must be positive")

        vec = pos[con[:, 1]] - pos[con[:, 0]]
        lengths = np.linalg.norm(vec, axis=1)
        if np.any(lengths <= 0):
            raise LatticeError("zero-length bar")

        adj = sps.coo_matrix((np.ones(n_b), (con[:, 0], con[:, 1])), shape=(n_p, n_p))
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise LatticeError(f"lattice is disconnected ({n_comp} components)")

        n_dof = 3 * n_p
        dirichlet = tuple((int(i), float(v)) for i, v in dirichlet)
        load_dofs = tuple((int(i), float(c)) for i, c in load_dofs)
        fixed_ids = [i for i, _ in dirichlet]
        load_ids = [i for i, _ in load_dofs]
        for i in fixed_ids + load_ids:
            if not 0 <= i < n_dof:
                raise LatticeError(f"DOF {i} out of range")
        if len(set(fixed_ids)) != len(fixed_ids) or len(set(load_ids)) != len(load_ids):
            raise LatticeError("duplicate DOF in boundary conditions")
        if set(fixed_ids) & set(load_ids):
            raise LatticeError("Dirichlet and load DOFs overlap")
        if not load_dofs or all(c == 0 for _, c in load_dofs):
            raise LatticeError("no loaded DOF")

        fixed = np.zeros(n_dof, dtype=bool)
        fixed[fixed_ids] = True
        free = np.flatnonzero(~fixed)
        dof_to_free = np.full(n_dof, -1, dtype=np.int64)
        dof_to_free[free] = np.arange(len(free))
        u0 = np.zeros(n_dof)
        for i, v in dirichlet:
            u0[i] = v

        self.positions = pos
        self.connectivity = con
        self.section = section
        self.young = young
        self.material = material
        self.dirichlet = dirichlet
        self.load_dofs = load_dofs
        self.lengths = lengths
        self.directions = vec / lengths[:, None]
        self.free_dofs = free
        self.dof_to_free = dof_to_free
        self.prescribed = u0

        # strain operator: eps = B_full @ U_full, rows n_kl.(u_l - u_k)/L
        rows = np.repeat(np.arange(n_b), 6)
        cols = np.concatenate([3 * con[:, [0]] + np.arange(3), 3 * con[:, [1]] + np.arange(3)], axis=1).ravel()
        vals = np.concatenate([-self.directions, self.directions], axis=1) / lengths[:, None]
        B_full = sps.csr_matrix((vals.ravel(), (rows, cols)), shape=(n_b, n_dof))
        self.B = B_full[:, free].tocsr()
        self.eps_prescribed = B_full @ u0

        f = np.zeros(n_dof)
        for i, c in load_dofs:
            f[i] = c
        f /= np.linalg.norm(f)
        self.f_unit = f[free]
        # per-node unit load direction, for the deflection measure
        node_force = f.reshape(-1, 3)
        norms = np.linalg.norm(node_force, axis=1)
        loaded = norms > 0
        w = np.zeros_like(node_force)
        w[loaded] = node_force[loaded] / norms[loaded, None]
        self._load_weights = w.ravel()
        self.loaded_nodes = np.flatnonzero(loaded)

        for a in (self.positions, self.connectivity, self.section, self.young, self.lengths,
                  self.directions, self.free_dofs, self.dof_to_free, self.prescribed,
                  self.eps_prescribed, self.f_unit):
            a.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_bars(self) -> int:
        return len(self.connectivity)

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    @property
    def nodes(self) -> list:
        return [Node(i, tuple(p)) for i, p in enumerate(self.positions)]

    @property
    def bars(self) -> list:
        return [Bar(b, int(k), int(l), float(s), float(e)) for b, ((k, l), s, e)
                in enumerate(zip(self.connectivity, self.section, self.young))]

    def full_displacement(self, U) -> np.ndarray:
        out = self.prescribed.copy()
        out[self.free_dofs] = U
        return out

    def strains(self, U) -> np.ndarray:
        return self.B @ U + self.eps_prescribed

    def deflection(self, U) -> float:
        """Mean displacement of the loaded nodes along their load direction."""
        return float(self._load_weights @ self.full_displacement(U)) / len(self.loaded_nodes)

    def free_dofs_of_nodes(self, nodes) -> np.ndarray:
        dofs = (3 * np.asarray(nodes, dtype=np.int64)[:, None] + np.arange(3)).ravel()
        idx = self.dof_to_free[dofs]
        return np.sort(idx[idx >= 0])

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for a in (self.positions, self.connectivity, self.section, self.young):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.dirichlet, self.load_dofs)).encode())
        return h.hexdigest()[:16]


def _bar_index(bar) -> int:
    return bar.id if isinstance(bar, Bar) else int(bar)


def bar_strain(model: LatticeModel, bar, U) -> float:
    """Axial strain of one bar; ``U`` holds one 3-vector per node."""
    U = np.asarray(U, dtype=float).reshape(-1, 3)
    b = _bar_index(bar)
    k, l = model.connectivity[b]
    return float((U[l] - U[k]) @ model.directions[b] / model.lengths[b])


def thermodynamic_force(bar, strain):
    """Y = E S eps^2 / 2."""
    return 0.5 * bar.young * bar.section * np.square(strain)


def update_damage(state: DamageState, model: LatticeModel, U) -> DamageState:
    """Damage reached from ``state`` when the free-DOF displacement is ``U``.

    Used both for trial states inside Newton iterations and to commit a
    converged increment; the history maximum makes it irreversible.
    """
    eps = model.strains(U)
    Y = 0.5 * model.young * model.section * eps * eps
    hist = np.maximum(state.history, model.material.damage_driver(Y))
    return DamageState(np.minimum(1.0, hist), hist)


def _stiffness_factor(model: LatticeModel, d):
    return np.maximum(1.0 - d, model.material.residual_stiffness)


def axial_forces(model: LatticeModel, U, state: DamageState) -> np.ndarray:
    eps = model.strains(U)
    return model.young * model.section * _stiffness_factor(model, state.d) * eps


def internal_forces(model: LatticeModel, U, state: DamageState) -> np.ndarray:
    """F_int on free DOFs for frozen damage ``state.d``."""
    N = axial_forces(model, U, state)
    return -(model.B.T @ (model.lengths * N))


def external_forces(model: LatticeModel, load_factor: float) -> np.ndarray:
    return load_factor * model.f_unit


def axial_tangent(model: LatticeModel, U, state: DamageState, mode: str = "consistent"):
    """dN/deps per bar.  ``state`` must be the damage reached at ``U``."""
    if mode not in ("consistent", "secant"):
        raise ValueError(f"unknown tangent mode {mode!r}")
    ES = model.young * model.section
    factor = _stiffness_factor(model, state.d)
    dN = ES * factor
    if mode == "consistent" and model.material.damage:
        mat = model.material
        eps = model.strains(U)
        drive = mat.damage_driver(0.5 * ES * eps * eps)
        loading = (drive >= state.history * (1.0 - 1e-12)) & (state.d < 1.0) \
            & (1.0 - state.d > mat.residual_stiffness)
        # eps * dd/deps = 2 beta alpha Y^beta
        dN = np.where(loading, dN - ES * 2.0 * mat.beta_dmg * drive, dN)
    return dN


def tangent_stiffness(model: LatticeModel, U, state: DamageState, mode: str = "consistent"):
    """Sparse symmetric K_T = B^T diag(L dN/deps) B on free DOFs."""
    dN = axial_tangent(model, U, state, mode)
    K = model.B.T @ sps.diags(model.lengths * dN) @ model.B
    return K.tocsr()


def strain_energy(model: LatticeModel, U, state: DamageState) -> float:
    eps = model.strains(U)
    k = model.young * model.section * _stiffness_factor(model, state.d)
    return float(0.5 * np.sum(k * eps * eps * model.lengths))


# ---------------------------------------------------------------------------
# parametric generator


@dataclass(frozen=True)
class FrameSpec:
    """Parametric lattice description.

    layout:
      ``"bar"``   -- ``nx`` collinear unit bars along x; node 0 clamped, the
                     others restrained in y and z.
      ``"block"`` -- every node of the ``nx x ny x nz`` cell grid.
      ``"tower"`` -- a deck of ``deck_layers`` node layers at the top of the
                     grid carried by square pillars of ``pillar_width`` cells.
    Grid nodes sit at ``origin + integer offsets`` so axis bars have unit length.
    """

    layout: str = "tower"
    extents: tuple = (8, 8, 11)
    origin: tuple = (4.0, 4.0, 0.0)
    bracing: bool = True
    deck_layers: int = 2
    pillars: tuple = ((4, 4), (11, 4), (4, 11), (11, 11))
    pillar_width: int = 1
    load_box: tuple = ((7.0, 9.0), (8.0, 10.0), (11.0, 11.0))
    load_direction: tuple = (0.0, 0.0, -1.0)
    material: MaterialLaw = field(default_factory=MaterialLaw)
    section: float = 1.0
    young: float = 1.0


def _tower_mask(spec: FrameSpec, grid):
    nx, ny, nz = spec.extents
    ox, oy, _ = spec.origin
    X, Y, Z = grid
    keep = Z >= nz - spec.deck_layers + 1
    w = spec.pillar_width
    for px, py in spec.pillars:
        i0, j0 = px - ox, py - oy
        keep |= (X >= i0) & (X <= i0 + w) & (Y >= j0) & (Y <= j0 + w)
    return keep


def build_frame_lattice(spec: FrameSpec) -> LatticeModel:
    nx, ny, nz = (int(v) for v in spec.extents)
    origin = np.asarray(spec.origin, dtype=float)
    direction = np.asarray(spec.load_direction, dtype=float)
    direction = direction / np.linalg.norm(direction)

    if spec.layout == "bar":
        ijk = np.array([(i, 0, 0) for i in range(nx + 1)])
    elif spec.layout in ("block", "tower"):
        ijk = np.array(list(itertools.product(range(nx + 1), range(ny + 1), range(nz + 1))))
        ijk = ijk[np.lexsort((ijk[:, 0], ijk[:, 1], ijk[:, 2]))]
        if spec.layout == "tower":
            ijk = ijk[_tower_mask(spec, ijk.T)]
    else:
        raise LatticeError(f"unknown layout {spec.layout!r}")

    index = {tuple(p): n for n, p in enumerate(ijk.tolist())}
    bars = []
    axes = np.eye(3, dtype=int)
    for p, n in index.items():
        for a in axes:
            q = tuple(np.add(p, a))
            if q in index:
                bars.append((n, index[q]))
        if not spec.bracing:
            continue
        for a, b in ((0, 1), (0, 2), (1, 2)):
            ea, eb = axes[a], axes[b]
            corners = [p, tuple(np.add(p, ea)), tuple(np.add(p, eb)), tuple(np.add(np.add(p, ea), eb))]
            if all(c in index for c in corners):
                bars.append((index[corners[0]], index[corners[3]]))
                bars.append((index[corners[1]], index[corners[2]]))
    if not bars:
        raise LatticeError("frame layout yields no bars")

    positions = ijk + origin
    dirichlet = []
    if spec.layout == "bar":
        dirichlet += [(d, 0.0) for d in range(3)]
        for n in range(1, len(ijk)):
            dirichlet += [(3 * n + 1, 0.0), (3 * n + 2, 0.0)]
    else:
        base = [n for n, p in enumerate(ijk) if p[2] == 0]
        if not base:
            raise LatticeError("no node on the clamped plane z=0")
        dirichlet += [(3 * n + 2, 0.0) for n in base]
        a = base[0]
        dirichlet += [(3 * a, 0.0), (3 * a + 1, 0.0)]
        dx = [abs(positions[n, 0] - positions[a, 0]) for n in base]
        dy = [abs(positions[n, 1] - positions[a, 1]) for n in base]
        if max(dx) > 0:
            dirichlet.append((3 * base[int(np.argmax(dx))] + 1, 0.0))
        elif max(dy) > 0:
            dirichlet.append((3 * base[int(np.argmax(dy))], 0.0))

    (x0, x1), (y0, y1), (z0, z1) = spec.load_box
    tol = 1e-9
    fixed = {d for d, _ in dirichlet}
    loads = []
    for n, (x, y, z) in enumerate(positions):
        if x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol and z0 - tol <= z <= z1 + tol:
            for ax in range(3):
                if direction[ax] != 0 and 3 * n + ax not in fixed:
                    loads.append((3 * n + ax, float(direction[ax])))
    if not loads:
        raise LatticeError("load box contains no loadable DOF")

    return LatticeModel(positions, bars, spec.material, spec.section, spec.young,
                        dirichlet, loads)
