"""Finite-difference Helmholtz forward model and partial DN maps.

Discretizes (Laplacian + omega^2 n) u = 0 on the voxel grid with Dirichlet
data given on the boundary face cells.  The 7-point stencil is uniform in
the interior; at voxels adjacent to the boundary the in-axis second
derivative uses the boundary cell value at distance h/2 (Shortley-Weller
coefficients, exact on quadratics):

    u'' ~ (8 u_B - 12 u_P + 4 u_I) / (3 h^2),   B at h/2, I at h inward.

Rows touching the boundary are rescaled by (3/4)^(#boundary axes), which
makes the assembled matrix exactly symmetric for real n.  The matrix is
factorized once (sparse LU) and reused for every right-hand side; complex
data is solved as stacked real/imaginary columns.

Neumann traces are one-sided 3-point differences along the outward normal,

    du/dnu ~ (8 f_B - 9 u_P + u_I) / (3 h),

second order, consistent with the interior accuracy.  The partial DN map
sends a trace supported on Gamma (zero on Gamma_c, trace-space convention)
to du/dnu sampled on the Gamma cells.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EigenvalueHit, GridMismatch
from .medium import (
    FACE_NAMES,
    Domain,
    PartialBoundary,
    RefractiveMedium,
    build_perturbed_index,
)

PIVOT_RATIO_MIN = 1e-10
SOLVE_RESIDUAL_TOL = 1e-10


@dataclass
class BoundaryTrace:
    """Complex values on the boundary cells of a mesh.

    ``support`` is "full" (defined on all of the boundary) or "gamma"
    (trace-space convention: identically zero on Gamma_c cells).
    """

    values: np.ndarray
    patch: PartialBoundary
    support: str = "full"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.patch.n_cells,):
            raise ValueError(
                f"trace length {v.shape} != boundary cell count {self.patch.n_cells}"
            )
        if self.support not in ("full", "gamma"):
            raise ValueError(f"unknown support {self.support!r}")
        if self.support == "gamma":
            v = v.copy()
            v[~self.patch.on_gamma] = 0.0
        self.values = v

    @property
    def gamma_values(self) -> np.ndarray:
        return self.values[self.patch.on_gamma]

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    def norm_gamma(self) -> float:
        """Surface-L2 norm over Gamma."""
        g = self.patch.on_gamma
        return float(
            np.sqrt(np.sum(self.patch.weights[g] * np.abs(self.values[g]) ** 2))
        )


@dataclass
class InteriorField:
    """Solution of a Dirichlet solve: interior voxel values + the data used."""

    values: np.ndarray  # (grid_n^3,) complex, C-order over (x, y, z)
    boundary: BoundaryTrace
    residual_rel: float

    def cube(self, domain: Domain) -> np.ndarray:
        n = domain.grid_n
        return self.values.reshape(n, n, n)


class HelmholtzSystem:
    """Factorized interior operator for one index field and frequency."""

    def __init__(self, medium: RefractiveMedium, omega: float, n_field: np.ndarray):
        self.medium = medium
        self.omega = float(omega)
        self.n_field = np.asarray(n_field, dtype=float)
        self.domain = medium.domain
        self.mesh = PartialBoundary(self.domain, FACE_NAMES)
        self.matrix, self.bmat, self.row_scale = _assemble_matrices(
            self.domain, self.n_field, self.omega
        )
        self._lu = spla.splu(self.matrix)
        d = np.abs(self._lu.U.diagonal())
        self.pivot_ratio = float(d.min() / d.max())
        if self.pivot_ratio < PIVOT_RATIO_MIN:
            raise EigenvalueHit(
                f"pivot ratio {self.pivot_ratio:.2e} < {PIVOT_RATIO_MIN:.0e}: "
                "omega^2 is at or near a Dirichlet eigenvalue"
            )

    def solve_many(self, f_values: np.ndarray) -> np.ndarray:
        """Solve for a batch of boundary data, shape (n_cells, nrhs) complex.

        Returns interior values, shape (grid_n^3, nrhs) complex.
        """
        F = np.atleast_2d(np.asarray(f_values, dtype=complex).T).T
        rhs = -(self.bmat @ F)
        stacked = np.empty((rhs.shape[0], 2 * rhs.shape[1]))
        stacked[:, 0::2] = rhs.real
        stacked[:, 1::2] = rhs.imag
        sol = self._lu.solve(stacked)
        return sol[:, 0::2] + 1j * sol[:, 1::2]

    def residual_rel(self, u: np.ndarray, f_values: np.ndarray) -> float:
        """Relative residual of the interior stencil for a given solution."""
        rhs = -(self.bmat @ np.asarray(f_values, dtype=complex))
        r = self.matrix @ u - rhs
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        return float(np.linalg.norm(r) / scale)


def assemble(
    medium: RefractiveMedium, omega: float, *, perturbed: bool = True
) -> HelmholtzSystem:
    """Assemble and factorize the interior operator.

    ``perturbed`` selects n_alpha (inclusions stamped in) versus the
    background field.  Raises EigenvalueHit if the factorization pivots
    collapse (omega^2 at a discrete Dirichlet eigenvalue).
    """
    n_field = build_perturbed_index(medium) if perturbed else medium.background
    return HelmholtzSystem(medium, omega, n_field)


def _assemble_matrices(domain: Domain, n_field: np.ndarray, omega: float):
    n = domain.grid_n
    h = domain.h
    nvox = n**3
    idx = np.indices((n, n, n))
    flat = ((idx[0] * n + idx[1]) * n + idx[2]).ravel()
    pos = [idx[ax].ravel() for ax in range(3)]
    strides = (n * n, n, 1)
    inv_h2 = 1.0 / h**2

    rows, cols, vals = [], [], []
    diag = np.zeros(nvox)
    brows, bcols, bvals = [], [], []

    for ax in range(3):
        p = pos[ax]
        st = strides[ax]
        # off-diagonal couplings between voxel pairs along this axis
        m = p <= n - 2
        v = flat[m]
        low = p[m] == 0          # row voxel is boundary-adjacent on the - side
        high = p[m] == n - 2     # partner voxel is boundary-adjacent on + side
        val_fwd = np.where(low, 4.0 * inv_h2 / 3.0, inv_h2)
        val_bwd = np.where(high, 4.0 * inv_h2 / 3.0, inv_h2)
        rows.append(v)
        cols.append(v + st)
        vals.append(val_fwd)
        rows.append(v + st)
        cols.append(v)
        vals.append(val_bwd)
        # per-axis diagonal
        at_bdry = (pos[ax] == 0) | (pos[ax] == n - 1)
        diag += np.where(at_bdry, -4.0 * inv_h2, -2.0 * inv_h2)
        # boundary-cell coupling (face cell at distance h/2)
        for sign, face_pos in ((+1, n - 1), (-1, 0)):
            sel = pos[ax] == face_pos
            vsel = flat[sel]
            face_idx = 2 * ax + (0 if sign > 0 else 1)
            inplane = [a for a in range(3) if a != ax]
            a_coord = pos[inplane[0]][sel]
            b_coord = pos[inplane[1]][sel]
            bcell = face_idx * n * n + a_coord * n + b_coord
            brows.append(vsel)
            bcols.append(bcell)
            bvals.append(np.full(len(vsel), 8.0 * inv_h2 / 3.0))

    diag += omega**2 * n_field.ravel()
    rows.append(flat)
    cols.append(flat)
    vals.append(diag)

    n_bdry_axes = sum(
        ((pos[ax] == 0) | (pos[ax] == n - 1)).astype(int) for ax in range(3)
    )
    row_scale = 0.75**n_bdry_axes

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals) * row_scale[r]
    A = sp.coo_matrix((v, (r, c)), shape=(nvox, nvox)).tocsc()

    br = np.concatenate(brows)
    bc = np.concatenate(bcols)
    bv = np.concatenate(bvals) * row_scale[br]
    B = sp.coo_matrix((bv, (br, bc)), shape=(nvox, 6 * n * n)).tocsc()
    return A, B, row_scale


def solve_dirichlet(system: HelmholtzSystem, f: BoundaryTrace) -> InteriorField:
    """Solve the Dirichlet problem for one boundary trace.

    The returned field carries the data ``f`` (needed for Neumann traces)
    and the relative interior-stencil residual.
    """
    if not f.patch.same_cells(system.mesh):
        raise GridMismatch("trace mesh does not match the system grid")
    u = system.solve_many(f.values[:, None])[:, 0]
    res = system.residual_rel(u, f.values)
    if res > SOLVE_RESIDUAL_TOL:
        warnings.warn(
            f"direct solve residual {res:.2e} exceeds {SOLVE_RESIDUAL_TOL:.0e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return InteriorField(values=u, boundary=f, residual_rel=res)


def neumann_trace(
    system: HelmholtzSystem, field: InteriorField, patch: PartialBoundary
) -> BoundaryTrace:
    """One-sided second-order normal derivative on the Gamma cells."""
    if patch.domain != system.domain:
        raise GridMismatch("patch grid does not match the system grid")
    h = system.domain.h
    g = patch.on_gamma
    fb = field.boundary.values[g]
    u1 = field.values[patch.inner1[g]]
    u2 = field.values[patch.inner2[g]]
    out = np.zeros(patch.n_cells, dtype=complex)
    out[g] = (8.0 * fb - 9.0 * u1 + u2) / (3.0 * h)
    return BoundaryTrace(out, patch, support="gamma")


@dataclass
class DnMap:
    """Partial Dirichlet-to-Neumann operator on a patch Gamma."""

    system: HelmholtzSystem
    patch: PartialBoundary
    _matrix: Optional[np.ndarray] = dc_field(default=None, repr=False)

    def __post_init__(self):
        if self.patch.domain != self.system.domain:
            raise GridMismatch("patch grid does not match the system grid")

    def matrix(self, block: int = 64) -> np.ndarray:
        """Dense Gamma x Gamma matrix of the DN map (real for real n).

        Column j is the Neumann trace produced by the unit indicator trace
        on Gamma cell j.  Built once with blocked multi-RHS solves.
        """
        if self._matrix is None:
            gi = self.patch.gamma_indices
            m = len(gi)
            h = self.system.domain.h
            i1 = self.patch.inner1[gi]
            i2 = self.patch.inner2[gi]
            bcols = self.system.bmat[:, gi].tocsc()
            out = np.empty((m, m))
            for s in range(0, m, block):
                e = min(s + block, m)
                rhs = -bcols[:, s:e].toarray()
                U = self.system._lu.solve(rhs)
                out[:, s:e] = (-9.0 * U[i1, :] + U[i2, :]) / (3.0 * h)
            out[np.arange(m), np.arange(m)] += 8.0 / (3.0 * h)
            self._matrix = out
        return self._matrix


def apply_dn(dn: DnMap, f: BoundaryTrace) -> BoundaryTrace:
    """Apply the DN map: Dirichlet solve followed by the Neumann trace.

    Traces declared Gamma-only are zeroed on Gamma_c first (trace-space
    convention: identification of f on Gamma with its extension by 0).
    """
    vals = f.values
    if f.support == "gamma":
        vals = vals.copy()
        vals[~dn.patch.on_gamma] = 0.0
    field = solve_dirichlet(dn.system, BoundaryTrace(vals, dn.patch, "full"))
    return neumann_trace(dn.system, field, dn.patch)


def apply_dn_many(dn: DnMap, f_values: np.ndarray, gamma_only: bool = True) -> np.ndarray:
    """Batched DN application, f_values shape (n_cells, nrhs) complex.

    Returns Neumann values on all cells (zeros off Gamma), same shape.
    """
    F = np.array(f_values, dtype=complex)
    if gamma_only:
        F[~dn.patch.on_gamma, :] = 0.0
    U = dn.system.solve_many(F)
    g = dn.patch.on_gamma
    h = dn.system.domain.h
    out = np.zeros_like(F)
    out[g, :] = (8.0 * F[g, :] - 9.0 * U[dn.patch.inner1[g], :] + U[dn.patch.inner2[g], :]) / (
        3.0 * h
    )
    return out


def dn_difference_apply(dn_pert: DnMap, dn_bg: DnMap, f: BoundaryTrace) -> BoundaryTrace:
    """(Lambda_perturbed - Lambda_background) f on the shared patch."""
    if not dn_pert.patch.same_mesh(dn_bg.patch):
        raise GridMismatch("DN maps live on different patches or grids")
    a = apply_dn(dn_pert, f)
    b = apply_dn(dn_bg, f)
    return BoundaryTrace(a.values - b.values, dn_pert.patch, support="gamma")


def add_measurement_noise(
    trace: BoundaryTrace, sigma: float, seed: int
) -> BoundaryTrace:
    """Add i.i.d. complex Gaussian noise, per-cell std sigma * ||trace||_inf.

    Deterministic per seed.  Noise respects the support region: Gamma-only
    traces stay exactly zero on Gamma_c.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return BoundaryTrace(trace.values.copy(), trace.patch, trace.support)
    rng = np.random.default_rng(seed)
    scale = sigma * trace.norm_inf()
    mask = trace.patch.on_gamma if trace.support == "gamma" else slice(None)
    n = trace.patch.n_cells
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (scale / np.sqrt(2.0))
    out = trace.values.copy()
    out[mask] = out[mask] + noise[mask]
    return BoundaryTrace(out, trace.patch, trace.support)
