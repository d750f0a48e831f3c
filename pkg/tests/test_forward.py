from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cgoscan.errors import EigenvalueHit, GridMismatch
from cgoscan.forward import (
    BoundaryTrace,
    DnMap,
    add_measurement_noise,
    apply_dn,
    assemble,
    dn_difference_apply,
    neumann_trace,
    solve_dirichlet,
)
from cgoscan.medium import Domain, FACE_NAMES, Inclusion, boundary_mesh, make_medium

from conftest import weighted_correlation


def full_trace(mesh, values):
    return BoundaryTrace(np.asarray(values, dtype=complex), mesh, "full")


class TestDirichletSolve:
    def test_constant_data_gives_constant_solution(self, laplace12):
        mesh = laplace12.mesh
        u = solve_dirichlet(laplace12, full_trace(mesh, np.ones(mesh.n_cells)))
        assert np.max(np.abs(u.values - 1.0)) < 1e-12
        assert u.residual_rel < 1e-10

    def test_linear_data_exact(self, laplace12, dom12):
        mesh = laplace12.mesh
        u = solve_dirichlet(laplace12, full_trace(mesh, mesh.centers[:, 0]))
        assert np.max(np.abs(u.values - dom12.voxel_centers()[:, 0])) < 1e-12

    def test_manufactured_solution_second_order(self):
        errs = {}
        for n in (12, 24):
            dom = Domain(grid_n=n)
            system = assemble(make_medium(dom, 1.0), omega=2.0)
            mesh = system.mesh
            u = solve_dirichlet(
                system, full_trace(mesh, np.exp(2j * mesh.centers[:, 0]))
            )
            exact = np.exp(2j * dom.voxel_centers()[:, 0])
            errs[n] = np.max(np.abs(u.values - exact))
        assert 3.0 <= errs[12] / errs[24] <= 5.0

    def test_grid_mismatch(self, laplace12):
        other = boundary_mesh(Domain(grid_n=16), FACE_NAMES)
        with pytest.raises(GridMismatch):
            solve_dirichlet(laplace12, full_trace(other, np.ones(other.n_cells)))

    def test_maximum_principle(self, laplace12):
        rng = np.random.default_rng(3)
        mesh = laplace12.mesh
        f = rng.uniform(-1.0, 2.0, mesh.n_cells)
        u = solve_dirichlet(laplace12, full_trace(mesh, f))
        assert np.max(u.values.real) <= f.max() + 1e-10
        assert np.min(u.values.real) >= f.min() - 1e-10

    def test_matrix_symmetric(self, laplace12):
        a = laplace12.matrix
        d = abs(a - a.T)
        assert d.max() <= 1e-12 * abs(a).max()


class TestNeumannTrace:
    def test_linear_gives_unit_derivative(self, laplace12, dom12):
        mesh = laplace12.mesh
        u = solve_dirichlet(laplace12, full_trace(mesh, mesh.centers[:, 0]))
        pb = boundary_mesh(dom12, ("+x",))
        tr = neumann_trace(laplace12, u, pb)
        assert np.max(np.abs(tr.values[pb.on_gamma] - 1.0)) < 1e-11
        assert np.all(tr.values[~pb.on_gamma] == 0.0)

    def test_constant_gives_zero(self, laplace12, dom12):
        mesh = laplace12.mesh
        u = solve_dirichlet(laplace12, full_trace(mesh, np.ones(mesh.n_cells)))
        tr = neumann_trace(laplace12, u, boundary_mesh(dom12, FACE_NAMES))
        assert np.max(np.abs(tr.values)) < 1e-10

    def test_oscillatory_derivative_second_order(self):
        # d/dnu e^{i w x1} = i w e^{i w/2} on the +x face, O(h^2) error
        omega = 2.0
        errs = {}
        for n in (12, 24):
            dom = Domain(grid_n=n)
            system = assemble(make_medium(dom, 1.0), omega=omega)
            mesh = system.mesh
            u = solve_dirichlet(
                system, full_trace(mesh, np.exp(1j * omega * mesh.centers[:, 0]))
            )
            pb = boundary_mesh(dom, ("+x",))
            tr = neumann_trace(system, u, pb)
            exact = 1j * omega * np.exp(1j * omega / 2.0)
            errs[n] = np.max(np.abs(tr.values[pb.on_gamma] - exact))
        assert 2.5 <= errs[12] / errs[24] <= 6.0


class TestDnMap:
    def test_laplace_constant_in_kernel(self, laplace12):
        mesh = laplace12.mesh
        dn = DnMap(laplace12, mesh)
        out = apply_dn(dn, full_trace(mesh, np.ones(mesh.n_cells)))
        assert np.max(np.abs(out.values)) < 1e-10

    def test_linearity(self, ball_pair12, mesh12):
        _, dn, _ = ball_pair12
        rng = np.random.default_rng(5)
        f = rng.standard_normal(mesh12.n_cells) + 1j * rng.standard_normal(mesh12.n_cells)
        g = rng.standard_normal(mesh12.n_cells) + 1j * rng.standard_normal(mesh12.n_cells)
        lhs = apply_dn(dn, full_trace(mesh12, 2.0 * f + 3.0 * g)).values
        rhs = 2.0 * apply_dn(dn, full_trace(mesh12, f)).values + 3.0 * apply_dn(
            dn, full_trace(mesh12, g)
        ).values
        scale = np.max(np.abs(rhs))
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * scale

    def test_symmetry_defect_second_order(self):
        # <Lf, g> - <f, Lg> = O(h^2) ||f|| ||g||: constant stable across grids
        consts = {}
        rng = np.random.default_rng(11)
        for n in (10, 20):
            dom = Domain(grid_n=n)
            system = assemble(make_medium(dom, 1.0), omega=1.0)
            mesh = system.mesh
            dn = DnMap(system, mesh)
            w = mesh.weights
            defects = []
            for _ in range(6):
                f = rng.standard_normal(mesh.n_cells)
                g = rng.standard_normal(mesh.n_cells)
                lf = apply_dn(dn, full_trace(mesh, f)).values
                lg = apply_dn(dn, full_trace(mesh, g)).values
                d = abs(np.sum(w * lf * g) - np.sum(w * f * lg))
                nf = np.sqrt(np.sum(w * f**2))
                ng = np.sqrt(np.sum(w * g**2))
                defects.append(d / (dom.h**2 * nf * ng))
            consts[n] = np.mean(defects)
        # same O(h^2) constant at both resolutions (within a factor ~3)
        assert 0.3 <= consts[10] / consts[20] <= 3.0

    def test_dn_matrix_matches_apply(self, ball_pair12, mesh12):
        _, dn, _ = ball_pair12
        mat = dn.matrix()
        rng = np.random.default_rng(9)
        f = np.zeros(mesh12.n_cells, dtype=complex)
        f[mesh12.on_gamma] = rng.standard_normal(mesh12.n_gamma)
        out = apply_dn(dn, BoundaryTrace(f, mesh12, "gamma"))
        assert np.allclose(
            out.values[mesh12.on_gamma], mat @ f[mesh12.on_gamma], atol=1e-9
        )


class TestDnDifference:
    def test_no_inclusions_zero(self, dom12, mesh12):
        med = make_medium(dom12, 1.0, [], c0=0.15)
        dn_p = DnMap(assemble(med, 1.0, perturbed=True), mesh12)
        dn_b = DnMap(assemble(med, 1.0, perturbed=False), mesh12)
        f = full_trace(mesh12, np.exp(1j * mesh12.centers @ np.array([1.0, 2.0, 0.5])))
        diff = dn_difference_apply(dn_p, dn_b, f)
        assert np.max(np.abs(diff.values)) < 1e-12

    def test_gamma_only_input_ignores_gamma_c_component(self, dom12):
        patch = boundary_mesh(dom12, ("+x", "-x"))
        med = make_medium(
            dom12, 1.0, [Inclusion((0.1, 0.0, 0.0), 0.06, "ball", 2.0)], c0=0.15
        )
        dn_p = DnMap(assemble(med, 1.0, perturbed=True), patch)
        dn_b = DnMap(assemble(med, 1.0, perturbed=False), patch)
        rng = np.random.default_rng(2)
        f = rng.standard_normal(patch.n_cells).astype(complex)
        junk = f.copy()
        junk[~patch.on_gamma] += 10.0 * rng.standard_normal(int(np.sum(~patch.on_gamma)))
        a = dn_difference_apply(dn_p, dn_b, BoundaryTrace(f, patch, "gamma"))
        b = dn_difference_apply(dn_p, dn_b, BoundaryTrace(junk, patch, "gamma"))
        assert np.array_equal(a.values, b.values)

    def test_patch_mismatch(self, dom12, mesh12):
        med = make_medium(dom12, 1.0, [], c0=0.15)
        sys1 = assemble(med, 1.0)
        dn_full = DnMap(sys1, mesh12)
        dn_face = DnMap(sys1, boundary_mesh(dom12, ("+x",)))
        f = full_trace(mesh12, np.ones(mesh12.n_cells))
        with pytest.raises(GridMismatch):
            dn_difference_apply(dn_full, dn_face, f)

    def test_inclusion_produces_signal(self, ball_pair12, mesh12):
        _, dn_p, dn_b = ball_pair12
        f = full_trace(mesh12, np.exp(1j * 2.0 * mesh12.centers[:, 0]))
        diff = dn_difference_apply(dn_p, dn_b, f)
        assert np.max(np.abs(diff.values)) > 1e-7


class TestEigenvalueGuard:
    def test_laplace_any_omega_succeeds(self, dom12):
        assemble(make_medium(dom12, 0.0), omega=7.3)

    def test_omega_below_first_eigenvalue_succeeds(self, dom12):
        # first Dirichlet eigenvalue of the unit cube is 3 pi^2 ~ 29.6 >> 1
        system = assemble(make_medium(dom12, 1.0), omega=1.0)
        assert system.pivot_ratio > 1e-8

    def test_discrete_eigenvalue_hits(self):
        # oracle: smallest discrete Dirichlet eigenvalue by shift-invert
        dom = Domain(grid_n=10)
        med = make_medium(dom, 1.0)
        base = assemble(med, omega=1.0)
        s = sp.diags(base.row_scale)
        a0 = base.matrix - s @ sp.identity(dom.grid_n**3)  # scaled Laplacian only
        lam = spla.eigsh(
            -a0, k=1, M=s.tocsc(), sigma=3 * np.pi**2, which="LM",
            return_eigenvectors=False,
        )[0]
        assert lam == pytest.approx(3 * np.pi**2, rel=0.05)
        with pytest.raises(EigenvalueHit):
            assemble(med, omega=float(np.sqrt(lam)))


class TestNoise:
    def test_sigma_zero_identity(self, mesh12):
        tr = BoundaryTrace(np.ones(mesh12.n_cells, dtype=complex), mesh12, "full")
        out = add_measurement_noise(tr, 0.0, seed=1)
        assert np.array_equal(out.values, tr.values)

    def test_seed_determinism(self, mesh12):
        rng = np.random.default_rng(0)
        tr = BoundaryTrace(rng.standard_normal(mesh12.n_cells).astype(complex), mesh12, "full")
        a = add_measurement_noise(tr, 0.05, seed=42)
        b = add_measurement_noise(tr, 0.05, seed=42)
        c = add_measurement_noise(tr, 0.05, seed=43)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_noise_statistics(self):
        # per-cell std within 20% of sigma * ||trace||_inf over >= 1e3 cells
        dom = Domain(grid_n=14)
        mesh = boundary_mesh(dom, FACE_NAMES)
        assert mesh.n_cells >= 1000
        tr = BoundaryTrace(np.full(mesh.n_cells, 2.0, dtype=complex), mesh, "full")
        out = add_measurement_noise(tr, 0.01, seed=7)
        dev = out.values - tr.values
        measured = np.sqrt(np.mean(np.abs(dev) ** 2))
        assert measured == pytest.approx(0.01 * 2.0, rel=0.2)

    def test_gamma_support_respected(self, dom12):
        patch = boundary_mesh(dom12, ("+z",))
        vals = np.zeros(patch.n_cells, dtype=complex)
        vals[patch.on_gamma] = 1.0
        tr = BoundaryTrace(vals, patch, "gamma")
        out = add_measurement_noise(tr, 0.1, seed=3)
        assert np.all(out.values[~patch.on_gamma] == 0.0)
