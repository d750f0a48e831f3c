from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from cgoscan.cgo import (
    CgoProbe,
    FaddeevQuadrature,
    cgo_boundary_data,
    faddeev_kernel,
    faddeev_kernel_batch,
    faddeev_kernel_reference,
    make_probe,
    probe_defects,
)
from cgoscan.errors import DegenerateProbe, OverflowRisk, QuadratureDiverged
from cgoscan.medium import Domain, FACE_NAMES, boundary_mesh


class TestProbeConstruction:
    def test_reference_example(self):
        # k = (2,0,0), L = 4: l = 4 e3, eta = sqrt(20) (0,-1,0),
        # rho1 = (0, -sqrt(5), 0) + i (1, 0, 2)
        p = make_probe([2.0, 0.0, 0.0], 4.0)
        assert np.allclose(p.l, [0.0, 0.0, 4.0])
        assert np.allclose(p.eta, [0.0, -np.sqrt(20.0), 0.0])
        assert np.allclose(p.rho1.real, [0.0, -np.sqrt(5.0), 0.0])
        assert np.allclose(p.rho1.imag, [1.0, 0.0, 2.0])
        assert abs(complex(p.rho1 @ p.rho1)) < 1e-12

    def test_zero_k_sum_is_zero(self):
        p = make_probe([0.0, 0.0, 0.0], 1.0)
        assert np.max(np.abs(p.rho1 + p.rho2)) < 1e-12

    def test_sum_identity(self):
        p = make_probe([1.0, -2.0, 0.7], 5.0)
        assert np.max(np.abs(p.rho1 + p.rho2 - 1j * p.k)) < 1e-12

    def test_invariants_bulk(self):
        rng = np.random.default_rng(100)
        worst = 0.0
        for _ in range(2000):
            k = rng.normal(size=3) * rng.uniform(0.1, 5.0)
            L = float(rng.uniform(0.0, 20.0))
            if np.linalg.norm(k) == 0.0 and L == 0.0:
                continue
            worst = max(worst, max(probe_defects(make_probe(k, L)).values()))
        assert worst <= 1e-12

    def test_deterministic_bitwise(self):
        a = make_probe([0.3, 0.4, -0.5], 8.0)
        b = make_probe([0.3, 0.4, -0.5], 8.0)
        for x, y in ((a.l, b.l), (a.eta, b.eta), (a.rho1, b.rho1), (a.rho2, b.rho2)):
            assert np.array_equal(x, y)

    def test_fallback_axis_for_k_parallel_e3(self):
        p = make_probe([0.0, 0.0, 2.0], 4.0)
        assert max(probe_defects(p).values()) <= 1e-12
        assert abs(p.l @ np.array([0.0, 0.0, 1.0])) < 1e-12  # l orthogonal to k

    def test_degenerate(self):
        with pytest.raises(DegenerateProbe):
            make_probe([0.0, 0.0, 0.0], 0.0)

    def test_json_round_trip(self):
        p = make_probe([1.0, 2.0, 3.0], 8.0)
        q = CgoProbe.from_dict(p.to_dict())
        assert np.array_equal(p.rho1, q.rho1)
        assert np.array_equal(p.k, q.k)


class TestBoundaryTraces:
    def test_rho_nu_constant_on_face(self, dom12):
        patch = boundary_mesh(dom12, ("+x",))
        p = make_probe([0.0, 0.0, 0.0], 1.0)
        e, dn = cgo_boundary_data(p, 1, patch)
        g = patch.on_gamma
        ratio = dn[g] / e[g]
        assert np.max(np.abs(ratio - ratio[0])) < 1e-12
        expected = complex(p.rho1[0])  # nu = e1 on the +x face
        assert ratio[0] == pytest.approx(expected)

    def test_product_identity(self, mesh12):
        p = make_probe([1.5, -0.5, 1.0], 8.0)
        e1, _ = cgo_boundary_data(p, 1, mesh12)
        e2, _ = cgo_boundary_data(p, 2, mesh12)
        g = mesh12.on_gamma
        expected = np.exp(1j * (mesh12.centers[g] @ p.k))
        assert np.max(np.abs(e1[g] * e2[g] - expected)) < 1e-12 * np.max(np.abs(expected))

    def test_modulus_from_real_part(self, mesh12):
        p = make_probe([2.0, 0.0, 0.0], 8.0)
        e1, _ = cgo_boundary_data(p, 1, mesh12)
        g = mesh12.on_gamma
        expected = np.exp(mesh12.centers[g] @ (p.eta / 2.0))
        assert np.allclose(np.abs(e1[g]), expected, rtol=1e-12)

    def test_gamma_c_zeroed(self, dom12):
        patch = boundary_mesh(dom12, ("+y",))
        p = make_probe([1.0, 0.0, 0.0], 4.0)
        e, dn = cgo_boundary_data(p, 1, patch)
        assert np.all(e[~patch.on_gamma] == 0.0)
        assert np.all(dn[~patch.on_gamma] == 0.0)

    def test_overflow_warning(self, mesh12):
        # axis-aligned eta: max |Re(x.rho)| = L/4, so L = 130 exceeds 30
        with pytest.warns(OverflowRisk):
            cgo_boundary_data(make_probe([0.0, 0.0, 0.0], 130.0), 1, mesh12)

    def test_exponential_harmonic(self):
        # rho.rho = 0 makes e^{x.rho} harmonic: discrete Laplacian is
        # O(h^2) |rho|^2 |e^{x.rho}| and decays ~4x per h halving
        p = make_probe([1.0, 1.0, 0.0], 6.0)
        rho = p.rho1

        def lap_defect(h):
            x0 = np.array([0.11, -0.07, 0.19])
            acc = -6.0 * np.exp(x0 @ rho)
            for ax in range(3):
                for s in (1, -1):
                    e = np.zeros(3)
                    e[ax] = s * h
                    acc += np.exp((x0 + e) @ rho)
            return abs(acc) / h**2 / abs(np.exp(x0 @ rho))

        d1, d2 = lap_defect(0.02), lap_defect(0.01)
        norm2 = abs(complex(rho @ np.conj(rho)))
        assert d1 < 0.1 * norm2  # O(h^2) |rho|^2 scale
        assert 3.0 <= d1 / d2 <= 5.0


class TestFaddeevKernel:
    def test_small_rho_limit_against_radial_oracle(self):
        # 2 pi^2 / |x| = 4 pi / |x| * int_0^inf sin(u)/u du (radial reduction)
        sin_integral = quad(lambda u: np.sinc(u / np.pi), 0.0, 200.0, limit=400)[0]
        p = make_probe([1e-3, 0.0, 0.0], 0.0)
        for xv in ([0.3, 0.0, 0.0], [0.2, 0.4, -0.1], [0.0, 0.0, 1.0]):
            x = np.array(xv)
            oracle = 4.0 * np.pi / np.linalg.norm(x) * sin_integral
            got = faddeev_kernel(p.rho1, x)
            assert abs(got - oracle) / abs(oracle) < 0.05

    def test_matches_reference_quadrature(self):
        probe = make_probe([1.0, 0.5, 0.0], 2.0)
        for xv in ([0.5, 0.1, 0.2], [0.2, -0.5, 0.3]):
            x = np.array(xv)
            closed = faddeev_kernel(probe.rho1, x)
            ref = faddeev_kernel_reference(probe.rho1, x, radius=130.0,
                                           n_radial=500, n_polar=80, n_azimuth=128)
            assert abs(closed - ref) / abs(closed) < 0.1

    def test_invariance_under_frame_preserving_maps(self):
        # G depends on x only through (x.a_hat, x.b_hat, |x|)
        p = make_probe([1.0, 2.0, 0.0], 4.0)
        rho = p.rho1
        a = rho.real / np.linalg.norm(rho.real)
        b = rho.imag / np.linalg.norm(rho.imag)
        n = np.cross(a, b)
        x = 0.2 * a + 0.3 * b + 0.35 * n
        x_mirror = 0.2 * a + 0.3 * b - 0.35 * n
        g1 = faddeev_kernel(rho, x)
        g2 = faddeev_kernel(rho, x_mirror)
        assert abs(g1 - g2) < 1e-10 * abs(g1)

    def test_pde_annihilation(self):
        # the kernel of the operator with denominator xi^2 + 2 i rho.xi
        # satisfies (Delta - 2 rho.grad) G = 0 away from the origin
        p = make_probe([1.0, 1.0, 0.0], 2.0)
        rho = p.rho1 * (2.0 / np.linalg.norm(p.rho1))
        x0 = np.array([0.35, -0.25, 0.2])
        x0 *= 0.5 / np.linalg.norm(x0)
        h = 1e-3
        pts = [x0]
        for ax in range(3):
            for s in (1, -1):
                e = np.zeros(3)
                e[ax] = s * h
                pts.append(x0 + e)
        G = faddeev_kernel_batch(rho, np.array(pts))
        lap = (np.sum(G[1:]) - 6.0 * G[0]) / h**2
        grad = np.array(
            [(G[1] - G[2]) / (2 * h), (G[3] - G[4]) / (2 * h), (G[5] - G[6]) / (2 * h)]
        )
        assert abs(lap - 2.0 * (rho @ grad)) <= 1e-2 * abs(G[0])
        # the opposite conjugation does not annihilate it
        assert abs(lap + 2.0 * (rho @ grad)) > 1.0 * abs(G[0])

    def test_conjugated_kernel_is_real_and_consistent(self):
        p = make_probe([0.5, 0.5, 0.5], 6.0)
        X = np.array([[0.4, 0.1, -0.2], [-0.3, 0.2, 0.1]])
        core = faddeev_kernel_batch(p.rho2, X, conjugated=True)
        full = faddeev_kernel_batch(p.rho2, X)
        assert np.isrealobj(core)
        assert np.allclose(full, np.exp(X @ p.rho2) * core)

    def test_refinement_check_raises_on_coarse_quadrature(self):
        p = make_probe([2.0, 0.0, 0.0], 28.0)  # s ~ 14: steep exponential
        x = np.array([-0.8, 0.3, 0.1])
        with pytest.raises(QuadratureDiverged):
            faddeev_kernel(p.rho1, x, FaddeevQuadrature(nodes=4, check=True))

    def test_rejects_bad_arguments(self):
        p = make_probe([1.0, 0.0, 0.0], 2.0)
        with pytest.raises(ValueError):
            faddeev_kernel(p.rho1, [0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            faddeev_kernel(np.array([1.0 + 0j, 0.0, 0.0]), [0.1, 0.0, 0.0])
