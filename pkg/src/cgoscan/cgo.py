"""Orthogonal probe triads, CGO boundary traces, and the Faddeev-type kernel.

A probe for Fourier target k couples an orthogonal triad (eta, k, l) with
|eta|^2 = |k|^2 + |l|^2 into the complex vectors

    rho1 = eta/2 + i(k + l)/2,      rho2 = -eta/2 + i(k - l)/2,

which satisfy rho.rho = 0 (bilinear), so e^{x.rho} is harmonic, and
rho1 + rho2 = ik, so products of the two exponentials are Fourier modes
e^{ik.x}.  The triad completion is deterministic: l is the reference axis
e3 Gram-Schmidt-orthogonalized against k (fallback e1 when k is parallel
to e3) and eta points along k-hat x l-hat.

The kernel

    G_rho(x) = int_{R^3} e^{i x.xi} / (xi^2 + 2 i rho.xi) d xi

(unnormalized Fourier convention) is evaluated through an exact reduction:
with a = Re rho, b = Im rho, s = |a| = |b|, x1 = x.a/s, w = sqrt(|x|^2-x1^2),
a residue integration along the a-axis plus the polar angle integral gives

    G_rho(x) = 2 pi^2 e^{rho.x} [ 1/|x| - int_0^s J0(w r) e^{-r x1} dr ].

Each r-slice of the bracket is harmonic (J0 solves the Bessel equation), so
the identity (Delta - 2 rho.grad) G_rho = -(2 pi)^3 delta holds exactly, and
the s -> 0 limit recovers 2 pi^2 / |x|.  The remaining 1D integral of a
smooth integrand is done by Gauss-Legendre quadrature with a doubled-node
consistency check.  A truncated, damped 3D spherical quadrature is kept as
an independent reference for testing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import j0

from .errors import DegenerateProbe, OverflowRisk, QuadratureDiverged
from .medium import PartialBoundary

_E1 = np.array([1.0, 0.0, 0.0])
_E3 = np.array([0.0, 0.0, 1.0])

EXP_SAFE_MAX = 30.0  # |Re(x.rho)| beyond this risks float overflow downstream


@dataclass(frozen=True, eq=False)
class CgoProbe:
    """Probe triad (eta, k, l) and derived complex vectors rho1, rho2."""

    k: np.ndarray
    l: np.ndarray
    eta: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray

    @property
    def L(self) -> float:
        return float(np.linalg.norm(self.l))

    def rho(self, which: int) -> np.ndarray:
        if which not in (1, 2):
            raise ValueError("which must be 1 or 2")
        return self.rho1 if which == 1 else self.rho2

    def to_dict(self) -> dict:
        enc = lambda z: [[float(c.real), float(c.imag)] for c in z]
        return {
            "k": [float(v) for v in self.k],
            "l": [float(v) for v in self.l],
            "eta": [float(v) for v in self.eta],
            "rho1": enc(self.rho1),
            "rho2": enc(self.rho2),
        }

    @staticmethod
    def from_dict(d: dict) -> "CgoProbe":
        dec = lambda pairs: np.array([complex(re, im) for re, im in pairs])
        return CgoProbe(
            k=np.array(d["k"], dtype=float),
            l=np.array(d["l"], dtype=float),
            eta=np.array(d["eta"], dtype=float),
            rho1=dec(d["rho1"]),
            rho2=dec(d["rho2"]),
        )


def make_probe(k, L: float) -> CgoProbe:
    """Deterministic probe triad for Fourier target k and |l| = L.

    Raises DegenerateProbe for (k, L) = (0, 0).
    """
    k = np.asarray(k, dtype=float).reshape(3)
    L = float(L)
    if L < 0:
        raise ValueError("L = |l| must be >= 0")
    nk = float(np.linalg.norm(k))
    if nk == 0.0 and L == 0.0:
        raise DegenerateProbe("probe requires (k, |l|) != (0, 0)")
    if nk > 0.0:
        khat = k / nk
        ref = _E3 if np.linalg.norm(np.cross(k, _E3)) >= 1e-8 * nk else _E1
        u = ref - (ref @ khat) * khat
        uhat = u / np.linalg.norm(u)
        eta = np.sqrt(nk**2 + L**2) * np.cross(khat, uhat)
        l = L * uhat
    else:
        l = L * _E3
        eta = L * _E1
    rho1 = eta / 2.0 + 0.5j * (k + l)
    rho2 = -eta / 2.0 + 0.5j * (k - l)
    for arr in (k, l, eta, rho1, rho2):
        arr.flags.writeable = False
    return CgoProbe(k=k, l=l, eta=eta, rho1=rho1, rho2=rho2)


def probe_defects(probe: CgoProbe) -> dict:
    """Max absolute defects of the algebraic probe invariants."""
    k, l, eta = probe.k, probe.l, probe.eta
    r1, r2 = probe.rho1, probe.rho2
    return {
        "eta.k": abs(float(eta @ k)),
        "eta.l": abs(float(eta @ l)),
        "k.l": abs(float(k @ l)),
        "norm": abs(float(eta @ eta - k @ k - l @ l)),
        "rho1.rho1": abs(complex(r1 @ r1)),
        "rho2.rho2": abs(complex(r2 @ r2)),
        "sum": float(np.max(np.abs(r1 + r2 - 1j * k))),
    }


def cgo_boundary_data(
    probe: CgoProbe, which: int, patch: PartialBoundary
) -> tuple[np.ndarray, np.ndarray]:
    """Traces e^{x.rho} and rho.nu(x) e^{x.rho} at the Gamma cell centers.

    Both are full-length boundary vectors, identically zero on Gamma_c
    (trace-space convention).  Warns OverflowRisk when the real exponent
    exceeds the safe range.
    """
    rho = probe.rho(which)
    expo = patch.centers @ rho
    mre = float(np.max(np.abs(expo.real))) if len(expo) else 0.0
    if mre > EXP_SAFE_MAX:
        warnings.warn(
            f"max |Re(x.rho)| = {mre:.1f} > {EXP_SAFE_MAX:.0f}: CGO trace may overflow",
            OverflowRisk,
            stacklevel=2,
        )
    e = np.exp(expo)
    e[~patch.on_gamma] = 0.0
    dn = (patch.normals @ rho) * e
    return e, dn


@dataclass(frozen=True)
class FaddeevQuadrature:
    """Gauss-Legendre resolution for the kernel's 1D radial integral."""

    nodes: int = 64
    check: bool = True
    rel_tol: float = 0.05


@lru_cache(maxsize=32)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _kernel_core(rho: np.ndarray, X: np.ndarray, nodes: int) -> np.ndarray:
    """The real bracket 1/|x| - int_0^s J0(w r) e^{-r x1} dr."""
    a = rho.real
    b = rho.imag
    s = float(np.linalg.norm(a))
    sb = float(np.linalg.norm(b))
    if s == 0.0 or abs(complex(rho @ rho)) > 1e-10 * (s**2 + sb**2):
        raise ValueError("rho must satisfy rho.rho = 0 with rho != 0")
    ahat = a / s
    r2 = np.einsum("...i,...i->...", X, X)
    if np.any(r2 == 0.0):
        raise ValueError("kernel is singular at x = 0")
    x1 = X @ ahat
    w = np.sqrt(np.clip(r2 - x1**2, 0.0, None))
    nodes_t, weights = _gauss_legendre(nodes)
    rq = 0.5 * s * (nodes_t + 1.0)
    wq = 0.5 * s * weights
    acc = np.zeros_like(x1)
    for r_i, w_i in zip(rq, wq):
        acc += w_i * j0(w * r_i) * np.exp(-r_i * x1)
    return 1.0 / np.sqrt(r2) - acc


def faddeev_kernel_batch(
    rho,
    X: np.ndarray,
    quad: FaddeevQuadrature = FaddeevQuadrature(),
    conjugated: bool = False,
) -> np.ndarray:
    """Evaluate G_rho at points X of shape (..., 3).

    With ``conjugated=True`` returns the real-valued e^{-rho.x} G_rho(x)
    (the bounded kernel used for boundary collocation); otherwise the
    complex G_rho itself.  Raises QuadratureDiverged if doubling the node
    count changes the result by more than ``quad.rel_tol``.
    """
    rho = np.asarray(rho, dtype=complex).reshape(3)
    X = np.asarray(X, dtype=float)
    core = _kernel_core(rho, X, quad.nodes)
    if quad.check:
        fine = _kernel_core(rho, X, 2 * quad.nodes)
        # floor the comparison scale at a fraction of the kernel's natural
        # magnitude 1/|x| so oscillation zeros cannot trigger spuriously
        inv_r = 1.0 / np.sqrt(np.einsum("...i,...i->...", X, X))
        scale = np.maximum(np.abs(fine), 1e-6 * inv_r)
        if np.any(np.abs(core - fine) > quad.rel_tol * scale):
            worst = float(np.max(np.abs(core - fine) / scale))
            raise QuadratureDiverged(
                f"kernel quadrature refinement changed the result by {worst:.1%}"
            )
        core = fine
    pref = 2.0 * np.pi**2
    if conjugated:
        return pref * core
    return pref * np.exp(X @ rho) * core


def faddeev_kernel(
    rho, x, quad: FaddeevQuadrature = FaddeevQuadrature()
) -> complex:
    """G_rho at a single point x != 0 (pre: rho.rho = 0, rho != 0)."""
    return complex(faddeev_kernel_batch(rho, np.asarray(x, dtype=float).reshape(3), quad))


def faddeev_kernel_reference(
    rho,
    x,
    radius: float | None = None,
    n_radial: int = 220,
    n_polar: int = 64,
    n_azimuth: int = 128,
    damping: float | None = None,
) -> complex:
    """Truncated, damped 3D spherical quadrature of the defining integral.

    The integration variable is shifted by Im rho (xi = Im rho + u), which
    makes the denominator |u|^2 - s^2 + 2 i s |u| cos(theta) independent of
    the azimuth and collapses its zero set to the single point
    (|u|, theta) = (s, pi/2).  Panels of the (|u|, theta) product grid are
    split there so Gauss-Legendre nodes cluster around the integrable
    singularity.  The tail is damped by exp(-eps |u|^2), eps = damping
    (default 9/R^2), truncated at |u| = radius (default 40 |rho|).  Slow;
    used only as an independent cross-check of the reduced kernel.
    """
    rho = np.asarray(rho, dtype=complex).reshape(3)
    x = np.asarray(x, dtype=float).reshape(3)
    a, b = rho.real, rho.imag
    s = float(np.linalg.norm(a))
    R = 40.0 * float(np.sqrt(2.0) * s) if radius is None else float(radius)
    eps = 9.0 / R**2 if damping is None else float(damping)

    f3 = a / s  # polar axis along Re rho: denominator depends on u.f3 only
    f1 = b / np.linalg.norm(b)
    f2 = np.cross(f3, f1)

    def _panel_nodes(edges, n):
        nodes, weights = [], []
        gl_x, gl_w = _gauss_legendre(n)
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (hi - lo) * (gl_x + 1.0) + lo)
            weights.append(0.5 * (hi - lo) * gl_w)
        return np.concatenate(nodes), np.concatenate(weights)

    r_u, rw = _panel_nodes([0.0, s, 3.0 * s, R], n_radial)
    theta, tw = _panel_nodes([0.0, np.pi / 2.0, np.pi], n_polar)
    phi = np.linspace(0.0, 2.0 * np.pi, n_azimuth, endpoint=False)
    pw = 2.0 * np.pi / n_azimuth

    st, ct = np.sin(theta), np.cos(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    x1, x2, x3 = x @ f1, x @ f2, x @ f3
    phase_angle = x1 * st[:, None] * cp[None, :] + x2 * st[:, None] * sp[None, :]

    total = 0.0 + 0.0j
    for r_i, rw_i in zip(r_u, rw):
        den = r_i**2 - s**2 + 2.0j * s * r_i * ct
        osc = np.exp(1j * r_i * (phase_angle + x3 * ct[:, None]))
        total += (
            rw_i
            * r_i**2
            * np.exp(-eps * r_i**2)
            * np.sum(osc / den[:, None] * (st * tw)[:, None] * pw)
        )
    return complex(np.exp(1j * (b @ x)) * total)
