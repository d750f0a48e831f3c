"""Computational domain, measurement patch, and perturbed refractive index.

The domain is an axis-aligned box centered at the origin, discretized into
``grid_n`` voxels per axis.  The boundary is tiled by face cells (one square
cell of area h^2 per voxel face touching the boundary), which carry the
outward normals and quadrature weights for all surface integrals.  A subset
of the six box faces is flagged as the measurement patch Gamma; the rest is
its exact complement Gamma_c.

A medium is a background index field n plus a list of small inclusions
``z_j + alpha*B_j`` (B_j a unit ball or unit cube), each with a constant
index value ``n_j``.  The perturbed field n_alpha equals n_j on voxels whose
centers fall inside inclusion j and the background elsewhere.  Placement
constraints: pairwise center separation >= c0 and center distance to the
boundary >= c0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyGamma, OverlapError

FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")

_FACE_AXIS = (0, 0, 1, 1, 2, 2)
_FACE_SIGN = (+1, -1, +1, -1, +1, -1)

BALL_VOLUME = 4.0 * np.pi / 3.0  # |B| of the unit ball
CUBE_VOLUME = 1.0  # |B| of the unit cube


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box [-half_side, half_side]^3 with a cubic voxel grid."""

    half_side: float = 0.5
    grid_n: int = 32

    def __post_init__(self):
        if self.grid_n < 8:
            raise ValueError(f"grid_n must be >= 8, got {self.grid_n}")
        if self.half_side <= 0:
            raise ValueError("half_side must be positive")

    @property
    def side(self) -> float:
        return 2.0 * self.half_side

    @property
    def h(self) -> float:
        """Grid spacing (= voxel edge = boundary cell edge)."""
        return self.side / self.grid_n

    @property
    def axis_centers(self) -> np.ndarray:
        """Voxel center coordinates along one axis, shape (grid_n,)."""
        n = self.grid_n
        return -self.half_side + (np.arange(n) + 0.5) * self.h

    def voxel_centers(self) -> np.ndarray:
        """All voxel centers, shape (grid_n^3, 3), C-order over (x, y, z)."""
        c = self.axis_centers
        X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from interior point(s) to the nearest box face."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.min(self.half_side - np.abs(p), axis=-1)


@dataclass(frozen=True)
class Inclusion:
    """Small inhomogeneity ``center + alpha * B`` with constant index value."""

    center: tuple[float, float, float]
    alpha: float
    shape: str = "ball"  # "ball" (unit radius) or "cube" (unit side)
    index: float = 2.0

    def __post_init__(self):
        if self.shape not in ("ball", "cube"):
            raise ValueError(f"unknown inclusion shape {self.shape!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def volume_factor(self) -> float:
        """|B|: volume of the unit-scale reference shape."""
        return BALL_VOLUME if self.shape == "ball" else CUBE_VOLUME

    @property
    def volume(self) -> float:
        """Exact volume alpha^3 |B| of the scaled inclusion."""
        return self.alpha**3 * self.volume_factor

    @property
    def support_radius(self) -> float:
        """Circumscribed radius of the scaled shape around its center."""
        if self.shape == "ball":
            return self.alpha
        return self.alpha * np.sqrt(3.0) / 2.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Center-in-shape membership test for points of shape (..., 3)."""
        d = np.asarray(points, dtype=float) - np.asarray(self.center)
        if self.shape == "ball":
            return np.einsum("...i,...i->...", d, d) <= self.alpha**2
        return np.max(np.abs(d), axis=-1) <= self.alpha / 2.0


class PartialBoundary:
    """Boundary cell mesh with a Gamma/Gamma_c split.

    All six faces are always meshed (the solver needs the full boundary);
    cells on the faces listed in ``faces`` form the measurement patch Gamma.
    Every boundary cell belongs to exactly one of Gamma, Gamma_c.

    Attributes
    ----------
    centers : (M, 3) cell centers on the box surface
    normals : (M, 3) outward unit normals (constant per face)
    weights : (M,) quadrature weights, h^2 each; sum = area of the boundary
    face_of : (M,) face index 0..5 per cell
    on_gamma : (M,) bool, True for Gamma cells
    inner1, inner2 : (M,) flat voxel indices at distance h/2 and 3h/2 inward
    """

    def __init__(self, domain: Domain, faces: Sequence[str]):
        faces = tuple(faces)
        unknown = [f for f in faces if f not in FACE_NAMES]
        if unknown:
            raise ValueError(f"unknown face name(s) {unknown}; valid: {FACE_NAMES}")
        if not faces:
            raise EmptyGamma("measurement patch must contain at least one face")
        self.domain = domain
        self.faces = tuple(f for f in FACE_NAMES if f in faces)

        n = domain.grid_n
        c = domain.axis_centers
        A, B = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        a, b = A.ravel(), B.ravel()

        centers, normals, face_of, inner1, inner2 = [], [], [], [], []
        for fi, name in enumerate(FACE_NAMES):
            axis, sign = _FACE_AXIS[fi], _FACE_SIGN[fi]
            plane = np.array([0, 1, 2])
            inplane = plane[plane != axis]  # two in-plane axes, increasing
            pts = np.empty((n * n, 3))
            pts[:, axis] = sign * domain.half_side
            pts[:, inplane[0]] = c[a]
            pts[:, inplane[1]] = c[b]
            nu = np.zeros((n * n, 3))
            nu[:, axis] = sign
            idx3 = np.empty((n * n, 3), dtype=np.int64)
            idx3[:, axis] = (n - 1) if sign > 0 else 0
            idx3[:, inplane[0]] = a
            idx3[:, inplane[1]] = b
            jdx3 = idx3.copy()
            jdx3[:, axis] = (n - 2) if sign > 0 else 1
            centers.append(pts)
            normals.append(nu)
            face_of.append(np.full(n * n, fi, dtype=np.int64))
            inner1.append((idx3[:, 0] * n + idx3[:, 1]) * n + idx3[:, 2])
            inner2.append((jdx3[:, 0] * n + jdx3[:, 1]) * n + jdx3[:, 2])

        self.centers = np.concatenate(centers)
        self.normals = np.concatenate(normals)
        self.face_of = np.concatenate(face_of)
        self.inner1 = np.concatenate(inner1)
        self.inner2 = np.concatenate(inner2)
        self.weights = np.full(len(self.centers), domain.h**2)
        gamma_faces = {FACE_NAMES.index(f) for f in self.faces}
        self.on_gamma = np.isin(self.face_of, sorted(gamma_faces))

    @property
    def n_cells(self) -> int:
        return len(self.centers)

    @property
    def gamma_indices(self) -> np.ndarray:
        return np.flatnonzero(self.on_gamma)

    @property
    def n_gamma(self) -> int:
        return int(np.count_nonzero(self.on_gamma))

    @property
    def area(self) -> float:
        """Total meshed boundary area (all six faces)."""
        return float(np.sum(self.weights))

    @property
    def gamma_area(self) -> float:
        return float(np.sum(self.weights[self.on_gamma]))

    @property
    def gamma_weights(self) -> np.ndarray:
        return self.weights[self.on_gamma]

    def same_cells(self, other: "PartialBoundary") -> bool:
        """Same cell enumeration (same domain grid); Gamma flags may differ."""
        return self.domain == other.domain

    def same_mesh(self, other: "PartialBoundary") -> bool:
        return self.same_cells(other) and self.faces == other.faces


def boundary_mesh(domain: Domain, faces: Sequence[str]) -> PartialBoundary:
    """Mesh the box boundary and flag ``faces`` as the patch Gamma."""
    return PartialBoundary(domain, faces)


@dataclass
class PlacementViolation:
    kind: str  # "pair" | "boundary" | "containment"
    inclusions: tuple[int, ...]
    measured: float
    required: float

    def __str__(self) -> str:
        who = "/".join(str(i + 1) for i in self.inclusions)
        return f"{self.kind} constraint violated for inclusion(s) {who}: {self.measured:.4g} < {self.required:.4g}"


@dataclass
class PlacementReport:
    ok: bool
    violations: list[PlacementViolation] = field(default_factory=list)

    def __str__(self) -> str:
        if self.ok:
            return "placement ok"
        return "; ".join(str(v) for v in self.violations)


@dataclass
class RefractiveMedium:
    """Background index on the voxel grid plus the inclusion list."""

    domain: Domain
    background: np.ndarray  # (n, n, n) real samples at voxel centers
    inclusions: tuple[Inclusion, ...] = ()
    c0: float = 0.15

    def __post_init__(self):
        n = self.domain.grid_n
        self.background = np.asarray(self.background, dtype=float)
        if self.background.shape != (n, n, n):
            raise ValueError(
                f"background shape {self.background.shape} != {(n, n, n)}"
            )
        self.inclusions = tuple(self.inclusions)

    def without_inclusions(self) -> "RefractiveMedium":
        return RefractiveMedium(self.domain, self.background, (), self.c0)

    def background_at(self, points: np.ndarray) -> np.ndarray:
        """Background value at the voxel containing each point."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n, h = self.domain.grid_n, self.domain.h
        idx = np.clip(((p + self.domain.half_side) / h).astype(int), 0, n - 1)
        return self.background[idx[:, 0], idx[:, 1], idx[:, 2]]


def make_medium(
    domain: Domain,
    background: float | np.ndarray | Callable = 1.0,
    inclusions: Sequence[Inclusion] = (),
    c0: float = 0.15,
) -> RefractiveMedium:
    """Build a medium from a scalar, array, or callable background."""
    n = domain.grid_n
    if callable(background):
        c = domain.axis_centers
        X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
        bg = np.asarray(background(X, Y, Z), dtype=float)
    elif np.isscalar(background):
        bg = np.full((n, n, n), float(background))
    else:
        bg = np.asarray(background, dtype=float)
    return RefractiveMedium(domain, bg, tuple(inclusions), c0)


def validate_placement(medium: RefractiveMedium) -> PlacementReport:
    """Check the separation constraints on inclusion centers.

    Returns an ok report iff all pairwise center separations and all
    center-to-boundary distances are >= c0, and every scaled inclusion lies
    strictly inside the domain.  Violations are listed, never raised.
    """
    violations: list[PlacementViolation] = []
    incs = medium.inclusions
    c0 = medium.c0
    for i in range(len(incs)):
        for j in range(i + 1, len(incs)):
            d = float(
                np.linalg.norm(np.subtract(incs[i].center, incs[j].center))
            )
            if d < c0:
                violations.append(PlacementViolation("pair", (i, j), d, c0))
    for i, inc in enumerate(incs):
        bd = float(medium.domain.boundary_distance(inc.center)[0])
        if bd < c0:
            violations.append(PlacementViolation("boundary", (i,), bd, c0))
        if bd <= inc.support_radius:
            violations.append(
                PlacementViolation("containment", (i,), bd, inc.support_radius)
            )
    return PlacementReport(ok=not violations, violations=violations)


def build_perturbed_index(medium: RefractiveMedium) -> np.ndarray:
    """Voxel field n_alpha: inclusion value inside each z_j + alpha*B_j
    (center-in-shape membership), background elsewhere.

    Raises OverlapError if two inclusions claim the same voxel.
    """
    n_alpha = medium.background.copy()
    n = medium.domain.grid_n
    pts = medium.domain.voxel_centers()
    claimed = np.zeros(n**3, dtype=bool)
    for inc in medium.inclusions:
        inside = inc.contains(pts)
        if np.any(claimed & inside):
            raise OverlapError(
                "two inclusions overlap on the voxel grid (alpha too large for c0)"
            )
        claimed |= inside
        n_alpha.ravel()[inside] = inc.index
    return n_alpha
