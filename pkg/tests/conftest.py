from __future__ import annotations

import numpy as np
import pytest

from cgoscan.forward import DnMap, assemble
from cgoscan.medium import (
    FACE_NAMES,
    Domain,
    Inclusion,
    boundary_mesh,
    make_medium,
)


def weighted_correlation(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> float:
    """Modulus of the normalized complex inner product over a cell set."""
    num = abs(np.sum(w * a * np.conj(b)))
    den = np.sqrt(np.sum(w * np.abs(a) ** 2)) * np.sqrt(np.sum(w * np.abs(b) ** 2))
    return float(num / den)


@pytest.fixture(scope="session")
def dom12() -> Domain:
    return Domain(grid_n=12)


@pytest.fixture(scope="session")
def mesh12(dom12):
    return boundary_mesh(dom12, FACE_NAMES)


@pytest.fixture(scope="session")
def laplace12(dom12):
    """n = 0 system (Laplace operator) on the 12^3 grid."""
    return assemble(make_medium(dom12, 0.0), omega=1.0)


@pytest.fixture(scope="session")
def ball_pair12(dom12, mesh12):
    """Single-ball medium at grid 12 with its perturbed/background DN maps."""
    inc = Inclusion(center=(0.125, 0.0, -0.125), alpha=0.06, shape="ball", index=2.0)
    med = make_medium(dom12, 1.0, [inc], c0=0.15)
    sys_p = assemble(med, omega=1.0, perturbed=True)
    sys_b = assemble(med, omega=1.0, perturbed=False)
    return med, DnMap(sys_p, mesh12), DnMap(sys_b, mesh12)
