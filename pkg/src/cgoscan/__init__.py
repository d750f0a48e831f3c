"""Reconstruction of small refractive-index inclusions from partial
Dirichlet-to-Neumann boundary data at a fixed frequency.

The pipeline: a voxel phantom (``medium``), a factorized finite-difference
Helmholtz forward model realizing the partial DN maps (``forward``),
orthogonal probe triads and the Faddeev-type kernel (``cgo``), the
double-layer boundary operator and trace-recovery solves (``boundary_ops``),
the Fourier data functional with inverse-transform localization and value
recovery (``reconstruct``), and a config-driven CLI (``cli``).
"""

from .medium import (
    Domain,
    Inclusion,
    PartialBoundary,
    RefractiveMedium,
    boundary_mesh,
    build_perturbed_index,
    make_medium,
    validate_placement,
)
from .forward import (
    BoundaryTrace,
    DnMap,
    HelmholtzSystem,
    add_measurement_noise,
    apply_dn,
    assemble,
    dn_difference_apply,
    neumann_trace,
    solve_dirichlet,
)
from .cgo import (
    CgoProbe,
    FaddeevQuadrature,
    cgo_boundary_data,
    faddeev_kernel,
    make_probe,
)
from .boundary_ops import (
    NRhoOperator,
    assemble_n_rho,
    lemma1_solve,
    lemma2_scaling_report,
    solve_exterior_kernel,
)
from .reconstruct import (
    FourierSamples,
    IndexContrastOracle,
    ReconstructionResult,
    calibrate_kappa,
    fourier_sample,
    invert_and_localize,
    recover_values,
    scan_kgrid,
    theorem1_diagnostic,
)
from .config import RunConfig, parse_config
from .pipeline import run_pipeline

__version__ = "0.1.0"
