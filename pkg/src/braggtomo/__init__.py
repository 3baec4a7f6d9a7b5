"""braggtomo: 2-D Bragg scatter tomography toolkit.

Forward operator assembly, analytic and Monte Carlo measurement simulation,
microlocal sinogram filtering, dictionary/multibang and filtered-TV
reconstruction, and edge-F1 scoring.
"""

__version__ = "0.1.0"

from .forward import BraggOperator, CharacteristicLibrary, ImageGrid, build_library, build_operator, gram, uniform_grid
from .geometry import ScannerConfig, paper_scanner
from .materials import AttenuationTable, BraggPeakList, GaussianMixtureParams
from .metrics import edge_map, f1_score, relative_ls_error
from .recon import ReconParams, ReconResult, run_2dbsr, run_ftv, run_two_stage
from .simulate import McConfig, PhantomObject, PhantomSpec, Tally, analytic_data, make_phantom_image, mc_run
from .sinogram import Sinogram, filter_sinogram, psi

__all__ = [
    "AttenuationTable",
    "BraggOperator",
    "BraggPeakList",
    "CharacteristicLibrary",
    "GaussianMixtureParams",
    "ImageGrid",
    "McConfig",
    "PhantomObject",
    "PhantomSpec",
    "ReconParams",
    "ReconResult",
    "ScannerConfig",
    "Sinogram",
    "Tally",
    "analytic_data",
    "build_library",
    "build_operator",
    "edge_map",
    "f1_score",
    "filter_sinogram",
    "gram",
    "make_phantom_image",
    "mc_run",
    "paper_scanner",
    "psi",
    "relative_ls_error",
    "run_2dbsr",
    "run_ftv",
    "run_two_stage",
    "uniform_grid",
]
