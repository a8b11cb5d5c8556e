"""Dual-energy CT reconstruction with learned convolutional filter banks.

The package trains sparsifying filter banks from paired low/high-energy
images, either per channel or jointly with coupled sparse codes, and
uses them as regularizers in bounded Poisson (or weighted least
squares) reconstruction.  TV, joint TV and prior-free baselines plus a
replicate-sweep harness with bias/noise curves round out the toolkit.
"""

__version__ = "0.1.0"

from .learning import (TrainConfig, caol_train, hard_threshold, mcaol_train,
                       multi_hard_threshold, project_tight_frame, train_joint)
from .metrics import abs_bias, nrmse, std_metric, support_region
from .optim import MinimizeResult, SolverConfig, minimize
from .phantom import (PRESETS, Ellipse, Grating, StudyPreset, get_preset,
                      make_phantom, make_smooth_phantom, training_phantoms)
from .physics import (SourceModel, mean_counts, poisson_nll,
                      poisson_nll_grad, poisson_nll_with_grad, pwls_transform,
                      pwls_with_grad, sample_poisson)
from .projector import (ScanGeometry, SystemMatrix, back_project,
                        build_system_matrix, cached_system_matrix,
                        forward_project, geometry_hash)
from .recon import (ReconConfig, caol_pwls_reconstruct, caol_reconstruct,
                    jtv_penalty, jtv_reconstruct, mcaol_reconstruct,
                    mle_reconstruct, tv_penalty, tv_reconstruct)
from .sweep import SweepSpec, run_sweep
from .types import (ChannelPair, FeatureStack, FilterBank, Image, Sinogram,
                    load_bank, load_image, load_sinogram, save_bank,
                    save_image, save_sinogram)

__all__ = [
    "__version__",
    "ChannelPair", "FeatureStack", "FilterBank", "Image", "Sinogram",
    "load_bank", "load_image", "load_sinogram",
    "save_bank", "save_image", "save_sinogram",
    "ScanGeometry", "SystemMatrix", "build_system_matrix",
    "cached_system_matrix", "forward_project", "back_project",
    "geometry_hash",
    "SourceModel", "mean_counts", "sample_poisson",
    "poisson_nll", "poisson_nll_grad", "poisson_nll_with_grad",
    "pwls_transform", "pwls_with_grad",
    "TrainConfig", "caol_train", "mcaol_train", "train_joint",
    "hard_threshold", "multi_hard_threshold", "project_tight_frame",
    "SolverConfig", "MinimizeResult", "minimize",
    "ReconConfig", "mcaol_reconstruct", "caol_reconstruct",
    "caol_pwls_reconstruct", "mle_reconstruct", "tv_reconstruct",
    "jtv_reconstruct", "tv_penalty", "jtv_penalty",
    "Ellipse", "Grating", "StudyPreset", "PRESETS", "get_preset",
    "make_phantom", "make_smooth_phantom", "training_phantoms",
    "abs_bias", "std_metric", "support_region", "nrmse",
    "SweepSpec", "run_sweep",
]
