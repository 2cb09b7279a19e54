"""Progressive latent-ODE forecasting for irregularly sampled time series."""

from .autodiff import (
    NonScalarRootError,
    Parameter,
    ShapeMismatchError,
    Tape,
    Tensor,
    backward,
    finite_diff_check,
    forward_op,
)
from .curriculum import CurriculumPlan, alpha_at, lowpass, stage_dataset
from .data import (
    Dataset,
    TimeSeriesSample,
    gen_synthetic,
    gen_synthetic_suite,
    ingest_pems,
    irregular_subsample,
    load_dataset,
    normalize,
    save_dataset,
)
from .model import ForecastRequest, LatentOdeModel
from .ode import IntegrationDivergedError, SolveSpec, integrate_path, rk4_step

__all__ = [
    "CurriculumPlan",
    "Dataset",
    "ForecastRequest",
    "IntegrationDivergedError",
    "LatentOdeModel",
    "NonScalarRootError",
    "Parameter",
    "ShapeMismatchError",
    "SolveSpec",
    "Tape",
    "Tensor",
    "TimeSeriesSample",
    "alpha_at",
    "backward",
    "finite_diff_check",
    "forward_op",
    "gen_synthetic",
    "gen_synthetic_suite",
    "ingest_pems",
    "integrate_path",
    "irregular_subsample",
    "load_dataset",
    "lowpass",
    "normalize",
    "rk4_step",
    "save_dataset",
    "stage_dataset",
]

__version__ = "0.1.0"
