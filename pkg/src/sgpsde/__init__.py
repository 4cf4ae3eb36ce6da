"""Sparse Gaussian-process estimation of drift and diffusion in scalar SDEs."""
from .dataset import Dataset
from .errors import (ConfigurationError, DecompositionError, FitError, IngestionError,
                     InferenceError, ModelFileError, NumericalError, PreprocessingError,
                     SgpsdeError, SimulationError, UsageError, VersionError)
from .fit import FitConfig, FitResult, fit, heuristic_m, init_diffusion_prior, init_pseudo_inputs
from .inference import SgpState
from .kernels import KernelSpec
from .predict import PosteriorCurve, predict, predict_diffusion, predict_drift
from .simulator import ModelSpec, SimConfig, builtin_model, simulate
from .baselines import binning_estimator, nw_estimator
from .evaluation import ErrorTable, benchmark, benchmark_fit_config, integrated_error
from .fileio import load_config, load_model, load_series, log_returns, save_model

__version__ = "0.1.0"
