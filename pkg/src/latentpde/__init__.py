"""Discover flow models with latent pressure from sparse velocity data."""
from .experiments import (EnsembleSpec, SweepResult, run_ensemble, sweep_noise, sweep_order,
                          xi_analysis)
from .field import FlowSeries, GridSpec, NoiseSpec, add_noise, read_series, write_series
from .kolmogorov import (ModelParams, SimConfig, autocorrelation_time, max_divergence,
                         simulate)
from .library import TERM_NAMES, SamplePlan, TermLibrary, build_library
from .localpoly import LocalPolyFitter, WindowSpec, fit_window, jet_at_center
from .regression import RegressionConfig, RegressionResult, format_model, threshold_iterate

__version__ = "0.1.0"
