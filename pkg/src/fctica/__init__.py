"""Template ICA with a population prior on functional connectivity."""
from .container import read_container, write_container
from .evaluate import ci_coverage, icc, mae, mse, percent_change
from .exceptions import (
    ConfigError,
    ContainerFormatError,
    ConvergenceError,
    DataError,
    FcticaError,
    NumericalError,
)
from .fc_prior import (
    FcSampleSet,
    IwPrior,
    PcholModel,
    build_pchol_model,
    fit_iw_prior,
    sample_pchol,
)
from .posterior import FcPosterior, fc_credible_intervals, posterior_fc, sample_posterior_a
from .regression import center_rows, dual_regression, tica_em
from .simulate import StudyConfig, build_study
from .templates import FcTrainingSet, SpatialTemplate, estimate_templates, summarize_sessions, templates_from_summaries
from .vb import VbOptions, effective_sample_size, neumann_inverse, run_vb

__version__ = "0.1.0"
