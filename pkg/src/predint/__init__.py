"""Prediction intervals, confidence intervals and heterogeneity estimates
for random-effects meta-analysis."""

__version__ = "0.1.0"

from .conversion import BinaryStudySet, convert_bin
from .errors import (
    ConvergenceWarning,
    DataError,
    DomainError,
    MetaAnalysisError,
    MonteCarloWarning,
    NumericalError,
    RangeError,
)
from .forest import forest_svg
from .heterogeneity import HeterogeneityEstimate, q_statistic, tau2_dl, tau2_reml, tau2_udl
from .intervals import (
    BootstrapConfig,
    IntervalResult,
    ci_wald,
    confidence_interval,
    interval,
    percentile,
    pi_hts,
    pi_nnf,
    pi_pr,
    t_quantile,
)
from .io import load_dataset, parse_csv, write_csv
from .model import PooledEffect, StudySet, Weights, i_squared, pooled_mean, weights
from .qform import QFormSpec, QSpectrum, h_function, h_inverse, q_cdf, sample_tau2, spectrum
from .variance import VarianceEstimate, kr_information, var_approx, var_hk, var_kr, var_sj
