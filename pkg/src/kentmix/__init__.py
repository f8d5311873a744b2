"""Kent (FB5) and von Mises-Fisher modelling of directional data on the sphere."""

__version__ = "0.1.0"

from kentmix.geometry import (
    OrientationAngles,
    angles_from_axes,
    axes_from_angles,
    cartesian_to_spherical,
    spherical_to_cartesian,
)
from kentmix.norm_series import NormTerms, SeriesConfig, log_bessel_i, norm_terms
from kentmix.distributions import (
    KentParams,
    VmfParams,
    kent_kl,
    kent_log_density,
    kent_moments,
    kent_sample,
    vmf_kl,
    vmf_log_density,
    vmf_sample,
)
from kentmix.estimators import (
    PriorSpec,
    SufficientStats,
    fisher_info,
    map_estimate,
    message_length,
    ml_estimate,
    mml_estimate,
    moment_estimate,
    negative_log_likelihood,
    sufficient_stats,
)
from kentmix.mixture import CriterionKind, Family, MixtureModel, em_fit, mixture_message_length, search_optimal
from kentmix.evaluation import StudyConfig, bias_mse, kl_win_fractions, lrt, run_study
from kentmix.protein_io import CaTrace, DirectionalDataset, directions_from_trace, null_model_bits, parse_ca_file


__all__ = [
    "CaTrace",
    "CriterionKind",
    "DirectionalDataset",
    "Family",
    "KentParams",
    "MixtureModel",
    "NormTerms",
    "OrientationAngles",
    "PriorSpec",
    "SeriesConfig",
    "StudyConfig",
    "SufficientStats",
    "VmfParams",
    "angles_from_axes",
    "axes_from_angles",
    "bias_mse",
    "cartesian_to_spherical",
    "directions_from_trace",
    "em_fit",
    "fisher_info",
    "kent_kl",
    "kent_log_density",
    "kent_moments",
    "kent_sample",
    "kl_win_fractions",
    "log_bessel_i",
    "lrt",
    "map_estimate",
    "message_length",
    "mixture_message_length",
    "ml_estimate",
    "mml_estimate",
    "moment_estimate",
    "negative_log_likelihood",
    "norm_terms",
    "null_model_bits",
    "parse_ca_file",
    "run_study",
    "search_optimal",
    "spherical_to_cartesian",
    "sufficient_stats",
    "vmf_kl",
    "vmf_log_density",
    "vmf_sample",
]
