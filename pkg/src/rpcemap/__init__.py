"""MAP estimation by Bayesian optimization with sparse Bayesian rational PCE surrogates."""

from .errors import (ConfigError, FormatError, NumericalError, RpceError, SingularDenominatorError,
                     TmcmcError, VacuousModelError)
from .pce_basis import MarginalPrior, basis_matrix, total_degree_indices
from .rpce import RpceModel, deserialize, evaluate, serialize
from .sbl import TrainerConfig, TrainingData, train
from .inverse import CorrelatedError, IidError, InverseProblem, ObservationSet
from .bayesopt import ActiveLearningConfig, reference_map, run_active_learning

__all__ = [
    "ActiveLearningConfig", "ConfigError", "CorrelatedError", "FormatError", "IidError", "InverseProblem",
    "MarginalPrior", "NumericalError", "ObservationSet", "RpceError", "RpceModel", "SingularDenominatorError",
    "TmcmcError", "TrainerConfig", "TrainingData", "VacuousModelError", "basis_matrix", "deserialize",
    "evaluate", "reference_map", "run_active_learning", "serialize", "total_degree_indices", "train",
]
