"""Random Forest kernels: partitions, Gram matrices, RKHS analytics and their applications."""
from .forest import Forest, GramBundle, cross_gram, fit_forest, gram, gram_row_means, predict, weight_matrix, weight_vector
from .geometry import Hyperrectangle, NotCoveredError, Partition, contains, locate, rho_distance, split
from .igb import LOGISTIC, SQUARED, FlowTrace, LossFn, igb_flow, rn_derivative
from .importance import ImportanceReport, gvi, mda, mdi
from .kpca import KpcaModel, kpca_fit, kpca_project, linear_probe, silhouette
from .rkhs import (
    RkhsElement, SpectrumReport, effective_sample_size, forest_rkhs_norm_sq, kernel_operator_spectrum,
    kme_mmd, penalized_objective, refinement_gap, variance_decomposition_check,
)
from .scenarios import Scenario, generate_scenario
from .trees import Dataset, FittedTree, GrowConfig, SplitScheme, grow_partition, histogram_fit

__version__ = "0.1.0"
