"""Counterfactual outcome trajectories under longitudinal modified
treatment policies: sequential doubly robust estimation, global and
simultaneous inference on rates of change, and a replication study
harness with an analytic-truth benchmark."""

__version__ = "0.1.0"

from .data import (CsvSchema, LongitudinalDataset, StackedEstimate,
                   TrajectoryEstimate, history_feature_names, history_features,
                   load_csv, write_csv)
from .errors import (CalibrationError, ComputationError, ConfigurationError,
                     DataError, DegenerateContrastError, EstimationError,
                     InputError, MtptrajError, NumericsError, PolicyError,
                     SchemaError, SingularCorrelationError)
from .inference import (ContrastMatrix, ContrastResult, CovarianceEstimate,
                        LocalTest, MaxTest, TestReport, WaldTest,
                        build_contrast, contrast_estimate, empirical_covariance,
                        full_report, local_tests, max_test, simultaneous_ci,
                        wald_test)
from .learners import (BoostedTreesLearner, FoldAssignment, LogisticLearner,
                       OlsLearner, StackLearner, crossfit, fit_boosted_stumps,
                       fit_ols, fit_stack, fold_assignment, nnls)
from .mvn import (MvnConfig, chisq_cdf, chisq_quantile, mvn_rect_prob,
                  mvn_rect_quantile, normal_cdf, normal_quantile)
from .policy import (Policy, additive_shift, apply, apply_to_data, custom,
                     identity, is_identity, parse_policy, threshold)
from .sdr import (EifColumn, NuisanceBundle, OracleNuisances, SdrConfig,
                  assemble_eif, estimate_pair, estimate_ratio,
                  estimate_trajectory, sequential_regression)
from .simulation import (AnalyticTruth, DgpParams, StudyGrid, StudyTables,
                         analytic_truth, calibrate_gamma, calibrated,
                         desk_scale_grid, generate, oracle_nuisances,
                         run_study, study_policy)
