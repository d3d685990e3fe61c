"""Cox-based semi-Markov multistate models for multicohort event-history data."""

__version__ = "0.1.0"

from .cohort import (  # noqa: E402
    HazardRatioReport,
    MultistateFit,
    compare_entry_time_forms,
    entry_time_hr,
    fit_multistate,
    forest_table,
    hr_cohort_given_covariate,
    hr_covariate_given_cohort,
    hr_cross_cohort_time_dependent,
    select_interaction,
    sojourn_reparameterization,
)
from .cox import (  # noqa: E402
    CoxFit,
    FitError,
    MonotoneLikelihoodError,
    RankDeficiencyError,
    breslow_baseline,
    fit_cox,
    likelihood_ratio_test,
    ph_score_process,
)
from .design import TransitionModelSpec  # noqa: E402
from .events import (  # noqa: E402
    center_covariates,
    check_min_events,
    impute_recovery_sojourn,
    prepare_long,
    reconstruct_histories,
)
from .markov_test import (  # noqa: E402
    LandmarkGrid,
    MarkovTestResult,
    global_markov_test,
    logrank_U,
    summarize_trace,
    wild_bootstrap_null,
)
from .prediction import (  # noqa: E402
    OccupationCurve,
    SubjectProfile,
    aalen_johansen,
    dynamic_prediction,
    evaluate_at,
    simulate_occupation,
)
from .simulate import GeneratorSpec, make_div3w_replica, oracle_occupation, simulate_dataset  # noqa: E402
from .splines import CovariateTransform, spline_basis  # noqa: E402
from .states import HistoryError, StateSpace, SubjectHistory, covid_state_space  # noqa: E402

__all__ = [
    "CoxFit", "CovariateTransform", "FitError", "GeneratorSpec", "HazardRatioReport", "HistoryError",
    "LandmarkGrid", "MarkovTestResult", "MonotoneLikelihoodError", "MultistateFit", "OccupationCurve",
    "RankDeficiencyError", "StateSpace", "SubjectHistory", "SubjectProfile", "TransitionModelSpec",
    "aalen_johansen", "breslow_baseline", "center_covariates", "check_min_events",
    "compare_entry_time_forms", "covid_state_space", "dynamic_prediction", "entry_time_hr", "evaluate_at",
    "fit_cox", "fit_multistate", "forest_table", "global_markov_test", "hr_cohort_given_covariate", "hr_covariate_given_cohort",
    "hr_cross_cohort_time_dependent", "impute_recovery_sojourn", "likelihood_ratio_test", "logrank_U",
    "make_div3w_replica", "oracle_occupation", "ph_score_process", "prepare_long", "reconstruct_histories",
    "select_interaction", "simulate_dataset", "simulate_occupation", "sojourn_reparameterization",
    "spline_basis", "summarize_trace", "wild_bootstrap_null",
]
