"""Heterogeneous panels: C-Lasso grouping, triple differences and randomization inference."""
from .classo import (
    ClassoConfig,
    ClassoFit,
    PostLassoResult,
    assign_groups,
    classify_courtyard,
    fit_classo,
    post_lasso,
)
from .exceptions import EstimationError, HetPanelError, ValidationError
from .glm import LikelihoodFit, fit_ppml, fit_probit, fit_tobit, probit_ame, tobit_marginal_effects
from .panel import ClusterKey, FixedEffectSpec, PanelDataset, demean, load_csv, write_csv
from .pipeline import emit_report, load_config, run_pipeline
from .placebo import PlaceboDistribution, run_placebo
from .regress import RegressionFit, clustered_vcov, ols_fit
from .study import (
    EventConfig,
    EventStudyResult,
    build_determinants_table,
    build_grouped_eventstudy,
    compute_gap,
    compute_treat_ratio,
    ddd_effect,
    estimate_ddd,
    estimate_event_study,
)
from .synthgen import DgpConfig, generate_ddd_panel, generate_determinants, generate_grouped_panel

__version__ = "0.1.0"
