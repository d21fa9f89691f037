"""Transductive active data selection on Gaussian-process surrogates."""

from .errors import (
    BudgetError,
    ConfigError,
    DataError,
    InputError,
    NumericError,
    ParseError,
    TransductError,
)
from .kernels import (
    KernelMatrix,
    KernelSpec,
    NoiseModel,
    Point,
    cosine_similarity,
    eval_kernel,
    gamma_rate_label,
    gram,
)
from .posterior import (
    IGQuery,
    Observation,
    PosteriorState,
    batch_information_gain,
    beta_n,
    condition,
    condition_all,
    entropy,
    information_capacity,
    information_gain,
    marginal_variance,
    observe,
)
from .selection import (
    BatchResult,
    Policy,
    SoftmaxTable,
    brute_force_batch,
    run_loop,
    score_baseline,
    score_ctl,
    score_itl,
    select_batch,
    subsample_targets,
)
from .data import (
    RoundEntry,
    RunRecord,
    SyntheticTruth,
    labeled_oracle,
    load_embeddings,
    load_run,
    load_softmax,
    persist_run,
    sample_gp_truth,
    save_embeddings,
)
from .theory import (
    BoundCheck,
    MarkovBoundary,
    TheoryConstants,
    Trajectory,
    check_gamma_bound,
    check_variance_bound,
    check_within_S_bound,
    greedy_itl_trajectory,
    irreducible_uncertainty,
    log_difference_bounds,
    loewner_diag_bound,
    markov_boundary,
    markov_size_bound,
    step_uncertainty,
    submodularity_ratio,
    verify_markov_boundary,
)

__version__ = "0.1.0"
