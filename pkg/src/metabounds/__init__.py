"""Empirical information-theoretic generalization bounds for small meta-learners."""

from .bounds import (
    BoundParams,
    BoundReport,
    MiCellEstimates,
    fast_rate_bound,
    fast_rate_constants,
    gamma_variance,
    interpolating_risk,
    kl_inversion_bound,
    logdet_psd,
    maml_trajectory_bound,
    sgld_trajectory_bound,
    sqrt_mi_bound,
    variance_fast_rate_bound,
)
from .harness import (
    ExperimentConfig,
    empirical_gap,
    estimate_mi_cells,
    load_config,
    run_experiment,
    write_csv,
)
from .infotheory import (
    DiscreteJoint,
    GroupedJoint,
    binary_kl,
    conditional_plugin_mi,
    d_gamma,
    interaction_information,
    invert_kl_risk,
    plugin_mi,
)
from .metalearn import (
    MamlConfig,
    MetaState,
    SgldConfig,
    adapt_task,
    estimate_step_covariance,
    joint_sgld_train,
    maml_noisy_train,
)
from .model import (
    Batch,
    DivergenceError,
    MlpParams,
    forward,
    grad_check,
    init_mlp,
    loss_and_grad,
    zero_one_loss,
)
from .supersample import (
    LabeledExample,
    LossQuad,
    LossTable,
    MembershipVectors,
    SuperSample,
    build_supersample,
    draw_memberships,
    fill_loss_table,
    loss_pair_delta,
    select_partitions,
)
from .tasks import (
    CapacityError,
    DatasetEnv,
    GaussianEnv,
    Task,
    class_tasks_from_dataset,
    make_gaussian_env,
    parse_idx,
    sample_tasks,
)

__version__ = "0.1.0"
