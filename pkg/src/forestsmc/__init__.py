"""Sequential Monte Carlo with adaptive, tree-structured particle interaction.

The package controls how much particles interact at every filter step: a
topology tree models which particles are cheap to couple, and a recursive
selector picks a forest of subtrees whose induced interaction keeps the
effective sample size above a configurable floor while merging as little as
possible.  Resampling and weight updates then run tree-locally.

Modules:

    ess        ESS of weight vectors, partitions and dense interaction
               matrices; the recursive threshold-splitting selector.
    tree       arena trees, branching specs, forests.
    sampling   tree-descent and inverse-transform ancestor sampling,
               u-sequences, weight updates.
    selection  coarsening strategies and the adaptive forest selector.
    engine     the particle filter driver and its reproducibility scheme.
    cli        benchmark model, experiment grids, verification commands.
"""

from .ess import (
    DenseAlpha,
    Partition,
    as_weights,
    choose_a_reference,
    ess_dense,
    ess_partition,
    ess_weights,
    is_coarsening,
    one_block,
    partition_to_matrix,
    rho,
    singletons,
)
from .tree import BranchingSpec, Forest, Tree, build_tree, default_branching
from .sampling import (
    USequence,
    assign_ancestors,
    generate_u,
    node_pmf,
    sample,
    select,
    weight_update,
    weight_update_all,
)
from .selection import (
    STRATEGIES,
    CoarseningTrace,
    Strategy,
    TraceRecorder,
    arpf_select,
    choose_forest,
    coarsening_splitter,
    matching_exact_step,
    matching_step,
    merge_gain,
    pairing_splitter,
    pairing_step,
)
from .engine import (
    ParticleSystem,
    StepRecord,
    ess_current,
    estimate_pi,
    estimate_z,
    init,
    rng_for,
    run_filter,
    step,
)
from .cli import (
    ExperimentConfig,
    ToyModel,
    fixed_product_sweep,
    run_experiment,
    toy_model,
    verify_unbiased,
    verify_variance,
)

__version__ = "0.1.0"
