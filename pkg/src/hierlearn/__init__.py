"""hierlearn: latent label-hierarchy induction and chain-rule forest classification.

The package induces a two-level hierarchy over class labels by clustering
class-conditional distributions (via conditional means, or via pairwise task
similarity followed by spectral embedding), trains honest-forest classifiers
along the induced tree, and quantifies the benefit over a flat classifier
through adjusted Rand index and learning efficiency.
"""

from .core import (
    DatasetParseError,
    Hierarchy,
    LabeledDataset,
    RngSeed,
    SubsampleSplit,
    class_conditional_split,
    load_dataset,
    load_hierarchy,
    save_dataset,
    save_hierarchy,
    subsample_fraction,
)
from .forest import UncertaintyForest, fit_forest, load_forest, refit_leaf_posteriors, save_forest
from .harness import (
    ExperimentReport,
    FeatureProtocol,
    SweepConfig,
    emit_plot_data,
    run_feature_experiment,
    run_sim_sweep,
)
from .hierclass import (
    HierarchicalClassifier,
    InductionConfig,
    fit_flat,
    fit_hierarchical,
    hierarchy_from_similarity,
    induce_cond_mean,
    induce_task_sim,
    load_model,
    random_matched,
    save_model,
)
from .metrics import (
    AggregateResult,
    EvalRecord,
    adjusted_rand_index,
    aggregate,
    empirical_risk,
    learning_efficiency,
)
from .numcluster import (
    CovarianceCollapseError,
    Embedding,
    GaussianMixture,
    PcaModel,
    gmm_fit,
    gmm_select_c,
    kmeans,
    pca_fit,
    pca_transform,
    spectral_embed,
)
from .simgen import SimConfig, SimulatedWorld, sample_patterns, sample_type2_means, simulate_dataset
from .tasksim import (
    SimilarityMatrix,
    pairwise_similarity_matrix,
    process_matrix,
    symmetrized_similarity,
    task_similarity_directed,
)

__version__ = "0.1.0"
