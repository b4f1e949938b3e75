//! Training-label synthesis for unseen target classes.
//!
//! Given a typed label-relation graph and indirect labeling functions whose
//! output spaces are disjoint from the target space, this crate builds a
//! factor-graph label model over the observed votes, fits it by stochastic
//! gradient on the marginal likelihood, and emits per-data-point posterior
//! distributions over the target classes — the training signal for a
//! downstream discriminative model. Structural sanity tests (consistency,
//! distinguishability, informativeness), voting baselines, an
//! attribute-prediction baseline, and a synthetic task lab round out the
//! toolkit.

pub mod baselines;
pub mod data;
pub mod graph;
pub mod inference;
pub mod io;
pub mod model;
pub mod synthlab;
pub mod training;

pub use baselines::{
    dap_fit, enumerate_consistent_assignments, lr_mv, train_noise_aware_linear, w_lr_mv,
    BaselineError, BaselineOutput, DapModel, EndModelConfig, LinearModel,
};
pub use data::{DataError, IlfOutputMatrix};
pub use graph::{
    ConsistencyReport, DistinguishabilityReport, GraphError, IlfSpec, InformativenessReport,
    Label, LabelGraph, LabelGraphBuilder, LabelId, RelationType, Role,
};
pub use inference::{
    exact_joint_expectation, exact_posterior, gibbs_sample, posterior_labels, EnumerationBudget,
    InferenceError, InferenceMethod, PosteriorLabels, PosteriorParams, Provenance,
};
pub use io::IoError;
pub use model::{
    factor_value, swap_theta_blocks, Assignment, BuildOptions, Dependency, FactorModel, Family,
    ModelError, ModelKind, YValue,
};
pub use synthlab::{
    evaluate, generate_task, sample_from_model, Metrics, SimSpec, SynthError, SynthTask,
};
pub use training::{exact_nll_gradient, fit, project_positive, TrainConfig, TrainError, TrainLog};
