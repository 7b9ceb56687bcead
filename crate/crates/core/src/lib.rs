//! Black-box explanations for text classifiers by resampling units from a
//! masked language model, with occlusion and gradient baselines, axiom
//! checks and dataset-level statistics.

pub mod analysis;
pub mod axioms;
pub mod error;
pub mod explain;
pub mod gradient;
pub mod model;
pub mod occlusion;
pub mod render;
pub mod stats;
pub mod tokenize;
pub mod toy;
pub mod types;

pub use error::{Error, Result};
pub use model::{classify, fill_mask, Classifier, ClassifierInfo, Differentiable, LmInfo, MaskedLm};
pub use tokenize::{tokenize, tokenize_with_id};
pub use types::{
    Candidate, DistributionKind, FillMode, Method, PredictionDistribution, RelevanceMeta,
    RelevanceVector, ReplacementDistribution, TokenizedInput, Unit, UnitKind,
};
