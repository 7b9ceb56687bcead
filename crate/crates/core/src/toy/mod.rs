//! Exactly analyzable classifiers and a neighbor-count masked LM.

mod bow;
mod count_lm;
pub mod fixture;
mod linear;
mod mlp;

pub use bow::BowSoftmaxClassifier;
pub use count_lm::{CountMaskedLm, BOS, EOS};
pub use fixture::{bundled_fixtures, BundledFixture, FixtureFile, ToyModel};
pub use linear::{linear_combination_classifier, LinearCombination, LinearEmbeddingClassifier};
pub use mlp::{Dense, EmbeddingMlpClassifier, ForwardPass, OOV_TOKEN};
