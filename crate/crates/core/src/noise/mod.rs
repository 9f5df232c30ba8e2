//! Evaluation-noise sources: client subsampling, data-heterogeneity
//! repartitioning, accuracy-biased participation and differentially private
//! release.

pub mod policy;
pub mod privacy;
pub mod repartition;
pub mod sampling;

pub use policy::{noisy_evaluate, subsample_score, EvalPolicy, PrivacyMode, Subsample};
pub use privacy::{oneshot_topk, private_release, Mechanism, PrivacyLedger};
pub use repartition::repartition_iid;
pub use sampling::{biased_sample, subsample_uniform};
