//! Online kernel dictionary learning by recursive least squares.
//!
//! The library learns a dictionary for sparse representation in the feature
//! space of a Mercer kernel, one mini-batch of samples at a time. Instead of
//! re-solving the regularized least-squares dictionary problem on every
//! update, it maintains a [`profile::Profile`] (the retained samples plus a
//! handful of derived matrices) and applies exact rank-`M` corrections when
//! samples enter (grow) or leave (prune) the memory. Sparse coding never
//! materializes the dictionary either: [`kormp::solve`] works entirely from
//! the dictionary Gram matrix.
//!
//! On top of the state machine sit [`trainer::train_online`] (coherence
//! gating, forgetting schedule, budget-constrained pruning) and the
//! [`classifier`] module (per-class dictionaries, minimum-residual
//! classification, cross-validation, missing-data robustness).
//!
//! The [`oracle`] module carries independent reference implementations:
//! a direct batch solver, an explicit-feature-space matching pursuit, and
//! a batch dictionary learner, used as ground truth by the test suites and
//! as the benchmark the online learner is expected to approach.
//!
//! ```
//! use krls::{Kernel, Profile};
//! use ndarray::{array, Axis};
//!
//! // three 2-d samples seed a 3-atom dictionary
//! let x0 = array![[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]];
//! let kernel = Kernel::polynomial(2, 1.0)?;
//! let mut profile = Profile::init(x0.view(), kernel, 0.1)?;
//!
//! // code a new sample against it, then grow the profile with the result
//! let x = array![0.8, -0.3];
//! let code = profile.code(x.view(), 2)?;
//! profile.grow(
//!     x.insert_axis(Axis(1)).view(),
//!     code.dense().insert_axis(Axis(1)).view(),
//!     0.98,
//! )?;
//! assert_eq!(profile.l(), 4);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod classifier;
pub mod kernels;
pub mod kormp;
pub mod linalg;
pub mod oracle;
pub mod profile;
pub mod synth;
pub mod trainer;

pub use classifier::ClassifierModel;
pub use kernels::Kernel;
pub use kormp::SparseCode;
pub use profile::Profile;
pub use trainer::{train_online, TrainerConfig};

// The guide chapters double as doc-tests so their snippets cannot rot.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/sparse-coding.md")]
    mod sparse_coding {}
    #[doc = include_str!("../../../book/src/profile.md")]
    mod profile {}
    #[doc = include_str!("../../../book/src/online-training.md")]
    mod online_training {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
