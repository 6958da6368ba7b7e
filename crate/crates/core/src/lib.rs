//! Group-wise preference learning on synthetic latent-score oracles.
//!
//! Items live in disjoint groups; each group carries a latent quality score
//! in `[0, 1]` that is observable only through noisy pairwise comparisons.
//! This crate provides the full stack for studying that setting at desk
//! scale:
//!
//! - [`link`] / [`dataset`]: link functions mapping quality gaps to
//!   preference probabilities, and seeded generation of group datasets with
//!   a known logistic-of-linear oracle.
//! - [`prefgen`]: synthetic supervision — noisy pairwise labels, a five-tier
//!   degradation curriculum with guaranteed orderings, and best–worst
//!   (MaxDiff) choice trials.
//! - [`rewardfit`]: a linear score head trained with the pairwise logistic
//!   loss, with analytic gradients and a full-batch fitter.
//! - [`aggregate`]: Expected Borda Count over (possibly sparse) pairwise
//!   probability matrices, temperature-softmax listwise targets, shaped
//!   targets with isotonicity checking, and MaxDiff count aggregation.
//! - [`stats`]: Kendall's tau with exact small-n p-values, Spearman's rho,
//!   and margin-bucketed reversal diagnostics.
//! - [`policy`]: tabular softmax policies, the listwise cross-entropy +
//!   KL objective with analytic gradients, budgeted gradient-descent
//!   training, and a Pinsker-chain bound verifier.
//! - [`cotsim`]: distributions over abstract reasoning paths with a
//!   star-mass/gap lower bound on expected quality, and anchoring mixtures.
//!
//! Everything is deterministic given a seed: RNG streams are fanned out
//! with [`rng::derive_seed`], collections are ordered (`BTreeMap`), and
//! transcendental functions come from `libm` so results do not depend on
//! the platform's math library.
//!
//! ```
//! use grouppref_core::dataset::{generate, DatasetSpec};
//! use grouppref_core::link::LinkFunction;
//! use grouppref_core::prefgen::{gen_pair_labels, Coverage};
//! use grouppref_core::rewardfit::{fit, score, FitConfig};
//!
//! // One group of 10 items; label every pair three times under a steep
//! // link and fit the score head.
//! let ds = generate(&DatasetSpec::uniform(1, 10, 4), 7).unwrap();
//! let link = LinkFunction::ScaledLogistic(20.0);
//! let labels = gen_pair_labels(&ds, &link, &Coverage::Full, 3, 1).unwrap();
//! let (params, report) = fit(&labels, &ds, &FitConfig::default()).unwrap();
//! assert!(report.final_loss.is_finite());
//!
//! // Higher latent quality gets a higher fitted score.
//! let items = ds.items().collect::<Vec<_>>();
//! let (best, worst) = (items[0], items[1]);
//! let (hi, lo) = if best.humor > worst.humor { (best, worst) } else { (worst, best) };
//! assert!(score(&params, hi).unwrap() > score(&params, lo).unwrap());
//! ```
//!
//! The crate is `no_std` (with `alloc`); IO, file formats, and the CLI live
//! in the companion `grouppref-cli` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod aggregate;
pub mod cotsim;
pub mod dataset;
pub mod link;
pub mod policy;
pub mod prefgen;
pub mod rewardfit;
pub mod rng;
pub mod stats;

pub use dataset::{GroupDataset, GroupId, Item, ItemId, OracleParams};
pub use link::LinkFunction;
