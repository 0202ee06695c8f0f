//! Exponential-weighting pooling kernels and their inverses.
//!
//! The crate implements a family of downsampling operators over dense
//! activation maps: the classic baselines (average, maximum, sum,
//! power-average, stochastic, S3), inverse-distance-weighted pooling
//! (`idw`), the smooth approximated maximum (`em`), the smooth
//! approximated average driven by Dice-Sorensen similarity (`edscw`),
//! and their adaptive fusion (`ada`) with a per-location blend
//! parameter beta. The stored weight masks make the `ada` operator
//! invertible: `ada_unpool` redistributes every pooled value back over
//! its kernel region.
//!
//! Backward passes come in two modes: the weight-reuse rule
//! ([`GradMode::PaperWeighted`]) and the full analytic derivative
//! ([`GradMode::ExactAnalytic`]), the latter verified against central
//! finite differences. SSIM/PSNR round-trip scoring for measuring
//! downsampling fidelity lives in [`quality`].

pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod measures;
pub mod ops;
pub mod quality;
pub mod reference;
pub mod unpool;

pub use error::{Error, Result};
pub use grid::{enumerate_regions, region_mean, ActivationMap, PoolGeometry, RegionView};
pub use measures::{distance, similarity, DistanceKind, SimilarityKind};
pub use ops::{
    backward, pool_ada, pool_baseline, pool_edscw, pool_em, pool_idw, update_beta, BaselineKind,
    BetaMap, GradMode, Gradients, PoolKind, PoolOperator, PoolResult, RegionStats, WeightMasks,
};
pub use quality::{eval_roundtrip, psnr, ssim, InflateMode, QualityScore};
pub use unpool::{ada_unpool, bilinear_inflate, nearest_inflate, UnpoolInput};
