//! Scalar distance and similarity measures between channel vectors.
//!
//! These compare one region member against the region mean and drive
//! the IDW and eDSCW weightings. All functions treat their inputs as
//! plain per-channel vectors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Stabilizer for the per-channel Dice-Sorensen term so a 0/0 channel
/// contributes 0 instead of NaN.
pub const DSC_EPSILON: f64 = 1e-12;

/// Default Huber threshold when none is given on the command line.
pub const DEFAULT_HUBER_DELTA: f64 = 0.5;

/// Distance family between a member vector and the region mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceKind {
    /// Manhattan: sum of per-channel absolute differences.
    L1,
    /// Euclidean: sqrt of the summed squared differences.
    L2,
    /// Literal per-channel reading of the Euclidean row: each channel's
    /// sqrt(|diff|^2) summed, which collapses to L1 for scalar channels.
    /// Kept behind its own tag for comparison runs.
    L2PerChannel,
    /// Piecewise-quadratic Huber distance with threshold `delta`.
    Huber { delta: f64 },
    /// Chebyshev: largest per-channel absolute difference.
    Chebyshev,
    /// Gower: L1 divided by the channel count.
    Gower,
}

impl DistanceKind {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "huber delta must be a positive finite float, got {delta}"
            )));
        }
        Ok(Self::Huber { delta })
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::L1 => write!(f, "l1"),
            Self::L2 => write!(f, "l2"),
            Self::L2PerChannel => write!(f, "l2lit"),
            Self::Huber { delta } => write!(f, "huber:{delta}"),
            Self::Chebyshev => write!(f, "chebyshev"),
            Self::Gower => write!(f, "gower"),
        }
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "l2lit" => Ok(Self::L2PerChannel),
            "chebyshev" => Ok(Self::Chebyshev),
            "gower" => Ok(Self::Gower),
            "huber" => Self::huber(DEFAULT_HUBER_DELTA),
            other => {
                if let Some(rest) = other.strip_prefix("huber:") {
                    let delta: f64 = rest.parse().map_err(|_| {
                        Error::InvalidParameter(format!("bad huber delta: {rest:?}"))
                    })?;
                    Self::huber(delta)
                } else {
                    Err(Error::InvalidParameter(format!(
                        "unknown distance {other:?} (expected l1, l2, l2lit, huber:<d>, chebyshev, gower)"
                    )))
                }
            }
        }
    }
}

/// Similarity family between a member vector and the region mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    /// Cosine of the angle between the vectors, in [-1, 1].
    Cosine,
    /// Peak-to-correlation energy: dot product over summed squared
    /// norms minus the dot product.
    Pce,
    /// Dice-Sorensen coefficient summed over channels, in [0, C].
    Dsc,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cosine => write!(f, "cosine"),
            Self::Pce => write!(f, "pce"),
            Self::Dsc => write!(f, "dsc"),
        }
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "pce" => Ok(Self::Pce),
            "dsc" => Ok(Self::Dsc),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity {other:?} (expected cosine, pce, dsc)"
            ))),
        }
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    Ok(())
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance between two channel vectors; non-negative, zero exactly on
/// identical inputs.
pub fn distance(kind: DistanceKind, a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    if let DistanceKind::Huber { delta } = kind {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
    }
    Ok(distance_raw(kind, a, b))
}

/// Same as [`distance`] for callers that already guarantee matching
/// lengths and a valid Huber delta.
pub(crate) fn distance_raw(kind: DistanceKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        DistanceKind::L1 => l1(a, b),
        DistanceKind::L2 => l2(a, b),
        DistanceKind::L2PerChannel => {
            a.iter().zip(b).map(|(x, y)| ((x - y) * (x - y)).sqrt()).sum()
        }
        DistanceKind::Chebyshev => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
        DistanceKind::Gower => l1(a, b) / a.len() as f64,
        DistanceKind::Huber { delta } => {
            let d1 = l1(a, b);
            if l2(a, b) <= delta {
                d1 * d1 / 2.0
            } else {
                delta * (d1 - delta / 2.0)
            }
        }
    }
}

/// Per-channel Dice-Sorensen term 2|xy| / (x^2 + y^2 + eps).
pub(crate) fn dsc_term(x: f64, y: f64) -> f64 {
    2.0 * (x * y).abs() / (x * x + y * y + DSC_EPSILON)
}

/// Similarity between two channel vectors. Cosine and PCE of an
/// all-zero vector return 0 (a zero vector carries no direction).
pub fn similarity(kind: SimilarityKind, a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(match kind {
        SimilarityKind::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb)
            }
        }
        SimilarityKind::Pce => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let denom: f64 =
                a.iter().map(|x| x * x).sum::<f64>() + b.iter().map(|y| y * y).sum::<f64>() - dot;
            if denom == 0.0 {
                0.0
            } else {
                dot / denom
            }
        }
        SimilarityKind::Dsc => a.iter().zip(b).map(|(&x, &y)| dsc_term(x, y)).sum(),
    })
}
