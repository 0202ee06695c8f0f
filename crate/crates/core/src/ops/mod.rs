//! Forward and backward passes for the pooling operators.
//!
//! Baselines live in [`baseline`], the weighted operators (IDW, eM,
//! eDSCW, ada) in [`weighted`], gradients in [`backward`]. All
//! forwards process regions independently and in a fixed per-region
//! reduction order, so results are bit-reproducible across runs and
//! thread counts.

mod backward;
mod baseline;
mod rowpar;
mod weighted;

pub use backward::{backward, GradMode, Gradients, PoolKind};
pub use baseline::{pool_baseline, BaselineKind};
pub use weighted::{pool_ada, pool_edscw, pool_em, pool_idw};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{ActivationMap, PoolGeometry};
use crate::measures::DistanceKind;

/// Normalized per-region weight vectors saved by the exponential
/// operators. `em` weights are per channel (each channel runs its own
/// softmax over the region); `edsc` weights are shared across channels
/// because the similarity already aggregates them.
///
/// Storage is region-major: region `r` owns `offsets[r]..offsets[r+1]`
/// members. Its `edsc` slice has one weight per member; its `em` block
/// holds `channels` consecutive per-member vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMasks {
    geometry: PoolGeometry,
    channels: usize,
    offsets: Vec<usize>,
    em: Option<Vec<f64>>,
    edsc: Option<Vec<f64>>,
}

impl WeightMasks {
    pub(crate) fn new(
        geometry: PoolGeometry,
        channels: usize,
        offsets: Vec<usize>,
        em: Option<Vec<f64>>,
        edsc: Option<Vec<f64>>,
    ) -> Self {
        Self { geometry, channels, offsets, em, edsc }
    }

    /// Rebuilds masks from raw parts, validating layout and normalization.
    pub fn from_parts(
        geometry: PoolGeometry,
        channels: usize,
        offsets: Vec<usize>,
        em: Option<Vec<f64>>,
        edsc: Option<Vec<f64>>,
    ) -> Result<Self> {
        if offsets.is_empty() || offsets[0] != 0 || offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Shape("mask offsets must be increasing prefix sums".into()));
        }
        let total = *offsets.last().unwrap();
        if let Some(em) = &em {
            if em.len() != total * channels {
                return Err(Error::Shape("em weight payload length mismatch".into()));
            }
        }
        if let Some(edsc) = &edsc {
            if edsc.len() != total {
                return Err(Error::Shape("edsc weight payload length mismatch".into()));
            }
        }
        let masks = Self { geometry, channels, offsets, em, edsc };
        masks.validate()?;
        Ok(masks)
    }

    pub fn geometry(&self) -> &PoolGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_regions(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn member_count(&self, region: usize) -> usize {
        self.offsets[region + 1] - self.offsets[region]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn em_raw(&self) -> Option<&[f64]> {
        self.em.as_deref()
    }

    pub fn edsc_raw(&self) -> Option<&[f64]> {
        self.edsc.as_deref()
    }

    /// Per-channel eM weights of one region, `channels * member_count`
    /// values in channel-major blocks.
    pub fn em_region(&self, region: usize) -> Option<&[f64]> {
        self.em.as_deref().map(|em| {
            let (lo, hi) = (self.offsets[region], self.offsets[region + 1]);
            &em[lo * self.channels..hi * self.channels]
        })
    }

    /// Shared eDSC weights of one region, one value per member.
    pub fn edsc_region(&self, region: usize) -> Option<&[f64]> {
        self.edsc.as_deref().map(|w| &w[self.offsets[region]..self.offsets[region + 1]])
    }

    /// Every stored weight vector must be strictly positive and sum to
    /// one within 1e-12.
    pub fn validate(&self) -> Result<()> {
        let check = |w: &[f64], what: &str| -> Result<()> {
            if !w.iter().all(|&x| x > 0.0) {
                return Err(Error::InvalidParameter(format!("{what} weights must be positive")));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "{what} weights sum to {sum}, expected 1"
                )));
            }
            Ok(())
        };
        for r in 0..self.n_regions() {
            if let Some(w) = self.edsc_region(r) {
                check(w, "edsc")?;
            }
            if let Some(block) = self.em_region(r) {
                let m = self.member_count(r);
                for c in 0..self.channels {
                    check(&block[c * m..(c + 1) * m], "em")?;
                }
            }
        }
        Ok(())
    }
}

/// Per-output-location fusion parameter, one value in [0, 1] per
/// pooled position (row-major over the output spatial extents).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMap {
    values: Vec<f64>,
    spatial: Vec<usize>,
    trainable: bool,
}

impl BetaMap {
    pub fn new(values: Vec<f64>, spatial: Vec<usize>, trainable: bool) -> Result<Self> {
        if values.len() != spatial.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "beta length {} does not match extents {:?}",
                values.len(),
                spatial
            )));
        }
        if !values.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("beta values must lie in [0, 1]".into()));
        }
        Ok(Self { values, spatial, trainable })
    }

    pub fn constant(spatial: Vec<usize>, value: f64) -> Result<Self> {
        let len = spatial.iter().product();
        Self::new(vec![value; len], spatial, false)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Per-region, per-channel mean and maximum of the input, saved by the
/// exponential forwards for the backward pass (region-major layout).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    channels: usize,
    mean: Vec<f64>,
    max: Vec<f64>,
}

impl RegionStats {
    pub(crate) fn new(channels: usize, mean: Vec<f64>, max: Vec<f64>) -> Self {
        Self { channels, mean, max }
    }

    pub fn mean_at(&self, region: usize, channel: usize) -> f64 {
        self.mean[region * self.channels + channel]
    }

    pub fn max_at(&self, region: usize, channel: usize) -> f64 {
        self.max[region * self.channels + channel]
    }
}

/// Everything a forward pass produces: the pooled map plus whatever the
/// backward pass and the unpool path will need later.
#[derive(Debug, Clone)]
pub struct PoolResult {
    pub output: ActivationMap,
    pub geometry: PoolGeometry,
    pub masks: Option<WeightMasks>,
    pub stats: Option<RegionStats>,
    /// Copy of the forward input, saved by the differentiable operators.
    pub saved_input: Option<ActivationMap>,
    pub beta: Option<BetaMap>,
    /// (eDSCW output, eM output) components of an `ada` forward.
    pub components: Option<(ActivationMap, ActivationMap)>,
    /// Regions where stochastic sampling fell back to uniform because
    /// the values were all-zero or mixed-sign.
    pub stochastic_fallbacks: usize,
}

impl PoolResult {
    pub(crate) fn bare(output: ActivationMap, geometry: PoolGeometry) -> Self {
        Self {
            output,
            geometry,
            masks: None,
            stats: None,
            saved_input: None,
            beta: None,
            components: None,
            stochastic_fallbacks: 0,
        }
    }
}

/// Projected gradient step on beta: clamp(beta - lr * grad, 0, 1).
pub fn update_beta(beta: &BetaMap, grad: &[f64], lr: f64) -> Result<BetaMap> {
    if grad.len() != beta.values().len() {
        return Err(Error::Shape(format!(
            "beta gradient length {} does not match beta length {}",
            grad.len(),
            beta.values().len()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {lr}")));
    }
    let values = beta
        .values()
        .iter()
        .zip(grad)
        .map(|(&b, &g)| (b - lr * g).clamp(0.0, 1.0))
        .collect();
    BetaMap::new(values, beta.spatial().to_vec(), beta.trainable())
}

/// A pooling operator plus its parameters, as selected on a command line.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolOperator {
    Baseline(BaselineKind),
    Idw(DistanceKind),
    Em,
    Edscw,
    Ada { beta: f64 },
}

impl PoolOperator {
    /// Parses an operator token: `avg`, `max`, `sum`, `powavg:<rho>`,
    /// `stoch`, `s3`, `idw[:<distance>]`, `em`, `edscw`, `ada[:<beta>]`.
    /// Stochastic operators pick up `seed`.
    pub fn parse(token: &str, seed: u64) -> Result<Self> {
        match token {
            "avg" => Ok(Self::Baseline(BaselineKind::Average)),
            "max" => Ok(Self::Baseline(BaselineKind::Maximum)),
            "sum" => Ok(Self::Baseline(BaselineKind::Sum)),
            "stoch" => Ok(Self::Baseline(BaselineKind::Stochastic { seed })),
            "s3" => Ok(Self::Baseline(BaselineKind::S3 { seed })),
            "em" => Ok(Self::Em),
            "edscw" => Ok(Self::Edscw),
            "idw" => Ok(Self::Idw(DistanceKind::L2)),
            "ada" => Ok(Self::Ada { beta: 0.5 }),
            other => {
                if let Some(rest) = other.strip_prefix("powavg:") {
                    let rho: f64 = rest.parse().map_err(|_| {
                        Error::InvalidParameter(format!("bad powavg exponent: {rest:?}"))
                    })?;
                    if !rho.is_finite() || rho == 0.0 {
                        return Err(Error::InvalidParameter(
                            "powavg exponent must be finite and non-zero".into(),
                        ));
                    }
                    Ok(Self::Baseline(BaselineKind::PowAverage { rho }))
                } else if let Some(rest) = other.strip_prefix("idw:") {
                    Ok(Self::Idw(rest.parse()?))
                } else if let Some(rest) = other.strip_prefix("ada:") {
                    let beta: f64 = rest.parse().map_err(|_| {
                        Error::InvalidParameter(format!("bad ada beta: {rest:?}"))
                    })?;
                    if !(0.0..=1.0).contains(&beta) {
                        return Err(Error::InvalidParameter(format!(
                            "ada beta must lie in [0, 1], got {beta}"
                        )));
                    }
                    Ok(Self::Ada { beta })
                } else {
                    Err(Error::InvalidParameter(format!("unknown pooling method {other:?}")))
                }
            }
        }
    }

    /// Canonical token, stable for CSV reports.
    pub fn name(&self) -> String {
        match self {
            Self::Baseline(BaselineKind::Average) => "avg".into(),
            Self::Baseline(BaselineKind::Maximum) => "max".into(),
            Self::Baseline(BaselineKind::Sum) => "sum".into(),
            Self::Baseline(BaselineKind::PowAverage { rho }) => format!("powavg:{rho}"),
            Self::Baseline(BaselineKind::Stochastic { .. }) => "stoch".into(),
            Self::Baseline(BaselineKind::S3 { .. }) => "s3".into(),
            Self::Idw(kind) => format!("idw:{kind}"),
            Self::Em => "em".into(),
            Self::Edscw => "edscw".into(),
            Self::Ada { beta } => format!("ada:{beta}"),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Self::Baseline(BaselineKind::Stochastic { .. }) | Self::Baseline(BaselineKind::S3 { .. })
        )
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Baseline(BaselineKind::Stochastic { seed })
            | Self::Baseline(BaselineKind::S3 { seed }) => Some(*seed),
            _ => None,
        }
    }

    /// Whether [`backward`] supports this operator.
    pub fn has_backward(&self) -> bool {
        matches!(self, Self::Em | Self::Edscw | Self::Ada { .. })
    }

    pub fn grad_kind(&self) -> Option<PoolKind> {
        match self {
            Self::Em => Some(PoolKind::Em),
            Self::Edscw => Some(PoolKind::Edscw),
            Self::Ada { .. } => Some(PoolKind::Ada),
            _ => None,
        }
    }

    pub fn apply(&self, map: &ActivationMap, geom: &PoolGeometry) -> Result<PoolResult> {
        match self {
            Self::Baseline(kind) => pool_baseline(*kind, map, geom),
            Self::Idw(kind) => pool_idw(*kind, map, geom),
            Self::Em => pool_em(map, geom),
            Self::Edscw => pool_edscw(map, geom),
            Self::Ada { beta } => {
                let out = geom.output_extents(map.spatial())?;
                let beta = BetaMap::constant(out, *beta)?;
                pool_ada(map, geom, &beta)
            }
        }
    }
}

/// Deterministic per-region RNG stream: identical results regardless of
/// scheduling, for any (seed, region index) pair.
pub(crate) fn region_rng(seed: u64, region: usize) -> ChaCha8Rng {
    let mut z = seed.wrapping_add((region as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}
