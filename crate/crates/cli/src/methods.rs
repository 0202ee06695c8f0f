//! Method tokens as accepted on the command line.
//!
//! Everything the core operator parser knows, plus `ada:learned`,
//! which fits beta per image against the round-trip objective before
//! pooling.

use adapool::{ActivationMap, PoolGeometry, PoolOperator, PoolResult};

use crate::error::{CliError, CliResult};
use crate::fit::fit_beta_roundtrip;

/// Default number of projected-gradient steps for `ada:learned`.
pub const LEARNED_BETA_STEPS: usize = 100;
/// Default learning rate for `ada:learned`.
pub const LEARNED_BETA_LR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Core(PoolOperator),
    AdaLearned,
}

impl Method {
    pub fn parse(token: &str, seed: u64) -> CliResult<Self> {
        if token == "ada:learned" {
            return Ok(Self::AdaLearned);
        }
        PoolOperator::parse(token, seed)
            .map(Self::Core)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn parse_list(tokens: &str, seed: u64) -> CliResult<Vec<Self>> {
        tokens
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| Self::parse(t, seed))
            .collect()
    }

    pub fn name(&self) -> String {
        match self {
            Self::Core(op) => op.name(),
            Self::AdaLearned => "ada:learned".into(),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Self::Core(op) if op.is_stochastic())
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Core(op) => op.seed(),
            Self::AdaLearned => None,
        }
    }

    pub fn has_backward(&self) -> bool {
        match self {
            Self::Core(op) => op.has_backward(),
            Self::AdaLearned => true,
        }
    }

    pub fn grad_kind(&self) -> Option<adapool::PoolKind> {
        match self {
            Self::Core(op) => op.grad_kind(),
            Self::AdaLearned => Some(adapool::PoolKind::Ada),
        }
    }

    /// Prepares and runs the forward pass on one map. Callers that
    /// separate image-scale fitting from unit-scale pooling (or that
    /// time the pooling alone) use [`Method::prepare`] +
    /// [`Method::apply_prepared`] instead.
    pub fn apply(&self, map: &ActivationMap, geom: &PoolGeometry) -> CliResult<PoolResult> {
        let prepared = self.prepare(map, geom)?;
        self.apply_prepared(map, geom, &prepared)
    }

    /// Fits whatever state the method needs before pooling: the
    /// learned beta map, from the image-scale input. Cheap no-op for
    /// every other method.
    pub fn prepare(&self, map: &ActivationMap, geom: &PoolGeometry) -> CliResult<Prepared> {
        match self {
            Self::Core(_) => Ok(Prepared::None),
            Self::AdaLearned => Ok(Prepared::Beta(fit_beta_roundtrip(
                map,
                geom,
                LEARNED_BETA_STEPS,
                LEARNED_BETA_LR,
            )?)),
        }
    }

    pub fn apply_prepared(
        &self,
        map: &ActivationMap,
        geom: &PoolGeometry,
        prepared: &Prepared,
    ) -> CliResult<PoolResult> {
        match (self, prepared) {
            (Self::Core(op), _) => op.apply(map, geom).map_err(|e| CliError::Data(e.to_string())),
            (Self::AdaLearned, Prepared::Beta(beta)) => {
                adapool::pool_ada(map, geom, beta).map_err(|e| CliError::Data(e.to_string()))
            }
            (Self::AdaLearned, Prepared::None) => {
                Err(CliError::Data("learned beta was not prepared".into()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Prepared {
    None,
    Beta(adapool::BetaMap),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_tokens() {
        let seed = 7;
        for token in
            ["avg", "max", "sum", "powavg:2", "stoch", "s3", "idw:l2", "idw:huber:0.5", "em", "edscw", "ada:0.5", "ada:learned"]
        {
            let m = Method::parse(token, seed).unwrap();
            assert_eq!(m.name(), token, "round trip of {token}");
        }
        assert!(Method::parse("bogus", seed).is_err());
        assert!(matches!(Method::parse("nope", seed), Err(CliError::Usage(_))));
    }

    #[test]
    fn list_parsing_trims_and_skips_empties() {
        let ms = Method::parse_list("avg, max,,em", 0).unwrap();
        assert_eq!(ms.len(), 3);
        assert_eq!(ms[2].name(), "em");
    }
}
