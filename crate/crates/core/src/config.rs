//! JSON experiment configurations. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{
    log_spaced_bounds, parse_ratio, ratio_from_f64, Rational, Scheme, SearchLimits,
};
use crate::encoder::PointPolicy;
use crate::field::{FieldError, FieldModulus};
use crate::instance::{DesiredSet, GroupingPolicy, InstanceError, Pair, SchemeParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("{0}")]
    Invalid(String),
}

/// Which workers fail to respond.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StragglerMode {
    #[default]
    None,
    /// Exactly `k` workers, chosen uniformly, do not respond.
    FixedCount(usize),
    /// Each worker independently fails with probability `p`.
    Probability(f64),
}

/// A single protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub q: u64,
    pub alpha: usize,
    #[serde(rename = "L_A")]
    pub l_a: usize,
    #[serde(rename = "L_B")]
    pub l_b: usize,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub workers: usize,
    #[serde(rename = "S")]
    pub desired: Vec<Pair>,
    pub seed: u64,
    #[serde(default)]
    pub grouping_policy: GroupingPolicy,
    #[serde(default)]
    pub point_policy: PointPolicy,
    #[serde(default)]
    pub stragglers: StragglerMode,
    /// Compare decoded products with a direct product.
    #[serde(default = "yes")]
    pub audit: bool,
    /// Include wall-clock phase timings (makes reports non-reproducible).
    #[serde(default)]
    pub record_timings: bool,
}

fn yes() -> bool {
    true
}

impl InstanceConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn params(&self) -> Result<SchemeParams, ConfigError> {
        Ok(SchemeParams {
            alpha: self.alpha,
            l_a: self.l_a,
            l_b: self.l_b,
            m: self.m,
            n: self.n,
            r: self.r,
            t: self.t,
            workers: self.workers,
            q: FieldModulus::new(self.q)?,
        })
    }

    pub fn desired_set(&self) -> Result<DesiredSet, ConfigError> {
        Ok(DesiredSet::new(self.desired.iter().copied())?)
    }
}

/// One `(m, n, r, T, |S|)` point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "S_size")]
    pub s_size: usize,
}

/// A sweep: for each grid point and trial, `S` is drawn at random and
/// `N = R + extra_workers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub q: u64,
    pub alpha: usize,
    #[serde(rename = "L_A")]
    pub l_a: usize,
    #[serde(rename = "L_B")]
    pub l_b: usize,
    #[serde(default)]
    pub extra_workers: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub grouping_policy: GroupingPolicy,
    #[serde(default)]
    pub point_policy: PointPolicy,
    #[serde(default)]
    pub stragglers: StragglerMode,
    #[serde(default = "yes")]
    pub audit: bool,
    pub grid: Vec<GridPoint>,
}

fn one() -> usize {
    1
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// An NCC bound written as a JSON number or as a `"p/q"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundLiteral {
    Number(f64),
    Text(String),
}

impl BoundLiteral {
    pub fn to_ratio(&self) -> Result<Rational, ConfigError> {
        let parsed = match self {
            BoundLiteral::Number(x) => ratio_from_f64(*x),
            BoundLiteral::Text(s) => parse_ratio(s),
        };
        parsed.filter(|r| *r.numer() > 0).ok_or_else(|| {
            ConfigError::Invalid(format!("ncc bound {self:?} must be a positive number"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffConfig {
    #[serde(rename = "S_size")]
    pub s_size: u64,
    #[serde(rename = "T")]
    pub t: u64,
    pub worker_caps: Vec<u64>,
    /// Explicit bounds; appended after any `ncc_grid` bounds.
    #[serde(default)]
    pub ncc_bounds: Vec<BoundLiteral>,
    /// Log-spaced bounds.
    #[serde(default)]
    pub ncc_grid: Option<BoundGrid>,
    #[serde(default = "both_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub search_limits: SearchLimits,
    /// Accepted for uniformity; the search is deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn both_schemes() -> Vec<Scheme> {
    vec![Scheme::Fpgmm, Scheme::Mrfpmm]
}

impl TradeoffConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        if cfg.s_size == 0 || cfg.t == 0 {
            return Err(ConfigError::Invalid("S_size and T must be positive".into()));
        }
        if let Some(g) = cfg.ncc_grid {
            if !(g.min > 0.0 && g.max >= g.min && g.max.is_finite()) {
                return Err(ConfigError::Invalid("ncc_grid needs 0 < min <= max".into()));
            }
        }
        cfg.bounds()?;
        Ok(cfg)
    }

    pub fn bounds(&self) -> Result<Vec<Rational>, ConfigError> {
        let mut out = self
            .ncc_grid
            .map_or_else(Vec::new, |g| log_spaced_bounds(g.min, g.max, g.points));
        for b in &self.ncc_bounds {
            out.push(b.to_ratio()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub q: u64,
    /// Only used for validation; defaults to `m n`.
    #[serde(default)]
    pub alpha: Option<usize>,
    #[serde(rename = "L_A")]
    pub l_a: usize,
    #[serde(rename = "L_B")]
    pub l_b: usize,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub workers: usize,
    pub s1: Vec<Pair>,
    pub s2: Vec<Pair>,
    pub colluders: Vec<usize>,
    #[serde(default = "default_budget")]
    pub budget: u64,
    pub seed: u64,
    #[serde(default)]
    pub grouping_policy: GroupingPolicy,
    #[serde(default)]
    pub point_policy: PointPolicy,
}

fn default_budget() -> u64 {
    crate::privacy::DEFAULT_BUDGET
}

impl PrivacyConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn params(&self) -> Result<SchemeParams, ConfigError> {
        Ok(SchemeParams {
            alpha: self.alpha.unwrap_or(self.m * self.n),
            l_a: self.l_a,
            l_b: self.l_b,
            m: self.m,
            n: self.n,
            r: self.r,
            t: self.t,
            workers: self.workers,
            q: FieldModulus::new(self.q)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{"q": 13, "alpha": 4, "L_A": 2, "L_B": 2, "m": 1, "n": 2, "r": 2,
        "T": 1, "N": 7, "S": [[1, 1], [1, 2]], "seed": 42, "grouping_policy": "round_robin"}"#;

    #[test]
    fn parses_instance_config_with_defaults() {
        let cfg = InstanceConfig::from_json(EXAMPLE).unwrap();
        assert_eq!(cfg.desired, vec![(1, 1), (1, 2)]);
        assert_eq!(cfg.stragglers, StragglerMode::None);
        assert!(cfg.audit && !cfg.record_timings);
        let p = cfg.params().unwrap();
        assert_eq!(p.recovery_threshold(cfg.desired_set().unwrap().len()), 7);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let extra = EXAMPLE.replace("\"seed\"", "\"colour\": 1, \"seed\"");
        assert!(matches!(
            InstanceConfig::from_json(&extra),
            Err(ConfigError::Json(_))
        ));
        let composite = EXAMPLE.replace("\"q\": 13", "\"q\": 12");
        assert!(matches!(
            InstanceConfig::from_json(&composite).unwrap().params(),
            Err(ConfigError::Field(_))
        ));
        let stragglers = EXAMPLE.replace(
            "\"seed\": 42",
            "\"seed\": 42, \"stragglers\": {\"fixed_count\": 2}",
        );
        assert_eq!(
            InstanceConfig::from_json(&stragglers).unwrap().stragglers,
            StragglerMode::FixedCount(2)
        );
    }

    #[test]
    fn tradeoff_bounds() {
        let cfg = TradeoffConfig::from_json(
            r#"{"S_size": 5, "T": 1, "worker_caps": [500], "ncc_grid": {"min": 0.01, "max": 1, "points": 3},
                "ncc_bounds": ["1/3", 0.25]}"#,
        )
        .unwrap();
        let b = cfg.bounds().unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b[3], Rational::new(1, 3));
        assert_eq!(b[4], Rational::new(1, 4));
        assert_eq!(cfg.schemes, vec![Scheme::Fpgmm, Scheme::Mrfpmm]);
        assert!(TradeoffConfig::from_json(
            r#"{"S_size": 5, "T": 1, "worker_caps": [5], "ncc_bounds": [0]}"#
        )
        .is_err());
    }
}
