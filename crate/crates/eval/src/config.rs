use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub hit_size: usize,
    pub bonus_count: usize,
    /// Dialog source whose tasks may carry a bonus checkpoint.
    pub bonus_source: String,
    pub worker_hit_cap: usize,
    pub max_assignments: usize,
    pub min_duration_secs: f64,
    /// Assignments need at least this many bonus points to be kept.
    pub bonus_keep: usize,
    /// Bonus points that earn the payout flag.
    pub bonus_payout: usize,
    /// Share of identical placement patterns that marks a worker as degenerate.
    pub uniformity_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            hit_size: 10,
            bonus_count: 3,
            bonus_source: "ED".into(),
            worker_hit_cap: 50,
            max_assignments: 4,
            min_duration_secs: 300.0,
            bonus_keep: 2,
            bonus_payout: 3,
            uniformity_threshold: 0.95,
        }
    }
}

impl EvalConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hit_size == 0 {
            return bad("hit_size must be positive");
        }
        if self.bonus_count > self.hit_size {
            return bad("bonus_count exceeds hit_size");
        }
        if self.max_assignments == 0 || self.worker_hit_cap == 0 {
            return bad("assignment limits must be positive");
        }
        if self.bonus_keep > self.bonus_count || self.bonus_payout > self.bonus_count {
            return bad("bonus thresholds exceed bonus_count");
        }
        if !(0.0..=1.0).contains(&self.uniformity_threshold) {
            return bad("uniformity_threshold outside [0, 1]");
        }
        Ok(())
    }
}
