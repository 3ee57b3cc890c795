//! Pipeline configuration, read from a TOML file.
//!
//! ```toml
//! seed = 42                      # required when any bootstrap count is > 0
//! out_dir = "out"
//!
//! [input]
//! paths = ["wti.csv", "gold.csv"] # relative to the config file
//!
//! [period]
//! policy = "intersection"         # or "explicit" with start/end dates
//! # start = "2001-01-01"
//! # end = "2008-12-31"
//!
//! [maturity_caps]
//! WTI = 84
//!
//! [contango]
//! far = 9
//!
//! [scaling]
//! fit_min = 1
//! # fit_max = 24                  # default: no upper bound
//! crossover_threshold = 0.5
//! r_squared_floor = 0.95
//!
//! [tails]
//! min_sample = 100
//! min_tail = 50
//! max_candidates = 250
//! bootstrap_b = 1000
//! gof_b = 250
//! likelihood_ratios = true
//! hill = true
//!
//! [aggregate]
//! plateau_threshold = 0.3
//! ```
//!
//! Every key is optional; missing keys take the defaults shown.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::DEFAULT_PLATEAU_THRESHOLD;
use crate::curvestats::DEFAULT_FAR_MATURITY;
use crate::error::{Error, Result};
use crate::ingest::PeriodPolicy;
use crate::scaling::{MaturityRange, DEFAULT_CROSSOVER_THRESHOLD, DEFAULT_R_SQUARED_FLOOR};
use crate::tails::{
    TailConfig, TailStudyConfig, DEFAULT_BOOTSTRAP_B, DEFAULT_GOF_B, DEFAULT_MAX_CANDIDATES, DEFAULT_MIN_SAMPLE,
    DEFAULT_MIN_TAIL,
};

/// Version of the configuration grammar.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContangoConfig {
    pub far: u32,
}

impl Default for ContangoConfig {
    fn default() -> Self {
        ContangoConfig {
            far: DEFAULT_FAR_MATURITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub fit_min: u32,
    pub fit_max: Option<u32>,
    pub crossover_threshold: f64,
    pub r_squared_floor: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            fit_min: 1,
            fit_max: None,
            crossover_threshold: DEFAULT_CROSSOVER_THRESHOLD,
            r_squared_floor: DEFAULT_R_SQUARED_FLOOR,
        }
    }
}

impl ScalingConfig {
    pub fn range(&self) -> MaturityRange {
        MaturityRange {
            min: self.fit_min,
            max: self.fit_max.unwrap_or(u32::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailsConfig {
    pub min_sample: usize,
    pub min_tail: usize,
    pub max_candidates: usize,
    pub bootstrap_b: usize,
    pub gof_b: usize,
    pub likelihood_ratios: bool,
    pub hill: bool,
}

impl Default for TailsConfig {
    fn default() -> Self {
        TailsConfig {
            min_sample: DEFAULT_MIN_SAMPLE,
            min_tail: DEFAULT_MIN_TAIL,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            bootstrap_b: DEFAULT_BOOTSTRAP_B,
            gof_b: DEFAULT_GOF_B,
            likelihood_ratios: true,
            hill: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateConfig {
    pub plateau_threshold: f64,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig {
            plateau_threshold: DEFAULT_PLATEAU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub input: InputConfig,
    pub period: PeriodPolicy,
    pub maturity_caps: BTreeMap<String, u32>,
    pub contango: ContangoConfig,
    pub scaling: ScalingConfig,
    pub tails: TailsConfig,
    pub aggregate: AggregateConfig,
    /// Directory relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            out_dir: None,
            input: InputConfig::default(),
            period: PeriodPolicy::Intersection,
            maturity_caps: BTreeMap::new(),
            contango: ContangoConfig::default(),
            scaling: ScalingConfig::default(),
            tails: TailsConfig::default(),
            aggregate: AggregateConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolved_inputs(&self) -> Vec<PathBuf> {
        self.input
            .paths
            .iter()
            .map(|p| if p.is_absolute() { p.clone() } else { self.base_dir.join(p) })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit("scaling.crossover_threshold", self.scaling.crossover_threshold)?;
        unit("aggregate.plateau_threshold", self.aggregate.plateau_threshold)?;
        if !(0.0..=1.0).contains(&self.scaling.r_squared_floor) {
            return Err(Error::Config(format!(
                "scaling.r_squared_floor must lie in [0, 1], got {}",
                self.scaling.r_squared_floor
            )));
        }
        if self.scaling.fit_min < 1 || self.scaling.fit_max.is_some_and(|m| m <= self.scaling.fit_min) {
            return Err(Error::Config("scaling fit range must satisfy 1 <= fit_min < fit_max".into()));
        }
        if self.contango.far < 2 {
            return Err(Error::Config("contango.far must be at least 2".into()));
        }
        if self.maturity_caps.values().any(|&c| c == 0) {
            return Err(Error::Config("maturity caps must be at least 1".into()));
        }
        let t = &self.tails;
        if t.min_tail < 2 || t.min_sample < t.min_tail || t.max_candidates < 2 {
            return Err(Error::Config(
                "tails: need min_tail >= 2, min_sample >= min_tail and max_candidates >= 2".into(),
            ));
        }
        if t.bootstrap_b == 1 {
            return Err(Error::Config("tails.bootstrap_b must be 0 or at least 2".into()));
        }
        if (t.bootstrap_b > 0 || t.gof_b > 0) && self.seed.is_none() {
            return Err(Error::Config("a seed is required when bootstrap_b or gof_b is positive".into()));
        }
        if let PeriodPolicy::Explicit { start, end } = self.period {
            if start > end {
                return Err(Error::Config(format!("period start {start} is after end {end}")));
            }
        }
        Ok(())
    }

    pub fn tail_study(&self) -> TailStudyConfig {
        TailStudyConfig {
            fit: TailConfig {
                min_sample: self.tails.min_sample,
                min_tail: self.tails.min_tail,
                max_candidates: self.tails.max_candidates,
            },
            bootstrap_b: self.tails.bootstrap_b,
            gof_b: self.tails.gof_b,
            likelihood_ratios: self.tails.likelihood_ratios,
            hill: self.tails.hill,
            seed: self.seed.unwrap_or(0),
        }
    }
}
