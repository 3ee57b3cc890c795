//! Synthetic data with known ground truth.
//!
//! Constant-maturity prices are built so that the per-day log-returns the
//! `returns` module recovers are i.i.d. draws with scale `s0 * M^(-beta)`.
//! Prices live on a weekday calendar, so Monday returns span three days.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng as _;
use rand_distr::{Distribution as _, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateCurve, AggregatePoint};
use crate::error::{Error, Result};
use crate::ingest::{ConstantMaturitySeries, Dataset, FuturesQuote, YearMonth};
use crate::rng::{derive_seed, label_hash, open_unit, stream_rng};
use crate::tails::{pareto_quantile, TailKind, TailSample};

pub const INITIAL_PRICE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnDistribution {
    Gaussian,
    StudentT { nu: f64 },
    /// `sign * scale * u^(-1/mu)` with a fair random sign.
    ParetoSymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TailMu {
    Single(f64),
    PerMaturity(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub market: String,
    pub seed: u64,
    /// Price records per series.
    pub records: usize,
    pub maturities: Vec<u32>,
    /// Tail exponent used by the Pareto distribution.
    pub tail_mu: TailMu,
    /// Return scale decays as `M^(-scale_alpha)`.
    pub scale_alpha: f64,
    /// Return scale at `M = 1`.
    pub base_scale: f64,
    pub distribution: ReturnDistribution,
    pub start: NaiveDate,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            market: "SYN".into(),
            seed: 0,
            records: 2500,
            maturities: (1..=15).collect(),
            tail_mu: TailMu::Single(3.0),
            scale_alpha: 0.175,
            base_scale: 0.02,
            distribution: ReturnDistribution::Gaussian,
            start: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
        }
    }
}

impl SynthSpec {
    fn mu_at(&self, index: usize) -> f64 {
        match &self.tail_mu {
            TailMu::Single(mu) => *mu,
            TailMu::PerMaturity(v) => v[index],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.records < 10 {
            return Err(Error::Domain(format!("records must be >= 10, got {}", self.records)));
        }
        if self.maturities.is_empty() || self.maturities.contains(&0) {
            return Err(Error::Domain("maturities must be a non-empty list of ranks >= 1".into()));
        }
        let mus: Vec<f64> = match &self.tail_mu {
            TailMu::Single(mu) => vec![*mu],
            TailMu::PerMaturity(v) => {
                if v.len() != self.maturities.len() {
                    return Err(Error::Domain(format!(
                        "{} tail exponents for {} maturities",
                        v.len(),
                        self.maturities.len()
                    )));
                }
                v.clone()
            }
        };
        if mus.iter().any(|mu| !(*mu > 0.0)) {
            return Err(Error::Domain("tail_mu must be positive".into()));
        }
        if !(self.scale_alpha >= 0.0) || !(self.base_scale > 0.0) {
            return Err(Error::Domain("scale_alpha must be >= 0 and base_scale > 0".into()));
        }
        if let ReturnDistribution::StudentT { nu } = self.distribution {
            if !(nu > 0.0) {
                return Err(Error::Domain(format!("Student-t needs nu > 0, got {nu}")));
            }
        }
        Ok(())
    }
}

/// Monday-to-Friday dates starting at the first weekday on or after `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(count)
        .collect()
}

/// Inverse-CDF Pareto draws `xmin * u^(-1/mu)`.
pub fn gen_pareto_sample(mu: f64, xmin: f64, n: usize, seed: u64) -> TailSample {
    let mut rng = stream_rng(seed, 0);
    TailSample::new(
        TailKind::Absolute,
        (0..n).map(|_| pareto_quantile(open_unit(&mut rng), mu, xmin)).collect(),
    )
}

/// Constant-maturity prices whose per-day log-returns are i.i.d. with
/// scale `base_scale * M^(-scale_alpha)`.
pub fn gen_samuelson_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let dates = business_days(spec.start, spec.records);
    let series = spec
        .maturities
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let scale = spec.base_scale * (m as f64).powf(-spec.scale_alpha);
            let mu = spec.mu_at(i);
            let seed = derive_seed(spec.seed, &[label_hash(&spec.market), m as u64]);
            let mut rng = stream_rng(seed, 0);
            let student = match spec.distribution {
                ReturnDistribution::StudentT { nu } => Some(StudentT::new(nu).expect("validated nu")),
                _ => None,
            };
            let mut log_price = 0.0;
            let mut points = Vec::with_capacity(dates.len());
            points.push((dates[0], INITIAL_PRICE));
            for w in dates.windows(2) {
                let z: f64 = match spec.distribution {
                    ReturnDistribution::Gaussian => rng.sample(StandardNormal),
                    ReturnDistribution::StudentT { .. } => student.as_ref().unwrap().sample(&mut rng),
                    ReturnDistribution::ParetoSymmetric => {
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        sign * pareto_quantile(open_unit(&mut rng), mu, 1.0)
                    }
                };
                let dt = (w[1] - w[0]).num_days() as f64;
                log_price += dt * scale * z;
                points.push((w[1], INITIAL_PRICE * log_price.exp()));
            }
            ConstantMaturitySeries {
                market: spec.market.clone(),
                maturity: m,
                points,
            }
        })
        .collect();
    Dataset::from_series(series).ok_or_else(|| Error::Domain("synthetic dataset is empty".into()))
}

/// Quotes that rebuild `dataset` through `build_constant_maturity`: rank `M`
/// on date `t` becomes the contract delivering `M - 1` months after `t`.
/// Ranks must be contiguous from 1 for the round trip to preserve them.
pub fn dataset_to_quotes(dataset: &Dataset) -> Vec<FuturesQuote> {
    let mut quotes: Vec<FuturesQuote> = dataset
        .series
        .iter()
        .flat_map(|s| {
            s.points.iter().map(move |&(t, p)| FuturesQuote {
                market: s.market.clone(),
                obs_date: t,
                delivery: YearMonth::of(t).plus_months(s.maturity - 1),
                settle: p,
            })
        })
        .collect();
    quotes.sort_by(|a, b| {
        a.market
            .cmp(&b.market)
            .then(a.obs_date.cmp(&b.obs_date))
            .then(a.delivery.cmp(&b.delivery))
    });
    quotes
}

/// Step curve on the absolute-exponent field: `low` up to and including
/// `mt`, `high` after, plus Gaussian noise.
pub fn gen_step_curve(
    levels: (f64, f64),
    mt: u32,
    maturities: &[u32],
    noise_sd: f64,
    seed: u64,
) -> Result<AggregateCurve> {
    let (lo, hi) = (
        maturities.iter().min().copied().unwrap_or(0),
        maturities.iter().max().copied().unwrap_or(0),
    );
    if !(mt >= lo && mt < hi) {
        return Err(Error::Domain(format!("transition {mt} is not inside maturities {lo}..={hi}")));
    }
    let mut sorted = maturities.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rng = stream_rng(seed, 0);
    let points = sorted
        .into_iter()
        .map(|m| {
            let noise: f64 = if noise_sd > 0.0 {
                noise_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let v = if m <= mt { levels.0 } else { levels.1 } + noise;
            AggregatePoint {
                maturity: m,
                mu_bar_pos: None,
                mu_bar_neg: None,
                mu_bar_abs: Some(v),
                n_markets: 1,
                n_pos: 0,
                n_neg: 0,
                n_abs: 1,
                asymmetry: None,
            }
        })
        .collect();
    Ok(AggregateCurve { points })
}
