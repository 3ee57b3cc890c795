//! Tail-exponent estimation per maturity.
//!
//! Exponents are reported in the CCDF convention: `P(X > x) ~ x^(-mu)`. The
//! continuous power-law MLE estimates the density exponent `a = mu + 1`; the
//! inverse cubic law is `mu = 3`.
//!
//! `fit_tail` scans candidate lower cutoffs `xmin`, fits the exponent by
//! maximum likelihood above each one and keeps the cutoff whose fitted law
//! is closest to the data in Kolmogorov-Smirnov distance. Standard errors
//! come from a nonparametric bootstrap and the goodness-of-fit p-value from
//! a semi-parametric one. Every replicate draws from its own ChaCha stream,
//! so results do not depend on thread count.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::returns::{compute_returns, ReturnSeries};
use crate::rng::{derive_seed, label_hash, open_unit, stream_rng, Rng};

/// `mu` strictly below this is in the Levy-stable domain.
pub const LEVY_STABLE_BOUNDARY: f64 = 2.0;

pub const DEFAULT_MIN_SAMPLE: usize = 100;
pub const DEFAULT_MIN_TAIL: usize = 50;
pub const DEFAULT_MAX_CANDIDATES: usize = 250;
pub const DEFAULT_BOOTSTRAP_B: usize = 1000;
pub const DEFAULT_GOF_B: usize = 250;
/// Redraws allowed per bootstrap replicate before giving up.
pub const MAX_REDRAWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    Positive,
    Negative,
    Absolute,
}

impl TailKind {
    pub const ALL: [TailKind; 3] = [TailKind::Positive, TailKind::Negative, TailKind::Absolute];

    pub fn name(self) -> &'static str {
        match self {
            TailKind::Positive => "positive",
            TailKind::Negative => "negative",
            TailKind::Absolute => "absolute",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailSample {
    pub kind: TailKind,
    pub market: String,
    pub maturity: u32,
    /// Strictly positive magnitudes.
    pub values: Vec<f64>,
}

impl TailSample {
    pub fn new(kind: TailKind, values: Vec<f64>) -> Self {
        TailSample {
            kind,
            market: String::new(),
            maturity: 0,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub market: String,
    pub maturity: u32,
    pub kind: TailKind,
    /// CCDF exponent (density exponent minus one).
    pub mu: f64,
    pub xmin: f64,
    pub n_tail: usize,
    /// Size of the whole sample the cutoff was chosen from.
    pub n: usize,
    /// Bootstrap standard error of `mu`, once computed.
    pub mu_err: Option<f64>,
    pub ks_stat: f64,
    pub gof_p: Option<f64>,
    pub levy_stable: bool,
}

/// `mu < 2`; the boundary itself is not stable.
pub fn is_levy_stable(mu: f64) -> bool {
    mu < LEVY_STABLE_BOUNDARY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    /// Smallest sample `fit_tail` accepts.
    pub min_sample: usize,
    /// Smallest tail (values at or above `xmin`) a candidate cutoff may leave.
    pub min_tail: usize,
    /// Candidate cutoffs are thinned to this many quantile-spaced values.
    pub max_candidates: usize,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            min_sample: DEFAULT_MIN_SAMPLE,
            min_tail: DEFAULT_MIN_TAIL,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Splits returns into positive, negative (as magnitudes) and absolute
/// samples. Zeros go nowhere.
pub fn split_tails(series: &ReturnSeries) -> (TailSample, TailSample, TailSample) {
    let make = |kind, values: Vec<f64>| TailSample {
        kind,
        market: series.market.clone(),
        maturity: series.maturity,
        values,
    };
    let r = series.values();
    (
        make(TailKind::Positive, r.iter().copied().filter(|&x| x > 0.0).collect()),
        make(TailKind::Negative, r.iter().filter(|&&x| x < 0.0).map(|x| -x).collect()),
        make(TailKind::Absolute, r.iter().filter(|&&x| x != 0.0).map(|x| x.abs()).collect()),
    )
}

fn sorted_values(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = values.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Domain(format!("tail values must be positive and finite, got {bad}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// MLE of `mu` above `xmin` for an ascending tail slice, with its KS distance.
fn fit_sorted_tail(tail: &[f64], xmin: f64) -> Option<(f64, f64)> {
    let log_sum: f64 = tail.iter().map(|x| (x / xmin).ln()).sum();
    if !(log_sum > 0.0) {
        return None;
    }
    let n = tail.len() as f64;
    let mu = n / log_sum;
    Some((mu, ks_sorted(tail, xmin, mu)))
}

fn ks_sorted(tail: &[f64], xmin: f64, mu: f64) -> f64 {
    let n = tail.len() as f64;
    tail.iter()
        .enumerate()
        .map(|(j, &x)| {
            let model = 1.0 - (x / xmin).powf(-mu);
            let below = j as f64 / n;
            let above = (j + 1) as f64 / n;
            (model - below).abs().max((above - model).abs())
        })
        .fold(0.0, f64::max)
}

/// KS distance between the values at or above `xmin` and a power law with
/// CCDF exponent `mu` starting at `xmin`.
pub fn ks_distance(values: &[f64], xmin: f64, mu: f64) -> Result<f64> {
    let v = sorted_values(values)?;
    let start = v.partition_point(|&x| x < xmin);
    if start == v.len() {
        return Err(Error::InsufficientData(format!("no values at or above xmin = {xmin}")));
    }
    Ok(ks_sorted(&v[start..], xmin, mu))
}

fn make_fit(sample: &TailSample, mu: f64, xmin: f64, n_tail: usize, ks: f64) -> TailFit {
    TailFit {
        market: sample.market.clone(),
        maturity: sample.maturity,
        kind: sample.kind,
        mu,
        xmin,
        n_tail,
        n: sample.len(),
        mu_err: None,
        ks_stat: ks,
        gof_p: None,
        levy_stable: is_levy_stable(mu),
    }
}

/// Power-law fit at a fixed cutoff: `mu = n / sum ln(x / xmin)` over `x >= xmin`.
pub fn fit_tail_at(sample: &TailSample, xmin: f64) -> Result<TailFit> {
    if !(xmin > 0.0 && xmin.is_finite()) {
        return Err(Error::Domain(format!("xmin must be positive, got {xmin}")));
    }
    let v = sorted_values(&sample.values)?;
    let start = v.partition_point(|&x| x < xmin);
    let tail = &v[start..];
    if tail.is_empty() {
        return Err(Error::InsufficientData(format!("no values at or above xmin = {xmin}")));
    }
    let (mu, ks) = fit_sorted_tail(tail, xmin)
        .ok_or_else(|| Error::Degenerate(format!("every tail value equals xmin = {xmin}")))?;
    Ok(make_fit(sample, mu, xmin, tail.len(), ks))
}

/// Start indices of the candidate cutoffs in an ascending sample: first
/// occurrence of each distinct value that leaves at least `min_tail` points,
/// thinned to `max_candidates` evenly spaced entries.
fn candidate_starts(v: &[f64], config: &TailConfig) -> Vec<usize> {
    let n = v.len();
    let mut starts: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || v[i] != v[i - 1]) && n - i >= config.min_tail.max(1))
        .collect();
    let cap = config.max_candidates.max(2);
    if starts.len() > cap {
        let last = starts.len() - 1;
        let mut thinned: Vec<usize> = (0..cap)
            .map(|k| starts[(k * last + (cap - 1) / 2) / (cap - 1)])
            .collect();
        thinned.dedup();
        starts = thinned;
    }
    starts
}

fn fit_sorted(sample: &TailSample, v: &[f64], config: &TailConfig) -> Result<TailFit> {
    if v.len() < config.min_sample {
        return Err(Error::InsufficientData(format!(
            "{} tail sample has {} values, need {}",
            sample.kind.name(),
            v.len(),
            config.min_sample
        )));
    }
    if v.first() == v.last() {
        return Err(Error::Degenerate("all sample values are equal".into()));
    }
    // scan with precomputed logs, then refit the winner directly
    let ln_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let mut suffix = vec![0.0; v.len() + 1];
    for i in (0..v.len()).rev() {
        suffix[i] = suffix[i + 1] + ln_v[i];
    }
    let mut best: Option<(f64, usize)> = None;
    for start in candidate_starts(v, config) {
        let m = (v.len() - start) as f64;
        let log_sum = suffix[start] - m * ln_v[start];
        if !(log_sum > 0.0) {
            continue;
        }
        let mu = m / log_sum;
        let ks = ln_v[start..]
            .iter()
            .enumerate()
            .map(|(j, &lx)| {
                let model = 1.0 - (-mu * (lx - ln_v[start])).exp();
                (model - j as f64 / m).abs().max(((j + 1) as f64 / m - model).abs())
            })
            .fold(0.0, f64::max);
        if best.is_none_or(|b| ks < b.0) {
            best = Some((ks, start));
        }
    }
    let no_cutoff = || {
        Error::InsufficientData(format!(
            "no cutoff leaves a tail of {} distinct-enough values",
            config.min_tail
        ))
    };
    let start = best.ok_or_else(no_cutoff)?.1;
    let xmin = v[start];
    let (mu, ks) = fit_sorted_tail(&v[start..], xmin).ok_or_else(no_cutoff)?;
    let n_tail = v.len() - start;
    Ok(make_fit(sample, mu, xmin, n_tail, ks))
}

/// Threshold-free power-law fit: the cutoff minimizing the KS distance.
pub fn fit_tail(sample: &TailSample, config: &TailConfig) -> Result<TailFit> {
    let v = sorted_values(&sample.values)?;
    fit_sorted(sample, &v, config)
}

/// Sample standard deviation (B - 1 denominator).
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Runs `replicates` draws in parallel, each on its own stream of `seed`,
/// redrawing failed replicates up to `MAX_REDRAWS` times.
fn run_replicates<T, F>(replicates: usize, seed: u64, what: &str, draw: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Rng) -> Result<T> + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut last = None;
            for _ in 0..MAX_REDRAWS {
                match draw(&mut rng) {
                    Ok(v) => return Ok(v),
                    Err(e) => last = Some(e),
                }
            }
            Err(Error::Bootstrap(format!(
                "{what} replicate {i} failed {MAX_REDRAWS} times; last error: {}",
                last.map(|e| e.to_string()).unwrap_or_default()
            )))
        })
        .collect()
}

/// Nonparametric bootstrap standard error of the fitted `mu`.
pub fn bootstrap_se(sample: &TailSample, config: &TailConfig, replicates: usize, seed: u64) -> Result<f64> {
    if replicates < 2 {
        return Err(Error::Bootstrap(format!("need at least 2 replicates, got {replicates}")));
    }
    let v = sorted_values(&sample.values)?;
    fit_sorted(sample, &v, config)?;
    let n = v.len();
    let mus = run_replicates(replicates, seed, "bootstrap", |rng| {
        use rand::Rng as _;
        let mut resample: Vec<f64> = (0..n).map(|_| v[rng.random_range(0..n)]).collect();
        resample.sort_by(f64::total_cmp);
        fit_sorted(sample, &resample, config).map(|f| f.mu)
    })?;
    Ok(std_dev(&mus))
}

/// Inverse-CDF power-law draw: `xmin * u^(-1/mu)` for `u` in `(0, 1]`.
pub fn pareto_quantile(u: f64, mu: f64, xmin: f64) -> f64 {
    xmin * u.powf(-1.0 / mu)
}

/// Semi-parametric goodness-of-fit p-value. Each replicate keeps the body of
/// the data below `xmin` (resampled), replaces the tail by draws from the
/// fitted law, refits from scratch and compares KS distances. `None` when
/// `replicates` is zero.
pub fn gof_pvalue(
    fit: &TailFit,
    sample: &TailSample,
    config: &TailConfig,
    replicates: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if replicates == 0 {
        return Ok(None);
    }
    let v = sorted_values(&sample.values)?;
    let body: Vec<f64> = v.iter().copied().take_while(|&x| x < fit.xmin).collect();
    let n = v.len();
    let n_tail = n - body.len();
    if n_tail != fit.n_tail {
        return Err(Error::Domain(format!(
            "fit has n_tail = {} but the sample has {n_tail} values above xmin",
            fit.n_tail
        )));
    }
    let hits = run_replicates(replicates, seed, "goodness-of-fit", |rng| {
        use rand::Rng as _;
        let mut synthetic: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n_tail {
            synthetic.push(pareto_quantile(open_unit(rng), fit.mu, fit.xmin));
        }
        for _ in 0..body.len() {
            synthetic.push(body[rng.random_range(0..body.len())]);
        }
        synthetic.sort_by(f64::total_cmp);
        fit_sorted(sample, &synthetic, config).map(|f| f.ks_stat >= fit.ks_stat)
    })?;
    Ok(Some(hits.iter().filter(|&&h| h).count() as f64 / replicates as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Exponential,
    Lognormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatioReport {
    pub alternative: Alternative,
    /// Power-law minus alternative log-likelihood over the tail.
    pub lr: f64,
    /// `lr / (sigma * sqrt(n_tail))`, the normalized ratio.
    pub normalized: f64,
    /// Two-sided significance of the sign of `lr`.
    pub p: f64,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln P(Z > z)` for a standard normal.
fn ln_normal_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - z.ln() - LN_SQRT_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

fn lognormal_loglik(tail: &[f64], xmin: f64, m: f64, s: f64) -> Vec<f64> {
    let norm = ln_normal_sf((xmin.ln() - m) / s);
    tail.iter()
        .map(|&x| {
            let z = (x.ln() - m) / s;
            -x.ln() - s.ln() - LN_SQRT_2PI - 0.5 * z * z - norm
        })
        .collect()
}

/// Negative log-likelihood of a lognormal truncated at `xmin`, over
/// `(location, ln scale)`.
struct TruncatedLognormal<'a> {
    tail: &'a [f64],
    xmin: f64,
}

impl CostFunction for TruncatedLognormal<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let nll = -lognormal_loglik(self.tail, self.xmin, p[0], p[1].exp()).iter().sum::<f64>();
        Ok(if nll.is_nan() { f64::INFINITY } else { nll })
    }
}

fn fit_lognormal(tail: &[f64], xmin: f64, m0: f64, ln_s0: f64) -> Result<Vec<f64>> {
    let fail = |e: argmin::core::Error| Error::Domain(format!("lognormal fit failed: {e}"));
    let simplex = vec![vec![m0, ln_s0], vec![m0 + 0.5, ln_s0], vec![m0, ln_s0 + 0.5]];
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-12).map_err(fail)?;
    let res = Executor::new(TruncatedLognormal { tail, xmin }, solver)
        .configure(|state| state.max_iters(4000))
        .run()
        .map_err(fail)?;
    res.state
        .best_param
        .ok_or_else(|| Error::Domain("lognormal fit produced no estimate".into()))
}

/// Fits the alternative by maximum likelihood on the tail `x >= xmin`
/// (truncated at `xmin`) and compares it to the power law with Vuong's
/// normalized log-likelihood ratio.
pub fn likelihood_ratio(fit: &TailFit, sample: &TailSample, alternative: Alternative) -> Result<LikelihoodRatioReport> {
    let v = sorted_values(&sample.values)?;
    let tail = &v[v.partition_point(|&x| x < fit.xmin)..];
    if tail.len() < 2 || tail.first() == tail.last() {
        return Err(Error::Degenerate(format!(
            "tail above xmin = {} has {} value(s) and no spread",
            fit.xmin,
            tail.len()
        )));
    }
    let xmin = fit.xmin;
    let a = fit.mu + 1.0;
    let pl: Vec<f64> = tail
        .iter()
        .map(|&x| fit.mu.ln() - xmin.ln() - a * (x / xmin).ln())
        .collect();

    let alt: Vec<f64> = match alternative {
        Alternative::Exponential => {
            let excess = tail.iter().map(|x| x - xmin).sum::<f64>() / tail.len() as f64;
            let lambda = 1.0 / excess;
            tail.iter().map(|&x| lambda.ln() - lambda * (x - xmin)).collect()
        }
        Alternative::Lognormal => {
            let logs: Vec<f64> = tail.iter().map(|x| x.ln()).collect();
            let m0 = logs.iter().sum::<f64>() / logs.len() as f64;
            let s0 = (logs.iter().map(|l| (l - m0).powi(2)).sum::<f64>() / logs.len() as f64)
                .sqrt()
                .max(1e-3);
            let best = fit_lognormal(tail, xmin, m0, s0.ln())?;
            lognormal_loglik(tail, xmin, best[0], best[1].exp())
        }
    };

    let diffs: Vec<f64> = pl.iter().zip(&alt).map(|(p, q)| p - q).collect();
    let n = diffs.len() as f64;
    let lr: f64 = diffs.iter().sum();
    let mean = lr / n;
    let sigma = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (normalized, p) = if sigma > 0.0 {
        let z = lr / (sigma * n.sqrt());
        (z, erfc(z.abs() / std::f64::consts::SQRT_2))
    } else {
        (0.0, 1.0)
    };
    Ok(LikelihoodRatioReport {
        alternative,
        lr,
        normalized,
        p,
    })
}

/// Hill estimate of `mu` from the `k` largest values:
/// `k / sum_{i<=k} ln(x_(i) / x_(k+1))` with descending order statistics.
pub fn hill_estimator(sample: &TailSample, k: usize) -> Result<f64> {
    let n = sample.len();
    if k < 2 || k >= n {
        return Err(Error::InsufficientData(format!(
            "Hill estimator needs 2 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let mut v = sorted_values(&sample.values)?;
    v.reverse();
    let threshold = v[k];
    let denom: f64 = v[..k].iter().map(|x| (x / threshold).ln()).sum();
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "the {} largest values all equal the threshold {threshold}",
            k
        )));
    }
    Ok(k as f64 / denom)
}

/// Options for a full tail term-structure run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailStudyConfig {
    pub fit: TailConfig,
    pub bootstrap_b: usize,
    pub gof_b: usize,
    pub likelihood_ratios: bool,
    pub hill: bool,
    pub seed: u64,
}

impl Default for TailStudyConfig {
    fn default() -> Self {
        TailStudyConfig {
            fit: TailConfig::default(),
            bootstrap_b: DEFAULT_BOOTSTRAP_B,
            gof_b: DEFAULT_GOF_B,
            likelihood_ratios: true,
            hill: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub fit: TailFit,
    /// Hill estimate using the fitted tail size as `k`.
    pub hill_mu: Option<f64>,
    pub likelihood_ratios: Vec<LikelihoodRatioReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFailure {
    pub market: String,
    pub maturity: u32,
    pub kind: TailKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TailTermStructure {
    pub cells: Vec<TailCell>,
    pub failures: Vec<TailFailure>,
}

/// Seed for one (market, maturity, kind) cell and purpose.
fn cell_seed(master: u64, sample: &TailSample, purpose: u64) -> u64 {
    derive_seed(
        master,
        &[label_hash(&sample.market), sample.maturity as u64, sample.kind.index(), purpose],
    )
}

fn study_cell(sample: &TailSample, cfg: &TailStudyConfig) -> Result<TailCell> {
    let mut fit = fit_tail(sample, &cfg.fit)?;
    if cfg.bootstrap_b >= 2 {
        fit.mu_err = Some(bootstrap_se(sample, &cfg.fit, cfg.bootstrap_b, cell_seed(cfg.seed, sample, 0))?);
    }
    fit.gof_p = gof_pvalue(&fit, sample, &cfg.fit, cfg.gof_b, cell_seed(cfg.seed, sample, 1))?;
    let hill_mu = if cfg.hill {
        hill_estimator(sample, fit.n_tail.min(sample.len() - 1)).ok()
    } else {
        None
    };
    let likelihood_ratios = if cfg.likelihood_ratios {
        [Alternative::Exponential, Alternative::Lognormal]
            .iter()
            .filter_map(|&alt| likelihood_ratio(&fit, sample, alt).ok())
            .collect()
    } else {
        Vec::new()
    };
    Ok(TailCell {
        fit,
        hill_mu,
        likelihood_ratios,
    })
}

/// Fits every (market, maturity, kind) cell. Failures are collected rather
/// than aborting the run. Output is sorted by market, maturity, kind.
pub fn tail_term_structure_from_returns(returns: &[ReturnSeries], cfg: &TailStudyConfig) -> TailTermStructure {
    let mut samples: Vec<TailSample> = returns
        .iter()
        .flat_map(|r| {
            let (p, n, a) = split_tails(r);
            [p, n, a]
        })
        .collect();
    samples.sort_by(|a, b| {
        a.market
            .cmp(&b.market)
            .then(a.maturity.cmp(&b.maturity))
            .then(a.kind.cmp(&b.kind))
    });
    let results: Vec<Result<TailCell>> = samples.par_iter().map(|s| study_cell(s, cfg)).collect();

    let mut out = TailTermStructure::default();
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok(cell) => out.cells.push(cell),
            Err(e) => out.failures.push(TailFailure {
                market: sample.market.clone(),
                maturity: sample.maturity,
                kind: sample.kind,
                reason: e.to_string(),
            }),
        }
    }
    out
}

pub fn tail_term_structure(dataset: &Dataset, cfg: &TailStudyConfig) -> Result<TailTermStructure> {
    let returns = dataset
        .series
        .iter()
        .map(|s| compute_returns(s).map_err(|e| e.in_series(&s.market, s.maturity)))
        .collect::<Result<Vec<_>>>()?;
    Ok(tail_term_structure_from_returns(&returns, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn pareto(mu: f64, n: usize, seed: u64) -> TailSample {
        let mut rng = stream_rng(seed, 0);
        TailSample::new(
            TailKind::Absolute,
            (0..n).map(|_| pareto_quantile(open_unit(&mut rng), mu, 1.0)).collect(),
        )
    }

    #[test]
    fn split_examples() {
        let r = ReturnSeries::from_values("X", 1, &[1.0, -2.0, 0.0, 3.0]);
        let (p, n, a) = split_tails(&r);
        assert_eq!(p.values, vec![1.0, 3.0]);
        assert_eq!(n.values, vec![2.0]);
        assert_eq!(a.values, vec![1.0, 2.0, 3.0]);

        let all_up = ReturnSeries::from_values("X", 1, &[0.1, 0.2]);
        assert!(split_tails(&all_up).1.is_empty());

        let flipped = ReturnSeries::from_values("X", 1, &[-1.0, 2.0, 0.0, -3.0]);
        let (fp, fn_, _) = split_tails(&flipped);
        assert_eq!((fp.values, fn_.values), (n.values.clone(), p.values.clone()));
    }

    #[test]
    fn closed_form_at_fixed_xmin() {
        let s = TailSample::new(TailKind::Absolute, vec![E; 4]);
        let f = fit_tail_at(&s, 1.0).unwrap();
        assert!((f.mu - 1.0).abs() < 1e-15);
        assert_eq!(f.n_tail, 4);
        assert!(f.levy_stable);
    }

    #[test]
    fn levy_boundary_is_strict() {
        assert!(is_levy_stable(1.99));
        assert!(!is_levy_stable(2.0));
    }

    #[test]
    fn recovers_inverse_cubic_exponent() {
        let f = fit_tail(&pareto(3.0, 5000, 11), &TailConfig::default()).unwrap();
        assert!((f.mu - 3.0).abs() < 0.15, "{f:?}");
        assert!(!f.levy_stable);
    }

    #[test]
    fn reported_ks_is_minimal_over_candidates() {
        let s = pareto(2.5, 400, 5);
        let cfg = TailConfig::default();
        let f = fit_tail(&s, &cfg).unwrap();
        let v = sorted_values(&s.values).unwrap();
        for start in candidate_starts(&v, &cfg) {
            let xmin = v[start];
            let at = fit_tail_at(&s, xmin).unwrap();
            assert!(f.ks_stat <= at.ks_stat, "{} > {} at {xmin}", f.ks_stat, at.ks_stat);
            assert_eq!(at.ks_stat, ks_distance(&s.values, xmin, at.mu).unwrap());
        }
        assert!(f.n_tail >= cfg.min_tail);
    }

    #[test]
    fn candidate_grid_is_thinned() {
        let v: Vec<f64> = (1..=5000).map(|i| i as f64).collect();
        let cfg = TailConfig::default();
        let starts = candidate_starts(&v, &cfg);
        assert_eq!(starts.len(), 250);
        assert_eq!(starts[0], 0);
        assert_eq!(*starts.last().unwrap(), 5000 - cfg.min_tail);
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fit_errors() {
        let cfg = TailConfig::default();
        let small = TailSample::new(TailKind::Positive, vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_tail(&small, &cfg), Err(Error::InsufficientData(_))));
        let flat = TailSample::new(TailKind::Positive, vec![2.0; 200]);
        assert!(matches!(fit_tail(&flat, &cfg), Err(Error::Degenerate(_))));
        // only 60 distinct top values, but a 100-point tail floor
        let strict = TailConfig { min_tail: 1000, ..cfg };
        assert!(matches!(fit_tail(&pareto(3.0, 200, 1), &strict), Err(Error::InsufficientData(_))));
        let bad = TailSample::new(TailKind::Positive, vec![-1.0; 200]);
        assert!(fit_tail(&bad, &cfg).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_sized() {
        let s = pareto(3.0, 2000, 9);
        let cfg = TailConfig::default();
        let a = bootstrap_se(&s, &cfg, 40, 77).unwrap();
        let b = bootstrap_se(&s, &cfg, 40, 77).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0);
        assert!(bootstrap_se(&s, &cfg, 1, 77).is_err());
    }

    #[test]
    fn zero_dispersion_gives_zero_se() {
        assert_eq!(std_dev(&[2.75, 2.75]), 0.0);
    }

    #[test]
    fn bootstrap_se_near_asymptotic_error() {
        let s = pareto(3.0, 5000, 21);
        let cfg = TailConfig::default();
        let f = fit_tail(&s, &cfg).unwrap();
        let se = bootstrap_se(&s, &cfg, 200, 4).unwrap();
        let asymptotic = f.mu / (f.n_tail as f64).sqrt();
        assert!(se > asymptotic / 2.0 && se < asymptotic * 2.0, "se {se} vs {asymptotic}");
    }

    #[test]
    fn gof_disabled_with_zero_replicates() {
        let s = pareto(3.0, 300, 2);
        let cfg = TailConfig::default();
        let f = fit_tail(&s, &cfg).unwrap();
        assert_eq!(gof_pvalue(&f, &s, &cfg, 0, 1).unwrap(), None);
    }

    #[test]
    fn gof_rejects_exponential_tail() {
        let cfg = TailConfig::default();
        let rejected = (0..20u64)
            .filter(|&seed| {
                let mut rng = stream_rng(seed, 0);
                let s = TailSample::new(
                    TailKind::Absolute,
                    (0..5000).map(|_| -open_unit(&mut rng).ln()).collect(),
                );
                let f = fit_tail(&s, &cfg).unwrap();
                gof_pvalue(&f, &s, &cfg, 100, 3).unwrap().unwrap() < 0.1
            })
            .count();
        // the KS-optimal xmin retreats into the far tail, which caps the power
        assert!(rejected >= 12, "rejected {rejected}/20");
    }

    #[test]
    fn likelihood_ratio_signs() {
        let s = pareto(3.0, 3000, 13);
        let f = fit_tail_at(&s, 1.0).unwrap();
        let lr = likelihood_ratio(&f, &s, Alternative::Exponential).unwrap();
        assert!(lr.lr > 0.0 && lr.p < 0.01, "{lr:?}");

        let mut rng = stream_rng(14, 0);
        let e = TailSample::new(
            TailKind::Absolute,
            (0..3000).map(|_| 1.0 - 0.5 * open_unit(&mut rng).ln()).collect(),
        );
        let f = fit_tail_at(&e, 1.0).unwrap();
        let lr = likelihood_ratio(&f, &e, Alternative::Exponential).unwrap();
        assert!(lr.lr < 0.0 && lr.p < 0.01, "{lr:?}");
    }

    #[test]
    fn lognormal_alternative_on_power_law_is_inconclusive_or_favors_power_law() {
        let s = pareto(3.0, 3000, 15);
        let f = fit_tail_at(&s, 1.0).unwrap();
        let lr = likelihood_ratio(&f, &s, Alternative::Lognormal).unwrap();
        assert!(lr.lr > -5.0, "{lr:?}");
        assert!((0.0..=1.0).contains(&lr.p));
    }

    #[test]
    fn tiny_tail_is_inconclusive() {
        let mut inconclusive = 0;
        for seed in 0..20 {
            let s = pareto(3.0, DEFAULT_MIN_TAIL, 100 + seed);
            let f = fit_tail_at(&s, 1.0).unwrap();
            let lr = likelihood_ratio(&f, &s, Alternative::Lognormal).unwrap();
            if lr.p > 0.1 {
                inconclusive += 1;
            }
        }
        assert!(inconclusive >= 16, "{inconclusive}/20");
    }

    #[test]
    fn hill_closed_form() {
        let c = 0.37;
        let s = TailSample::new(
            TailKind::Positive,
            vec![c, E * E * c, E * c, 0.5 * c, 0.1 * c],
        );
        let h = hill_estimator(&s, 2).unwrap();
        assert!((h - 2.0 / 3.0).abs() < 1e-14, "{h}");
        assert!(hill_estimator(&s, 1).is_err());
        assert!(hill_estimator(&s, 5).is_err());
        let ties = TailSample::new(TailKind::Positive, vec![1.0, 3.0, 3.0, 3.0]);
        assert!(matches!(hill_estimator(&ties, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn hill_on_pareto() {
        let h = hill_estimator(&pareto(3.0, 5000, 17), 500).unwrap();
        assert!((h - 3.0).abs() < 0.3, "{h}");
    }

    #[test]
    fn term_structure_cardinality() {
        let mut rng = stream_rng(3, 0);
        let returns: Vec<ReturnSeries> = (1..=4)
            .map(|m| {
                let vals: Vec<f64> = (0..600)
                    .map(|i| {
                        let x = pareto_quantile(open_unit(&mut rng), 3.0, 0.01);
                        if i % 2 == 0 { x } else { -x }
                    })
                    .collect();
                ReturnSeries::from_values("A", m, &vals)
            })
            .collect();
        let cfg = TailStudyConfig {
            bootstrap_b: 10,
            gof_b: 5,
            ..Default::default()
        };
        let out = tail_term_structure_from_returns(&returns, &cfg);
        assert_eq!(out.cells.len(), 12, "{:?}", out.failures);
        assert!(out.failures.is_empty());
        let keys: Vec<_> = out.cells.iter().map(|c| (c.fit.maturity, c.fit.kind)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(out.cells.iter().all(|c| c.fit.mu_err.is_some() && c.fit.gof_p.is_some()));
    }

    #[test]
    fn small_series_fail_softly() {
        let returns = vec![ReturnSeries::from_values("A", 1, &[0.1, -0.2, 0.3])];
        let out = tail_term_structure_from_returns(&returns, &TailStudyConfig::default());
        assert!(out.cells.is_empty());
        assert_eq!(out.failures.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fixed_xmin_matches_direct_formula(
            xs in prop::collection::vec(1.0f64..50.0, 2..=20),
        ) {
            let s = TailSample::new(TailKind::Absolute, xs.clone());
            let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(xs.iter().any(|&x| x > xmin));
            let direct = xs.len() as f64 / xs.iter().map(|x| (x / xmin).ln()).sum::<f64>();
            let f = fit_tail_at(&s, xmin).unwrap();
            prop_assert!((f.mu - direct).abs() <= 4.0 * f64::EPSILON * direct);
        }

        #[test]
        fn power_of_two_scaling_is_exact(seed in 0u64..1000, shift in -8i32..8) {
            let s = pareto(2.5, 300, seed);
            let c = 2f64.powi(shift);
            let scaled = TailSample::new(s.kind, s.values.iter().map(|x| x * c).collect());
            let cfg = TailConfig::default();
            let (a, b) = (fit_tail(&s, &cfg).unwrap(), fit_tail(&scaled, &cfg).unwrap());
            prop_assert_eq!(a.mu.to_bits(), b.mu.to_bits());
            prop_assert_eq!((a.xmin * c).to_bits(), b.xmin.to_bits());
            prop_assert_eq!(
                hill_estimator(&s, 50).unwrap().to_bits(),
                hill_estimator(&scaled, 50).unwrap().to_bits()
            );
        }

        #[test]
        fn general_scaling_is_invariant(seed in 0u64..1000, c in 1e-4f64..1e4) {
            let s = pareto(3.5, 300, seed);
            let scaled = TailSample::new(s.kind, s.values.iter().map(|x| x * c).collect());
            let cfg = TailConfig::default();
            let (a, b) = (fit_tail(&s, &cfg).unwrap(), fit_tail(&scaled, &cfg).unwrap());
            prop_assert!((a.mu - b.mu).abs() < 1e-9 * a.mu);
            prop_assert!((a.xmin * c - b.xmin).abs() < 1e-9 * b.xmin);
        }
    }
}
