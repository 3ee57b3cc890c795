//! Moment term structures and the contango index.
//!
//! All moments use population (1/T) normalization. Kurtosis is the raw
//! standardized fourth moment, so a Gaussian sits at 3.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::returns::{compute_returns, ReturnSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub market: String,
    pub maturity: u32,
    pub count: usize,
    pub mean: f64,
    pub mean_abs: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContangoIndex {
    pub market: String,
    /// Fraction of compared dates on which the far price exceeds the near price.
    pub c: f64,
    pub far_maturity: u32,
    /// Shortest maturity observed across the compared dates.
    pub near_maturity: u32,
    pub records: usize,
}

pub const DEFAULT_FAR_MATURITY: u32 = 9;

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Deviations from the mean, taken through differences to the first value.
/// A shift that is exact on every value leaves them bit-identical.
fn deviations(values: &[f64]) -> Vec<f64> {
    let x0 = values[0];
    let d: Vec<f64> = values.iter().map(|x| x - x0).collect();
    let m = mean(&d);
    d.iter().map(|x| x - m).collect()
}

fn second_moment(dev: &[f64]) -> f64 {
    dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64
}

pub fn mean_abs_values(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("mean absolute return of an empty series".into()));
    }
    Ok(values.iter().map(|r| r.abs()).sum::<f64>() / values.len() as f64)
}

pub fn variance_values(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 returns, got {}",
            values.len()
        )));
    }
    Ok(second_moment(&deviations(values)))
}

fn standardized_moment(values: &[f64], k: i32, min_len: usize, name: &str) -> Result<f64> {
    if values.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "{name} needs at least {min_len} returns, got {}",
            values.len()
        )));
    }
    let dev = deviations(values);
    let var = second_moment(&dev);
    if var <= 0.0 {
        return Err(Error::Degenerate(format!("{name} of a zero-variance sample")));
    }
    let sd = var.sqrt();
    Ok(dev.iter().map(|d| (d / sd).powi(k)).sum::<f64>() / dev.len() as f64)
}

pub fn skewness_values(values: &[f64]) -> Result<f64> {
    standardized_moment(values, 3, 3, "skewness")
}

pub fn kurtosis_values(values: &[f64]) -> Result<f64> {
    standardized_moment(values, 4, 4, "kurtosis")
}

/// `<|r|> = (1/T) sum |r_i|`
pub fn mean_abs(series: &ReturnSeries) -> Result<f64> {
    mean_abs_values(&series.values())
}

/// `(1/T) sum (r_i - <r>)^2`
pub fn variance(series: &ReturnSeries) -> Result<f64> {
    variance_values(&series.values())
}

pub fn skewness(series: &ReturnSeries) -> Result<f64> {
    skewness_values(&series.values())
}

pub fn kurtosis(series: &ReturnSeries) -> Result<f64> {
    kurtosis_values(&series.values())
}

pub fn summarize(series: &ReturnSeries) -> Result<MomentSummary> {
    let values = series.values();
    let tag = |e: Error| e.in_series(&series.market, series.maturity);
    Ok(MomentSummary {
        market: series.market.clone(),
        maturity: series.maturity,
        count: values.len(),
        mean: if values.is_empty() { f64::NAN } else { mean(&values) },
        mean_abs: mean_abs_values(&values).map_err(tag)?,
        variance: variance_values(&values).map_err(tag)?,
        skewness: skewness_values(&values).map_err(tag)?,
        kurtosis: kurtosis_values(&values).map_err(tag)?,
    })
}

/// One summary per (market, maturity), sorted. The first failing series
/// aborts with its market and maturity attached.
pub fn moment_term_structure(dataset: &Dataset) -> Result<Vec<MomentSummary>> {
    let mut out = dataset
        .series
        .iter()
        .map(|s| {
            let r = compute_returns(s).map_err(|e| e.in_series(&s.market, s.maturity))?;
            summarize(&r)
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.market.cmp(&b.market).then(a.maturity.cmp(&b.maturity)));
    Ok(out)
}

/// Fraction of dates on which `P(far) > P(near)`, with the near leg being the
/// shortest maturity quoted that day. Ties count as not in contango.
pub fn contango_index(dataset: &Dataset, market: &str, far: u32) -> Result<ContangoIndex> {
    let far_series = dataset.get(market, far).ok_or_else(|| {
        Error::InsufficientData(format!("{market}: no series at far maturity {far}"))
    })?;

    let mut nearest: BTreeMap<NaiveDate, (u32, f64)> = BTreeMap::new();
    for s in dataset.market_series(market).filter(|s| s.maturity < far) {
        for &(t, p) in &s.points {
            let slot = nearest.entry(t).or_insert((s.maturity, p));
            if s.maturity < slot.0 {
                *slot = (s.maturity, p);
            }
        }
    }

    let mut records = 0;
    let mut contango = 0;
    let mut near_maturity = u32::MAX;
    for &(t, p_far) in &far_series.points {
        if let Some(&(m, p_near)) = nearest.get(&t) {
            records += 1;
            near_maturity = near_maturity.min(m);
            if p_far - p_near > 0.0 {
                contango += 1;
            }
        }
    }
    if records == 0 {
        return Err(Error::InsufficientData(format!(
            "{market}: no dates with both a near leg and maturity {far}"
        )));
    }
    Ok(ContangoIndex {
        market: market.to_string(),
        c: contango as f64 / records as f64,
        far_maturity: far,
        near_maturity,
        records,
    })
}
