//! Daily log-returns with the three-day gap rule.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ConstantMaturitySeries;

/// Largest calendar gap, in days, over which a return is still computed.
pub const MAX_GAP_DAYS: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnObservation {
    /// Date of the later price.
    pub date: NaiveDate,
    /// Calendar days since the previous price, 1..=3.
    pub dt: u8,
    /// Log-return per day.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub market: String,
    pub maturity: u32,
    pub observations: Vec<ReturnObservation>,
    /// Consecutive price pairs dropped because their gap exceeded three days.
    pub skipped: usize,
}

impl ReturnSeries {
    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Wraps bare values as consecutive daily observations. Handy for
    /// statistics that only look at the values.
    pub fn from_values(market: &str, maturity: u32, values: &[f64]) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        ReturnSeries {
            market: market.to_string(),
            maturity,
            observations: values
                .iter()
                .zip(start.iter_days().skip(1))
                .map(|(&value, date)| ReturnObservation { date, dt: 1, value })
                .collect(),
            skipped: 0,
        }
    }
}

/// `r = (ln P(t) - ln P(t - dt)) / dt` for each consecutive pair with
/// `dt <= 3` calendar days; wider gaps are counted in `skipped`.
pub fn compute_returns(series: &ConstantMaturitySeries) -> Result<ReturnSeries> {
    if series.points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} M={}: {} price point(s), need at least 2",
            series.market,
            series.maturity,
            series.points.len()
        )));
    }
    let mut observations = Vec::with_capacity(series.points.len() - 1);
    let mut skipped = 0;
    for pair in series.points.windows(2) {
        let (t0, p0) = pair[0];
        let (t1, p1) = pair[1];
        let dt = (t1 - t0).num_days();
        if dt < 1 {
            return Err(Error::Domain(format!(
                "{} M={}: dates not strictly increasing at {t1}",
                series.market, series.maturity
            )));
        }
        if dt > MAX_GAP_DAYS {
            skipped += 1;
            continue;
        }
        observations.push(ReturnObservation {
            date: t1,
            dt: dt as u8,
            value: (p1.ln() - p0.ln()) / dt as f64,
        });
    }
    Ok(ReturnSeries {
        market: series.market.clone(),
        maturity: series.maturity,
        observations,
        skipped,
    })
}
