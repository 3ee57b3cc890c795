//! Cross-market averages of tail exponents and the two-plateau regime fit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling::sse_gain;
use crate::tails::{TailFit, TailKind};

pub const DEFAULT_PLATEAU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub maturity: u32,
    pub mu_bar_pos: Option<f64>,
    pub mu_bar_neg: Option<f64>,
    pub mu_bar_abs: Option<f64>,
    /// Markets contributing at least one fit at this maturity.
    pub n_markets: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_abs: usize,
    /// `|mu_bar_pos - mu_bar_neg|` when both exist.
    pub asymmetry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub points: Vec<AggregatePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveField {
    Abs,
    Pos,
    Neg,
    Asymmetry,
}

impl CurveField {
    pub const ALL: [CurveField; 4] = [CurveField::Abs, CurveField::Pos, CurveField::Neg, CurveField::Asymmetry];

    pub fn name(self) -> &'static str {
        match self {
            CurveField::Abs => "abs",
            CurveField::Pos => "pos",
            CurveField::Neg => "neg",
            CurveField::Asymmetry => "asymmetry",
        }
    }

    pub fn of(self, p: &AggregatePoint) -> Option<f64> {
        match self {
            CurveField::Abs => p.mu_bar_abs,
            CurveField::Pos => p.mu_bar_pos,
            CurveField::Neg => p.mu_bar_neg,
            CurveField::Asymmetry => p.asymmetry,
        }
    }
}

impl AggregateCurve {
    pub fn series(&self, field: CurveField) -> Vec<(u32, f64)> {
        self.points
            .iter()
            .filter_map(|p| field.of(p).map(|v| (p.maturity, v)))
            .collect()
    }
}

/// Unweighted mean of `mu` per (maturity, kind) across markets. Fits whose
/// tail is smaller than `min_tail` are left out.
pub fn aggregate_exponents(fits: &[TailFit], min_tail: usize) -> Result<AggregateCurve> {
    #[derive(Default)]
    struct Acc {
        sums: [f64; 3],
        counts: [usize; 3],
        markets: BTreeSet<String>,
    }
    let mut by_m: BTreeMap<u32, Acc> = BTreeMap::new();
    // sort first so float sums do not depend on input order
    let mut accepted: Vec<&TailFit> = fits.iter().filter(|f| f.n_tail >= min_tail).collect();
    accepted.sort_by(|a, b| {
        a.maturity
            .cmp(&b.maturity)
            .then(a.kind.cmp(&b.kind))
            .then(a.market.cmp(&b.market))
            .then(a.mu.total_cmp(&b.mu))
    });
    for f in accepted {
        let acc = by_m.entry(f.maturity).or_default();
        let k = f.kind as usize;
        acc.sums[k] += f.mu;
        acc.counts[k] += 1;
        acc.markets.insert(f.market.clone());
    }
    if by_m.is_empty() {
        return Err(Error::InsufficientData("no accepted tail fits to aggregate".into()));
    }
    let points = by_m
        .into_iter()
        .map(|(maturity, acc)| {
            let avg = |k: TailKind| {
                let i = k as usize;
                (acc.counts[i] > 0).then(|| acc.sums[i] / acc.counts[i] as f64)
            };
            let (pos, neg) = (avg(TailKind::Positive), avg(TailKind::Negative));
            AggregatePoint {
                maturity,
                mu_bar_pos: pos,
                mu_bar_neg: neg,
                mu_bar_abs: avg(TailKind::Absolute),
                n_markets: acc.markets.len(),
                n_pos: acc.counts[TailKind::Positive as usize],
                n_neg: acc.counts[TailKind::Negative as usize],
                n_abs: acc.counts[TailKind::Absolute as usize],
                asymmetry: pos.zip(neg).map(|(p, n)| (p - n).abs()),
            }
        })
        .collect();
    Ok(AggregateCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    /// Last maturity of the low-M plateau, when the split is accepted.
    pub mt: Option<u32>,
    pub level_low_m: Option<f64>,
    pub level_high_m: Option<f64>,
    /// Residual sum of squares of the accepted model (the single level when
    /// no split is accepted).
    pub sse: f64,
    /// `1 - SSE_two / SSE_one` at the best split.
    pub sse_gain: f64,
}

fn sse_about_mean(v: &[f64]) -> (f64, f64) {
    // shifted by the first value so constant runs have an exact mean
    let m = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m).powi(2)).sum())
}

/// Two-level step fit over `(maturity, value)` points. The boundary
/// maturity belongs to the low plateau; ties go to the smallest `Mt`.
pub fn fit_two_plateaus_points(points: &[(u32, f64)], threshold: f64) -> Result<RegimeFit> {
    let mut pts = points.to_vec();
    pts.sort_by_key(|p| p.0);
    let n = pts.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "plateau fit needs 5 maturities, got {n}"
        )));
    }
    let values: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (_, sse_one) = sse_about_mean(&values);
    let scale: f64 = values.iter().map(|v| v * v).sum();

    let mut best: Option<(usize, f64, f64, f64)> = None;
    for split in 2..=n - 2 {
        let (low, low_sse) = sse_about_mean(&values[..split]);
        let (high, high_sse) = sse_about_mean(&values[split..]);
        let sse = low_sse + high_sse;
        if best.is_none_or(|b| sse < b.1) {
            best = Some((split, sse, low, high));
        }
    }
    let (split, sse_two, low, high) = best.expect("n >= 5 leaves a split");
    let gain = sse_gain(sse_one, sse_two, scale);
    if gain > threshold {
        Ok(RegimeFit {
            mt: Some(pts[split - 1].0),
            level_low_m: Some(low),
            level_high_m: Some(high),
            sse: sse_two,
            sse_gain: gain,
        })
    } else {
        Ok(RegimeFit {
            mt: None,
            level_low_m: None,
            level_high_m: None,
            sse: sse_one,
            sse_gain: gain,
        })
    }
}

pub fn fit_two_plateaus(curve: &AggregateCurve, field: CurveField, threshold: f64) -> Result<RegimeFit> {
    fit_two_plateaus_points(&curve.series(field), threshold)
}
