//! Maturity scaling of the mean absolute return and the variance.
//!
//! Fits are unweighted OLS of `ln y` on `ln M`; the exponent is minus the
//! slope. A two-segment search locates a crossover where the curve flattens.

use serde::{Deserialize, Serialize};

use crate::curvestats::MomentSummary;
use crate::error::{Error, Result};

pub const DEFAULT_CROSSOVER_THRESHOLD: f64 = 0.5;
pub const DEFAULT_R_SQUARED_FLOOR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    MeanAbs,
    Variance,
}

impl Statistic {
    pub const ALL: [Statistic; 2] = [Statistic::MeanAbs, Statistic::Variance];

    pub fn of(self, m: &MomentSummary) -> f64 {
        match self {
            Statistic::MeanAbs => m.mean_abs,
            Statistic::Variance => m.variance,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Statistic::MeanAbs => "mean_abs",
            Statistic::Variance => "variance",
        }
    }
}

/// Inclusive maturity window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaturityRange {
    pub min: u32,
    pub max: u32,
}

impl MaturityRange {
    pub const ALL: MaturityRange = MaturityRange { min: 1, max: u32::MAX };

    pub fn contains(&self, m: u32) -> bool {
        m >= self.min && m <= self.max
    }
}

impl Default for MaturityRange {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    pub sse: f64,
}

pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_se = if xs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r_squared = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept,
        slope_se,
        r_squared,
        sse,
    }
}

/// Power law `y = exp(intercept) * M^(-alpha)` fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub alpha_err: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Smallest and largest maturity actually used.
    pub range: (u32, u32),
    pub n_points: usize,
}

fn log_points(points: &[(u32, f64)], range: MaturityRange) -> Result<(Vec<f64>, Vec<f64>, Vec<u32>)> {
    let mut pts: Vec<(u32, f64)> = points.iter().copied().filter(|p| range.contains(p.0)).collect();
    pts.sort_by_key(|p| p.0);
    if pts.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Domain("duplicate maturity in scaling points".into()));
    }
    if let Some(bad) = pts.iter().find(|p| !(p.1 > 0.0) || !p.1.is_finite() || p.0 == 0) {
        return Err(Error::Domain(format!(
            "cannot take logs of point (M={}, y={})",
            bad.0, bad.1
        )));
    }
    let xs = pts.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys = pts.iter().map(|p| p.1.ln()).collect();
    Ok((xs, ys, pts.iter().map(|p| p.0).collect()))
}

/// OLS of `ln y` on `ln M` over the points inside `range`.
pub fn fit_power_law_scaling(points: &[(u32, f64)], range: MaturityRange) -> Result<ScalingFit> {
    let (xs, ys, ms) = log_points(points, range)?;
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs 3 points, got {}",
            xs.len()
        )));
    }
    let fit = ols(&xs, &ys);
    Ok(ScalingFit {
        alpha: -fit.slope,
        alpha_err: fit.slope_se,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        range: (ms[0], ms[ms.len() - 1]),
        n_points: xs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    /// Last maturity of the first segment, when the split is accepted.
    pub breakpoint: Option<u32>,
    pub alpha_before: Option<f64>,
    pub alpha_after: Option<f64>,
    /// `1 - SSE_two / SSE_one` at the best split.
    pub sse_gain: f64,
}

/// Relative SSE reduction, treating an exact one-segment fit as zero gain.
pub(crate) fn sse_gain(sse_one: f64, sse_two: f64, scale: f64) -> f64 {
    if sse_one <= 1e-24 * scale.max(1.0) {
        0.0
    } else {
        (1.0 - sse_two / sse_one).max(0.0)
    }
}

/// Exhaustive two-segment log-log search with at least 3 points per side.
pub fn detect_crossover(points: &[(u32, f64)], threshold: f64) -> Result<Crossover> {
    let (xs, ys, ms) = log_points(points, MaturityRange::ALL)?;
    let n = xs.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "crossover search needs 8 points, got {n}"
        )));
    }
    let one = ols(&xs, &ys);
    let scale: f64 = ys.iter().map(|y| y * y).sum();

    let mut best: Option<(usize, f64, LineFit, LineFit)> = None;
    for split in 3..=n - 3 {
        let left = ols(&xs[..split], &ys[..split]);
        let right = ols(&xs[split..], &ys[split..]);
        let sse = left.sse + right.sse;
        if best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((split, sse, left, right));
        }
    }
    let (split, sse_two, left, right) = best.expect("n >= 8 leaves at least one split");
    let gain = sse_gain(one.sse, sse_two, scale);
    let accepted = gain > threshold;
    Ok(Crossover {
        breakpoint: accepted.then_some(ms[split - 1]),
        alpha_before: accepted.then_some(-left.slope),
        alpha_after: accepted.then_some(-right.slope),
        sse_gain: gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    /// Share of consecutive maturity pairs where the statistic falls.
    pub fraction_decreasing: f64,
    pub argmax_maturity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamuelsonReport {
    pub market: String,
    pub mean_abs: Monotonicity,
    pub variance: Monotonicity,
}

fn monotonicity(curve: &[(u32, f64)]) -> Monotonicity {
    let falling = curve.windows(2).filter(|w| w[1].1 < w[0].1).count();
    let argmax = curve
        .iter()
        .fold(curve[0], |best, &p| if p.1 > best.1 { p } else { best })
        .0;
    Monotonicity {
        fraction_decreasing: falling as f64 / (curve.len() - 1) as f64,
        argmax_maturity: argmax,
    }
}

/// Decline of volatility with maturity for one market's moment curve.
pub fn samuelson_check(summaries: &[MomentSummary]) -> Result<SamuelsonReport> {
    if summaries.len() < 2 {
        return Err(Error::InsufficientData("Samuelson check needs 2 maturities".into()));
    }
    let market = &summaries[0].market;
    if summaries.iter().any(|m| &m.market != market) {
        return Err(Error::Domain("Samuelson check expects a single market".into()));
    }
    let mut sorted: Vec<&MomentSummary> = summaries.iter().collect();
    sorted.sort_by_key(|m| m.maturity);
    let curve = |s: Statistic| -> Vec<(u32, f64)> { sorted.iter().map(|m| (m.maturity, s.of(m))).collect() };
    Ok(SamuelsonReport {
        market: market.clone(),
        mean_abs: monotonicity(&curve(Statistic::MeanAbs)),
        variance: monotonicity(&curve(Statistic::Variance)),
    })
}
