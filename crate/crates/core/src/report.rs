//! Line-oriented JSON records and CSV plot-data files.
//!
//! Every stage writes a `<stage>.jsonl` file whose first line is a
//! `header` record carrying [`REPORT_SCHEMA`]. The final report is a `meta`
//! record followed by the stage files in pipeline order. Each line is one
//! object tagged by its `record` field:
//!
//! | record      | stage     | contents                                        |
//! |-------------|-----------|-------------------------------------------------|
//! | `meta`      | report    | tool version, RNG, exponent convention, config  |
//! | `header`    | all       | schema version and stage name                   |
//! | `period`    | ingest    | common analysis window                          |
//! | `market`    | ingest    | series count, points and span per market        |
//! | `returns`   | returns   | observations and skipped pairs per series       |
//! | `moments`   | moments   | moment summary per series                       |
//! | `contango`  | moments   | contango index per market                       |
//! | `scaling`   | scaling   | power-law fit per market and statistic          |
//! | `crossover` | scaling   | two-segment search per market and statistic     |
//! | `samuelson` | scaling   | monotonicity of volatility with maturity        |
//! | `tail`      | tails     | tail fit, Hill estimate and likelihood ratios   |
//! | `aggregate` | aggregate | cross-market exponent averages per maturity     |
//! | `regime`    | aggregate | two-plateau fit per curve field                 |
//! | `warning`   | any       | non-fatal problem (skipped returns, bad fits)   |
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! recovers the exact values.

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregatePoint, CurveField, RegimeFit};
use crate::config::PipelineConfig;
use crate::curvestats::{ContangoIndex, MomentSummary};
use crate::error::{Error, Result};
use crate::scaling::{SamuelsonReport, Statistic};
use crate::tails::{TailCell, TailKind};

pub const REPORT_SCHEMA: &str = "termstats-report/1";

pub const EXPONENT_CONVENTION: &str = "mu is the CCDF exponent, P(X > x) ~ x^-mu; the density exponent is mu + 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub exponent_convention: String,
    pub config_version: u32,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSummary {
    pub market: String,
    pub series: usize,
    pub max_maturity: u32,
    pub points: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSummary {
    pub market: String,
    pub maturity: u32,
    pub observations: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub market: String,
    pub statistic: Statistic,
    pub alpha: f64,
    pub alpha_err: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub fit_min: u32,
    pub fit_max: u32,
    pub n_points: usize,
    /// Whether `r_squared` reaches the configured floor.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverRecord {
    pub market: String,
    pub statistic: Statistic,
    pub breakpoint: Option<u32>,
    pub alpha_before: Option<f64>,
    pub alpha_after: Option<f64>,
    pub sse_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRecord {
    pub field: CurveField,
    pub mt: Option<u32>,
    pub level_low_m: Option<f64>,
    pub level_high_m: Option<f64>,
    pub sse: f64,
    pub sse_gain: f64,
}

impl RegimeRecord {
    pub fn new(field: CurveField, fit: &RegimeFit) -> Self {
        RegimeRecord {
            field,
            mt: fit.mt,
            level_low_m: fit.level_low_m,
            level_high_m: fit.level_high_m,
            sse: fit.sse,
            sse_gain: fit.sse_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: String,
    pub market: Option<String>,
    pub maturity: Option<u32>,
    pub kind: Option<TailKind>,
    pub message: String,
}

impl Warning {
    pub fn new(stage: &str, message: impl Into<String>) -> Self {
        Warning {
            stage: stage.to_string(),
            market: None,
            maturity: None,
            kind: None,
            message: message.into(),
        }
    }

    pub fn at(mut self, market: &str, maturity: Option<u32>) -> Self {
        self.market = Some(market.to_string());
        self.maturity = maturity;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Meta(Meta),
    Header { schema: String, stage: String },
    Period { start: NaiveDate, end: NaiveDate },
    Market(MarketSummary),
    Returns(ReturnSummary),
    Moments(MomentSummary),
    Contango(ContangoIndex),
    Scaling(ScalingRecord),
    Crossover(CrossoverRecord),
    Samuelson(SamuelsonReport),
    Tail(TailCell),
    Aggregate(AggregatePoint),
    Regime(RegimeRecord),
    Warning(Warning),
}

impl Record {
    pub fn header(stage: &str) -> Self {
        Record::Header {
            schema: REPORT_SCHEMA.to_string(),
            stage: stage.to_string(),
        }
    }
}

pub fn to_jsonl(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::io("encoding report record", e.into()))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Parses a JSONL artifact; `name` is used in error messages.
pub fn from_jsonl(bytes: &[u8], name: &str) -> Result<Vec<Record>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("{name}: {e}"),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: format!("{name}: {e}"),
            })
        })
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T], headers: &[&str]) -> Result<Vec<u8>> {
    let wrap = |e: csv::Error| Error::io("encoding csv", e.into());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(headers).map_err(wrap)?;
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Error::io("encoding csv", e.into_error()))
}

pub fn from_csv<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: format!("{name}: {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_exactly() {
        let m = MomentSummary {
            market: "WTI".into(),
            maturity: 3,
            count: 10,
            mean: 0.1 + 0.2,
            mean_abs: 1.0 / 3.0,
            variance: f64::MIN_POSITIVE,
            skewness: -0.0,
            kurtosis: 3.000_000_000_000_000_4,
        };
        let records = vec![
            Record::header("moments"),
            Record::Moments(m.clone()),
            Record::Warning(Warning::new("moments", "x").at("WTI", Some(2))),
        ];
        let bytes = to_jsonl(&records).unwrap();
        let back = from_jsonl(&bytes, "t").unwrap();
        assert_eq!(back, records);
        let Record::Moments(b) = &back[1] else { panic!() };
        assert_eq!(b.mean.to_bits(), m.mean.to_bits());
        assert_eq!(b.kurtosis.to_bits(), m.kurtosis.to_bits());
        assert!(String::from_utf8(bytes).unwrap().starts_with(r#"{"record":"header","schema":"termstats-report/1""#));
    }

    #[test]
    fn csv_round_trip_exactly() {
        #[derive(Debug, PartialEq, Serialize, Deserialize)]
        struct Row {
            m: u32,
            v: f64,
            o: Option<f64>,
        }
        let rows = vec![Row { m: 1, v: 0.1 + 0.2, o: None }, Row { m: 2, v: 1e-300, o: Some(2.5) }];
        let bytes = to_csv(&rows, &["m", "v", "o"]).unwrap();
        assert_eq!(from_csv::<Row>(&bytes, "t").unwrap(), rows);
    }

    #[test]
    fn bad_line_is_reported() {
        let err = from_jsonl(b"{\"record\":\"header\",\"schema\":\"a\",\"stage\":\"b\"}\nnot json\n", "x.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
