//! Raw quote parsing, constant-maturity reconstruction and period alignment.
//!
//! Quotes arrive as `market,obs_date,delivery,settle` rows. On each
//! observation date the unexpired contracts of a market are sorted by
//! delivery month and the k-th one becomes maturity rank `M = k`. A contract
//! is expired when its delivery month is strictly before the month of the
//! observation date. Missing quotes are not interpolated; they shorten that
//! day's curve.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUOTE_HEADER: [&str; 4] = ["market", "obs_date", "delivery", "settle"];

/// Contract delivery month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(YearMonth { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        YearMonth {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    pub fn plus_months(self, n: u32) -> Self {
        let idx = self.year as i64 * 12 + (self.month as i64 - 1) + n as i64;
        YearMonth {
            year: idx.div_euclid(12) as i32,
            month: idx.rem_euclid(12) as u32 + 1,
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("malformed delivery month `{s}` (expected YYYY-MM)"))?;
        if y.len() != 4 || m.len() != 2 {
            return Err(format!("malformed delivery month `{s}` (expected YYYY-MM)"));
        }
        let year: i32 = y
            .parse()
            .map_err(|_| format!("malformed delivery month `{s}`"))?;
        let month: u32 = m
            .parse()
            .map_err(|_| format!("malformed delivery month `{s}`"))?;
        YearMonth::new(year, month).ok_or_else(|| format!("malformed delivery month `{s}`: month out of range"))
    }
}

/// One settlement price for one contract on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct FuturesQuote {
    pub market: String,
    pub obs_date: NaiveDate,
    pub delivery: YearMonth,
    pub settle: f64,
}

/// Daily prices of one market at a fixed maturity rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantMaturitySeries {
    pub market: String,
    pub maturity: u32,
    pub points: Vec<(NaiveDate, f64)>,
}

impl ConstantMaturitySeries {
    pub fn first_date(&self) -> Option<NaiveDate> {
        self.points.first().map(|p| p.0)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.points.last().map(|p| p.0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A set of constant-maturity series sharing one coverage period.
///
/// Series are kept sorted by `(market, maturity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<ConstantMaturitySeries>,
    pub period: (NaiveDate, NaiveDate),
}

impl Dataset {
    /// Builds a dataset whose period is the span of the data. Empty series
    /// are dropped; returns `None` when nothing is left.
    pub fn from_series(mut series: Vec<ConstantMaturitySeries>) -> Option<Self> {
        series.retain(|s| !s.is_empty());
        series.sort_by(|a, b| a.market.cmp(&b.market).then(a.maturity.cmp(&b.maturity)));
        let start = series.iter().filter_map(|s| s.first_date()).min()?;
        let end = series.iter().filter_map(|s| s.last_date()).max()?;
        Some(Dataset {
            series,
            period: (start, end),
        })
    }

    /// Concatenates datasets into one; the period is the hull of the inputs.
    pub fn merge(datasets: Vec<Dataset>) -> Option<Self> {
        let start = datasets.iter().map(|d| d.period.0).min()?;
        let end = datasets.iter().map(|d| d.period.1).max()?;
        let mut series: Vec<_> = datasets.into_iter().flat_map(|d| d.series).collect();
        series.sort_by(|a, b| a.market.cmp(&b.market).then(a.maturity.cmp(&b.maturity)));
        Some(Dataset {
            series,
            period: (start, end),
        })
    }

    pub fn markets(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.series.iter().map(|s| s.market.as_str()).collect();
        out.dedup();
        out
    }

    pub fn market_series<'a>(&'a self, market: &'a str) -> impl Iterator<Item = &'a ConstantMaturitySeries> + 'a {
        self.series.iter().filter(move |s| s.market == market)
    }

    pub fn get(&self, market: &str, maturity: u32) -> Option<&ConstantMaturitySeries> {
        self.series
            .iter()
            .find(|s| s.market == market && s.maturity == maturity)
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses quotes from CSV text with the header `market,obs_date,delivery,settle`.
pub fn parse_quotes<R: Read>(input: R) -> Result<Vec<FuturesQuote>> {
    parse_quotes_with(input, &mut HashSet::new())
}

/// Reads and concatenates several quote files. A record repeated in a later
/// file is reported as a duplicate there.
pub fn read_quote_files(paths: &[PathBuf]) -> Result<Vec<FuturesQuote>> {
    let mut seen = HashSet::new();
    let mut quotes = Vec::new();
    for path in paths {
        let wrap = |e: Error| Error::File {
            path: path.display().to_string(),
            source: Box::new(e),
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(format!("cannot open {}", path.display()), e))?;
        quotes.extend(parse_quotes_with(std::io::BufReader::new(file), &mut seen).map_err(wrap)?);
    }
    Ok(quotes)
}

fn parse_quotes_with<R: Read>(
    input: R,
    seen: &mut HashSet<(String, NaiveDate, YearMonth)>,
) -> Result<Vec<FuturesQuote>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_err(1, "empty input: header row required")),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if header.iter().ne(QUOTE_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "bad header `{}`, expected `{}`",
                header.iter().collect::<Vec<_>>().join(","),
                QUOTE_HEADER.join(",")
            ),
        ));
    }

    let mut quotes = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != QUOTE_HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected 4 columns, found {}", record.len()),
            ));
        }
        let market = &record[0];
        if market.is_empty() {
            return Err(parse_err(line, "missing market"));
        }
        let obs_date = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d")
            .map_err(|_| parse_err(line, format!("malformed date `{}`", &record[1])))?;
        let delivery: YearMonth = record[2].parse().map_err(|e: String| parse_err(line, e))?;
        let settle: f64 = record[3]
            .parse()
            .map_err(|_| parse_err(line, format!("malformed price `{}`", &record[3])))?;
        if !(settle.is_finite() && settle > 0.0) {
            return Err(parse_err(line, format!("non-positive price {}", &record[3])));
        }
        if delivery < YearMonth::of(obs_date) {
            return Err(parse_err(
                line,
                format!("delivery {delivery} precedes observation month of {obs_date}"),
            ));
        }
        if !seen.insert((market.to_string(), obs_date, delivery)) {
            return Err(Error::Duplicate {
                line,
                market: market.to_string(),
                obs_date: obs_date.to_string(),
                delivery: delivery.to_string(),
            });
        }
        quotes.push(FuturesQuote {
            market: market.to_string(),
            obs_date,
            delivery,
            settle,
        });
    }
    Ok(quotes)
}

/// Writes quotes in the same CSV schema `parse_quotes` reads.
pub fn write_quotes<W: Write>(quotes: &[FuturesQuote], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::io("writing quotes", e.into());
    w.write_record(QUOTE_HEADER).map_err(wrap)?;
    for q in quotes {
        w.write_record([
            q.market.clone(),
            q.obs_date.format("%Y-%m-%d").to_string(),
            q.delivery.to_string(),
            q.settle.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing quotes", e))
}

/// Rearranges one market's quotes into constant-maturity series.
pub fn build_constant_maturity(quotes: &[FuturesQuote], market: &str) -> Vec<ConstantMaturitySeries> {
    let mut by_date: BTreeMap<NaiveDate, Vec<(YearMonth, f64)>> = BTreeMap::new();
    for q in quotes.iter().filter(|q| q.market == market) {
        if q.delivery < YearMonth::of(q.obs_date) {
            continue;
        }
        by_date.entry(q.obs_date).or_default().push((q.delivery, q.settle));
    }

    let mut by_rank: BTreeMap<u32, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (date, mut curve) in by_date {
        curve.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (k, (_, price)) in curve.into_iter().enumerate() {
            by_rank.entry(k as u32 + 1).or_default().push((date, price));
        }
    }

    by_rank
        .into_iter()
        .map(|(maturity, points)| ConstantMaturitySeries {
            market: market.to_string(),
            maturity,
            points,
        })
        .collect()
}

/// One dataset per market, in market-name order.
pub fn build_datasets(quotes: &[FuturesQuote]) -> Vec<Dataset> {
    let markets: std::collections::BTreeSet<&str> = quotes.iter().map(|q| q.market.as_str()).collect();
    markets
        .into_iter()
        .filter_map(|m| Dataset::from_series(build_constant_maturity(quotes, m)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PeriodPolicy {
    Intersection,
    Explicit { start: NaiveDate, end: NaiveDate },
}

/// Truncates every dataset to a common period and applies per-market
/// maturity caps. Datasets left without series are dropped.
pub fn align_period(
    datasets: &[Dataset],
    policy: &PeriodPolicy,
    caps: &BTreeMap<String, u32>,
) -> Result<Vec<Dataset>> {
    if datasets.is_empty() {
        return Err(Error::InsufficientData("no datasets to align".into()));
    }
    let (start, end) = match *policy {
        PeriodPolicy::Explicit { start, end } => {
            if start > end {
                return Err(Error::Alignment(format!("explicit period {start}..{end} is empty")));
            }
            (start, end)
        }
        PeriodPolicy::Intersection => {
            let latest = datasets.iter().max_by_key(|d| d.period.0).unwrap();
            let earliest = datasets.iter().min_by_key(|d| d.period.1).unwrap();
            if latest.period.0 > earliest.period.1 {
                return Err(Error::Alignment(format!(
                    "[{}] starts {} after [{}] ends {}",
                    latest.markets().join(","),
                    latest.period.0,
                    earliest.markets().join(","),
                    earliest.period.1
                )));
            }
            (latest.period.0, earliest.period.1)
        }
    };

    let out = datasets
        .iter()
        .filter_map(|d| {
            let series: Vec<_> = d
                .series
                .iter()
                .filter(|s| caps.get(&s.market).is_none_or(|&cap| s.maturity <= cap))
                .map(|s| ConstantMaturitySeries {
                    market: s.market.clone(),
                    maturity: s.maturity,
                    points: s
                        .points
                        .iter()
                        .copied()
                        .filter(|(t, _)| *t >= start && *t <= end)
                        .collect(),
                })
                .filter(|s| !s.is_empty())
                .collect();
            (!series.is_empty()).then_some(Dataset {
                series,
                period: (start, end),
            })
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn q(date: &str, delivery: &str, settle: f64) -> FuturesQuote {
        FuturesQuote {
            market: "WTI".into(),
            obs_date: d(date),
            delivery: delivery.parse().unwrap(),
            settle,
        }
    }

    fn parse(body: &str) -> Result<Vec<FuturesQuote>> {
        parse_quotes(format!("market,obs_date,delivery,settle\n{body}").as_bytes())
    }

    #[test]
    fn parses_a_row() {
        let quotes = parse("WTI,2005-03-01,2005-06,53.20\n").unwrap();
        assert_eq!(quotes, vec![q("2005-03-01", "2005-06", 53.20)]);
    }

    #[test]
    fn rejects_non_positive_price() {
        let err = parse("WTI,2005-03-01,2005-06,-1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("non-positive"));
        assert!(parse("WTI,2005-03-01,2005-06,0\n").is_err());
    }

    #[test]
    fn rejects_malformed_date() {
        let err = parse("WTI,2005-13-01,2005-06,53.20\n").unwrap_err();
        assert!(err.to_string().contains("malformed date"), "{err}");
        assert!(parse("WTI,2005-03-01,2005-13,53.20\n").is_err());
        assert!(parse("WTI,2005-03-01,200506,53.20\n").is_err());
    }

    #[test]
    fn rejects_missing_column_with_line_number() {
        let err = parse("WTI,2005-03-01,2005-06,53.2\nWTI,2005-03-02,2005-06\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicates() {
        let err = parse("WTI,2005-03-01,2005-06,53.2\nWTI,2005-03-01,2005-06,53.3\n").unwrap_err();
        assert!(matches!(err, Error::Duplicate { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_header_and_empty_input() {
        assert!(parse_quotes("a,b,c,d\n".as_bytes()).is_err());
        assert!(matches!(parse_quotes("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn ranks_by_delivery_order() {
        let quotes = vec![
            q("2005-03-01", "2005-09", 3.0),
            q("2005-03-01", "2005-06", 1.0),
            q("2005-03-01", "2005-07", 2.0),
        ];
        let series = build_constant_maturity(&quotes, "WTI");
        assert_eq!(series.len(), 3);
        for (k, s) in series.iter().enumerate() {
            assert_eq!(s.maturity, k as u32 + 1);
            assert_eq!(s.points, vec![(d("2005-03-01"), k as f64 + 1.0)]);
        }
    }

    #[test]
    fn reranks_after_expiry() {
        let quotes = vec![
            q("2005-05-31", "2005-05", 10.0),
            q("2005-05-31", "2005-06", 11.0),
            q("2005-06-01", "2005-06", 12.0),
            q("2005-06-01", "2005-07", 13.0),
        ];
        let series = build_constant_maturity(&quotes, "WTI");
        assert_eq!(series[0].points, vec![(d("2005-05-31"), 10.0), (d("2005-06-01"), 12.0)]);
        assert_eq!(series[1].points, vec![(d("2005-05-31"), 11.0), (d("2005-06-01"), 13.0)]);
    }

    #[test]
    fn expired_quotes_are_ignored() {
        let quotes = vec![q("2005-06-01", "2005-06", 1.0), q("2005-06-01", "2005-07", 2.0)];
        let mut expired = quotes.clone();
        expired.push(FuturesQuote {
            delivery: "2005-05".parse().unwrap(),
            ..q("2005-06-01", "2005-06", 9.0)
        });
        assert_eq!(
            build_constant_maturity(&quotes, "WTI"),
            build_constant_maturity(&expired, "WTI")
        );
    }

    #[test]
    fn missing_quote_shortens_that_date() {
        // 10 dates x 4 deliveries, the 2005-06 quote missing on the 5th date.
        let mut quotes = Vec::new();
        for day in 1..=10u32 {
            for (j, del) in ["2005-04", "2005-05", "2005-06", "2005-07"].iter().enumerate() {
                if day == 5 && j == 2 {
                    continue;
                }
                quotes.push(q(&format!("2005-04-{day:02}"), del, 100.0 + day as f64 + j as f64 / 10.0));
            }
        }
        let series = build_constant_maturity(&quotes, "WTI");
        let counts: Vec<usize> = series.iter().map(|s| s.len()).collect();
        assert_eq!(counts, vec![10, 10, 10, 9]);
        let on_day5: Vec<f64> = series
            .iter()
            .filter_map(|s| s.points.iter().find(|p| p.0 == d("2005-04-05")).map(|p| p.1))
            .collect();
        assert_eq!(on_day5, vec![105.0, 105.1, 105.3]);
    }

    #[test]
    fn empty_input_gives_no_series() {
        assert!(build_constant_maturity(&[], "WTI").is_empty());
    }

    fn span_dataset(market: &str, from: &str, to: &str) -> Dataset {
        let (a, b) = (d(from), d(to));
        let points: Vec<_> = a
            .iter_days()
            .take_while(|t| *t <= b)
            .filter(|t| t.weekday().num_days_from_monday() < 5)
            .map(|t| (t, 50.0))
            .collect();
        Dataset::from_series(vec![ConstantMaturitySeries {
            market: market.into(),
            maturity: 1,
            points,
        }])
        .unwrap()
    }

    #[test]
    fn intersection_truncates_to_overlap() {
        let a = span_dataset("A", "1998-01-02", "2009-12-31");
        let b = span_dataset("B", "2000-01-03", "2009-12-31");
        let out = align_period(&[a, b.clone()], &PeriodPolicy::Intersection, &BTreeMap::new()).unwrap();
        assert_eq!(out.len(), 2);
        for ds in &out {
            assert_eq!(ds.period, (d("2000-01-03"), d("2009-12-31")));
            assert_eq!(ds.series[0].first_date(), Some(d("2000-01-03")));
        }
        assert_eq!(out[1], b);
    }

    #[test]
    fn single_dataset_intersection_is_identity() {
        let a = span_dataset("A", "1998-01-02", "2009-12-31");
        let out = align_period(std::slice::from_ref(&a), &PeriodPolicy::Intersection, &BTreeMap::new()).unwrap();
        assert_eq!(out, vec![a]);
    }

    #[test]
    fn explicit_window_counts_weekdays() {
        let a = span_dataset("A", "1998-01-01", "2009-12-31");
        let policy = PeriodPolicy::Explicit {
            start: d("2001-01-01"),
            end: d("2001-12-31"),
        };
        let out = align_period(std::slice::from_ref(&a), &policy, &BTreeMap::new()).unwrap();
        let expected = a.series[0]
            .points
            .iter()
            .filter(|p| p.0.year() == 2001)
            .count();
        assert_eq!(expected, 261);
        assert_eq!(out[0].series[0].len(), expected);
    }

    #[test]
    fn disjoint_markets_fail() {
        let a = span_dataset("A", "1998-01-02", "1999-12-31");
        let b = span_dataset("B", "2000-01-03", "2009-12-31");
        let err = align_period(&[a, b], &PeriodPolicy::Intersection, &BTreeMap::new()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[A]") && msg.contains("[B]"), "{msg}");
    }

    #[test]
    fn caps_drop_high_ranks() {
        let mut quotes = Vec::new();
        for del in ["2005-04", "2005-05", "2005-06"] {
            quotes.push(q("2005-04-01", del, 1.0));
        }
        let ds = build_datasets(&quotes);
        let caps = BTreeMap::from([("WTI".to_string(), 2)]);
        let out = align_period(&ds, &PeriodPolicy::Intersection, &caps).unwrap();
        assert_eq!(out[0].series.len(), 2);
    }

    #[test]
    fn year_month_arithmetic() {
        let ym = YearMonth::new(2005, 11).unwrap();
        assert_eq!(ym.plus_months(2).to_string(), "2006-01");
        assert_eq!(ym.plus_months(14).to_string(), "2007-01");
        assert_eq!(ym.plus_months(0), ym);
    }
}
