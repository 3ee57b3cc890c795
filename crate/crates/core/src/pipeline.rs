//! Stage orchestration over an output directory.
//!
//! Each stage is a function of the configuration and the artifacts written
//! by earlier stages. A full run chains the stages in memory and writes the
//! files only once every stage has succeeded; a single-stage run reads its
//! prerequisites back from disk. Both paths feed the stages the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_exponents, fit_two_plateaus, CurveField};
use crate::config::{PipelineConfig, CONFIG_VERSION};
use crate::curvestats::{contango_index, summarize, MomentSummary};
use crate::error::{Error, Result};
use crate::ingest::{align_period, build_datasets, read_quote_files, ConstantMaturitySeries, Dataset};
use crate::report::{
    from_csv, from_jsonl, to_csv, to_jsonl, CrossoverRecord, MarketSummary, Meta, Record, RegimeRecord,
    ReturnSummary, ScalingRecord, Warning, EXPONENT_CONVENTION, REPORT_SCHEMA,
};
use crate::returns::{compute_returns, ReturnObservation, ReturnSeries};
use crate::rng::RNG_ALGORITHM;
use crate::scaling::{detect_crossover, fit_power_law_scaling, samuelson_check, Statistic};
use crate::tails::{tail_term_structure_from_returns, LEVY_STABLE_BOUNDARY};

/// File name to contents.
pub type Artifacts = BTreeMap<String, Vec<u8>>;

pub const REPORT_FILE: &str = "report.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Returns,
    Moments,
    Scaling,
    Tails,
    Aggregate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Returns,
        Stage::Moments,
        Stage::Scaling,
        Stage::Tails,
        Stage::Aggregate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Returns => "returns",
            Stage::Moments => "moments",
            Stage::Scaling => "scaling",
            Stage::Tails => "tails",
            Stage::Aggregate => "aggregate",
        }
    }

    fn log_file(self) -> String {
        format!("{}.jsonl", self.name())
    }

    /// Artifacts this stage reads, with the stage that produces each.
    pub fn prerequisites(self) -> Vec<(String, Stage)> {
        let log = |s: Stage| (s.log_file(), s);
        match self {
            Stage::Ingest => vec![],
            Stage::Returns => vec![(DATASET_FILE.into(), Stage::Ingest)],
            Stage::Moments => vec![(DATASET_FILE.into(), Stage::Ingest), (RETURNS_FILE.into(), Stage::Returns)],
            Stage::Scaling => vec![log(Stage::Moments)],
            Stage::Tails => vec![(RETURNS_FILE.into(), Stage::Returns)],
            // the report gathers every stage log
            Stage::Aggregate => vec![
                log(Stage::Tails),
                log(Stage::Ingest),
                log(Stage::Returns),
                log(Stage::Moments),
                log(Stage::Scaling),
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
            format!("unknown stage `{s}`; valid stages: {}", names.join(", "))
        })
    }
}

const DATASET_FILE: &str = "dataset.csv";
const RETURNS_FILE: &str = "returns.csv";

#[derive(Debug, Serialize, Deserialize)]
struct PriceRow {
    market: String,
    maturity: u32,
    date: NaiveDate,
    price: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReturnRow {
    market: String,
    maturity: u32,
    date: NaiveDate,
    dt: u8,
    value: f64,
}

#[derive(Debug, Serialize)]
struct MomentRow<'a> {
    market: &'a str,
    maturity: u32,
    count: usize,
    value: f64,
}

#[derive(Debug, Serialize)]
struct TailRow<'a> {
    market: &'a str,
    maturity: u32,
    kind: &'static str,
    mu: f64,
    mu_err: Option<f64>,
    xmin: f64,
    n_tail: usize,
    n: usize,
    gof_p: Option<f64>,
    hill_mu: Option<f64>,
    levy_stable: bool,
    levy_boundary: f64,
}

#[derive(Debug, Serialize)]
struct AggregateRow {
    maturity: u32,
    n_markets: usize,
    mu_bar_abs: Option<f64>,
    mu_bar_pos: Option<f64>,
    mu_bar_neg: Option<f64>,
    asymmetry: Option<f64>,
    plateau_abs: Option<f64>,
}

fn group_by_series<R, K: Ord, V>(rows: Vec<R>, key: impl Fn(&R) -> K, val: impl Fn(R) -> V) -> BTreeMap<K, Vec<V>> {
    let mut out: BTreeMap<K, Vec<V>> = BTreeMap::new();
    for r in rows {
        out.entry(key(&r)).or_default().push(val(r));
    }
    out
}

fn read_series(bytes: &[u8]) -> Result<Vec<ConstantMaturitySeries>> {
    let rows: Vec<PriceRow> = from_csv(bytes, DATASET_FILE)?;
    let grouped = group_by_series(rows, |r| (r.market.clone(), r.maturity), |r| (r.date, r.price));
    Ok(grouped
        .into_iter()
        .map(|((market, maturity), points)| ConstantMaturitySeries {
            market,
            maturity,
            points,
        })
        .collect())
}

fn read_returns(bytes: &[u8]) -> Result<Vec<ReturnSeries>> {
    let rows: Vec<ReturnRow> = from_csv(bytes, RETURNS_FILE)?;
    let grouped = group_by_series(
        rows,
        |r| (r.market.clone(), r.maturity),
        |r| ReturnObservation {
            date: r.date,
            dt: r.dt,
            value: r.value,
        },
    );
    Ok(grouped
        .into_iter()
        .map(|((market, maturity), observations)| ReturnSeries {
            market,
            maturity,
            observations,
            skipped: 0,
        })
        .collect())
}

fn ingest(cfg: &PipelineConfig) -> Result<Artifacts> {
    let paths = cfg.resolved_inputs();
    if paths.is_empty() {
        return Err(Error::Config("no input files given".into()));
    }
    let quotes = read_quote_files(&paths)?;
    if quotes.is_empty() {
        return Err(Error::InsufficientData("input contains no quotes".into()));
    }
    let datasets = build_datasets(&quotes);
    let aligned = align_period(&datasets, &cfg.period, &cfg.maturity_caps)?;
    let Some(period) = aligned.first().map(|d| d.period) else {
        return Err(Error::InsufficientData(format!(
            "no data inside the analysis period {:?}",
            cfg.period
        )));
    };

    let mut records = vec![
        Record::header(Stage::Ingest.name()),
        Record::Period {
            start: period.0,
            end: period.1,
        },
    ];
    for d in &datasets {
        for market in d.markets() {
            if !aligned.iter().any(|a| a.markets().contains(&market)) {
                records.push(Record::Warning(
                    Warning::new("ingest", "no data inside the analysis period").at(market, None),
                ));
            }
        }
    }
    let merged = Dataset::merge(aligned).expect("aligned datasets are non-empty");
    let mut rows = Vec::new();
    for market in merged.markets() {
        let series: Vec<&ConstantMaturitySeries> = merged.market_series(market).collect();
        records.push(Record::Market(MarketSummary {
            market: market.to_string(),
            series: series.len(),
            max_maturity: series.iter().map(|s| s.maturity).max().unwrap_or(0),
            points: series.iter().map(|s| s.len()).sum(),
            start: series.iter().filter_map(|s| s.first_date()).min().unwrap_or(period.0),
            end: series.iter().filter_map(|s| s.last_date()).max().unwrap_or(period.1),
        }));
    }
    for s in &merged.series {
        rows.extend(s.points.iter().map(|&(date, price)| PriceRow {
            market: s.market.clone(),
            maturity: s.maturity,
            date,
            price,
        }));
    }

    Ok(Artifacts::from([
        (DATASET_FILE.into(), to_csv(&rows, &["market", "maturity", "date", "price"])?),
        (Stage::Ingest.log_file(), to_jsonl(&records)?),
    ]))
}

fn returns(prior: &Artifacts) -> Result<Artifacts> {
    let series = read_series(&prior[DATASET_FILE])?;
    let results: Vec<Result<ReturnSeries>> = series.par_iter().map(compute_returns).collect();

    let mut records = vec![Record::header(Stage::Returns.name())];
    let mut rows = Vec::new();
    for (s, result) in series.iter().zip(results) {
        let r = match result {
            Ok(r) => r,
            Err(e) => {
                records.push(Record::Warning(Warning::new("returns", e.to_string()).at(&s.market, Some(s.maturity))));
                continue;
            }
        };
        records.push(Record::Returns(ReturnSummary {
            market: r.market.clone(),
            maturity: r.maturity,
            observations: r.len(),
            skipped: r.skipped,
        }));
        if r.skipped > 0 {
            records.push(Record::Warning(
                Warning::new("returns", format!("{} price pair(s) skipped across gaps over 3 days", r.skipped))
                    .at(&r.market, Some(r.maturity)),
            ));
        }
        rows.extend(r.observations.iter().map(|o| ReturnRow {
            market: r.market.clone(),
            maturity: r.maturity,
            date: o.date,
            dt: o.dt,
            value: o.value,
        }));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no series has a computable return".into()));
    }
    Ok(Artifacts::from([
        (RETURNS_FILE.into(), to_csv(&rows, &["market", "maturity", "date", "dt", "value"])?),
        (Stage::Returns.log_file(), to_jsonl(&records)?),
    ]))
}

fn moments(cfg: &PipelineConfig, prior: &Artifacts) -> Result<Artifacts> {
    let series = read_returns(&prior[RETURNS_FILE])?;
    let results: Vec<Result<MomentSummary>> = series.par_iter().map(summarize).collect();

    let mut records = vec![Record::header(Stage::Moments.name())];
    let mut summaries = Vec::new();
    for (s, result) in series.iter().zip(results) {
        match result {
            Ok(m) => summaries.push(m),
            Err(e) => records.push(Record::Warning(
                Warning::new("moments", e.to_string()).at(&s.market, Some(s.maturity)),
            )),
        }
    }
    if summaries.is_empty() {
        return Err(Error::InsufficientData("no series has computable moments".into()));
    }
    records.extend(summaries.iter().cloned().map(Record::Moments));

    let dataset = Dataset::from_series(read_series(&prior[DATASET_FILE])?)
        .ok_or_else(|| Error::InsufficientData(format!("{DATASET_FILE} is empty")))?;
    for market in dataset.markets() {
        match contango_index(&dataset, market, cfg.contango.far) {
            Ok(c) => records.push(Record::Contango(c)),
            Err(e) => records.push(Record::Warning(Warning::new("moments", e.to_string()).at(market, None))),
        }
    }

    let mut out = Artifacts::new();
    type Column = fn(&MomentSummary) -> f64;
    let figures: [(&str, Column); 4] = [
        ("fig2_mean_abs.csv", |m| m.mean_abs),
        ("fig3_variance.csv", |m| m.variance),
        ("fig4_skewness.csv", |m| m.skewness),
        ("fig5_kurtosis.csv", |m| m.kurtosis),
    ];
    for (name, stat) in figures {
        let column = name.trim_end_matches(".csv").split_once('_').unwrap().1;
        let rows: Vec<MomentRow> = summaries
            .iter()
            .map(|m| MomentRow {
                market: &m.market,
                maturity: m.maturity,
                count: m.count,
                value: stat(m),
            })
            .collect();
        out.insert(name.into(), to_csv(&rows, &["market", "maturity", "count", column])?);
    }
    out.insert(Stage::Moments.log_file(), to_jsonl(&records)?);
    Ok(out)
}

fn scaling(cfg: &PipelineConfig, prior: &Artifacts) -> Result<Artifacts> {
    let log = Stage::Moments.log_file();
    let mut by_market: BTreeMap<String, Vec<MomentSummary>> = BTreeMap::new();
    for r in from_jsonl(&prior[&log], &log)? {
        if let Record::Moments(m) = r {
            by_market.entry(m.market.clone()).or_default().push(m);
        }
    }

    let mut records = vec![Record::header(Stage::Scaling.name())];
    let warn = |market: &str, e: Error| Record::Warning(Warning::new("scaling", e.to_string()).at(market, None));
    for (market, summaries) in &by_market {
        for stat in Statistic::ALL {
            let points: Vec<(u32, f64)> = summaries.iter().map(|m| (m.maturity, stat.of(m))).collect();
            match fit_power_law_scaling(&points, cfg.scaling.range()) {
                Ok(fit) => {
                    let accepted = fit.r_squared >= cfg.scaling.r_squared_floor;
                    records.push(Record::Scaling(ScalingRecord {
                        market: market.clone(),
                        statistic: stat,
                        alpha: fit.alpha,
                        alpha_err: fit.alpha_err,
                        intercept: fit.intercept,
                        r_squared: fit.r_squared,
                        fit_min: fit.range.0,
                        fit_max: fit.range.1,
                        n_points: fit.n_points,
                        accepted,
                    }));
                    if !accepted {
                        records.push(Record::Warning(
                            Warning::new(
                                "scaling",
                                format!(
                                    "{} power law rejected: r_squared {} below floor {}",
                                    stat.name(),
                                    fit.r_squared,
                                    cfg.scaling.r_squared_floor
                                ),
                            )
                            .at(market, None),
                        ));
                    }
                }
                Err(e) => records.push(warn(market, e)),
            }
            match detect_crossover(&points, cfg.scaling.crossover_threshold) {
                Ok(c) => records.push(Record::Crossover(CrossoverRecord {
                    market: market.clone(),
                    statistic: stat,
                    breakpoint: c.breakpoint,
                    alpha_before: c.alpha_before,
                    alpha_after: c.alpha_after,
                    sse_gain: c.sse_gain,
                })),
                Err(e) => records.push(warn(market, e)),
            }
        }
        match samuelson_check(summaries) {
            Ok(s) => records.push(Record::Samuelson(s)),
            Err(e) => records.push(warn(market, e)),
        }
    }
    Ok(Artifacts::from([(Stage::Scaling.log_file(), to_jsonl(&records)?)]))
}

fn tails(cfg: &PipelineConfig, prior: &Artifacts) -> Result<Artifacts> {
    let series = read_returns(&prior[RETURNS_FILE])?;
    let study = tail_term_structure_from_returns(&series, &cfg.tail_study());
    if study.cells.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no tail fit succeeded ({} attempted)",
            study.failures.len()
        )));
    }

    let mut records = vec![Record::header(Stage::Tails.name())];
    records.extend(study.cells.iter().cloned().map(Record::Tail));
    records.extend(study.failures.iter().map(|f| {
        let mut w = Warning::new("tails", f.reason.clone()).at(&f.market, Some(f.maturity));
        w.kind = Some(f.kind);
        Record::Warning(w)
    }));
    let rows: Vec<TailRow> = study
        .cells
        .iter()
        .map(|c| TailRow {
            market: &c.fit.market,
            maturity: c.fit.maturity,
            kind: c.fit.kind.name(),
            mu: c.fit.mu,
            mu_err: c.fit.mu_err,
            xmin: c.fit.xmin,
            n_tail: c.fit.n_tail,
            n: c.fit.n,
            gof_p: c.fit.gof_p,
            hill_mu: c.hill_mu,
            levy_stable: c.fit.levy_stable,
            levy_boundary: LEVY_STABLE_BOUNDARY,
        })
        .collect();
    let headers = [
        "market",
        "maturity",
        "kind",
        "mu",
        "mu_err",
        "xmin",
        "n_tail",
        "n",
        "gof_p",
        "hill_mu",
        "levy_stable",
        "levy_boundary",
    ];
    Ok(Artifacts::from([
        ("fig6_7_tails.csv".into(), to_csv(&rows, &headers)?),
        (Stage::Tails.log_file(), to_jsonl(&records)?),
    ]))
}

fn aggregate(cfg: &PipelineConfig, prior: &Artifacts) -> Result<Artifacts> {
    let log = Stage::Tails.log_file();
    let fits: Vec<_> = from_jsonl(&prior[&log], &log)?
        .into_iter()
        .filter_map(|r| match r {
            Record::Tail(c) => Some(c.fit),
            _ => None,
        })
        .collect();
    let curve = aggregate_exponents(&fits, cfg.tails.min_tail)?;

    let mut records = vec![Record::header(Stage::Aggregate.name())];
    records.extend(curve.points.iter().cloned().map(Record::Aggregate));
    let mut abs_fit = None;
    for field in CurveField::ALL {
        match fit_two_plateaus(&curve, field, cfg.aggregate.plateau_threshold) {
            Ok(fit) => {
                if field == CurveField::Abs {
                    abs_fit = Some(fit);
                }
                records.push(Record::Regime(RegimeRecord::new(field, &fit)));
            }
            Err(e) => records.push(Record::Warning(Warning::new(
                "aggregate",
                format!("{} plateau fit: {e}", field.name()),
            ))),
        }
    }

    let plateau = |m: u32| {
        let fit = abs_fit?;
        if m <= fit.mt? {
            fit.level_low_m
        } else {
            fit.level_high_m
        }
    };
    let rows: Vec<AggregateRow> = curve
        .points
        .iter()
        .map(|p| AggregateRow {
            maturity: p.maturity,
            n_markets: p.n_markets,
            mu_bar_abs: p.mu_bar_abs,
            mu_bar_pos: p.mu_bar_pos,
            mu_bar_neg: p.mu_bar_neg,
            asymmetry: p.asymmetry,
            plateau_abs: p.mu_bar_abs.and(plateau(p.maturity)),
        })
        .collect();
    let headers = [
        "maturity",
        "n_markets",
        "mu_bar_abs",
        "mu_bar_pos",
        "mu_bar_neg",
        "asymmetry",
        "plateau_abs",
    ];

    let aggregate_log = to_jsonl(&records)?;
    let mut report = to_jsonl(&[Record::Meta(meta(cfg))])?;
    for stage in Stage::ALL {
        if stage == Stage::Aggregate {
            report.extend_from_slice(&aggregate_log);
        } else {
            report.extend_from_slice(&prior[&stage.log_file()]);
        }
    }
    Ok(Artifacts::from([
        ("fig8_aggregate.csv".into(), to_csv(&rows, &headers)?),
        (Stage::Aggregate.log_file(), aggregate_log),
        (REPORT_FILE.into(), report),
    ]))
}

fn meta(cfg: &PipelineConfig) -> Meta {
    let mut config = cfg.clone();
    // the output location does not affect results
    config.out_dir = None;
    Meta {
        schema: REPORT_SCHEMA.into(),
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: RNG_ALGORITHM.into(),
        exponent_convention: EXPONENT_CONVENTION.into(),
        config_version: CONFIG_VERSION,
        config,
    }
}

/// Runs one stage on already loaded prerequisites. `out_dir` only appears
/// in dependency errors.
pub fn execute_stage(stage: Stage, cfg: &PipelineConfig, prior: &Artifacts, out_dir: &Path) -> Result<Artifacts> {
    for (file, producer) in stage.prerequisites() {
        if !prior.contains_key(&file) {
            return Err(Error::Dependency {
                stage: producer.name(),
                path: out_dir.join(&file).display().to_string(),
            });
        }
    }
    match stage {
        Stage::Ingest => ingest(cfg),
        Stage::Returns => returns(prior),
        Stage::Moments => moments(cfg, prior),
        Stage::Scaling => scaling(cfg, prior),
        Stage::Tails => tails(cfg, prior),
        Stage::Aggregate => aggregate(cfg, prior),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

fn write_artifacts(out_dir: &Path, artifacts: &Artifacts) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("cannot create {}", out_dir.display()), e))?;
    for (name, bytes) in artifacts {
        let path = out_dir.join(name);
        let tmp = out_dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(format!("cannot write {}", tmp.display()), e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))?;
    }
    Ok(())
}

/// Runs every stage with `jobs` worker threads (0 picks a default) and
/// writes all artifacts to `out_dir`. Nothing is written if any stage fails.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<Artifacts> {
    cfg.validate()?;
    let all = thread_pool(jobs)?.install(|| -> Result<Artifacts> {
        let mut all = Artifacts::new();
        for stage in Stage::ALL {
            let produced = execute_stage(stage, cfg, &all, out_dir)?;
            all.extend(produced);
        }
        Ok(all)
    })?;
    write_artifacts(out_dir, &all)?;
    Ok(all)
}

/// Runs one stage, reading its prerequisites from `out_dir`.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<Artifacts> {
    cfg.validate()?;
    let mut prior = Artifacts::new();
    for (file, producer) in stage.prerequisites() {
        let path = out_dir.join(&file);
        match std::fs::read(&path) {
            Ok(bytes) => {
                prior.insert(file, bytes);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::Dependency {
                    stage: producer.name(),
                    path: path.display().to_string(),
                })
            }
            Err(e) => return Err(Error::io(format!("cannot read {}", path.display()), e)),
        }
    }
    let produced = thread_pool(jobs)?.install(|| execute_stage(stage, cfg, &prior, out_dir))?;
    write_artifacts(out_dir, &produced)?;
    Ok(produced)
}
