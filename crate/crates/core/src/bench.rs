//! Experiment sweeps over `R` or `N`, incremental CSV records, and the
//! aggregation behind the `report` subcommand.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{make_synthetic, parse_libsvm, standardize, Dataset, SyntheticSpec};
use crate::eigensolver::SvdConfig;
use crate::error::{Error, Result};
use crate::kmeans::KMeansConfig;
use crate::metrics::MetricReport;
use crate::pipeline::{run_method, Method, PipelineConfig, EXACT_LIMIT};
use crate::rb_features::KernelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Libsvm {
        path: PathBuf,
        #[serde(default)]
        standardize: bool,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SweepVariable {
    R,
    N,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<usize>,
}

fn default_true() -> bool {
    true
}

/// One benchmark configuration, usually read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DataSource,
    pub methods: Vec<Method>,
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    /// Defaults to the number of label classes.
    #[serde(default)]
    pub k: Option<usize>,
    /// `R` used when sweeping `N`.
    #[serde(default)]
    pub r: Option<usize>,
    pub kernel: KernelParams,
    #[serde(default)]
    pub svd: Option<SvdConfig>,
    #[serde(default)]
    pub kmeans: Option<KMeansConfig>,
    pub output_dir: PathBuf,
    /// Run each configuration once untimed before the recorded runs.
    #[serde(default = "default_true")]
    pub warmup: bool,
    /// Run cells concurrently; timings are then contended.
    #[serde(default)]
    pub parallel: bool,
}

impl ExperimentSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods listed".into()));
        }
        if self.sweep.values.is_empty() || self.sweep.values.contains(&0) {
            return Err(Error::InvalidConfig("sweep values must be non-empty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds listed".into()));
        }
        if self.sweep.variable == SweepVariable::N && self.r.is_none() {
            return Err(Error::InvalidConfig("sweeping N requires a fixed `r`".into()));
        }
        self.kernel.validate()?;
        if self.methods.contains(&Method::ExactSc) {
            let max_n = match (&self.dataset, self.sweep.variable) {
                (_, SweepVariable::N) => self.sweep.values.iter().copied().max(),
                (DataSource::Synthetic(s), SweepVariable::R) => Some(s.n),
                (DataSource::Libsvm { .. }, SweepVariable::R) => None,
            };
            if let Some(n) = max_n.filter(|&n| n > EXACT_LIMIT) {
                return Err(Error::DenseLimit {
                    n,
                    limit: EXACT_LIMIT,
                });
            }
        }
        Ok(())
    }

    fn load_base(&self) -> Result<Dataset> {
        match &self.dataset {
            DataSource::Libsvm { path, standardize: s } => {
                let ds = parse_libsvm(path)?;
                if *s {
                    standardize(&ds)
                } else {
                    Ok(ds)
                }
            }
            DataSource::Synthetic(spec) => make_synthetic(spec),
        }
    }
}

/// First `n` rows of a fixed shuffle of `ds`.
pub fn subsample(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "cannot take {n} rows from {} with {}",
            ds.name,
            ds.n_rows()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.n_rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    let mut out = ds.select_rows(&idx)?;
    out.name = format!("{}-n{n}", ds.name);
    Ok(out)
}

const SUBSAMPLE_SEED: u64 = 0x5EED;

/// One cell of the sweep. Metric and timing fields are empty when the run
/// failed; `error` then holds the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub method: Method,
    pub dataset: String,
    pub variable: SweepVariable,
    pub value: usize,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub r: Option<usize>,
    pub nmi: Option<f64>,
    pub ri: Option<f64>,
    pub fm: Option<f64>,
    pub acc: Option<f64>,
    pub t_features: Option<f64>,
    pub t_degrees: Option<f64>,
    pub t_svd: Option<f64>,
    pub t_kmeans: Option<f64>,
    pub t_total: Option<f64>,
    pub matvecs: Option<usize>,
    pub kappa: Option<f64>,
    pub n_features: Option<usize>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn metrics(&self) -> Option<MetricReport> {
        Some(MetricReport {
            method: self.method.name().to_string(),
            dataset: self.dataset.clone(),
            nmi: self.nmi?,
            ri: self.ri?,
            fm: self.fm?,
            acc: self.acc?,
        })
    }
}

/// Appends records to a CSV file, writing the header only when the file is
/// new or empty.
pub struct RecordSink {
    writer: csv::Writer<fs::File>,
}

impl RecordSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        Ok(Self { writer })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        self.writer.serialize(record)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

struct Cell {
    method: Method,
    value: usize,
    seed: u64,
}

fn cell_config(spec: &ExperimentSpec, value: usize, k: usize, seed: u64) -> PipelineConfig {
    let r = match spec.sweep.variable {
        SweepVariable::R => value,
        SweepVariable::N => spec.r.unwrap_or(value),
    };
    let mut cfg = PipelineConfig::new(k, r, spec.kernel, seed);
    if let Some(svd) = &spec.svd {
        cfg.svd = svd.clone();
    }
    if let Some(km) = &spec.kmeans {
        cfg.kmeans = km.clone();
    }
    cfg
}

fn run_cell(spec: &ExperimentSpec, ds: &Dataset, k: usize, cell: &Cell) -> RunRecord {
    let cfg = cell_config(spec, cell.value, k, cell.seed);
    let mut rec = RunRecord {
        experiment: spec.name.clone(),
        method: cell.method,
        dataset: ds.name.clone(),
        variable: spec.sweep.variable,
        value: cell.value,
        seed: cell.seed,
        n: ds.n_rows(),
        k,
        r: matches!(cell.method, Method::ScRb | Method::ScRf).then_some(cfg.r),
        nmi: None,
        ri: None,
        fm: None,
        acc: None,
        t_features: None,
        t_degrees: None,
        t_svd: None,
        t_kmeans: None,
        t_total: None,
        matvecs: None,
        kappa: None,
        n_features: None,
        error: None,
    };
    let result = run_method(cell.method, ds, &cfg).and_then(|out| {
        let report = match &ds.labels {
            Some(truth) => Some(MetricReport::evaluate(
                cell.method.name(),
                &ds.name,
                out.labels(),
                truth,
            )?),
            None => None,
        };
        Ok((out, report))
    });
    match result {
        Ok((out, report)) => {
            let p = &out.provenance;
            if let Some(m) = report {
                rec.nmi = Some(m.nmi);
                rec.ri = Some(m.ri);
                rec.fm = Some(m.fm);
                rec.acc = Some(m.acc);
            }
            rec.t_features = Some(p.timings.features);
            rec.t_degrees = Some(p.timings.degrees);
            rec.t_svd = Some(p.timings.svd);
            rec.t_kmeans = Some(p.timings.kmeans);
            rec.t_total = Some(p.timings.total);
            rec.matvecs = Some(p.matvecs);
            rec.kappa = p.kappa;
            rec.n_features = Some(p.n_features);
        }
        Err(e) => {
            warn!(
                "{} value={} seed={} failed: {e}",
                cell.method, cell.value, cell.seed
            );
            rec.error = Some(e.to_string());
        }
    }
    rec
}

/// Runs every `(method, value, seed)` cell, appending each record to
/// `<output_dir>/records.csv` as it finishes. Failed cells are recorded with
/// their error and do not stop the sweep. Returned records are in
/// `(value, method, seed)` order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let sink = Mutex::new(RecordSink::open(spec.output_dir.join("records.csv"))?);
    let base = spec.load_base()?;
    let mut records = Vec::new();

    for &value in &spec.sweep.values {
        let ds = match spec.sweep.variable {
            SweepVariable::R => base.clone(),
            SweepVariable::N => match &spec.dataset {
                DataSource::Synthetic(s) => make_synthetic(&SyntheticSpec { n: value, ..s.clone() })?,
                DataSource::Libsvm { .. } => subsample(&base, value, SUBSAMPLE_SEED)?,
            },
        };
        let k = match spec.k.or_else(|| ds.n_classes()) {
            Some(k) => k,
            None => {
                return Err(Error::InvalidConfig(
                    "`k` is required for unlabeled data".into(),
                ))
            }
        };
        let cells: Vec<Cell> = spec
            .methods
            .iter()
            .flat_map(|&method| {
                spec.seeds.iter().map(move |&seed| Cell { method, value, seed })
            })
            .collect();

        if spec.warmup {
            for &method in &spec.methods {
                let cfg = cell_config(spec, value, k, spec.seeds[0]);
                let _ = run_method(method, &ds, &cfg);
            }
        }

        let record_one = |cell: &Cell| -> Result<RunRecord> {
            let rec = run_cell(spec, &ds, k, cell);
            sink.lock().expect("record sink poisoned").append(&rec)?;
            info!(
                "{} {:?}={} seed={} total={:?}",
                rec.method, rec.variable, rec.value, rec.seed, rec.t_total
            );
            Ok(rec)
        };
        let batch: Vec<RunRecord> = if spec.parallel {
            cells.par_iter().map(record_one).collect::<Result<_>>()?
        } else {
            cells.iter().map(record_one).collect::<Result<_>>()?
        };
        records.extend(batch);
    }
    Ok(records)
}

/// Median of a non-empty slice without NaNs.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Insufficient("a slope needs at least two points".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Insufficient("log-log fit needs positive values".into()));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Insufficient("all x values are equal".into()));
    }
    Ok(sxy / sxx)
}

pub const MIN_SCALING_POINTS: usize = 4;
pub const MIN_SCALING_SEEDS: usize = 3;

/// Slope of `ln(median y)` against `ln x` over `(x, y)` samples grouped by
/// `x`. Needs at least four distinct `x`, each with three samples.
pub fn scaling_exponent(samples: &[(f64, f64)]) -> Result<f64> {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for &(x, y) in samples {
        groups.entry(x.to_bits()).or_insert((x, Vec::new())).1.push(y);
    }
    if groups.len() < MIN_SCALING_POINTS {
        return Err(Error::Insufficient(format!(
            "scaling fit needs {MIN_SCALING_POINTS} sweep points, got {}",
            groups.len()
        )));
    }
    if let Some((x, ys)) = groups.values().find(|(_, ys)| ys.len() < MIN_SCALING_SEEDS) {
        return Err(Error::Insufficient(format!(
            "sweep point {x} has {} runs, need {MIN_SCALING_SEEDS}",
            ys.len()
        )));
    }
    let points: Vec<(f64, f64)> = groups.values().map(|(x, ys)| (*x, median(ys))).collect();
    log_log_slope(&points)
}

/// Total-time scaling exponent of the successful records sweeping
/// `variable`. Callers filter to one method first.
pub fn fit_scaling_exponent(records: &[RunRecord], variable: SweepVariable) -> Result<f64> {
    let samples: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.variable == variable && r.is_ok())
        .filter_map(|r| Some((r.value as f64, r.t_total?)))
        .collect();
    scaling_exponent(&samples)
}

/// Median curve point for one `(method, variable, value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub experiment: String,
    pub method: Method,
    pub variable: SweepVariable,
    pub value: usize,
    pub runs: usize,
    pub errors: usize,
    pub nmi: Option<f64>,
    pub ri: Option<f64>,
    pub fm: Option<f64>,
    pub acc: Option<f64>,
    pub t_total: Option<f64>,
    pub t_features: Option<f64>,
    pub t_svd: Option<f64>,
    pub matvecs: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub experiment: String,
    pub method: Method,
    pub variable: SweepVariable,
    pub exponent: Option<f64>,
    pub note: Option<String>,
}

fn median_of<F: Fn(&RunRecord) -> Option<f64>>(rs: &[&RunRecord], f: F) -> Option<f64> {
    let v: Vec<f64> = rs.iter().filter_map(|r| f(r)).filter(|v| !v.is_nan()).collect();
    (!v.is_empty()).then(|| median(&v))
}

type GroupKey = (String, Method, SweepVariable);

fn group(records: &[RunRecord]) -> BTreeMap<GroupKey, BTreeMap<usize, Vec<&RunRecord>>> {
    let mut g: BTreeMap<GroupKey, BTreeMap<usize, Vec<&RunRecord>>> = BTreeMap::new();
    for r in records {
        g.entry((r.experiment.clone(), r.method, r.variable))
            .or_default()
            .entry(r.value)
            .or_default()
            .push(r);
    }
    g
}

/// Median-over-seeds curves, sorted by experiment, method and value.
pub fn aggregate(records: &[RunRecord]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for ((experiment, method, variable), by_value) in group(records) {
        for (value, rs) in by_value {
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.is_ok()).collect();
            out.push(CurvePoint {
                experiment: experiment.clone(),
                method,
                variable,
                value,
                runs: rs.len(),
                errors: rs.len() - ok.len(),
                nmi: median_of(&ok, |r| r.nmi),
                ri: median_of(&ok, |r| r.ri),
                fm: median_of(&ok, |r| r.fm),
                acc: median_of(&ok, |r| r.acc),
                t_total: median_of(&ok, |r| r.t_total),
                t_features: median_of(&ok, |r| r.t_features),
                t_svd: median_of(&ok, |r| r.t_svd),
                matvecs: median_of(&ok, |r| r.matvecs.map(|m| m as f64)),
                kappa: median_of(&ok, |r| r.kappa),
            });
        }
    }
    out
}

/// Total-time exponent per `(experiment, method, variable)`; groups that do
/// not meet the point and seed minimums carry a note instead.
pub fn scaling_fits(records: &[RunRecord]) -> Vec<ScalingFit> {
    let mut out = Vec::new();
    for ((experiment, method, variable), by_value) in group(records) {
        let rs: Vec<RunRecord> = by_value.values().flatten().map(|r| (*r).clone()).collect();
        let (exponent, note) = match fit_scaling_exponent(&rs, variable) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(ScalingFit {
            experiment,
            method,
            variable,
            exponent,
            note,
        });
    }
    out
}

/// Writes `curves.csv` and `scaling.csv` into `dir`.
pub fn write_report(records: &[RunRecord], dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let curves = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&curves)?;
    for p in aggregate(records) {
        w.serialize(p)?;
    }
    w.flush()?;
    let scaling = dir.join("scaling.csv");
    let mut w = csv::Writer::from_path(&scaling)?;
    for f in scaling_fits(records) {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok((curves, scaling))
}
