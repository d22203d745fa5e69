//! External clustering quality metrics and average-rank aggregation.
//!
//! All four metrics are computed from the contingency table of predicted
//! versus true cluster ids, so they do not depend on how the ids are named.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::datasets::remap_labels;
use crate::error::{Error, Result};

/// Counts of samples per (predicted, true) cluster pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[p][t]`
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        if pred.is_empty() {
            return Err(Error::Insufficient("metrics need at least one sample".into()));
        }
        let p = remap_labels(pred);
        let t = remap_labels(truth);
        let kp = p.iter().max().map_or(0, |m| m + 1);
        let kt = t.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn pred_sizes(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn true_sizes(&self) -> Vec<u64> {
        let kt = self.counts.first().map_or(0, Vec::len);
        (0..kt).map(|t| self.counts.iter().map(|r| r[t]).sum()).collect()
    }
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I / (H_pred + H_true)` in nats. Two
/// single-cluster partitions score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.n as f64;
    let a = table.pred_sizes();
    let b = table.true_sizes();
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    let h = entropy(&a, n) + entropy(&b, n);
    if h == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * mi / h).clamp(0.0, 1.0))
}

fn pairs(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Fraction of the `N(N−1)/2` sample pairs on which the two partitions
/// agree (both together or both apart). A single sample scores 1.
pub fn rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let total = pairs(table.n);
    if total == 0 {
        return Ok(1.0);
    }
    let tp: u128 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let same_pred: u128 = table.pred_sizes().into_iter().map(pairs).sum();
    let same_true: u128 = table.true_sizes().into_iter().map(pairs).sum();
    let fp = same_pred - tp;
    let fn_ = same_true - tp;
    let tn = total - tp - fp - fn_;
    Ok((tp + tn) as f64 / total as f64)
}

/// Mean over true clusters of the best F-measure any predicted cluster
/// achieves against it.
pub fn f_measure(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let a = table.pred_sizes();
    let b = table.true_sizes();
    let mut total = 0.0;
    for (t, &bt) in b.iter().enumerate() {
        let best = table
            .counts
            .iter()
            .zip(&a)
            .map(|(row, &ap)| {
                let c = row[t] as f64;
                // 2PR/(P+R) with P = c/|C_p| and R = c/|C'_t|
                if ap + bt == 0 {
                    0.0
                } else {
                    2.0 * c / (ap + bt) as f64
                }
            })
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / b.len() as f64)
}

/// Fraction of samples matched under the best one-to-one mapping between
/// predicted and true cluster ids (optimal assignment).
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let kp = table.counts.len();
    let kt = table.counts[0].len();
    let size = kp.max(kt);
    let mut weights = Matrix::new(size, size, 0i64);
    for (p, row) in table.counts.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            weights[(p, t)] = c as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / table.n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub nmi: f64,
    pub ri: f64,
    pub fm: f64,
    pub acc: f64,
}

impl MetricReport {
    pub fn evaluate(
        method: impl Into<String>,
        dataset: impl Into<String>,
        pred: &[usize],
        truth: &[usize],
    ) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            dataset: dataset.into(),
            nmi: nmi(pred, truth)?,
            ri: rand_index(pred, truth)?,
            fm: f_measure(pred, truth)?,
            acc: accuracy(pred, truth)?,
        })
    }

    fn values(&self) -> [(&'static str, f64); 4] {
        [
            ("nmi", self.nmi),
            ("ri", self.ri),
            ("fm", self.fm),
            ("acc", self.acc),
        ]
    }
}

/// Descending fractional ranks (best = 1, ties share the mean rank).
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let better = values.iter().filter(|&&w| w > v).count();
            let equal = values.iter().filter(|&&w| w == v).count();
            1.0 + better as f64 + (equal as f64 - 1.0) / 2.0
        })
        .collect()
}

/// Average over the four metrics of each method's rank; lower is better.
/// A NaN metric counts as missing.
pub fn average_rank(reports: &[MetricReport]) -> Result<Vec<f64>> {
    if reports.len() < 2 {
        return Err(Error::Insufficient(
            "average rank needs at least two methods".into(),
        ));
    }
    for r in reports {
        for (name, v) in r.values() {
            if v.is_nan() {
                return Err(Error::MissingMetric {
                    method: r.method.clone(),
                    metric: name,
                });
            }
        }
    }
    let mut avg = vec![0.0; reports.len()];
    for m in 0..4 {
        let column: Vec<f64> = reports.iter().map(|r| r.values()[m].1).collect();
        for (a, rank) in avg.iter_mut().zip(fractional_ranks(&column)) {
            *a += rank / 4.0;
        }
    }
    Ok(avg)
}

pub fn write_reports_csv<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads cluster labels from either an `index,label` CSV (with header) or a
/// plain file with one integer label per line. Labels are remapped to
/// `0..K` in first-appearance order; CSV rows are placed by index.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut raw: Vec<(usize, i64)> = Vec::new();
    let mut csv_mode = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: m,
        };
        if lineno == 0 && line.eq_ignore_ascii_case("index,label") {
            csv_mode = true;
            continue;
        }
        if csv_mode {
            let (idx, label) = line
                .split_once(',')
                .ok_or_else(|| err(format!("expected index,label, got `{line}`")))?;
            let idx = idx
                .trim()
                .parse()
                .map_err(|_| err(format!("bad index `{idx}`")))?;
            let label = label
                .trim()
                .parse()
                .map_err(|_| err(format!("bad label `{label}`")))?;
            raw.push((idx, label));
        } else {
            let label = line
                .parse()
                .map_err(|_| err(format!("bad label `{line}`")))?;
            raw.push((raw.len(), label));
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    raw.sort_by_key(|&(i, _)| i);
    if raw.iter().enumerate().any(|(pos, &(i, _))| pos != i) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "indices must cover 0..N exactly once".into(),
        });
    }
    let labels: Vec<i64> = raw.into_iter().map(|(_, l)| l).collect();
    Ok(remap_labels(&labels))
}
