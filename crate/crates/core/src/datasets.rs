//! Dataset ingestion (LIBSVM text) and synthetic generators.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `N × d` sample matrix (row-major) with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        n_rows: usize,
        n_cols: usize,
        data: Vec<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let name = name.into();
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::EmptyDataset(name));
        }
        if data.len() != n_rows * n_cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: n_rows * n_cols,
            });
        }
        if let Some(l) = &labels {
            if l.len() != n_rows {
                return Err(Error::LengthMismatch {
                    left: l.len(),
                    right: n_rows,
                });
            }
        }
        Ok(Self {
            name,
            n_rows,
            n_cols,
            data,
            labels,
        })
    }

    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let name = name.into();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch {
                left: bad.len(),
                right: d,
            });
        }
        Self::new(name, rows.len(), d, rows.concat(), labels)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Row-major sample values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Number of distinct ground-truth classes, if labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&i| l[i]).collect());
        Self::new(self.name.clone(), rows.len(), self.n_cols, data, labels)
    }
}

/// Reads a LIBSVM file: `label idx:val idx:val ...` with 1-based, strictly
/// increasing indices. Missing indices are zero and `d` is the largest index
/// seen. Class labels are remapped to `0..K` in order of first appearance.
pub fn parse_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels: Vec<u64> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(lineno, format!("label `{label_tok}` is not numeric")))?;
        // +0.0 and -0.0 are the same class
        raw_labels.push((label + 0.0).to_bits());

        let mut entries = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("token `{tok}` is not idx:val")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("index `{idx}` is not a positive integer")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("value `{val}` is not numeric")))?;
            if idx == 0 {
                return Err(err(lineno, "indices are 1-based; found 0".into()));
            }
            if idx <= prev {
                return Err(err(
                    lineno,
                    format!("index {idx} does not increase after {prev}"),
                ));
            }
            prev = idx;
            entries.push((idx, val));
        }
        dim = dim.max(prev);
        rows.push(entries);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    if dim == 0 {
        return Err(err(1, "no feature values in file".into()));
    }

    let mut data = vec![0.0; rows.len() * dim];
    for (i, entries) in rows.iter().enumerate() {
        for &(idx, val) in entries {
            data[i * dim + idx - 1] = val;
        }
    }
    let labels = remap_labels(&raw_labels);
    let name = path
        .file_stem()
        .map_or_else(|| "libsvm".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, rows.len(), dim, data, Some(labels))
}

/// Maps arbitrary label keys to `0..K` in first-appearance order.
pub fn remap_labels<T: std::hash::Hash + Eq + Copy>(raw: &[T]) -> Vec<usize> {
    let mut ids: HashMap<T, usize> = HashMap::new();
    raw.iter()
        .map(|&r| {
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect()
}

/// Writes a dataset in LIBSVM format. Zero values are omitted except the
/// last feature, which is always written so the dimension survives a
/// round trip. Unlabeled datasets are written with label 0.
pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = ds.n_cols();
    for i in 0..ds.n_rows() {
        let label = ds.labels.as_ref().map_or(0, |l| l[i]);
        write!(w, "{label}")?;
        for (j, &v) in ds.row(i).iter().enumerate() {
            if v != 0.0 || j + 1 == d {
                write!(w, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Blobs,
    Rings,
}

/// Parameters for a generated dataset with known labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub k: usize,
    pub n: usize,
    pub d: usize,
    /// Distance between neighbouring cluster centres (blobs) or ring radii
    /// (rings), in units of the per-cluster standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn blobs(k: usize, n: usize, d: usize, separation: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Blobs,
            k,
            n,
            d,
            separation,
            seed,
        }
    }

    pub fn rings(k: usize, n: usize, d: usize, separation: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Rings,
            ..Self::blobs(k, n, d, separation, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("synthetic k must be at least 2".into()));
        }
        if self.n < self.k {
            return Err(Error::InvalidConfig(format!(
                "synthetic n = {} is smaller than k = {}",
                self.n, self.k
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("synthetic d must be at least 1".into()));
        }
        if self.kind == SyntheticKind::Rings && self.d < 2 {
            return Err(Error::InvalidConfig("rings need d >= 2".into()));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::InvalidConfig("separation must be positive".into()));
        }
        Ok(())
    }
}

/// Per-cluster standard deviation of the generators.
pub const CLUSTER_STD: f64 = 1.0;

/// Generates blobs or rings. Sample `i` belongs to component `i mod k`, so
/// every prefix of the dataset is close to balanced.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, n, d) = (spec.k, spec.n, spec.d);
    let gap = spec.separation * CLUSTER_STD;

    // Blob centres sit on a circle (or a line when d = 1) with neighbouring
    // centres `gap` apart.
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut m = vec![0.0; d];
            if d == 1 {
                m[0] = c as f64 * gap;
            } else {
                let radius = gap / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect();

    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c);
        match spec.kind {
            SyntheticKind::Blobs => {
                for m in &centres[c] {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + CLUSTER_STD * z);
                }
            }
            SyntheticKind::Rings => {
                let radius = (c + 1) as f64 * gap;
                let angle = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                let z: f64 = rng.sample(StandardNormal);
                let r = radius + CLUSTER_STD * z;
                data.push(r * angle.cos());
                data.push(r * angle.sin());
                for _ in 2..d {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(CLUSTER_STD * z);
                }
            }
        }
    }
    let name = format!(
        "{}-k{}-n{}-d{}",
        match spec.kind {
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Rings => "rings",
        },
        k,
        n,
        d
    );
    Dataset::new(name, n, d, data, Some(labels))
}

/// Shifts every column to mean 0 and scales it to unit (population)
/// variance. Constant columns become all zeros.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let (n, d) = (ds.n_rows(), ds.n_cols());
    if n < 2 {
        return Err(Error::Insufficient(
            "standardize needs at least two rows".into(),
        ));
    }
    let mut data = ds.as_slice().to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (data[i * d + j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        // relative guard: a column that is constant up to rounding
        let degenerate = std <= 1e-12 * mean.abs().max(1.0);
        for i in 0..n {
            let v = &mut data[i * d + j];
            *v = if degenerate { 0.0 } else { (*v - mean) / std };
        }
    }
    Dataset::new(ds.name.clone(), n, d, data, ds.labels.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_sparse_line_with_gaps() {
        let f = write_tmp("3 1:0.5 4:2.0\n");
        let ds = parse_libsvm(f.path()).unwrap();
        assert_eq!(ds.n_cols(), 4);
        assert_eq!(ds.row(0), &[0.5, 0.0, 0.0, 2.0]);
        assert_eq!(ds.labels, Some(vec![0]));
    }

    #[test]
    fn parses_two_lines_and_remaps_labels() {
        let f = write_tmp("1 1:1\n2 2:1\n");
        let ds = parse_libsvm(f.path()).unwrap();
        assert_eq!(ds.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.labels, Some(vec![0, 1]));
    }

    #[test]
    fn labels_keep_first_appearance_order() {
        let f = write_tmp("7 1:1\n-1 1:2\n7 1:3\n+1 1:4\n1 1:5\n");
        let ds = parse_libsvm(f.path()).unwrap();
        assert_eq!(ds.labels, Some(vec![0, 1, 0, 2, 2]));
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for (text, line) in [
            ("1 1:1\nx 1:2\n", 2),
            ("1 1:1\n1 2:1 2:3\n", 2),
            ("1 3:1 2:1\n", 1),
            ("1 1:abc\n", 1),
            ("1 0:1\n", 1),
            ("1 1:1\n\n1 nocolon\n", 3),
        ] {
            let f = write_tmp(text);
            match parse_libsvm(f.path()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("\n\n");
        assert!(matches!(parse_libsvm(f.path()), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let ds = Dataset::from_rows(
            "t",
            &[vec![0.1, 0.0, 0.0], vec![0.0, -3.5e-7, 0.0], vec![1.0 / 3.0, 2.0, 0.0]],
            Some(vec![0, 1, 0]),
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_libsvm(&ds, f.path()).unwrap();
        let back = parse_libsvm(f.path()).unwrap();
        assert_eq!(back.as_slice(), ds.as_slice());
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn blobs_far_apart_cluster_tightly() {
        let ds = make_synthetic(&SyntheticSpec::blobs(2, 4, 2, 1000.0, 3)).unwrap();
        let dist = |a: usize, b: usize| -> f64 {
            ds.row(a)
                .iter()
                .zip(ds.row(b))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        // rows 0,2 are component 0 and rows 1,3 component 1
        assert_eq!(ds.labels, Some(vec![0, 1, 0, 1]));
        let within = dist(0, 2).max(dist(1, 3));
        let between = dist(0, 1).min(dist(2, 3)).min(dist(0, 3)).min(dist(1, 2));
        assert!(within * 50.0 < between, "{within} vs {between}");
    }

    #[test]
    fn synthetic_is_deterministic() {
        for spec in [
            SyntheticSpec::blobs(3, 50, 4, 5.0, 11),
            SyntheticSpec::rings(2, 40, 3, 4.0, 11),
        ] {
            let a = make_synthetic(&spec).unwrap();
            let b = make_synthetic(&spec).unwrap();
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let a = make_synthetic(&SyntheticSpec::blobs(3, 50, 4, 5.0, 11)).unwrap();
        let c = make_synthetic(&SyntheticSpec::blobs(3, 50, 4, 5.0, 12)).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn rings_have_increasing_radius() {
        let ds = make_synthetic(&SyntheticSpec::rings(3, 3000, 2, 8.0, 1)).unwrap();
        let labels = ds.labels.clone().unwrap();
        let mut mean_r = [0.0; 3];
        for i in 0..ds.n_rows() {
            let r = ds.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            mean_r[labels[i]] += r / 1000.0;
        }
        assert!((mean_r[0] - 8.0).abs() < 0.3);
        assert!((mean_r[2] - 24.0).abs() < 0.3);
    }

    #[test]
    fn synthetic_validation() {
        assert!(make_synthetic(&SyntheticSpec::blobs(1, 10, 2, 1.0, 0)).is_err());
        assert!(make_synthetic(&SyntheticSpec::blobs(5, 4, 2, 1.0, 0)).is_err());
        assert!(make_synthetic(&SyntheticSpec::blobs(2, 4, 2, 0.0, 0)).is_err());
        assert!(make_synthetic(&SyntheticSpec::rings(2, 4, 1, 1.0, 0)).is_err());
    }

    #[test]
    fn synthetic_spec_json_block() {
        let spec: SyntheticSpec = serde_json::from_str(
            r#"{"kind":"blobs","k":3,"n":30,"d":2,"separation":6.0,"seed":7}"#,
        )
        .unwrap();
        assert_eq!(spec, SyntheticSpec::blobs(3, 30, 2, 6.0, 7));
    }

    #[test]
    fn standardize_small_columns() {
        let ds = Dataset::from_rows("s", &[vec![1.0, 5.0], vec![3.0, 5.0]], None).unwrap();
        let s = standardize(&ds).unwrap();
        assert_eq!(s.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
        let ds = Dataset::from_rows("s", &[vec![5.0], vec![5.0], vec![5.0]], None).unwrap();
        assert_eq!(standardize(&ds).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
        let one = Dataset::from_rows("s", &[vec![1.0]], None).unwrap();
        assert!(standardize(&one).is_err());
    }

    #[test]
    fn standardize_moments_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() * 10.0 - 3.0).collect();
        let ds = Dataset::new("r", 100, 5, data, None).unwrap();
        let s = standardize(&ds).unwrap();
        for j in 0..5 {
            let col: Vec<f64> = (0..100).map(|i| s.row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / 100.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-12);
        }
        let twice = standardize(&s).unwrap();
        for (a, b) in s.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
