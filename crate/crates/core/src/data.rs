//! Synthetic Gaussian blobs, additive noise, labeled/unlabeled splits, the
//! CSV dataset format and the JSON results file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Summary;
use crate::linalg::ensure_finite;
use crate::seeded_rng;
use crate::types::Dataset;

/// Gaussian blobs around `num_classes` centers at pairwise distance
/// `separation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    /// One entry per class.
    pub samples_per_class: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    /// Within-class standard deviation per coordinate.
    pub std: f64,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// `c` classes of `n_per_class` samples each.
    pub fn balanced(c: usize, n_per_class: usize, dim: usize, separation: f64, std: f64) -> Self {
        Self {
            num_classes: c,
            samples_per_class: vec![n_per_class; c],
            dim,
            separation,
            std,
            labeled_fraction: 0.3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.samples_per_class.len() != self.num_classes {
            return bad(format!(
                "{} class sizes given for {} classes",
                self.samples_per_class.len(),
                self.num_classes
            ));
        }
        if self.samples_per_class.contains(&0) {
            return bad("every class needs at least one sample".into());
        }
        if self.samples_per_class.iter().sum::<usize>() < 3 {
            return bad("need at least 3 samples".into());
        }
        if self.dim == 0 {
            return bad("dimension must be >= 1".into());
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be > 0, got {}", self.separation));
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return bad(format!("std must be >= 0, got {}", self.std));
        }
        check_fraction(self.labeled_fraction)
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "labeled fraction must lie in (0, 1], got {f}"
        )))
    }
}

/// A dataset together with the class of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub dataset: Dataset,
    /// Ground truth for every column of `dataset`, labeled ones included.
    pub truth: Vec<usize>,
    /// `order[j]` is the source index of dataset column `j`.
    pub order: Vec<usize>,
}

/// Output of [`make_blobs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    /// `D x N`, samples grouped by class in source order.
    pub x: DMatrix<f64>,
    pub classes: Vec<usize>,
    /// Constant added to every entry so that the minimum entry is 0.
    pub shift: f64,
    pub data: LabeledData,
}

/// Class centers at pairwise distance `separation`: scaled unit vectors when
/// `c <= D`, otherwise random directions scaled to the same radius.
fn centers(spec: &BlobSpec, rng: &mut crate::SeededRng) -> DMatrix<f64> {
    let (c, d) = (spec.num_classes, spec.dim);
    let radius = spec.separation / std::f64::consts::SQRT_2;
    if c <= d {
        let mut m = DMatrix::zeros(d, c);
        for k in 0..c {
            m[(k, k)] = radius;
        }
        return m;
    }
    let mut m = DMatrix::from_fn(d, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in m.column_iter_mut() {
        let norm = col.norm().max(f64::MIN_POSITIVE);
        col *= radius / norm;
    }
    m
}

/// Draws the blobs, shifts them to be nonnegative and splits off a
/// stratified labeled subset of `labeled_fraction`.
pub fn make_blobs(spec: &BlobSpec) -> Result<Blobs> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mu = centers(spec, &mut rng);
    let n: usize = spec.samples_per_class.iter().sum();
    let mut x = DMatrix::zeros(spec.dim, n);
    let mut classes = Vec::with_capacity(n);
    let mut j = 0;
    for (k, &count) in spec.samples_per_class.iter().enumerate() {
        for _ in 0..count {
            for i in 0..spec.dim {
                let z: f64 = rng.sample(StandardNormal);
                x[(i, j)] = mu[(i, k)] + spec.std * z;
            }
            classes.push(k);
            j += 1;
        }
    }
    let min = x.min();
    let shift = if min < 0.0 { -min } else { 0.0 };
    x.add_scalar_mut(shift);
    let data = split_labeled(&x, &classes, spec.num_classes, spec.labeled_fraction, rng.gen())?;
    Ok(Blobs {
        x,
        classes,
        shift,
        data,
    })
}

/// Stratified labeled subset: `round(fraction * n_k)` samples of class `k`,
/// at least one per class and never every sample. Labeled columns come
/// first, each group in source order.
pub fn split_labeled(
    x: &DMatrix<f64>,
    classes: &[usize],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<LabeledData> {
    check_fraction(fraction)?;
    let n = x.ncols();
    if classes.len() != n {
        return Err(Error::LengthMismatch {
            left: classes.len(),
            right: n,
        });
    }
    let mut rng = seeded_rng(seed);
    let mut chosen = vec![false; n];
    let mut picked_per_class = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| classes[i] == k).collect();
        if members.is_empty() {
            return Err(Error::InvalidDataset(format!("class {k} has no samples")));
        }
        members.shuffle(&mut rng);
        let m = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        picked_per_class.push(members[..m].to_vec());
    }
    let total: usize = picked_per_class.iter().map(Vec::len).sum();
    if total >= n {
        // keep at least one unlabeled sample: drop one from the largest labeled class
        let k = (0..num_classes)
            .max_by_key(|&k| (picked_per_class[k].len(), std::cmp::Reverse(k)))
            .expect("classes");
        if picked_per_class[k].len() < 2 {
            return Err(Error::InvalidDataset(
                "too few samples to leave one unlabeled".into(),
            ));
        }
        picked_per_class[k].pop();
    }
    for i in picked_per_class.into_iter().flatten() {
        chosen[i] = true;
    }
    let order: Vec<usize> = (0..n)
        .filter(|&i| chosen[i])
        .chain((0..n).filter(|&i| !chosen[i]))
        .collect();
    let l = chosen.iter().filter(|&&c| c).count();
    let xs = x.select_columns(order.iter());
    let truth: Vec<usize> = order.iter().map(|&i| classes[i]).collect();
    let dataset = Dataset::new(xs, truth[..l].to_vec(), num_classes)?;
    Ok(LabeledData {
        dataset,
        truth,
        order,
    })
}

/// `X + noise_scale * randn(D, N)`, drawn column by column.
pub fn add_noise(ds: &Dataset, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "noise scale must be finite and >= 0, got {noise_scale}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let x = ds.x();
    let noisy = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        x[(i, j)] + noise_scale * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(noisy, ds.labels().to_vec(), ds.num_classes())
}

/// Samples as read from a CSV file, one column per row of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub x: DMatrix<f64>,
    /// `None` for rows marked `?`.
    pub labels: Vec<Option<usize>>,
}

impl CsvData {
    /// Number of classes implied by the largest class id.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Labeled rows first, each group in file order. The returned order maps
    /// dataset columns back to file rows.
    pub fn into_dataset(self) -> Result<(Dataset, Vec<usize>)> {
        let n = self.labels.len();
        let order: Vec<usize> = (0..n)
            .filter(|&i| self.labels[i].is_some())
            .chain((0..n).filter(|&i| self.labels[i].is_none()))
            .collect();
        let c = self.num_classes();
        let labels: Vec<usize> = order.iter().filter_map(|&i| self.labels[i]).collect();
        let x = self.x.select_columns(order.iter());
        Ok((Dataset::new(x, labels, c)?, order))
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    };
    if header.get(0) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with `label`".into(),
        });
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::Parse { line: 1, msg: "no feature columns".into() });
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("feature column {i} must be named f{i}, found `{name}`"),
            });
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, rec) in records.enumerate() {
        let fallback = idx + 2;
        let rec = rec.map_err(|e| csv_error(e, fallback))?;
        let line = rec.position().map_or(fallback, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        let label = match &rec[0] {
            "?" => None,
            s => Some(s.parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("unknown class id `{s}`"),
            })?),
        };
        labels.push(label);
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid number `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value `{field}`"),
                });
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no samples".into() });
    }
    let c = labels.iter().flatten().max().map_or(0, |m| m + 1);
    for k in 0..c {
        if !labels.contains(&Some(k)) {
            return Err(Error::InvalidDataset(format!(
                "class ids must be contiguous from 0; class {k} is missing"
            )));
        }
    }
    // rows of the file are samples, so the row-major buffer is N x D
    let x = DMatrix::from_row_slice(labels.len(), d, &values).transpose();
    Ok(CsvData { x, labels })
}

fn csv_error(e: csv::Error, fallback: usize) -> Error {
    let line = e.position().map_or(fallback, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<CsvData> {
    read_csv(fs::File::open(path)?)
}

/// Writes one row per sample with 17 significant digits.
pub fn write_csv(x: &DMatrix<f64>, labels: &[Option<usize>]) -> Result<String> {
    ensure_finite(x, "data matrix")?;
    if labels.len() != x.ncols() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: x.ncols(),
        });
    }
    let mut out = String::from("label");
    for i in 0..x.nrows() {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (j, label) in labels.iter().enumerate() {
        match label {
            Some(c) => out.push_str(&c.to_string()),
            None => out.push('?'),
        }
        for i in 0..x.nrows() {
            out.push_str(&format!(",{:.16e}", x[(i, j)]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_csv(path: impl AsRef<Path>, x: &DMatrix<f64>, labels: &[Option<usize>]) -> Result<()> {
    fs::write(path, write_csv(x, labels)?)?;
    Ok(())
}

/// Aggregated metrics of a run; absent entries are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ac: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Summary>,
}

/// One objective sequence, tagged with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTrace {
    pub name: String,
    pub values: Vec<f64>,
    pub converged: bool,
}

/// The results file. `details` carries command-specific rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub run_config: serde_json::Value,
    pub seed: u64,
    pub objective_trace: Vec<NamedTrace>,
    pub metrics: Metrics,
    /// Empty unless timing was requested; timings make output
    /// run-dependent.
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub fn results_to_string(results: &Results) -> Result<String> {
    let mut s = serde_json::to_string_pretty(results)?;
    s.push('\n');
    Ok(s)
}

pub fn save_results(path: impl AsRef<Path>, results: &Results) -> Result<()> {
    fs::write(path, results_to_string(results)?)?;
    Ok(())
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Results> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
