//! Dataset handling: containers, normalization, artificial data generators,
//! file formats, evaluation metrics, cross-validation, and the PCA projection
//! baseline.
//!
//! File formats:
//!
//! - Dense CSV (single-mode data): a header row naming every column, one
//!   sample per row, with the response in a designated column (`y` by
//!   default).
//! - Sparse tensor: a header line `shape I1 .. IK N task`, then one line
//!   `n i1 .. iK value` per non-zero entry with 1-based indices. Responses
//!   live in a sibling file at `<path>.y`, one per line.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Target, TaskKind, TripModel};
use crate::stiefel::{self, thin_svd};
use crate::tensor::{Matrix, Shape, SparseTensor};
use crate::train::{self, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

/// Per-variable normalization statistics for single-mode data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Variables with zero variance: centered only.
    pub constant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Responses {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Responses {
    pub fn len(&self) -> usize {
        match self {
            Responses::Classes(v) => v.len(),
            Responses::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    shape: Shape,
    samples: Vec<SparseTensor>,
    responses: Responses,
    task: TaskKind,
    num_classes: usize,
    norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(samples: Vec<SparseTensor>, responses: Responses) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if samples.len() != responses.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples vs {} responses",
                samples.len(),
                responses.len()
            )));
        }
        let shape = samples[0].shape().clone();
        if samples.iter().any(|s| s.shape() != &shape) {
            return Err(Error::ShapeMismatch(
                "samples do not share a single shape".into(),
            ));
        }
        let (task, num_classes) = match &responses {
            Responses::Classes(cs) => {
                let max = cs.iter().copied().max().unwrap_or(0);
                (TaskKind::Classification, (max + 1).max(2))
            }
            Responses::Values(_) => (TaskKind::Regression, 0),
        };
        Ok(Dataset {
            shape,
            samples,
            responses,
            task,
            num_classes,
            norm_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn samples(&self) -> &[SparseTensor] {
        &self.samples
    }

    pub fn responses(&self) -> &Responses {
        &self.responses
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn targets(&self) -> Vec<Target> {
        match &self.responses {
            Responses::Classes(cs) => cs.iter().map(|&c| Target::Class(c)).collect(),
            Responses::Values(vs) => vs.iter().map(|&v| Target::Value(v)).collect(),
        }
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.responses {
            Responses::Classes(cs) => Some(cs),
            Responses::Values(_) => None,
        }
    }

    /// Subset by sample indices; keeps the class count of the parent.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let responses = match &self.responses {
            Responses::Classes(cs) => {
                Responses::Classes(indices.iter().map(|&i| cs[i]).collect())
            }
            Responses::Values(vs) => Responses::Values(indices.iter().map(|&i| vs[i]).collect()),
        };
        Dataset {
            shape: self.shape.clone(),
            samples,
            responses,
            task: self.task,
            num_classes: self.num_classes,
            norm_stats: self.norm_stats.clone(),
        }
    }
}

/// Builds a model configuration consistent with a dataset's shape and task.
pub fn model_config_for(ds: &Dataset, settings: &RunSettings) -> ModelConfig {
    ModelConfig {
        input_dims: ds.shape().dims().to_vec(),
        subspace_dims: settings.subspace_dims.clone(),
        task: ds.task(),
        outputs: match ds.task() {
            TaskKind::Classification => ds.num_classes(),
            TaskKind::Regression => 1,
        },
        hidden_layers: settings.hidden_layers,
        hidden_width: settings.hidden_width,
        rank: settings.rank,
        lambda: settings.lambda,
    }
}

/// Computes per-variable statistics over a single-mode dataset.
fn column_stats(ds: &Dataset) -> NormStats {
    let dim = ds.shape().dim(0);
    let n = ds.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in ds.samples() {
        for (idx, v) in x.iter() {
            mean[idx[0]] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for x in ds.samples() {
        let mut dense = vec![0.0; dim];
        for (idx, v) in x.iter() {
            dense[idx[0]] = v;
        }
        for (d, &v) in dense.iter().enumerate() {
            var[d] += (v - mean[d]) * (v - mean[d]);
        }
    }
    let mut std = Vec::with_capacity(dim);
    let mut constant = Vec::with_capacity(dim);
    for v in &var {
        let s = (v / n).sqrt();
        if s < 1e-12 {
            std.push(1.0);
            constant.push(true);
        } else {
            std.push(s);
            constant.push(false);
        }
    }
    NormStats {
        mean,
        std,
        constant,
    }
}

/// Normalizes single-mode data to zero mean and unit standard deviation per
/// variable. Constant variables are centered and flagged. Idempotent: an
/// already-normalized dataset is returned unchanged.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    if ds.order() != 1 {
        return Err(Error::InvalidArgument(
            "normalization is defined for single-mode data".into(),
        ));
    }
    if ds.norm_stats.is_some() {
        return Ok(ds.clone());
    }
    let stats = column_stats(ds);
    apply_norm_stats(ds, &stats)
}

/// Applies existing statistics (e.g. from the training folds) to a dataset.
pub fn apply_norm_stats(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if ds.order() != 1 {
        return Err(Error::InvalidArgument(
            "normalization is defined for single-mode data".into(),
        ));
    }
    let dim = ds.shape().dim(0);
    if stats.mean.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "stats cover {} variables, data has {}",
            stats.mean.len(),
            dim
        )));
    }
    let shape = ds.shape().clone();
    let mut samples = Vec::with_capacity(ds.len());
    for x in ds.samples() {
        let mut dense = vec![0.0; dim];
        for (idx, v) in x.iter() {
            dense[idx[0]] = v;
        }
        let entries: Vec<(Vec<usize>, f64)> = dense
            .iter()
            .enumerate()
            .filter_map(|(d, &v)| {
                let scaled = (v - stats.mean[d]) / stats.std[d];
                (scaled != 0.0).then(|| (vec![d], scaled))
            })
            .collect();
        samples.push(SparseTensor::new(shape.clone(), entries)?);
    }
    let mut out = Dataset::new(samples, ds.responses.clone())?;
    out.num_classes = ds.num_classes;
    out.norm_stats = Some(stats.clone());
    Ok(out)
}

pub const SPIRAL_DIM: usize = 100;
pub const SPIRAL_SAMPLES: usize = 220;

/// The 220 x 100 coordinate block before the hiding rotation: two spiral
/// coordinates scaled to unit standard deviation, one unit-variance noise
/// dimension, and 97 low-variance noise dimensions. Returns the matrix
/// (samples as rows) and the class labels.
pub fn spiral_block(seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut coords = Matrix::zeros(SPIRAL_SAMPLES, SPIRAL_DIM);
    let mut labels = Vec::with_capacity(SPIRAL_SAMPLES);
    let max_t = 3.5 * std::f64::consts::PI;
    let mut row = 0;
    for class in 0..2usize {
        let phase = class as f64 * std::f64::consts::PI;
        for _ in 0..100 {
            let t = rng.gen_range(0.0..max_t);
            coords.set(row, 0, t * (t + phase).sin());
            coords.set(row, 1, t * (t + phase).cos());
            labels.push(class);
            row += 1;
        }
    }
    for class in 0..2usize {
        for _ in 0..10 {
            coords.set(row, 0, rng.gen_range(-10.0..10.0));
            coords.set(row, 1, rng.gen_range(-10.0..10.0));
            labels.push(class);
            row += 1;
        }
    }
    // scale the two signal coordinates to unit standard deviation
    for d in 0..2 {
        let mean: f64 =
            (0..SPIRAL_SAMPLES).map(|i| coords.get(i, d)).sum::<f64>() / SPIRAL_SAMPLES as f64;
        let var: f64 = (0..SPIRAL_SAMPLES)
            .map(|i| {
                let v = coords.get(i, d) - mean;
                v * v
            })
            .sum::<f64>()
            / SPIRAL_SAMPLES as f64;
        let s = var.sqrt();
        for i in 0..SPIRAL_SAMPLES {
            coords.set(i, d, coords.get(i, d) / s);
        }
    }
    // one unit-variance noise dimension, then 97 low-variance ones
    for i in 0..SPIRAL_SAMPLES {
        let v: f64 = normal.sample(&mut rng);
        coords.set(i, 2, v);
    }
    for d in 3..SPIRAL_DIM {
        for i in 0..SPIRAL_SAMPLES {
            let v: f64 = normal.sample(&mut rng);
            coords.set(i, d, 0.1 * v);
        }
    }
    (coords, labels)
}

/// The rotation hiding the spiral, shared between the train and test sets of
/// one seed.
pub fn spiral_rotation(seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stiefel::random_orthogonal(SPIRAL_DIM, &mut rng)
}

fn matrix_to_dataset(coords: &Matrix, labels: &[usize]) -> Result<Dataset> {
    let shape = Shape::new(vec![coords.cols()])?;
    let mut samples = Vec::with_capacity(coords.rows());
    for i in 0..coords.rows() {
        let entries: Vec<(Vec<usize>, f64)> = (0..coords.cols())
            .filter_map(|d| {
                let v = coords.get(i, d);
                (v != 0.0).then(|| (vec![d], v))
            })
            .collect();
        samples.push(SparseTensor::new(shape.clone(), entries)?);
    }
    Dataset::new(samples, Responses::Classes(labels.to_vec()))
}

/// Two-class spiral classification data: 220 samples in 100 dimensions, the
/// spiral hidden by a seeded rotation. Train and test sets are generated
/// independently but share the rotation.
pub fn gen_spiral(seed: u64) -> Result<(Dataset, Dataset)> {
    let rot = spiral_rotation(seed);
    let (train_block, train_labels) = spiral_block(seed.wrapping_add(1));
    let (test_block, test_labels) = spiral_block(seed.wrapping_add(2));
    let train = matrix_to_dataset(&train_block.matmul(&rot), &train_labels)?;
    let test = matrix_to_dataset(&test_block.matmul(&rot), &test_labels)?;
    Ok((train, test))
}

/// Random sparse tensors with standard-normal values at distinct uniform
/// index tuples and random binary labels.
pub fn gen_random_tensor(
    extents: &[usize],
    n_samples: usize,
    nnz_per_sample: usize,
    seed: u64,
) -> Result<Dataset> {
    let shape = Shape::new(extents.to_vec())?;
    let total = shape.num_elements();
    if nnz_per_sample as u128 > total {
        return Err(Error::InvalidArgument(format!(
            "{} non-zeros requested but the shape holds only {} elements",
            nnz_per_sample, total
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut samples = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut taken: HashSet<u128> = HashSet::with_capacity(nnz_per_sample);
        let mut entries = Vec::with_capacity(nnz_per_sample);
        while entries.len() < nnz_per_sample {
            let flat = rng.gen_range(0..total);
            if !taken.insert(flat) {
                continue;
            }
            let mut idx = Vec::with_capacity(extents.len());
            let mut rem = flat;
            for &d in extents {
                idx.push((rem % d as u128) as usize);
                rem /= d as u128;
            }
            let mut v: f64 = normal.sample(&mut rng);
            while v == 0.0 {
                v = normal.sample(&mut rng);
            }
            entries.push((idx, v));
        }
        samples.push(SparseTensor::new(shape.clone(), entries)?);
        labels.push(rng.gen_range(0..2usize));
    }
    Dataset::new(samples, Responses::Classes(labels))
}

/// Loads a dense CSV: header row, one sample per row, response in the column
/// named by `response` (default `y`).
pub fn load_dense_csv(path: &Path, task: TaskKind, response: Option<&str>) -> Result<Dataset> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&name, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(l))) => l,
        Some((_, Err(e))) => return Err(Error::io(&name, e)),
        None => return Err(Error::parse(&name, 1, "empty file")),
    };
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let response_name = response.unwrap_or("y");
    let y_col = cols
        .iter()
        .position(|c| c == response_name)
        .ok_or_else(|| {
            Error::parse(
                &name,
                1,
                format!("response column '{response_name}' not found in header"),
            )
        })?;
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(Error::parse(&name, 1, "no feature columns"));
    }
    let shape = Shape::new(vec![dim])?;

    let mut samples = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(
                &name,
                line_no,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let mut entries = Vec::with_capacity(dim);
        let mut d = 0usize;
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(&name, line_no, format!("bad number '{}'", field.trim()))
            })?;
            if c == y_col {
                match task {
                    TaskKind::Classification => {
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(Error::parse(
                                &name,
                                line_no,
                                format!("class id must be a non-negative integer, got '{v}'"),
                            ));
                        }
                        classes.push(v as usize);
                    }
                    TaskKind::Regression => values.push(v),
                }
            } else {
                if v != 0.0 {
                    entries.push((vec![d], v));
                }
                d += 1;
            }
        }
        samples.push(SparseTensor::new(shape.clone(), entries)?);
    }
    let responses = match task {
        TaskKind::Classification => Responses::Classes(classes),
        TaskKind::Regression => Responses::Values(values),
    };
    Dataset::new(samples, responses)
}

/// Writes single-mode data as a dense CSV with the response in the last
/// column, named `y`.
pub fn save_dense_csv(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.order() != 1 {
        return Err(Error::InvalidArgument(
            "dense CSV holds single-mode data".into(),
        ));
    }
    let name = path.display().to_string();
    let f = std::fs::File::create(path).map_err(|e| Error::io(&name, e))?;
    let mut w = std::io::BufWriter::new(f);
    let dim = ds.shape().dim(0);
    (|| -> std::io::Result<()> {
        let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
        writeln!(w, "{},y", header.join(","))?;
        for (i, x) in ds.samples().iter().enumerate() {
            let mut dense = vec![0.0; dim];
            for (idx, v) in x.iter() {
                dense[idx[0]] = v;
            }
            let fields: Vec<String> = dense.iter().map(|v| format!("{:.16e}", v)).collect();
            let y = match &ds.responses {
                Responses::Classes(cs) => cs[i].to_string(),
                Responses::Values(vs) => format!("{:.16e}", vs[i]),
            };
            writeln!(w, "{},{}", fields.join(","), y)?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(&name, e))
}

/// Loads coordinate-format tensor data. Responses are read from `<path>.y`.
pub fn load_sparse_tensor(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&name, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(l))) => l,
        Some((_, Err(e))) => return Err(Error::io(&name, e)),
        None => return Err(Error::parse(&name, 1, "empty file")),
    };
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() < 4 || parts[0] != "shape" {
        return Err(Error::parse(
            &name,
            1,
            "expected header 'shape I1 .. IK N task'",
        ));
    }
    let task: TaskKind = parts[parts.len() - 1].parse()?;
    let n_samples: usize = parts[parts.len() - 2]
        .parse()
        .map_err(|_| Error::parse(&name, 1, "bad sample count"))?;
    let extents: Vec<usize> = parts[1..parts.len() - 2]
        .iter()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(&name, 1, format!("bad extent '{s}'")))
        })
        .collect::<Result<_>>()?;
    let shape = Shape::new(extents.clone())?;
    let order = shape.order();
    if n_samples == 0 {
        return Err(Error::parse(&name, 1, "sample count must be >= 1"));
    }

    let mut per_sample: Vec<Vec<(Vec<usize>, f64)>> = vec![Vec::new(); n_samples];
    let mut seen: HashSet<(usize, Vec<usize>)> = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != order + 2 {
            return Err(Error::parse(
                &name,
                line_no,
                format!("expected {} fields, got {}", order + 2, fields.len()),
            ));
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(&name, line_no, "bad sample index"))?;
        if n == 0 || n > n_samples {
            return Err(Error::parse(
                &name,
                line_no,
                format!("sample index {n} outside 1..={n_samples}"),
            ));
        }
        let mut idx = Vec::with_capacity(order);
        for (k, f) in fields[1..1 + order].iter().enumerate() {
            let i1: usize = f
                .parse()
                .map_err(|_| Error::parse(&name, line_no, format!("bad index '{f}'")))?;
            if i1 == 0 || i1 > extents[k] {
                return Err(Error::parse(
                    &name,
                    line_no,
                    format!("index {} outside 1..={} in mode {}", i1, extents[k], k + 1),
                ));
            }
            idx.push(i1 - 1);
        }
        let v: f64 = fields[order + 1]
            .parse()
            .map_err(|_| Error::parse(&name, line_no, "bad value"))?;
        if !seen.insert((n, idx.clone())) {
            return Err(Error::parse(
                &name,
                line_no,
                format!("duplicate entry for sample {n} at {idx:?}"),
            ));
        }
        per_sample[n - 1].push((idx, v));
    }
    let samples: Vec<SparseTensor> = per_sample
        .into_iter()
        .map(|entries| SparseTensor::new(shape.clone(), entries))
        .collect::<Result<_>>()?;

    let y_path = format!("{}.y", name);
    let y_file = std::fs::File::open(&y_path).map_err(|e| Error::io(&y_path, e))?;
    let y_reader = std::io::BufReader::new(y_file);
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for (i, line) in y_reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&y_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match task {
            TaskKind::Classification => {
                classes.push(line.trim().parse::<usize>().map_err(|_| {
                    Error::parse(&y_path, i + 1, format!("bad class id '{}'", line.trim()))
                })?);
            }
            TaskKind::Regression => {
                values.push(line.trim().parse::<f64>().map_err(|_| {
                    Error::parse(&y_path, i + 1, format!("bad value '{}'", line.trim()))
                })?);
            }
        }
    }
    let responses = match task {
        TaskKind::Classification => Responses::Classes(classes),
        TaskKind::Regression => Responses::Values(values),
    };
    if responses.len() != n_samples {
        return Err(Error::parse(
            &y_path,
            responses.len() + 1,
            format!(
                "{} responses for {} samples",
                responses.len(),
                n_samples
            ),
        ));
    }
    Dataset::new(samples, responses)
}

pub fn save_sparse_tensor(ds: &Dataset, path: &Path) -> Result<()> {
    let name = path.display().to_string();
    let f = std::fs::File::create(path).map_err(|e| Error::io(&name, e))?;
    let mut w = std::io::BufWriter::new(f);
    (|| -> std::io::Result<()> {
        let dims: Vec<String> = ds.shape().dims().iter().map(|d| d.to_string()).collect();
        writeln!(w, "shape {} {} {}", dims.join(" "), ds.len(), ds.task())?;
        for (n, x) in ds.samples().iter().enumerate() {
            for (idx, v) in x.iter() {
                let ones: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
                writeln!(w, "{} {} {:.16e}", n + 1, ones.join(" "), v)?;
            }
        }
        Ok(())
    })()
    .map_err(|e| Error::io(&name, e))?;

    let y_path = format!("{}.y", name);
    let yf = std::fs::File::create(&y_path).map_err(|e| Error::io(&y_path, e))?;
    let mut yw = std::io::BufWriter::new(yf);
    (|| -> std::io::Result<()> {
        match &ds.responses {
            Responses::Classes(cs) => {
                for c in cs {
                    writeln!(yw, "{c}")?;
                }
            }
            Responses::Values(vs) => {
                for v in vs {
                    writeln!(yw, "{:.16e}", v)?;
                }
            }
        }
        Ok(())
    })()
    .map_err(|e| Error::io(&y_path, e))
}

/// Fraction of samples whose highest score matches the label; ties pick the
/// lowest class id.
pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} score rows vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut correct = 0usize;
    for (s, &l) in scores.iter().zip(labels) {
        let mut best = 0usize;
        for (i, &v) in s.iter().enumerate().skip(1) {
            if v > s[best] {
                best = i;
            }
        }
        if best == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / scores.len() as f64)
}

/// Rank-based (Mann-Whitney) AUC with ties counted one half. `scores` are
/// scores for the positive class (label 1); both classes must be present.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument(
            "AUC is defined for binary labels 0/1".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    Ok((rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let s: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((s / preds.len() as f64).sqrt())
}

/// Evaluation of a trained model on a dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub rmse: Option<f64>,
}

pub fn evaluate_model(model: &TripModel, ds: &Dataset) -> Result<EvalReport> {
    let mut score_rows = Vec::with_capacity(ds.len());
    for x in ds.samples() {
        score_rows.push(model.forward(x)?);
    }
    match (&ds.responses, model.task()) {
        (Responses::Classes(labels), TaskKind::Classification) => {
            let acc = accuracy(&score_rows, labels)?;
            let auc_val = if model.outputs() == 2 {
                let pos: Vec<f64> = score_rows.iter().map(|s| s[1] - s[0]).collect();
                auc(&pos, labels).ok()
            } else {
                None
            };
            Ok(EvalReport {
                n: ds.len(),
                accuracy: Some(acc),
                auc: auc_val,
                rmse: None,
            })
        }
        (Responses::Values(ys), TaskKind::Regression) => {
            let preds: Vec<f64> = score_rows.iter().map(|s| s[0]).collect();
            Ok(EvalReport {
                n: ds.len(),
                accuracy: None,
                auc: None,
                rmse: Some(rmse(&preds, ys)?),
            })
        }
        _ => Err(Error::InvalidArgument(
            "model task does not match dataset".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CvPlan {
    pub folds: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: 10,
            trials: 5,
            seed: 0,
        }
    }
}

/// How the projection is obtained in a run: learned jointly, or frozen to
/// the PCA basis of the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Learned,
    Pca,
}

/// Everything needed to set up and train one model.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub subspace_dims: Vec<usize>,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub rank: Option<usize>,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub normalize: bool,
    pub projection: ProjectionKind,
    pub ortho_per_batch: bool,
    pub grad_clip: Option<f64>,
}

impl RunSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            freeze_projection: self.projection == ProjectionKind::Pca,
            ortho_per_batch: self.ortho_per_batch,
            grad_clip: self.grad_clip,
            ..TrainConfig::default()
        }
    }
}

/// Builds and trains one model on a dataset according to the settings.
pub fn train_on(ds: &Dataset, settings: &RunSettings, seed: u64) -> Result<train::TrainResult> {
    let mut cfg = model_config_for(ds, settings);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = match settings.projection {
        ProjectionKind::Learned => TripModel::init(&cfg, &mut rng)?,
        ProjectionKind::Pca => {
            // reconstruction regularization has no effect on a frozen basis
            cfg.lambda = 0.0;
            let base = TripModel::init(&cfg, &mut rng)?;
            let mut factors = Vec::with_capacity(ds.order());
            for (k, &j) in settings.subspace_dims.iter().enumerate() {
                if k > 0 {
                    return Err(Error::InvalidArgument(
                        "PCA projection baseline is defined for single-mode data".into(),
                    ));
                }
                factors.push(stiefel::orthonormalize(pca_baseline(ds, j)?)?);
            }
            TripModel::from_parts(
                factors,
                base.low_rank().clone(),
                base.head().clone(),
                ds.task(),
                0.0,
            )?
        }
    };
    train::train(
        model,
        ds.samples(),
        &ds.targets(),
        &settings.train_config(seed.wrapping_add(0x9e37)),
    )
}

#[derive(Debug, Clone)]
pub struct CvRow {
    pub trial: usize,
    pub fold: usize,
    /// Accuracy for classification, RMSE for regression.
    pub metric: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    pub mean: f64,
    pub std: f64,
    pub mean_auc: Option<f64>,
}

/// Seeded fold assignment: shuffled indices split into `folds` contiguous
/// chunks. Every sample lands in exactly one fold.
pub fn cv_fold_indices(n: usize, folds: usize, seed: u64, trial: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    (0..folds)
        .map(|f| indices[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect()
}

/// Repeated k-fold cross validation. Normalization statistics, the PCA basis
/// (when used) and all training randomness are derived from the training
/// folds only.
pub fn run_cv(ds: &Dataset, settings: &RunSettings, plan: &CvPlan) -> Result<CvReport> {
    if plan.folds < 2 || ds.len() < plan.folds {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot be split into {} folds",
            ds.len(),
            plan.folds
        )));
    }
    let mut rows = Vec::with_capacity(plan.folds * plan.trials);
    let mut aucs = Vec::new();
    for trial in 0..plan.trials {
        let fold_sets = cv_fold_indices(ds.len(), plan.folds, plan.seed, trial);
        for (fold, test_idx) in fold_sets.iter().enumerate() {
            let train_idx: Vec<usize> = fold_sets
                .iter()
                .enumerate()
                .filter(|&(f, _)| f != fold)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let mut train_ds = ds.subset(&train_idx);
            let mut test_ds = ds.subset(test_idx);
            if settings.normalize {
                let stats = column_stats(&train_ds);
                train_ds = apply_norm_stats(&train_ds, &stats)?;
                test_ds = apply_norm_stats(&test_ds, &stats)?;
            }
            let run_seed = settings
                .seed
                .wrapping_add(plan.seed)
                .wrapping_add(((trial * plan.folds + fold) as u64).wrapping_mul(9973));
            let result = train_on(&train_ds, settings, run_seed)?;
            let eval = evaluate_model(&result.model, &test_ds)?;
            let metric = match ds.task() {
                TaskKind::Classification => eval.accuracy.unwrap(),
                TaskKind::Regression => eval.rmse.unwrap(),
            };
            if let Some(a) = eval.auc {
                aucs.push(a);
            } else if ds.task() == TaskKind::Classification && ds.num_classes() == 2 {
                eprintln!(
                    "note: trial {trial} fold {fold} has a single class in the test split; \
                     skipped for AUC"
                );
            }
            rows.push(CvRow {
                trial,
                fold,
                metric,
                auc: eval.auc,
            });
        }
    }
    let mean = rows.iter().map(|r| r.metric).sum::<f64>() / rows.len() as f64;
    let var = rows
        .iter()
        .map(|r| (r.metric - mean) * (r.metric - mean))
        .sum::<f64>()
        / rows.len() as f64;
    let mean_auc = if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    };
    Ok(CvReport {
        rows,
        mean,
        std: var.sqrt(),
        mean_auc,
    })
}

/// Top-J right singular vectors of the centered data matrix of a single-mode
/// dataset: the PCA projection used by the frozen-projection baseline.
pub fn pca_baseline(ds: &Dataset, j: usize) -> Result<Matrix> {
    if ds.order() != 1 {
        return Err(Error::InvalidArgument(
            "PCA baseline is defined for single-mode data".into(),
        ));
    }
    let n = ds.len();
    let dim = ds.shape().dim(0);
    if j == 0 || j > dim.min(n) {
        return Err(Error::InvalidArgument(format!(
            "cannot extract {j} components from {n} samples in {dim} dimensions"
        )));
    }
    let mut data = Matrix::zeros(n, dim);
    for (row, x) in ds.samples().iter().enumerate() {
        for (idx, v) in x.iter() {
            data.set(row, idx[0], v);
        }
    }
    for c in 0..dim {
        let mean: f64 = (0..n).map(|r| data.get(r, c)).sum::<f64>() / n as f64;
        for r in 0..n {
            data.set(r, c, data.get(r, c) - mean);
        }
    }
    let (vectors, s) = if n >= dim {
        let svd = thin_svd(&data)?;
        (svd.q, svd.s)
    } else {
        // right singular vectors of X are the left singular vectors of X^T
        let svd = thin_svd(&data.transpose())?;
        (svd.p, svd.s)
    };
    let rank = s.iter().filter(|&&x| x > s[0] * 1e-12).count();
    if j > rank {
        return Err(Error::RankDeficient {
            sigma_min: s.get(j - 1).copied().unwrap_or(0.0),
        });
    }
    Ok(Matrix::from_fn(dim, j, |r, c| vectors.get(r, c)))
}
