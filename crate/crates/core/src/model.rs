//! The prediction pipeline: multi-mode orthonormal projection, a low-rank
//! first layer, and a small MLP head, together with the training objective
//!
//! ```text
//! E = mean_n [ L(pred(Xbar_n); y_n) + lambda * || X_n - Xbar_n proj_back ||^2 ]
//! ```
//!
//! The first-layer weight tensor `W` (M x J_1 x .. x J_K) is never
//! materialized: it is factorized as per-mode matrices `G^(k)` (J_k x M), and
//! `r[m] = <Xbar, outer_k G^(k)[:,m]>` is evaluated as a chain of mode-vector
//! contractions.
//!
//! Because the projections have orthonormal columns, the reconstruction error
//! reduces to `||x||^2 - ||Xbar||^2`, which is how the loss evaluates it.

use crate::error::{Error, Result};
use crate::stiefel::{self, LatentFactor};
use crate::tensor::{full_contract, multi_mode_product_sparse, DenseTensor, Matrix, SparseTensor};
use rand::Rng;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

pub const DEFAULT_HIDDEN_WIDTH: usize = 10;
pub const MAX_HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Classification => write!(f, "classification"),
            TaskKind::Regression => write!(f, "regression"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(TaskKind::Classification),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

/// Per-sample training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// Model output: class probabilities or a scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Probabilities(Vec<f64>),
    Value(f64),
}

#[derive(Debug, Clone)]
pub struct MlpLayer {
    /// out x in
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Fully connected head applied to the first-layer output `r`: zero to four
/// rectifier hidden layers followed by a linear output layer. Every layer
/// carries a bias; `r` itself does not.
#[derive(Debug, Clone)]
pub struct MlpHead {
    layers: Vec<MlpLayer>,
}

impl MlpHead {
    pub fn init(
        input: usize,
        hidden_layers: usize,
        hidden_width: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden_layers > MAX_HIDDEN_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "hidden layer count {hidden_layers} exceeds maximum {MAX_HIDDEN_LAYERS}"
            )));
        }
        if input == 0 || outputs == 0 || (hidden_layers > 0 && hidden_width == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                MlpLayer {
                    w: stiefel::gaussian_matrix(fan_out, fan_in, (2.0 / fan_in as f64).sqrt(), rng),
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(MlpHead { layers })
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [MlpLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_width(&self) -> usize {
        if self.layers.len() > 1 {
            self.layers[0].w.rows()
        } else {
            DEFAULT_HIDDEN_WIDTH
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.len())
            .sum()
    }

    /// Activations per layer; `out[0]` is the input, `out.last()` the linear
    /// output scores. Hidden activations are post-rectifier.
    pub fn forward(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.mul_vec(&acts[l]);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            if l + 1 < n {
                for zi in &mut z {
                    if *zi < 0.0 {
                        *zi = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `d_out` (gradient at the linear output) through the
    /// stored activations, returning per-layer gradients and the gradient at
    /// the input.
    pub fn backward(&self, acts: &[Vec<f64>], d_out: &[f64]) -> (Vec<LayerGrads>, Vec<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<LayerGrads> = (0..n)
            .map(|l| LayerGrads {
                w: Matrix::zeros(self.layers[l].w.rows(), self.layers[l].w.cols()),
                b: vec![0.0; self.layers[l].b.len()],
            })
            .collect();
        let mut delta = d_out.to_vec();
        for l in (0..n).rev() {
            let input = &acts[l];
            let g = &mut grads[l];
            for (j, &a) in input.iter().enumerate() {
                for (i, &d) in delta.iter().enumerate() {
                    let cur = g.w.get(i, j);
                    g.w.set(i, j, cur + d * a);
                }
            }
            for (bi, &d) in g.b.iter_mut().zip(&delta) {
                *bi += d;
            }
            let mut d_in = self.layers[l].w.tr_mul_vec(&delta);
            if l > 0 {
                // rectifier mask from the stored (post-activation) values
                for (d, &a) in d_in.iter_mut().zip(&acts[l]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_in;
        }
        (grads, delta)
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Rank-M factorization of the first-layer weight tensor:
/// `W[m, j_1..j_K] = prod_k G^(k)[j_k, m]`.
#[derive(Debug, Clone)]
pub struct LowRankHead {
    rank: usize,
    factors: Vec<Matrix>,
}

impl LowRankHead {
    pub fn init(subspace_dims: &[usize], rank: usize, rng: &mut impl Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be >= 1".into()));
        }
        let factors = subspace_dims
            .iter()
            .map(|&j| stiefel::gaussian_matrix(j, rank, 1.0 / (j as f64).sqrt(), rng))
            .collect();
        Ok(LowRankHead { rank, factors })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [Matrix] {
        &mut self.factors
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_dims: Vec<usize>,
    pub subspace_dims: Vec<usize>,
    pub task: TaskKind,
    /// 1 for regression, number of classes (>= 2) for classification.
    pub outputs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Rank M of the first-layer weight tensor. Defaults to the hidden width
    /// when hidden layers exist, to the output width otherwise.
    pub rank: Option<usize>,
    pub lambda: f64,
}

impl ModelConfig {
    pub fn resolved_rank(&self) -> usize {
        self.rank.unwrap_or(if self.hidden_layers > 0 {
            self.hidden_width
        } else {
            self.outputs
        })
    }

    fn validate(&self) -> Result<()> {
        if self.input_dims.len() != self.subspace_dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input modes vs {} subspace dims",
                self.input_dims.len(),
                self.subspace_dims.len()
            )));
        }
        for (k, (&i, &j)) in self.input_dims.iter().zip(&self.subspace_dims).enumerate() {
            if j == 0 || j > i {
                return Err(Error::InvalidArgument(format!(
                    "subspace dim {} invalid for mode {} of extent {}",
                    j, k, i
                )));
            }
        }
        match self.task {
            TaskKind::Classification if self.outputs < 2 => {
                return Err(Error::InvalidArgument(
                    "classification needs >= 2 output units".into(),
                ))
            }
            TaskKind::Regression if self.outputs != 1 => {
                return Err(Error::InvalidArgument(
                    "regression uses exactly 1 output unit".into(),
                ))
            }
            _ => {}
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Projection factors, low-rank first layer and MLP head. Immutable during
/// prediction; the trainer replaces parameters wholesale.
#[derive(Debug, Clone)]
pub struct TripModel {
    factors: Vec<LatentFactor>,
    low_rank: LowRankHead,
    head: MlpHead,
    task: TaskKind,
    lambda: f64,
    input_dims: Vec<usize>,
}

impl TripModel {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut factors = Vec::with_capacity(cfg.input_dims.len());
        for (&i, &j) in cfg.input_dims.iter().zip(&cfg.subspace_dims) {
            // a Gaussian draw is full rank almost surely; retry the rare miss
            let f = loop {
                let z = stiefel::gaussian_matrix(i, j, 1.0 / (i as f64).sqrt(), rng);
                match stiefel::orthonormalize(z) {
                    Ok(f) => break f,
                    Err(Error::RankDeficient { .. }) => continue,
                    Err(e) => return Err(e),
                }
            };
            factors.push(f);
        }
        let rank = cfg.resolved_rank();
        let low_rank = LowRankHead::init(&cfg.subspace_dims, rank, rng)?;
        let head = MlpHead::init(rank, cfg.hidden_layers, cfg.hidden_width, cfg.outputs, rng)?;
        Ok(TripModel {
            factors,
            low_rank,
            head,
            task: cfg.task,
            lambda: cfg.lambda,
            input_dims: cfg.input_dims.clone(),
        })
    }

    /// Assembles a model from existing parts, validating the shape chain.
    pub fn from_parts(
        factors: Vec<LatentFactor>,
        low_rank: LowRankHead,
        head: MlpHead,
        task: TaskKind,
        lambda: f64,
    ) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("model needs >= 1 mode".into()));
        }
        if factors.len() != low_rank.factors.len() {
            return Err(Error::ShapeMismatch(
                "projection/low-rank mode counts differ".into(),
            ));
        }
        for (k, (f, g)) in factors.iter().zip(&low_rank.factors).enumerate() {
            if f.c().cols() != g.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "mode {}: subspace dim {} vs G rows {}",
                    k,
                    f.c().cols(),
                    g.rows()
                )));
            }
            if g.cols() != low_rank.rank {
                return Err(Error::ShapeMismatch(format!(
                    "mode {}: G cols {} vs rank {}",
                    k,
                    g.cols(),
                    low_rank.rank
                )));
            }
        }
        if head.input_width() != low_rank.rank {
            return Err(Error::ShapeMismatch(format!(
                "head input width {} vs rank {}",
                head.input_width(),
                low_rank.rank
            )));
        }
        if lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        let input_dims = factors.iter().map(|f| f.c().rows()).collect();
        Ok(TripModel {
            factors,
            low_rank,
            head,
            task,
            lambda,
            input_dims,
        })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn subspace_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.c().cols()).collect()
    }

    pub fn factors(&self) -> &[LatentFactor] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut Vec<LatentFactor> {
        &mut self.factors
    }

    pub fn projections(&self) -> Vec<&Matrix> {
        self.factors.iter().map(|f| f.c()).collect()
    }

    pub fn low_rank(&self) -> &LowRankHead {
        &self.low_rank
    }

    pub fn low_rank_mut(&mut self) -> &mut LowRankHead {
        &mut self.low_rank
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut MlpHead {
        &mut self.head
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn outputs(&self) -> usize {
        self.head.output_width()
    }

    fn check_input(&self, x: &SparseTensor) -> Result<()> {
        if x.shape().dims() != self.input_dims.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "sample shape {:?} vs model input {:?}",
                x.shape().dims(),
                self.input_dims
            )));
        }
        Ok(())
    }

    /// Projects a sample into the subspace. Cost is nnz(x) * prod_k J_k.
    pub fn project(&self, x: &SparseTensor) -> Result<DenseTensor> {
        self.check_input(x)?;
        multi_mode_product_sparse(x, &self.projections())
    }

    /// First-layer output `r` (length M), evaluated factorized:
    /// `r[m] = <Xbar, outer_k G^(k)[:,m]>`.
    pub fn first_layer(&self, xbar: &DenseTensor) -> Result<Vec<f64>> {
        let m = self.low_rank.rank;
        let mut r = Vec::with_capacity(m);
        for col in 0..m {
            let vs: Vec<&[f64]> = self.low_rank.factors.iter().map(|g| g.col(col)).collect();
            r.push(full_contract(xbar, &vs)?);
        }
        Ok(r)
    }

    /// Raw output scores (pre-softmax for classification).
    pub fn forward(&self, x: &SparseTensor) -> Result<Vec<f64>> {
        let xbar = self.project(x)?;
        self.forward_from_projection(&xbar)
    }

    /// Scores evaluated from an already-projected sample.
    pub fn forward_from_projection(&self, xbar: &DenseTensor) -> Result<Vec<f64>> {
        let r = self.first_layer(xbar)?;
        let acts = self.head.forward(&r);
        Ok(acts.last().unwrap().clone())
    }

    pub fn predict(&self, x: &SparseTensor) -> Result<Prediction> {
        let scores = self.forward(x)?;
        Ok(match self.task {
            TaskKind::Classification => Prediction::Probabilities(softmax(&scores)),
            TaskKind::Regression => Prediction::Value(scores[0]),
        })
    }

    /// Mean loss over a batch with its prediction/reconstruction split.
    pub fn loss(&self, samples: &[&SparseTensor], targets: &[Target]) -> Result<LossBreakdown> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if samples.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples vs {} targets",
                samples.len(),
                targets.len()
            )));
        }
        let mut pred_sum = 0.0;
        let mut recon_sum = 0.0;
        let mut per_sample = Vec::with_capacity(samples.len());
        for (x, y) in samples.iter().zip(targets) {
            let xbar = self.project(x)?;
            let scores = self.forward_from_projection(&xbar)?;
            let lp = self.prediction_loss(&scores, y)?;
            // || x - back-projection ||^2 = ||x||^2 - ||Xbar||^2 under
            // orthonormal projections
            let lr = x.sq_norm() - xbar.values().iter().map(|v| v * v).sum::<f64>();
            pred_sum += lp;
            recon_sum += lr;
            per_sample.push((lp, lr));
        }
        let n = samples.len() as f64;
        Ok(LossBreakdown {
            total: pred_sum / n + self.lambda * recon_sum / n,
            pred: pred_sum / n,
            recon: recon_sum / n,
            per_sample,
        })
    }

    pub fn prediction_loss(&self, scores: &[f64], target: &Target) -> Result<f64> {
        match (self.task, target) {
            (TaskKind::Classification, Target::Class(c)) => {
                if *c >= scores.len() {
                    return Err(Error::InvalidArgument(format!(
                        "class {} out of range for {} outputs",
                        c,
                        scores.len()
                    )));
                }
                Ok(log_sum_exp(scores) - scores[*c])
            }
            (TaskKind::Regression, Target::Value(y)) => {
                let d = scores[0] - y;
                Ok(d * d)
            }
            _ => Err(Error::InvalidArgument(
                "target kind does not match the model task".into(),
            )),
        }
    }

    /// Gradient of the prediction loss with respect to the output scores.
    pub fn prediction_loss_grad(&self, scores: &[f64], target: &Target) -> Result<Vec<f64>> {
        match (self.task, target) {
            (TaskKind::Classification, Target::Class(c)) => {
                if *c >= scores.len() {
                    return Err(Error::InvalidArgument(format!(
                        "class {} out of range for {} outputs",
                        c,
                        scores.len()
                    )));
                }
                let mut g = softmax(scores);
                g[*c] -= 1.0;
                Ok(g)
            }
            (TaskKind::Regression, Target::Value(y)) => Ok(vec![2.0 * (scores[0] - y)]),
            _ => Err(Error::InvalidArgument(
                "target kind does not match the model task".into(),
            )),
        }
    }

    /// Applies the rotation gauge: `C^(k) -> C^(k) R^(k)`,
    /// `G^(k) -> R^(k)^T G^(k)`. Predictions and the loss are unchanged.
    pub fn apply_gauge(&self, rotations: &[Matrix]) -> Result<TripModel> {
        if rotations.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "{} rotations for {} modes",
                rotations.len(),
                self.order()
            )));
        }
        let mut factors = Vec::with_capacity(self.order());
        for (f, r) in self.factors.iter().zip(rotations) {
            // orth(Z R) = orth(Z) R for orthogonal R
            factors.push(stiefel::orthonormalize(f.z().matmul(r))?);
        }
        let mut low_rank = self.low_rank.clone();
        for (g, r) in low_rank.factors.iter_mut().zip(rotations) {
            *g = r.tr_matmul(g);
        }
        TripModel::from_parts(factors, low_rank, self.head.clone(), self.task, self.lambda)
    }

    pub fn save_to(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_text(&mut w)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        let k = self.order();
        writeln!(w, "TRIP1 {} {}", k, self.task)?;
        write_usizes(w, "input", &self.input_dims)?;
        write_usizes(w, "subspace", &self.subspace_dims())?;
        writeln!(w, "rank {}", self.low_rank.rank)?;
        writeln!(w, "hidden {}", self.head.hidden_layers())?;
        writeln!(w, "width {}", self.head.hidden_width())?;
        writeln!(w, "outputs {}", self.head.output_width())?;
        writeln!(w, "lambda {:.16e}", self.lambda)?;
        for (i, f) in self.factors.iter().enumerate() {
            write_matrix(w, &format!("Z {}", i + 1), f.z())?;
        }
        for (i, g) in self.low_rank.factors.iter().enumerate() {
            write_matrix(w, &format!("G {}", i + 1), g)?;
        }
        for (i, layer) in self.head.layers.iter().enumerate() {
            write_matrix(w, &format!("layer {} weight", i + 1), &layer.w)?;
            writeln!(w, "layer {} bias {}", i + 1, layer.b.len())?;
            writeln!(w, "{}", join_floats(&layer.b))?;
        }
        writeln!(w, "end")
    }

    pub fn load_from(path: &Path) -> Result<TripModel> {
        let name = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(&name, e))?;
        let mut lines = LineReader {
            inner: std::io::BufReader::new(f).lines(),
            path: name,
            line_no: 0,
        };

        let header = lines.next_line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "TRIP1" {
            return Err(lines.err("expected header 'TRIP1 <K> <task>'"));
        }
        let k: usize = parts[1]
            .parse()
            .map_err(|_| lines.err("bad mode count in header"))?;
        let task: TaskKind = parts[2].parse()?;

        let input_dims = lines.parse_usizes("input", k)?;
        let subspace_dims = lines.parse_usizes("subspace", k)?;
        let rank = lines.parse_scalar_usize("rank")?;
        let hidden = lines.parse_scalar_usize("hidden")?;
        let width = lines.parse_scalar_usize("width")?;
        let outputs = lines.parse_scalar_usize("outputs")?;
        let lambda_line = lines.next_line()?;
        let lambda = match lambda_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["lambda", v] => v
                .parse::<f64>()
                .map_err(|_| lines.err("bad lambda value"))?,
            _ => return Err(lines.err("expected 'lambda <value>'")),
        };

        let mut factors = Vec::with_capacity(k);
        for i in 0..k {
            let z = lines.parse_matrix(
                &format!("Z {}", i + 1),
                input_dims[i],
                subspace_dims[i],
            )?;
            factors.push(stiefel::orthonormalize(z)?);
        }
        let mut g_factors = Vec::with_capacity(k);
        for i in 0..k {
            g_factors.push(lines.parse_matrix(&format!("G {}", i + 1), subspace_dims[i], rank)?);
        }
        let mut widths = vec![rank];
        widths.extend(std::iter::repeat(width).take(hidden));
        widths.push(outputs);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let w = lines.parse_matrix(&format!("layer {} weight", i + 1), pair[1], pair[0])?;
            let b = lines.parse_vector(&format!("layer {} bias", i + 1), pair[1])?;
            layers.push(MlpLayer { w, b });
        }
        let end = lines.next_line()?;
        if end.trim() != "end" {
            return Err(lines.err("expected trailing 'end'"));
        }

        TripModel::from_parts(
            factors,
            LowRankHead {
                rank,
                factors: g_factors,
            },
            MlpHead { layers },
            task,
            lambda,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub pred: f64,
    pub recon: f64,
    /// Per-sample (prediction loss, reconstruction error).
    pub per_sample: Vec<(f64, f64)>,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

fn write_usizes(w: &mut impl Write, label: &str, xs: &[usize]) -> std::io::Result<()> {
    write!(w, "{label}")?;
    for x in xs {
        write!(w, " {x}")?;
    }
    writeln!(w)
}

fn write_matrix(w: &mut impl Write, label: &str, m: &Matrix) -> std::io::Result<()> {
    writeln!(w, "{label} {} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        writeln!(w, "{}", join_floats(&m.row(i)))?;
    }
    Ok(())
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{:.16e}", x))
        .collect::<Vec<_>>()
        .join(" ")
}

struct LineReader<B: BufRead> {
    inner: std::io::Lines<B>,
    path: String,
    line_no: usize,
}

impl<B: BufRead> LineReader<B> {
    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::io(&self.path, e)),
            None => Err(Error::parse(&self.path, self.line_no, "unexpected end of file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, self.line_no, msg)
    }

    fn expect_label(&mut self, label: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let lw: Vec<&str> = label.split_whitespace().collect();
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < lw.len() || parts[..lw.len()] != lw[..] {
            return Err(self.err(format!("expected '{label} ...', got '{line}'")));
        }
        Ok(parts[lw.len()..].iter().map(|s| s.to_string()).collect())
    }

    fn parse_usizes(&mut self, label: &str, count: usize) -> Result<Vec<usize>> {
        let rest = self.expect_label(label)?;
        if rest.len() != count {
            return Err(self.err(format!("expected {count} values after '{label}'")));
        }
        rest.iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| self.err(format!("bad integer '{s}'")))
            })
            .collect()
    }

    fn parse_scalar_usize(&mut self, label: &str) -> Result<usize> {
        Ok(self.parse_usizes(label, 1)?[0])
    }

    fn parse_matrix(&mut self, label: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let dims = self.parse_usizes(label, 2)?;
        if dims != [rows, cols] {
            return Err(self.err(format!(
                "expected '{label}' to be {rows}x{cols}, file says {}x{}",
                dims[0], dims[1]
            )));
        }
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let line = self.next_line()?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(self.err(format!("expected {cols} values, got {}", vals.len())));
            }
            for (j, s) in vals.iter().enumerate() {
                let v = s
                    .parse::<f64>()
                    .map_err(|_| self.err(format!("bad float '{s}'")))?;
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    fn parse_vector(&mut self, label: &str, len: usize) -> Result<Vec<f64>> {
        let dims = self.parse_usizes(label, 1)?;
        if dims[0] != len {
            return Err(self.err(format!("expected '{label}' of length {len}")));
        }
        let line = self.next_line()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != len {
            return Err(self.err(format!("expected {len} values, got {}", vals.len())));
        }
        vals.iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| self.err(format!("bad float '{s}'")))
            })
            .collect()
    }
}
