//! Mini-batch Adam training of the latent projections, the low-rank factors
//! and the head parameters.
//!
//! Per batch: forward, head backpropagation, projection/low-rank gradients,
//! then the projection gradients are pulled back through the SVD
//! reparameterization and every parameter group takes an Adam step. By
//! default each batch update re-orthonormalizes the projections, which keeps
//! the reconstruction shortcut in the loss valid at every gradient
//! evaluation; a per-epoch cadence is available behind a flag.
//!
//! Determinism: all randomness (shuffling, jitter) comes from one seeded
//! generator; sample gradients are reduced in ascending index order.

use crate::error::{Error, Result};
use crate::model::{LayerGrads, Target, TaskKind, TripModel};
use crate::stiefel::{self, LatentFactor};
use crate::tensor::{DenseTensor, Matrix, SparseTensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Singular value below which the latent matrix is considered collapsed and
/// gets jittered before re-orthonormalization.
const JITTER_SCALE: f64 = 1e-6;
const JITTER_RETRIES: usize = 5;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip per parameter group; off by default.
    pub grad_clip: Option<f64>,
    /// Re-orthonormalize after every batch (default) or once per epoch.
    pub ortho_per_batch: bool,
    /// Keep the projections fixed and train only the head; used for
    /// PCA-projection baselines.
    pub freeze_projection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 0,
            shuffle: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            ortho_per_batch: true,
            freeze_projection: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Gradients of the batch loss for every parameter group.
#[derive(Debug, Clone)]
pub struct GradientSet {
    /// dE/dZ per mode, pulled back through the orthonormalization.
    pub z: Vec<Matrix>,
    /// dE/dG per mode.
    pub g: Vec<Matrix>,
    /// Per-layer head gradients.
    pub theta: Vec<LayerGrads>,
    /// Per-sample dE/dr.
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pred_loss: f64,
    pub recon_loss: f64,
    pub fit_metric: f64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub model: TripModel,
    pub log: Vec<EpochLog>,
    pub jitter_events: usize,
}

/// Head backpropagation over a batch: per-layer parameter gradients of the
/// mean prediction loss, per-sample dE/dr, and per-sample losses.
pub fn head_backprop(
    model: &TripModel,
    samples: &[&SparseTensor],
    targets: &[Target],
) -> Result<(Vec<LayerGrads>, Vec<Vec<f64>>, Vec<f64>)> {
    let xbars = project_batch(model, samples)?;
    head_backprop_projected(model, &xbars, targets)
}

fn project_batch(model: &TripModel, samples: &[&SparseTensor]) -> Result<Vec<DenseTensor>> {
    samples.iter().map(|x| model.project(x)).collect()
}

fn head_backprop_projected(
    model: &TripModel,
    xbars: &[DenseTensor],
    targets: &[Target],
) -> Result<(Vec<LayerGrads>, Vec<Vec<f64>>, Vec<f64>)> {
    if xbars.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if xbars.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples vs {} targets",
            xbars.len(),
            targets.len()
        )));
    }
    let inv_b = 1.0 / xbars.len() as f64;
    let mut theta: Option<Vec<LayerGrads>> = None;
    let mut dedr = Vec::with_capacity(xbars.len());
    let mut losses = Vec::with_capacity(xbars.len());
    for (xbar, y) in xbars.iter().zip(targets) {
        let r = model.first_layer(xbar)?;
        let acts = model.head().forward(&r);
        let scores = acts.last().unwrap();
        losses.push(model.prediction_loss(scores, y)?);
        let mut dscores = model.prediction_loss_grad(scores, y)?;
        for d in &mut dscores {
            *d *= inv_b;
            if !d.is_finite() {
                return Err(Error::NonFinite("head output gradient".into()));
            }
        }
        let (grads, dr) = model.head().backward(&acts, &dscores);
        match &mut theta {
            None => theta = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.w.add_scaled(&g.w, 1.0);
                    for (ab, gb) in a.b.iter_mut().zip(&g.b) {
                        *ab += gb;
                    }
                }
            }
        }
        dedr.push(dr);
    }
    Ok((theta.unwrap(), dedr, losses))
}

/// dE/dC per mode: the prediction term contracts the factorized first-layer
/// weight with dE/dr, the reconstruction term contributes -2*lambda*Xbar,
/// and each coordinate entry of a sample scatters into the rows of its mode
/// indices. `dedr` must already carry the 1/batch scaling.
pub fn grad_c(
    model: &TripModel,
    samples: &[&SparseTensor],
    dedr: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    let xbars = project_batch(model, samples)?;
    grad_c_projected(model, samples, &xbars, dedr)
}

fn grad_c_projected(
    model: &TripModel,
    samples: &[&SparseTensor],
    xbars: &[DenseTensor],
    dedr: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    let order = model.order();
    let jdims = model.subspace_dims();
    let cs = model.projections();
    let mut grads: Vec<Matrix> = model
        .input_dims()
        .iter()
        .zip(&jdims)
        .map(|(&i, &j)| Matrix::zeros(i, j))
        .collect();
    let recon_scale = -2.0 * model.lambda() / samples.len() as f64;
    let mut work = Vec::new();
    let mut tmp = Vec::new();
    for ((x, xbar), dr) in samples.iter().zip(xbars).zip(dedr) {
        let mut b = weight_times_dr(model, dr)?;
        if recon_scale != 0.0 {
            for (bv, xv) in b.values_mut().iter_mut().zip(xbar.values()) {
                *bv += recon_scale * xv;
            }
        }
        for k in 0..order {
            for (idx, v) in x.iter() {
                contract_except(
                    b.shape().dims(),
                    b.values(),
                    k,
                    |l, j| cs[l].get(idx[l], j),
                    &mut work,
                    &mut tmp,
                );
                let gk = &mut grads[k];
                let row = idx[k];
                for (j, &w) in work.iter().enumerate() {
                    let cur = gk.get(row, j);
                    gk.set(row, j, cur + v * w);
                }
            }
        }
    }
    Ok(grads)
}

/// dE/dG per mode: `dG^(k)[:,m] += dE/dr[m] * (Xbar contracted over the
/// other modes with the m-th columns of their G factors)`. `dedr` must
/// already carry the 1/batch scaling.
pub fn grad_g(
    model: &TripModel,
    samples: &[&SparseTensor],
    dedr: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    let xbars = project_batch(model, samples)?;
    grad_g_projected(model, &xbars, dedr)
}

fn grad_g_projected(
    model: &TripModel,
    xbars: &[DenseTensor],
    dedr: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    let order = model.order();
    let rank = model.low_rank().rank();
    let gs = model.low_rank().factors();
    let jdims = model.subspace_dims();
    let mut grads: Vec<Matrix> = jdims.iter().map(|&j| Matrix::zeros(j, rank)).collect();
    let mut work = Vec::new();
    let mut tmp = Vec::new();
    for (xbar, dr) in xbars.iter().zip(dedr) {
        for m in 0..rank {
            let d = dr[m];
            if d == 0.0 {
                continue;
            }
            for k in 0..order {
                contract_except(
                    xbar.shape().dims(),
                    xbar.values(),
                    k,
                    |l, j| gs[l].get(j, m),
                    &mut work,
                    &mut tmp,
                );
                let gk = &mut grads[k];
                for (j, &w) in work.iter().enumerate() {
                    let cur = gk.get(j, m);
                    gk.set(j, m, cur + d * w);
                }
            }
        }
    }
    Ok(grads)
}

/// `W x_1 dr` assembled from the factorized weight:
/// `sum_m dr[m] * outer_k(G^(k)[:,m])`, a tensor of the subspace shape.
fn weight_times_dr(model: &TripModel, dr: &[f64]) -> Result<DenseTensor> {
    let jdims = model.subspace_dims();
    let gs = model.low_rank().factors();
    let mut out = DenseTensor::zeros(crate::tensor::Shape::new(jdims)?);
    let mut buf: Vec<f64> = Vec::with_capacity(out.values().len());
    let mut next: Vec<f64> = Vec::with_capacity(out.values().len());
    for (m, &d) in dr.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        buf.clear();
        buf.push(d);
        for g in gs {
            let col = g.col(m);
            next.clear();
            next.resize(buf.len() * col.len(), 0.0);
            for (j, &f) in col.iter().enumerate() {
                let dst = j * buf.len();
                for (u, &b) in buf.iter().enumerate() {
                    next[dst + u] = b * f;
                }
            }
            std::mem::swap(&mut buf, &mut next);
        }
        for (o, b) in out.values_mut().iter_mut().zip(&buf) {
            *o += b;
        }
    }
    Ok(out)
}

/// Contracts every mode except `keep` with per-mode weight vectors given by
/// `weight(mode, j)`. The result (length `dims[keep]`) is left in `work`.
fn contract_except(
    dims: &[usize],
    src: &[f64],
    keep: usize,
    weight: impl Fn(usize, usize) -> f64,
    work: &mut Vec<f64>,
    tmp: &mut Vec<f64>,
) {
    work.clear();
    work.extend_from_slice(src);
    let mut cur_dims: Vec<usize> = dims.to_vec();
    let mut cur_modes: Vec<usize> = (0..dims.len()).collect();
    // contract from the last position down so `pre` stays contiguous
    while cur_dims.len() > 1 {
        let pos = if *cur_modes.last().unwrap() == keep {
            cur_dims.len() - 2
        } else {
            cur_dims.len() - 1
        };
        let mode = cur_modes[pos];
        let ik = cur_dims[pos];
        let pre: usize = cur_dims[..pos].iter().product();
        let post: usize = cur_dims[pos + 1..].iter().product();
        tmp.clear();
        tmp.resize(pre * post, 0.0);
        for p2 in 0..post {
            for i in 0..ik {
                let w = weight(mode, i);
                if w == 0.0 {
                    continue;
                }
                let srcb = pre * (i + ik * p2);
                let dstb = pre * p2;
                for p1 in 0..pre {
                    tmp[dstb + p1] += work[srcb + p1] * w;
                }
            }
        }
        std::mem::swap(work, tmp);
        cur_dims.remove(pos);
        cur_modes.remove(pos);
    }
}

/// Full gradient set for one batch, with dE/dZ pulled back through the SVD.
pub fn batch_gradients(
    model: &TripModel,
    samples: &[&SparseTensor],
    targets: &[Target],
) -> Result<GradientSet> {
    let xbars = project_batch(model, samples)?;
    let (theta, dedr, _) = head_backprop_projected(model, &xbars, targets)?;
    let gc = grad_c_projected(model, samples, &xbars, &dedr)?;
    let g = grad_g_projected(model, &xbars, &dedr)?;
    let z = gc
        .iter()
        .zip(model.factors())
        .map(|(a, f)| stiefel::manifold_grad(a, f))
        .collect();
    Ok(GradientSet {
        z,
        g,
        theta,
        r: dedr,
    })
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], t: usize, cfg: &TrainConfig) {
        debug_assert_eq!(params.len(), grads.len());
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

fn clip_group(grads: &mut [&mut [f64]], clip: f64) {
    let norm: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Orthonormalizes `z`, adding small Gaussian jitter and retrying if it is
/// numerically rank deficient. Returns the factor and the retry count.
fn reorthonormalize(
    mut z: Matrix,
    rng: &mut impl Rng,
) -> Result<(LatentFactor, usize)> {
    let mut jitters = 0;
    loop {
        match stiefel::orthonormalize(z.clone()) {
            Ok(f) => return Ok((f, jitters)),
            Err(Error::RankDeficient { sigma_min }) if jitters < JITTER_RETRIES => {
                jitters += 1;
                eprintln!(
                    "warning: latent factor near rank deficiency (sigma_min={sigma_min:.3e}); \
                     jittering (attempt {jitters})"
                );
                let noise = stiefel::gaussian_matrix(z.rows(), z.cols(), JITTER_SCALE, rng);
                z.add_scaled(&noise, 1.0);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Trains the model in place over seeded shuffled mini-batches and returns
/// the trained model with one log row per epoch. Bit-identical output for
/// identical seeds.
pub fn train(
    mut model: TripModel,
    samples: &[SparseTensor],
    targets: &[Target],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if samples.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples vs {} targets",
            samples.len(),
            targets.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let order = model.order();
    let mut t = 0usize;
    let mut jitter_events = 0usize;

    let mut adam_z: Vec<AdamState> = model
        .factors()
        .iter()
        .map(|f| AdamState::new(f.z().values().len()))
        .collect();
    let mut adam_g: Vec<AdamState> = model
        .low_rank()
        .factors()
        .iter()
        .map(|g| AdamState::new(g.values().len()))
        .collect();
    let mut adam_w: Vec<AdamState> = model
        .head()
        .layers()
        .iter()
        .map(|l| AdamState::new(l.w.values().len()))
        .collect();
    let mut adam_b: Vec<AdamState> = model
        .head()
        .layers()
        .iter()
        .map(|l| AdamState::new(l.b.len()))
        .collect();

    // Z values pending orthonormalization in per-epoch cadence.
    let mut pending_z: Vec<Matrix> = model.factors().iter().map(|f| f.z().clone()).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            indices.shuffle(&mut rng);
        }
        let mut batch_losses = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for batch_idx in indices.chunks(cfg.batch_size) {
            let batch: Vec<&SparseTensor> = batch_idx.iter().map(|&i| &samples[i]).collect();
            let batch_targets: Vec<Target> = batch_idx.iter().map(|&i| targets[i]).collect();
            let inv_b = 1.0 / batch.len() as f64;

            let xbars = project_batch(&model, &batch)?;
            let (mut theta, dedr, losses) =
                head_backprop_projected(&model, &xbars, &batch_targets)?;
            let pred: f64 = losses.iter().sum::<f64>() * inv_b;
            let recon: f64 = batch
                .iter()
                .zip(&xbars)
                .map(|(x, xb)| x.sq_norm() - xb.values().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                * inv_b;
            let total = pred + model.lambda() * recon;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch}, batch {batches}: pred={pred}, recon={recon}"
                )));
            }
            batch_losses.0 += total;
            batch_losses.1 += pred;
            batch_losses.2 += recon;
            batches += 1;

            let mut gg = grad_g_projected(&model, &xbars, &dedr)?;
            let mut gz: Vec<Matrix> = Vec::new();
            if !cfg.freeze_projection {
                let gc = grad_c_projected(&model, &batch, &xbars, &dedr)?;
                gz = gc
                    .iter()
                    .zip(model.factors())
                    .map(|(a, f)| stiefel::manifold_grad(a, f))
                    .collect();
            }

            if let Some(clip) = cfg.grad_clip {
                let mut group: Vec<&mut [f64]> = Vec::new();
                for g in &mut gg {
                    group.push(g.values_mut());
                }
                for z in &mut gz {
                    group.push(z.values_mut());
                }
                for th in &mut theta {
                    group.push(th.w.values_mut());
                    group.push(&mut th.b);
                }
                clip_group(&mut group, clip);
            }

            t += 1;
            for (l, th) in theta.iter().enumerate() {
                let layer = &mut model.head_mut().layers_mut()[l];
                adam_w[l].step(layer.w.values_mut(), th.w.values(), t, cfg);
                adam_b[l].step(&mut layer.b, &th.b, t, cfg);
            }
            for (k, gk) in gg.iter().enumerate() {
                adam_g[k].step(
                    model.low_rank_mut().factors_mut()[k].values_mut(),
                    gk.values(),
                    t,
                    cfg,
                );
            }
            if !cfg.freeze_projection {
                for k in 0..order {
                    adam_z[k].step(pending_z[k].values_mut(), gz[k].values(), t, cfg);
                    if cfg.ortho_per_batch {
                        let (f, j) = reorthonormalize(pending_z[k].clone(), &mut rng)?;
                        if j > 0 {
                            pending_z[k] = f.z().clone();
                            jitter_events += j;
                        }
                        model.factors_mut()[k] = f;
                    }
                }
            }
        }
        if !cfg.freeze_projection && !cfg.ortho_per_batch {
            for k in 0..order {
                let (f, j) = reorthonormalize(pending_z[k].clone(), &mut rng)?;
                if j > 0 {
                    pending_z[k] = f.z().clone();
                    jitter_events += j;
                }
                model.factors_mut()[k] = f;
            }
        }
        let nb = batches.max(1) as f64;
        let fit = fit_metric(&model, samples, targets)?;
        log.push(EpochLog {
            epoch,
            mean_loss: batch_losses.0 / nb,
            pred_loss: batch_losses.1 / nb,
            recon_loss: batch_losses.2 / nb,
            fit_metric: fit,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(TrainResult {
        model,
        log,
        jitter_events,
    })
}

/// Training-set fit: accuracy for classification, RMSE for regression.
pub fn fit_metric(model: &TripModel, samples: &[SparseTensor], targets: &[Target]) -> Result<f64> {
    match model.task() {
        TaskKind::Classification => {
            let mut correct = 0usize;
            for (x, y) in samples.iter().zip(targets) {
                let scores = model.forward(x)?;
                let mut best = 0usize;
                for (i, &s) in scores.iter().enumerate().skip(1) {
                    if s > scores[best] {
                        best = i;
                    }
                }
                if let Target::Class(c) = y {
                    if best == *c {
                        correct += 1;
                    }
                }
            }
            Ok(correct as f64 / samples.len() as f64)
        }
        TaskKind::Regression => {
            let mut sq = 0.0;
            for (x, y) in samples.iter().zip(targets) {
                let s = model.forward(x)?[0];
                if let Target::Value(v) = y {
                    sq += (s - v) * (s - v);
                }
            }
            Ok((sq / samples.len() as f64).sqrt())
        }
    }
}

/// One CSV row per epoch: epoch, mean_loss, pred_loss, recon_loss,
/// fit_metric, wall_ms.
pub fn write_epoch_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(f);
    (|| -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss,pred_loss,recon_loss,fit_metric,wall_ms")?;
        for row in log {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.3}",
                row.epoch, row.mean_loss, row.pred_loss, row.recon_loss, row.fit_metric, row.wall_ms
            )?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MlpHead, ModelConfig, LowRankHead};
    use crate::stiefel::{gaussian_matrix, orthonormalize, thin_svd};
    use crate::tensor::{multi_mode_product_sparse, Shape};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StdRng {
        StdRng::seed_from_u64(seed)
    }

    fn random_sparse(dims: &[usize], nnz: usize, r: &mut StdRng) -> SparseTensor {
        let shape = Shape::new(dims.to_vec()).unwrap();
        let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
        while entries.len() < nnz {
            let idx: Vec<usize> = dims.iter().map(|&d| r.gen_range(0..d)).collect();
            if !entries.iter().any(|(e, _)| *e == idx) {
                entries.push((idx, r.gen_range(-1.0..1.0)));
            }
        }
        SparseTensor::new(shape, entries).unwrap()
    }

    fn model_for(
        dims: &[usize],
        jdims: &[usize],
        task: TaskKind,
        outputs: usize,
        hidden: usize,
        lambda: f64,
        seed: u64,
    ) -> TripModel {
        let cfg = ModelConfig {
            input_dims: dims.to_vec(),
            subspace_dims: jdims.to_vec(),
            task,
            outputs,
            hidden_layers: hidden,
            hidden_width: 10,
            rank: None,
            lambda,
        };
        TripModel::init(&cfg, &mut rng(seed)).unwrap()
    }

    /// Loss evaluated at arbitrary (not necessarily orthonormal) projection
    /// matrices, used as the finite-difference reference. Uses the same
    /// reconstruction shortcut as the production loss.
    fn loss_at(
        model: &TripModel,
        cs: &[Matrix],
        samples: &[&SparseTensor],
        targets: &[Target],
    ) -> f64 {
        let refs: Vec<&Matrix> = cs.iter().collect();
        let mut pred = 0.0;
        let mut recon = 0.0;
        for (x, y) in samples.iter().zip(targets) {
            let xbar = multi_mode_product_sparse(x, &refs).unwrap();
            let scores = model.forward_from_projection(&xbar).unwrap();
            pred += model.prediction_loss(&scores, y).unwrap();
            recon += x.sq_norm() - xbar.values().iter().map(|v| v * v).sum::<f64>();
        }
        let n = samples.len() as f64;
        pred / n + model.lambda() * recon / n
    }

    #[test]
    fn head_backprop_closed_form_no_hidden() {
        let mut r = rng(40);
        let cfg = ModelConfig {
            input_dims: vec![5],
            subspace_dims: vec![3],
            task: TaskKind::Regression,
            outputs: 1,
            hidden_layers: 0,
            hidden_width: 10,
            rank: Some(3),
            lambda: 0.0,
        };
        let model = TripModel::init(&cfg, &mut rng(40)).unwrap();
        let xs: Vec<SparseTensor> = (0..4).map(|_| random_sparse(&[5], 3, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        let targets: Vec<Target> = (0..4).map(|i| Target::Value(i as f64 * 0.3)).collect();
        let (_, dedr, _) = head_backprop(&model, &refs, &targets).unwrap();
        let w_out = &model.head().layers()[0];
        for (n, x) in xs.iter().enumerate() {
            let pred = model.forward(x).unwrap()[0];
            let y = match targets[n] {
                Target::Value(v) => v,
                _ => unreachable!(),
            };
            let scale = 2.0 / 4.0 * (pred - y);
            for m in 0..3 {
                let expect = scale * w_out.w.get(0, m);
                assert!((dedr[n][m] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn head_backprop_zero_for_perfect_fit() {
        let mut r = rng(41);
        let model = model_for(&[5], &[2], TaskKind::Regression, 1, 1, 0.0, 41);
        let xs: Vec<SparseTensor> = (0..3).map(|_| random_sparse(&[5], 3, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        // targets equal to predictions => exact fit
        let targets: Vec<Target> = refs
            .iter()
            .map(|x| Target::Value(model.forward(x).unwrap()[0]))
            .collect();
        let (theta, dedr, losses) = head_backprop(&model, &refs, &targets).unwrap();
        assert!(losses.iter().all(|&l| l.abs() <= 1e-20));
        assert!(dedr.iter().flatten().all(|&d| d.abs() <= 1e-12));
        for g in &theta {
            assert!(g.w.frob_norm() <= 1e-12);
            assert!(g.b.iter().all(|&b| b.abs() <= 1e-12));
        }
    }

    #[test]
    fn head_backprop_matches_finite_differences() {
        let mut r = rng(42);
        for (task, outputs) in [(TaskKind::Classification, 3), (TaskKind::Regression, 1)] {
            let mut model = model_for(&[5], &[2], task, outputs, 2, 0.0, 42);
            let xs: Vec<SparseTensor> = (0..5).map(|_| random_sparse(&[5], 4, &mut r)).collect();
            let refs: Vec<&SparseTensor> = xs.iter().collect();
            let targets: Vec<Target> = (0..5)
                .map(|i| match task {
                    TaskKind::Classification => Target::Class(i % outputs),
                    TaskKind::Regression => Target::Value(i as f64 * 0.2 - 0.5),
                })
                .collect();
            let (theta, dedr, _) = head_backprop(&model, &refs, &targets).unwrap();

            let eval = |m: &TripModel| -> f64 {
                let mut s = 0.0;
                for (x, y) in refs.iter().zip(&targets) {
                    let scores = m.forward(x).unwrap();
                    s += m.prediction_loss(&scores, y).unwrap();
                }
                s / refs.len() as f64
            };
            let eps = 1e-6;
            // theta coordinates
            for l in 0..model.head().layers().len() {
                let (rows, cols) = {
                    let w = &model.head().layers()[l].w;
                    (w.rows(), w.cols())
                };
                for i in 0..rows {
                    for j in 0..cols {
                        let orig = model.head().layers()[l].w.get(i, j);
                        model.head_mut().layers_mut()[l].w.set(i, j, orig + eps);
                        let up = eval(&model);
                        model.head_mut().layers_mut()[l].w.set(i, j, orig - eps);
                        let dn = eval(&model);
                        model.head_mut().layers_mut()[l].w.set(i, j, orig);
                        let fd = (up - dn) / (2.0 * eps);
                        let an = theta[l].w.get(i, j);
                        assert!(
                            (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                            "layer {l} w[{i},{j}]: analytic {an:.6e} vs fd {fd:.6e}"
                        );
                    }
                }
                for i in 0..model.head().layers()[l].b.len() {
                    let orig = model.head().layers()[l].b[i];
                    model.head_mut().layers_mut()[l].b[i] = orig + eps;
                    let up = eval(&model);
                    model.head_mut().layers_mut()[l].b[i] = orig - eps;
                    let dn = eval(&model);
                    model.head_mut().layers_mut()[l].b[i] = orig;
                    let fd = (up - dn) / (2.0 * eps);
                    let an = theta[l].b[i];
                    assert!((an - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
                }
            }
            // r coordinates, via a perturbed head evaluation
            for (n, x) in refs.iter().enumerate() {
                let xbar = model.project(x).unwrap();
                let r_vec = model.first_layer(&xbar).unwrap();
                for m in 0..r_vec.len() {
                    let mut f = |delta: f64| -> f64 {
                        let mut rp = r_vec.clone();
                        rp[m] += delta;
                        let mut s = 0.0;
                        for (nn, xx) in refs.iter().enumerate() {
                            let scores = if nn == n {
                                let acts = model.head().forward(&rp);
                                acts.last().unwrap().clone()
                            } else {
                                model.forward(xx).unwrap()
                            };
                            s += model.prediction_loss(&scores, &targets[nn]).unwrap();
                        }
                        s / refs.len() as f64
                    };
                    let fd = (f(eps) - f(-eps)) / (2.0 * eps);
                    assert!(
                        (dedr[n][m] - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                        "sample {n} r[{m}]"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_c_zero_when_nothing_flows() {
        let mut r = rng(43);
        let model = model_for(&[4, 3], &[2, 2], TaskKind::Regression, 1, 0, 0.0, 43);
        let xs: Vec<SparseTensor> = (0..3).map(|_| random_sparse(&[4, 3], 4, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        let dedr: Vec<Vec<f64>> = vec![vec![0.0; model.low_rank().rank()]; 3];
        let gc = grad_c(&model, &refs, &dedr).unwrap();
        assert!(gc.iter().all(|g| g.frob_norm() == 0.0));
    }

    #[test]
    fn grad_c_reconstruction_term_matches_fd() {
        let mut r = rng(44);
        let model = model_for(&[4, 3], &[2, 2], TaskKind::Regression, 1, 1, 0.7, 44);
        let xs: Vec<SparseTensor> = (0..4).map(|_| random_sparse(&[4, 3], 5, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        let dedr: Vec<Vec<f64>> = vec![vec![0.0; model.low_rank().rank()]; 4];
        let gc = grad_c(&model, &refs, &dedr).unwrap();

        // pure reconstruction objective: -lambda * mean ||Xbar||^2
        let recon_at = |cs: &[Matrix]| -> f64 {
            let mrefs: Vec<&Matrix> = cs.iter().collect();
            let mut s = 0.0;
            for x in &refs {
                let xbar = multi_mode_product_sparse(x, &mrefs).unwrap();
                s -= xbar.values().iter().map(|v| v * v).sum::<f64>();
            }
            model.lambda() * s / refs.len() as f64
        };
        let cs: Vec<Matrix> = model.projections().into_iter().cloned().collect();
        let eps = 1e-6;
        for k in 0..2 {
            for i in 0..cs[k].rows() {
                for j in 0..cs[k].cols() {
                    let mut up = cs.clone();
                    up[k].set(i, j, cs[k].get(i, j) + eps);
                    let mut dn = cs.clone();
                    dn[k].set(i, j, cs[k].get(i, j) - eps);
                    let fd = (recon_at(&up) - recon_at(&dn)) / (2.0 * eps);
                    let an = gc[k].get(i, j);
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                        "mode {k} [{i},{j}]: {an:.6e} vs {fd:.6e}"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_c_full_loss_matches_fd() {
        let mut r = rng(45);
        let model = model_for(&[4, 3], &[2, 2], TaskKind::Classification, 2, 1, 0.05, 45);
        let xs: Vec<SparseTensor> = (0..5).map(|_| random_sparse(&[4, 3], 5, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        let targets: Vec<Target> = (0..5).map(|i| Target::Class(i % 2)).collect();
        let (_, dedr, _) = head_backprop(&model, &refs, &targets).unwrap();
        let gc = grad_c(&model, &refs, &dedr).unwrap();
        let cs: Vec<Matrix> = model.projections().into_iter().cloned().collect();
        let eps = 1e-6;
        for k in 0..2 {
            for i in 0..cs[k].rows() {
                for j in 0..cs[k].cols() {
                    let mut up = cs.clone();
                    up[k].set(i, j, cs[k].get(i, j) + eps);
                    let mut dn = cs.clone();
                    dn[k].set(i, j, cs[k].get(i, j) - eps);
                    let fd = (loss_at(&model, &up, &refs, &targets)
                        - loss_at(&model, &dn, &refs, &targets))
                        / (2.0 * eps);
                    let an = gc[k].get(i, j);
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                        "mode {k} [{i},{j}]: {an:.6e} vs {fd:.6e}"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_g_zero_and_k1_closed_form() {
        let mut r = rng(46);
        let model = model_for(&[6], &[3], TaskKind::Regression, 1, 2, 0.0, 46);
        let xs: Vec<SparseTensor> = (0..4).map(|_| random_sparse(&[6], 4, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        let rank = model.low_rank().rank();
        let zero: Vec<Vec<f64>> = vec![vec![0.0; rank]; 4];
        let gg = grad_g(&model, &refs, &zero).unwrap();
        assert!(gg.iter().all(|g| g.frob_norm() == 0.0));

        let dedr: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..rank).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let gg = grad_g(&model, &refs, &dedr).unwrap();
        // K=1: dE/dG = sum_n Xbar_n * dedr_n^T
        let mut expect = Matrix::zeros(3, rank);
        for (x, dr) in refs.iter().zip(&dedr) {
            let xbar = model.project(x).unwrap();
            for j in 0..3 {
                for m in 0..rank {
                    let cur = expect.get(j, m);
                    expect.set(j, m, cur + xbar.values()[j] * dr[m]);
                }
            }
        }
        assert!(gg[0].max_abs_diff(&expect) <= 1e-12);
    }

    #[test]
    fn grad_g_matches_fd_k2() {
        let mut r = rng(47);
        let mut model = model_for(&[4, 3], &[2, 2], TaskKind::Regression, 1, 1, 0.0, 47);
        let xs: Vec<SparseTensor> = (0..4).map(|_| random_sparse(&[4, 3], 5, &mut r)).collect();
        let refs: Vec<&SparseTensor> = xs.iter().collect();
        let targets: Vec<Target> = (0..4).map(|i| Target::Value(0.1 * i as f64)).collect();
        let (_, dedr, _) = head_backprop(&model, &refs, &targets).unwrap();
        let gg = grad_g(&model, &refs, &dedr).unwrap();
        let eval = |m: &TripModel| -> f64 {
            let mut s = 0.0;
            for (x, y) in refs.iter().zip(&targets) {
                let scores = m.forward(x).unwrap();
                s += m.prediction_loss(&scores, y).unwrap();
            }
            s / refs.len() as f64
        };
        let eps = 1e-6;
        for k in 0..2 {
            let (rows, cols) = {
                let g = &model.low_rank().factors()[k];
                (g.rows(), g.cols())
            };
            for i in 0..rows {
                for j in 0..cols {
                    let orig = model.low_rank().factors()[k].get(i, j);
                    model.low_rank_mut().factors_mut()[k].set(i, j, orig + eps);
                    let up = eval(&model);
                    model.low_rank_mut().factors_mut()[k].set(i, j, orig - eps);
                    let dn = eval(&model);
                    model.low_rank_mut().factors_mut()[k].set(i, j, orig);
                    let fd = (up - dn) / (2.0 * eps);
                    let an = gg[k].get(i, j);
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                        "mode {k} [{i},{j}]: {an:.6e} vs {fd:.6e}"
                    );
                }
            }
        }
    }

    #[test]
    fn end_to_end_z_gradient_matches_fd() {
        let mut r = rng(48);
        for (dims, jdims, hidden, lambda) in [
            (vec![6], vec![2], 0, 0.0),
            (vec![6], vec![2], 2, 0.01),
            (vec![4, 3], vec![2, 2], 0, 0.01),
            (vec![4, 3], vec![2, 2], 2, 0.0),
        ] {
            let model = model_for(
                &dims,
                &jdims,
                TaskKind::Classification,
                2,
                hidden,
                lambda,
                48 + hidden as u64,
            );
            let xs: Vec<SparseTensor> = (0..5)
                .map(|_| random_sparse(&dims, dims.iter().product::<usize>().min(5), &mut r))
                .collect();
            let refs: Vec<&SparseTensor> = xs.iter().collect();
            let targets: Vec<Target> = (0..5).map(|i| Target::Class(i % 2)).collect();
            let grads = batch_gradients(&model, &refs, &targets).unwrap();

            // loss as a function of Z, through orthonormalization
            let loss_of_z = |zs: &[Matrix]| -> f64 {
                let cs: Vec<Matrix> = zs
                    .iter()
                    .map(|z| orthonormalize(z.clone()).unwrap().c().clone())
                    .collect();
                loss_at(&model, &cs, &refs, &targets)
            };
            let zs: Vec<Matrix> = model.factors().iter().map(|f| f.z().clone()).collect();
            let eps = 1e-6;
            for k in 0..dims.len() {
                for i in 0..zs[k].rows() {
                    for j in 0..zs[k].cols() {
                        let mut up = zs.clone();
                        up[k].set(i, j, zs[k].get(i, j) + eps);
                        let mut dn = zs.clone();
                        dn[k].set(i, j, zs[k].get(i, j) - eps);
                        let fd = (loss_of_z(&up) - loss_of_z(&dn)) / (2.0 * eps);
                        let an = grads.z[k].get(i, j);
                        assert!(
                            (an - fd).abs() <= 1e-4 * fd.abs().max(1e-2),
                            "hidden={hidden} lambda={lambda} mode {k} [{i},{j}]: \
                             {an:.6e} vs {fd:.6e}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut r = rng(49);
        let xs: Vec<SparseTensor> = (0..20).map(|_| random_sparse(&[6], 4, &mut r)).collect();
        let targets: Vec<Target> = (0..20).map(|i| Target::Class(i % 2)).collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = |seed: u64| {
            let model = model_for(&[6], &[2], TaskKind::Classification, 2, 1, 0.01, seed);
            train(model, &xs, &targets, &cfg).unwrap()
        };
        // wall time differs run to run; everything numeric must not
        let numbers = |res: &TrainResult| -> Vec<(f64, f64, f64, f64)> {
            res.log
                .iter()
                .map(|l| (l.mean_loss, l.pred_loss, l.recon_loss, l.fit_metric))
                .collect()
        };
        let a = run(99);
        let b = run(99);
        assert_eq!(numbers(&a), numbers(&b));
        for (fa, fb) in a.model.factors().iter().zip(b.model.factors()) {
            assert_eq!(fa.z(), fb.z());
        }
        let c = run(100);
        assert!(numbers(&a) != numbers(&c));
    }

    #[test]
    fn training_keeps_projections_orthonormal() {
        let mut r = rng(50);
        let xs: Vec<SparseTensor> = (0..30).map(|_| random_sparse(&[8], 5, &mut r)).collect();
        let targets: Vec<Target> = (0..30).map(|i| Target::Class(i % 2)).collect();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let model = model_for(&[8], &[3], TaskKind::Classification, 2, 1, 0.01, 51);
        let out = train(model, &xs, &targets, &cfg).unwrap();
        for f in out.model.factors() {
            assert!(f.c().orthonormality_defect() <= 1e-8);
        }
    }

    #[test]
    fn one_small_step_descends() {
        // one epoch, one batch, tiny learning rate: loss after <= loss before
        // in at least 8 of 10 seeds
        let mut passes = 0;
        for seed in 0..10u64 {
            let mut r = rng(200 + seed);
            let xs: Vec<SparseTensor> = (0..12).map(|_| random_sparse(&[5], 4, &mut r)).collect();
            let targets: Vec<Target> = (0..12).map(|i| Target::Class(i % 2)).collect();
            let refs: Vec<&SparseTensor> = xs.iter().collect();
            let model = model_for(&[5], &[2], TaskKind::Classification, 2, 1, 0.01, 300 + seed);
            let before = model.loss(&refs, &targets).unwrap().total;
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: 12,
                learning_rate: 1e-5,
                seed,
                ..TrainConfig::default()
            };
            let out = train(model, &xs, &targets, &cfg).unwrap();
            let after = out.model.loss(&refs, &targets).unwrap().total;
            if after <= before {
                passes += 1;
            }
        }
        assert!(passes >= 8, "descent sanity passed only {passes}/10");
    }

    #[test]
    fn large_lambda_recovers_pca_subspace() {
        // variance concentrated in the first two coordinates; with a large
        // lambda the learned subspace must line up with the top-2 principal
        // subspace of the data
        let mut r = rng(52);
        let n = 100;
        let i_dim = 8;
        let shape = Shape::new(vec![i_dim]).unwrap();
        let mut xs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for s in 0..n {
            let mut vals = vec![0.0; i_dim];
            for (d, v) in vals.iter_mut().enumerate() {
                let scale = if d < 2 { 3.0 } else { 0.15 };
                *v = r.gen_range(-1.0..1.0) * scale;
            }
            let entries: Vec<(Vec<usize>, f64)> = vals
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(d, &v)| (vec![d], v))
                .collect();
            xs.push(SparseTensor::new(shape.clone(), entries).unwrap());
            targets.push(Target::Class(s % 2));
        }
        let model = model_for(&[i_dim], &[2], TaskKind::Classification, 2, 1, 10.0, 53);
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 20,
            seed: 11,
            ..TrainConfig::default()
        };
        let out = train(model, &xs, &targets, &cfg).unwrap();

        // PCA oracle: centered data matrix, top-2 right singular vectors
        let mut data = Matrix::zeros(n, i_dim);
        for (row, x) in xs.iter().enumerate() {
            for (idx, v) in x.iter() {
                data.set(row, idx[0], v);
            }
        }
        for j in 0..i_dim {
            let mean: f64 = (0..n).map(|i| data.get(i, j)).sum::<f64>() / n as f64;
            for i in 0..n {
                data.set(i, j, data.get(i, j) - mean);
            }
        }
        let svd = thin_svd(&data).unwrap();
        let pca = Matrix::from_fn(i_dim, 2, |i, j| svd.q.get(i, j));
        let angles = crate::stiefel::principal_angles(out.model.factors()[0].c(), &pca).unwrap();
        let worst = angles.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            worst.to_degrees() <= 5.0,
            "largest principal angle {:.2} deg",
            worst.to_degrees()
        );
    }

    #[test]
    fn square_projection_matches_plain_softmax_regression() {
        // J = I with lambda = 0 and no hidden layers is softmax regression in
        // a rotated basis; final fit accuracy must match a plain softmax
        // regression trained directly.
        let mut r = rng(54);
        let n = 80;
        let i_dim = 4;
        let shape = Shape::new(vec![i_dim]).unwrap();
        let mut xs = Vec::new();
        let mut targets = Vec::new();
        let mut dense: Vec<Vec<f64>> = Vec::new();
        for s in 0..n {
            let cls = s % 2;
            let center = if cls == 0 { 1.0 } else { -1.0 };
            let vals: Vec<f64> = (0..i_dim)
                .map(|d| center * (0.5 + 0.2 * d as f64) + r.gen_range(-0.8..0.8))
                .collect();
            let entries = vals
                .iter()
                .enumerate()
                .map(|(d, &v)| (vec![d], v))
                .collect();
            xs.push(SparseTensor::new(shape.clone(), entries).unwrap());
            dense.push(vals);
            targets.push(Target::Class(cls));
        }
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let model = {
            let mut mr = rng(55);
            let factors = vec![orthonormalize(gaussian_matrix(i_dim, i_dim, 0.5, &mut mr)).unwrap()];
            let low_rank = LowRankHead::init(&[i_dim], 2, &mut mr).unwrap();
            let head = MlpHead::init(2, 0, 10, 2, &mut mr).unwrap();
            TripModel::from_parts(factors, low_rank, head, TaskKind::Classification, 0.0).unwrap()
        };
        let out = train(model, &xs, &targets, &cfg).unwrap();
        let trip_acc = out.log.last().unwrap().fit_metric;

        // plain softmax regression oracle trained by gradient descent
        let mut w = vec![vec![0.0; i_dim]; 2];
        let mut b = vec![0.0; 2];
        for _ in 0..4000 {
            let mut gw = vec![vec![0.0; i_dim]; 2];
            let mut gb = vec![0.0; 2];
            for (x, t) in dense.iter().zip(&targets) {
                let scores: Vec<f64> = (0..2)
                    .map(|c| b[c] + w[c].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let p = crate::model::softmax(&scores);
                let cls = match t {
                    Target::Class(c) => *c,
                    _ => unreachable!(),
                };
                for c in 0..2 {
                    let d = p[c] - if c == cls { 1.0 } else { 0.0 };
                    gb[c] += d;
                    for (gi, xi) in gw[c].iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                }
            }
            for c in 0..2 {
                b[c] -= 0.05 * gb[c] / n as f64;
                for (wi, gi) in w[c].iter_mut().zip(&gw[c]) {
                    *wi -= 0.05 * gi / n as f64;
                }
            }
        }
        let mut correct = 0;
        for (x, t) in dense.iter().zip(&targets) {
            let scores: Vec<f64> = (0..2)
                .map(|c| b[c] + w[c].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let pred = if scores[1] > scores[0] { 1 } else { 0 };
            if Target::Class(pred) == *t {
                correct += 1;
            }
        }
        let plain_acc = correct as f64 / n as f64;
        assert!(
            (trip_acc - plain_acc).abs() <= 0.02,
            "trip {trip_acc:.3} vs plain {plain_acc:.3}"
        );
    }

    #[test]
    fn log_csv_format() {
        let log = vec![EpochLog {
            epoch: 1,
            mean_loss: 0.5,
            pred_loss: 0.4,
            recon_loss: 0.1,
            fit_metric: 0.9,
            wall_ms: 1.25,
        }];
        let dir = std::env::temp_dir().join("trip_train_log_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.csv");
        write_epoch_log_csv(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,mean_loss,pred_loss,recon_loss,fit_metric,wall_ms"
        );
        assert!(lines.next().unwrap().starts_with("1,"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
