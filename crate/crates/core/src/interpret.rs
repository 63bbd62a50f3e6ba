//! Post-hoc understanding of the learned subspace.
//!
//! The loss is invariant under per-mode rotations of the subspace axes
//! (`C -> C R`, with the low-rank factors counter-rotated), so the axes are
//! only defined up to that gauge. This module fixes it: a rank-1 linear
//! surrogate is fitted to the model's own outputs by alternating least
//! squares, per-mode rotation matrices are derived from the singular vectors
//! of the regression-contracted sample views, and local surrogates fitted
//! under Gaussian locality weights give per-sample regression coefficients
//! that can be read in rotated or original-variable coordinates.

use crate::error::{Error, Result};
use crate::model::{TaskKind, TripModel};
use crate::stiefel::thin_svd;
use crate::tensor::{DenseTensor, Matrix, Shape, SparseTensor};

const ALS_MAX_SWEEPS: usize = 100;
const ALS_REL_TOL: f64 = 1e-8;
const ALS_RIDGE: f64 = 1e-10;

/// What the surrogate is fitted to: the scalar output of a regression model,
/// or one class's pre-softmax logit of a classification model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateTarget {
    Prediction,
    ClassLogit(usize),
}

impl SurrogateTarget {
    fn extract(&self, scores: &[f64]) -> Result<f64> {
        match self {
            SurrogateTarget::Prediction => Ok(scores[0]),
            SurrogateTarget::ClassLogit(c) => scores.get(*c).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "class {} out of range for {} outputs",
                    c,
                    scores.len()
                ))
            }),
        }
    }

    pub fn for_model(model: &TripModel, class: Option<usize>) -> Result<SurrogateTarget> {
        match model.task() {
            TaskKind::Regression => Ok(SurrogateTarget::Prediction),
            TaskKind::Classification => Ok(SurrogateTarget::ClassLogit(class.unwrap_or(0))),
        }
    }
}

/// Rank-1 linear surrogate `y ~ <Xbar, outer_k g^(k)> + b` fitted by
/// weighted ALS to the model's own predictions.
///
/// Gauge: every coefficient vector except the first has unit norm and a
/// non-negative leading entry (when non-zero); magnitude and sign live in
/// the first mode's vector.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub coefficients: Vec<Vec<f64>>,
    pub bias: f64,
    /// Final weighted mean squared error.
    pub residual: f64,
    pub weights: Vec<f64>,
    /// Weighted MSE after each ALS sweep; non-increasing.
    pub sweep_mse: Vec<f64>,
}

impl SurrogateModel {
    pub fn predict(&self, xbar: &DenseTensor) -> Result<f64> {
        let vs: Vec<&[f64]> = self.coefficients.iter().map(|g| g.as_slice()).collect();
        Ok(crate::tensor::full_contract(xbar, &vs)? + self.bias)
    }
}

pub fn fit_surrogate(
    model: &TripModel,
    samples: &[SparseTensor],
    weights: &[f64],
    target: SurrogateTarget,
) -> Result<SurrogateModel> {
    let xbars = project_all(model, samples)?;
    fit_surrogate_projected(model, &xbars, weights, target)
}

/// ALS fit on already-projected samples. Each step solves one mode's
/// coefficient vector jointly with the bias by exact weighted least squares,
/// so the objective cannot increase.
pub fn fit_surrogate_projected(
    model: &TripModel,
    xbars: &[DenseTensor],
    weights: &[f64],
    target: SurrogateTarget,
) -> Result<SurrogateModel> {
    if xbars.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if weights.len() != xbars.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} samples",
            weights.len(),
            xbars.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "weights must be finite and non-negative".into(),
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidArgument("all weights are zero".into()));
    }
    let targets: Vec<f64> = xbars
        .iter()
        .map(|xb| {
            let scores = model.forward_from_projection(xb)?;
            target.extract(&scores)
        })
        .collect::<Result<_>>()?;

    let jdims = model.subspace_dims();
    let order = jdims.len();
    let mut coeffs: Vec<Vec<f64>> = jdims.iter().map(|&j| vec![1.0; j]).collect();
    let mut bias = 0.0;

    let mse = |coeffs: &[Vec<f64>], bias: f64| -> f64 {
        let mut s = 0.0;
        for (xb, (&t, &w)) in xbars.iter().zip(targets.iter().zip(weights)) {
            let vs: Vec<&[f64]> = coeffs.iter().map(|g| g.as_slice()).collect();
            let p = crate::tensor::full_contract(xb, &vs).unwrap() + bias;
            s += w * (p - t) * (p - t);
        }
        s / xbars.len() as f64
    };

    let mut sweep_mse = Vec::new();
    let mut prev = f64::INFINITY;
    for _sweep in 0..ALS_MAX_SWEEPS {
        for k in 0..order {
            let jk = jdims[k];
            // design rows: [Xbar contracted over the other modes ; 1]
            let dim = jk + 1;
            let mut normal = Matrix::zeros(dim, dim);
            let mut rhs = vec![0.0; dim];
            let mut phi = vec![0.0; dim];
            for (xb, (&t, &w)) in xbars.iter().zip(targets.iter().zip(weights)) {
                if w == 0.0 {
                    continue;
                }
                let v = mode_view(xb, &coeffs, k)?;
                phi[..jk].copy_from_slice(&v);
                phi[jk] = 1.0;
                for a in 0..dim {
                    for b in 0..dim {
                        let cur = normal.get(a, b);
                        normal.set(a, b, cur + w * phi[a] * phi[b]);
                    }
                    rhs[a] += w * t * phi[a];
                }
            }
            for a in 0..jk {
                let cur = normal.get(a, a);
                normal.set(a, a, cur + ALS_RIDGE);
            }
            let sol = normal.solve(&rhs)?;
            coeffs[k] = sol[..jk].to_vec();
            bias = sol[jk];
        }
        let cur = mse(&coeffs, bias);
        if cur > prev * (1.0 + 1e-9) + 1e-15 {
            return Err(Error::NonFinite(format!(
                "ALS objective increased: {prev:.6e} -> {cur:.6e}"
            )));
        }
        sweep_mse.push(cur);
        if prev.is_finite() && prev - cur < ALS_REL_TOL * prev.max(1e-30) {
            break;
        }
        prev = cur;
    }

    // gauge: unit norm and non-negative leading entry for every mode but the
    // first; scale and sign absorbed into mode 0
    for k in 1..order {
        let norm = coeffs[k].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut coeffs[k] {
                *x /= norm;
            }
            for x in &mut coeffs[0] {
                *x *= norm;
            }
        }
        if coeffs[k][0] < 0.0 {
            for x in &mut coeffs[k] {
                *x = -*x;
            }
            for x in &mut coeffs[0] {
                *x = -*x;
            }
        }
    }

    let residual = mse(&coeffs, bias);
    Ok(SurrogateModel {
        coefficients: coeffs,
        bias,
        residual,
        weights: weights.to_vec(),
        sweep_mse,
    })
}

/// Per-mode rotation matrices (columns ordered by singular value, descending;
/// largest-magnitude entry of each column positive) and the singular values
/// they came from.
#[derive(Debug, Clone)]
pub struct RotationSet {
    pub rotations: Vec<Matrix>,
    pub singular_values: Vec<Vec<f64>>,
}

/// The mode-k view of a projected sample: every other mode contracted with
/// the surrogate's coefficient vector. For a single-mode model this is the
/// projected sample itself.
fn mode_view(xbar: &DenseTensor, coeffs: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let dims = xbar.shape().dims();
    let mut cur_dims = dims.to_vec();
    let mut cur_vals = xbar.values().to_vec();
    let mut pos_of_k = k;
    for l in (0..dims.len()).rev() {
        if l == k {
            continue;
        }
        let (d, v) = crate::tensor::contract_mode(&cur_dims, &cur_vals, l, &coeffs[l]);
        cur_dims = d;
        cur_vals = v;
        if l < k {
            pos_of_k -= 1;
        }
    }
    debug_assert_eq!(pos_of_k, 0);
    debug_assert_eq!(cur_vals.len(), dims[k]);
    Ok(cur_vals)
}

pub fn rotation(
    model: &TripModel,
    samples: &[SparseTensor],
    surrogate: &SurrogateModel,
) -> Result<RotationSet> {
    let xbars = project_all(model, samples)?;
    rotation_projected(model, &xbars, surrogate)
}

pub fn rotation_projected(
    model: &TripModel,
    xbars: &[DenseTensor],
    surrogate: &SurrogateModel,
) -> Result<RotationSet> {
    let jdims = model.subspace_dims();
    let mut rotations = Vec::with_capacity(jdims.len());
    let mut singulars = Vec::with_capacity(jdims.len());
    for (k, &jk) in jdims.iter().enumerate() {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(xbars.len());
        for (n, xb) in xbars.iter().enumerate() {
            let mut u = mode_view(xb, &surrogate.coefficients, k)?;
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                eprintln!("warning: sample {n} has a zero mode-{k} view; skipped in rotation");
                continue;
            }
            for x in &mut u {
                *x /= norm;
            }
            cols.push(u);
        }
        if cols.len() < jk {
            return Err(Error::InvalidArgument(format!(
                "only {} usable samples for a {}-column rotation in mode {}",
                cols.len(),
                jk,
                k
            )));
        }
        // left singular vectors of U = right singular vectors of U^T
        let ut = Matrix::from_fn(cols.len(), jk, |n, j| cols[n][j]);
        let svd = thin_svd(&ut)?;
        rotations.push(svd.q);
        singulars.push(svd.s);
    }
    Ok(RotationSet {
        rotations,
        singular_values: singulars,
    })
}

/// Per-sample, per-mode coordinates in the rotated axes: `R^(k)^T u_n^(k)`.
/// For a single-mode model these are the rotated projections themselves.
pub fn rotated_coordinates(
    model: &TripModel,
    samples: &[SparseTensor],
    surrogate: &SurrogateModel,
    rot: &RotationSet,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let xbars = project_all(model, samples)?;
    xbars
        .iter()
        .map(|xb| {
            (0..model.order())
                .map(|k| {
                    let u = mode_view(xb, &surrogate.coefficients, k)?;
                    Ok(rot.rotations[k].tr_mul_vec(&u))
                })
                .collect()
        })
        .collect()
}

/// Local regression coefficients around one anchor sample.
#[derive(Debug, Clone)]
pub struct LrcEntry {
    pub anchor: usize,
    pub sigma: f64,
    /// The local surrogate (coefficients, bias, residual, weights).
    pub local: SurrogateModel,
    /// Per-mode combined coefficients `g_hat^(k) = g_n^(k) *
    /// prod_{l != k} <g_n^(l), g_global^(l)>`.
    pub combined: Vec<Vec<f64>>,
    /// `R^(k)^T g_hat^(k)`.
    pub rotated: Vec<Vec<f64>>,
    /// `C^(k) g_hat^(k)`, in original-variable coordinates.
    pub original: Vec<Vec<f64>>,
}

pub fn lrc(
    model: &TripModel,
    samples: &[SparseTensor],
    anchor: usize,
    sigma: f64,
    global: &SurrogateModel,
    rot: &RotationSet,
    target: SurrogateTarget,
) -> Result<LrcEntry> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("sigma must be > 0".into()));
    }
    if anchor >= samples.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor {} out of range for {} samples",
            anchor,
            samples.len()
        )));
    }
    let xbars = project_all(model, samples)?;
    lrc_projected(model, &xbars, anchor, sigma, global, rot, target)
}

pub fn lrc_projected(
    model: &TripModel,
    xbars: &[DenseTensor],
    anchor: usize,
    sigma: f64,
    global: &SurrogateModel,
    rot: &RotationSet,
    target: SurrogateTarget,
) -> Result<LrcEntry> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("sigma must be > 0".into()));
    }
    let anchor_vals = xbars[anchor].values();
    let mut weights = Vec::with_capacity(xbars.len());
    let mut min_dist_sq = f64::INFINITY;
    for (n, xb) in xbars.iter().enumerate() {
        let d2: f64 = xb
            .values()
            .iter()
            .zip(anchor_vals)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if n != anchor && d2 < min_dist_sq {
            min_dist_sq = d2;
        }
        weights.push((-d2 / (sigma * sigma)).exp());
    }
    let usable = weights
        .iter()
        .enumerate()
        .filter(|&(n, &w)| n != anchor && w > 0.0)
        .count();
    if usable == 0 && xbars.len() > 1 {
        // exp underflows to zero once d^2/sigma^2 passes ~745
        let min_sigma = (min_dist_sq / 700.0).sqrt();
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma:.3e} too small: every non-anchor locality weight \
             underflowed to zero; smallest usable sigma is about {min_sigma:.3e}"
        )));
    }
    let local = fit_surrogate_projected(model, xbars, &weights, target)?;

    let order = model.order();
    let mut combined = Vec::with_capacity(order);
    for k in 0..order {
        let mut scale = 1.0;
        for l in 0..order {
            if l == k {
                continue;
            }
            scale *= local.coefficients[l]
                .iter()
                .zip(&global.coefficients[l])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let scaled: Vec<f64> = local.coefficients[k].iter().map(|x| x * scale).collect();
        combined.push(scaled);
    }
    let rotated: Vec<Vec<f64>> = combined
        .iter()
        .enumerate()
        .map(|(k, g)| rot.rotations[k].tr_mul_vec(g))
        .collect();
    let original: Vec<Vec<f64>> = combined
        .iter()
        .enumerate()
        .map(|(k, g)| model.projections()[k].mul_vec(g))
        .collect();
    Ok(LrcEntry {
        anchor,
        sigma,
        local,
        combined,
        rotated,
        original,
    })
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub a1: f64,
    pub a2: f64,
    /// Softmax probabilities for classification, a single value for
    /// regression.
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GridTable {
    pub axes: (usize, usize),
    pub resolution: usize,
    pub rows: Vec<GridRow>,
}

/// Evaluates the head over a uniform grid in two rotated subspace
/// coordinates (flat indices into the rotated projection tensor), holding
/// the remaining coordinates at `base` (zero if absent). Rows are ordered
/// lexicographically by (a1, a2).
pub fn export_decision_grid(
    model: &TripModel,
    rot: &RotationSet,
    axes: (usize, usize),
    base: Option<&DenseTensor>,
    bounds: (f64, f64, f64, f64),
    resolution: usize,
) -> Result<GridTable> {
    let jdims = model.subspace_dims();
    let total: usize = jdims.iter().product();
    if axes.0 == axes.1 || axes.0 >= total || axes.1 >= total {
        return Err(Error::InvalidArgument(format!(
            "grid axes must be two distinct coordinates below {total}, got {axes:?}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be >= 1".into()));
    }
    let shape = Shape::new(jdims.clone())?;
    let mut rotated_base = match base {
        Some(b) => {
            if b.shape() != &shape {
                return Err(Error::ShapeMismatch(format!(
                    "base shape {:?} vs subspace {:?}",
                    b.shape().dims(),
                    jdims
                )));
            }
            b.clone()
        }
        None => DenseTensor::zeros(shape),
    };
    let back: Vec<Matrix> = rot.rotations.iter().map(|r| r.transpose()).collect();
    let lin = |lo: f64, hi: f64, i: usize| {
        if resolution == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i1 in 0..resolution {
        let a1 = lin(bounds.0, bounds.1, i1);
        for i2 in 0..resolution {
            let a2 = lin(bounds.2, bounds.3, i2);
            rotated_base.values_mut()[axes.0] = a1;
            rotated_base.values_mut()[axes.1] = a2;
            // back to un-rotated subspace coordinates
            let xbar = crate::tensor::multi_mode_product(&rotated_base, &back)?;
            let scores = model.forward_from_projection(&xbar)?;
            let outputs = match model.task() {
                TaskKind::Classification => crate::model::softmax(&scores),
                TaskKind::Regression => scores,
            };
            rows.push(GridRow { a1, a2, outputs });
        }
    }
    Ok(GridTable {
        axes,
        resolution,
        rows,
    })
}

fn project_all(model: &TripModel, samples: &[SparseTensor]) -> Result<Vec<DenseTensor>> {
    samples.iter().map(|x| model.project(x)).collect()
}
