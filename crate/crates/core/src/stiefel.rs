//! Orthonormal reparameterization of projection matrices.
//!
//! An unconstrained latent matrix `Z` (I x J, I >= J) is mapped to the
//! orthonormal `C = P Q^T` through its thin SVD `Z = P S Q^T`. `C` is the
//! polar factor of `Z`: the closest matrix with orthonormal columns. The
//! exact gradient of any loss through this map is
//!
//! ```text
//! f(A, Z) = P [ (P^T A Q - Q^T A^T P) ./ (S1 + 1S) ] Q^T
//!         + (I - P P^T) A Q S^-1 Q^T
//! ```
//!
//! where `A = dE/dC`, giving `dE/dZ = f(A, Z)`.
//!
//! The SVD is a one-sided Jacobi iteration: the subspace widths J are small
//! (a handful of columns), and Jacobi is deterministic and accurate at that
//! scale, which keeps training runs reproducible bit for bit.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Off-diagonal tolerance for the Jacobi sweep, relative to column norms.
const JACOBI_TOL: f64 = 1e-12;
/// Sweep cap; hitting it signals pathological input.
const JACOBI_MAX_SWEEPS: usize = 100;
/// Smallest singular value accepted by `orthonormalize`.
const RANK_TOL: f64 = 1e-8;
/// Clamp for the Eq-gradient denominators `s_i + s_j` and `1/s_j`.
const DENOM_CLAMP: f64 = 1e-10;

/// Thin SVD `m = P diag(S) Q^T` with `P` I x J, `S` descending, `Q` J x J.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub p: Matrix,
    pub s: Vec<f64>,
    pub q: Matrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let j = self.s.len();
        let mut ps = self.p.clone();
        for c in 0..j {
            let s = self.s[c];
            for v in ps.col_mut(c) {
                *v *= s;
            }
        }
        ps.matmul(&self.q.transpose())
    }
}

/// One-sided Jacobi thin SVD for tall matrices (rows >= cols).
///
/// Deterministic sign convention: the largest-magnitude entry of each right
/// singular vector is made positive, ties broken by the lowest row index.
/// Equal singular values keep their pre-sort relative order.
pub fn thin_svd(m: &Matrix) -> Result<SvdFactors> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows < cols {
        return Err(Error::InvalidArgument(format!(
            "thin_svd needs rows >= cols, got {}x{}",
            rows, cols
        )));
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(cols);

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let (app, aqq, apq) = {
                    let cp = a.col(p);
                    let cq = a.col(q);
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..rows {
                        app += cp[i] * cp[i];
                        aqq += cq[i] * cq[i];
                        apq += cp[i] * cq[i];
                    }
                    (app, aqq, apq)
                };
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() || app * aqq == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut a, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    // Singular values are the column norms of the rotated matrix.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols)
        .map(|j| a.col(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut p_mat = Matrix::zeros(rows, cols);
    let mut q_mat = Matrix::zeros(cols, cols);
    let mut s = vec![0.0; cols];
    let s_max = order.first().map(|&j| norms[j]).unwrap_or(0.0);
    let zero_cut = s_max * 1e-13;
    let mut deferred: Vec<usize> = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        for (i, &x) in a.col(src).iter().enumerate() {
            // normalized later (or completed, for numerically zero columns)
            p_mat.set(i, dst, x);
        }
        for (i, &x) in v.col(src).iter().enumerate() {
            q_mat.set(i, dst, x);
        }
        if norms[src] > zero_cut && norms[src] > 0.0 {
            let inv = 1.0 / norms[src];
            for x in p_mat.col_mut(dst) {
                *x *= inv;
            }
        } else {
            deferred.push(dst);
        }
    }
    // Complete left vectors for numerically zero columns so P stays
    // orthonormal: pick the standard basis vector with the largest residual
    // after projecting out the other columns.
    for &dst in &deferred {
        let mut best = (0usize, -1.0f64);
        let mut best_vec = vec![0.0; rows];
        for cand in 0..rows {
            let mut vcand = vec![0.0; rows];
            vcand[cand] = 1.0;
            for c in 0..cols {
                if c == dst || deferred.contains(&c) && c > dst {
                    continue;
                }
                let pc = p_mat.col(c);
                let dot: f64 = pc.iter().zip(&vcand).map(|(a, b)| a * b).sum();
                for (x, &pcv) in vcand.iter_mut().zip(pc) {
                    *x -= dot * pcv;
                }
            }
            let norm2: f64 = vcand.iter().map(|x| x * x).sum();
            if norm2 > best.1 {
                best = (cand, norm2);
                best_vec = vcand;
            }
        }
        let _ = best.0;
        let norm = best.1.sqrt();
        for (i, x) in best_vec.iter().enumerate() {
            p_mat.set(i, dst, x / norm);
        }
    }

    // Sign convention on the right singular vectors.
    for j in 0..cols {
        let col = q_mat.col(j);
        let mut imax = 0;
        let mut vmax = col[0].abs();
        for (i, &x) in col.iter().enumerate().skip(1) {
            if x.abs() > vmax {
                vmax = x.abs();
                imax = i;
            }
        }
        if q_mat.get(imax, j) < 0.0 {
            for x in q_mat.col_mut(j) {
                *x = -*x;
            }
            for x in p_mat.col_mut(j) {
                *x = -*x;
            }
        }
    }

    Ok(SvdFactors {
        p: p_mat,
        s,
        q: q_mat,
    })
}

fn rotate_cols(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.rows();
    for i in 0..rows {
        let vp = m.get(i, p);
        let vq = m.get(i, q);
        m.set(i, p, c * vp - s * vq);
        m.set(i, q, s * vp + c * vq);
    }
}

/// An unconstrained latent matrix together with its cached SVD and the
/// orthonormal projection derived from it. Immutable snapshot; the trainer
/// mutates by replacement.
#[derive(Debug, Clone)]
pub struct LatentFactor {
    z: Matrix,
    svd: SvdFactors,
    c: Matrix,
}

impl LatentFactor {
    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn svd(&self) -> &SvdFactors {
        &self.svd
    }

    pub fn min_singular(&self) -> f64 {
        self.svd.s.last().copied().unwrap_or(0.0)
    }
}

/// Maps `Z` to its polar factor `C = P Q^T`, the nearest matrix with
/// orthonormal columns. Fails if `Z` is numerically rank deficient; the
/// training loop handles that case by jittering and retrying.
pub fn orthonormalize(z: Matrix) -> Result<LatentFactor> {
    if z.rows() < z.cols() {
        return Err(Error::InvalidArgument(format!(
            "latent matrix must be tall, got {}x{}",
            z.rows(),
            z.cols()
        )));
    }
    let svd = thin_svd(&z)?;
    let sigma_min = svd.s.last().copied().unwrap_or(0.0);
    if sigma_min < RANK_TOL {
        return Err(Error::RankDeficient { sigma_min });
    }
    let c = svd.p.matmul(&svd.q.transpose());
    Ok(LatentFactor { z, svd, c })
}

/// Gradient of the orthonormalization map: given `A = dE/dC`, returns
/// `dE/dZ = f(A, Z)` using the cached SVD of `Z`. Denominators involving
/// singular values are clamped from below to keep the map defined even if a
/// singular value collapses mid-run.
pub fn manifold_grad(de_dc: &Matrix, factor: &LatentFactor) -> Matrix {
    let p = &factor.svd.p;
    let q = &factor.svd.q;
    let s = &factor.svd.s;
    let j = s.len();
    debug_assert_eq!(de_dc.rows(), p.rows());
    debug_assert_eq!(de_dc.cols(), j);

    // First summand: P [ (P^T A Q - (P^T A Q)^T) ./ (s_i + s_j) ] Q^T
    let aq = de_dc.matmul(q);
    let b = p.tr_matmul(&aq);
    let mut frac = Matrix::zeros(j, j);
    for c in 0..j {
        for r in 0..j {
            let denom = (s[r] + s[c]).max(DENOM_CLAMP);
            frac.set(r, c, (b.get(r, c) - b.get(c, r)) / denom);
        }
    }
    let mut out = p.matmul(&frac).matmul(&q.transpose());

    // Second summand: (I - P P^T) A Q S^-1 Q^T
    let mut resid = aq.clone();
    let proj = p.matmul(&p.tr_matmul(&aq));
    resid.add_scaled(&proj, -1.0);
    for c in 0..j {
        let inv = 1.0 / s[c].max(DENOM_CLAMP);
        for v in resid.col_mut(c) {
            *v *= inv;
        }
    }
    out.add_scaled(&resid.matmul(&q.transpose()), 1.0);
    out
}

/// I x J matrix with i.i.d. N(0, std^2) entries, filled column-major.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    let normal = StandardNormal;
    Matrix::from_fn(rows, cols, |_, _| {
        let x: f64 = normal.sample(rng);
        x * std
    })
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal-column matrices: the arccosines of the singular values of
/// `A^T B`.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "ambient dimensions differ: {} vs {}",
            a.rows(),
            b.rows()
        )));
    }
    let m = a.tr_matmul(b);
    // singular values are transpose-invariant; thin_svd wants a tall input
    let tall = if m.rows() >= m.cols() { m } else { m.transpose() };
    let svd = thin_svd(&tall)?;
    Ok(svd
        .s
        .iter()
        .rev()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect())
}

/// Random rotation: polar factor of a square Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    loop {
        let z = gaussian_matrix(n, n, 1.0, rng);
        if let Ok(f) = orthonormalize(z) {
            return f.c().clone();
        }
        // a singular Gaussian draw has measure zero; retry if it happens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StdRng {
        StdRng::seed_from_u64(seed)
    }

    #[test]
    fn svd_of_diagonal_like() {
        let z = Matrix::from_rows(&[&[2., 0.], &[0., 3.], &[0., 0.]]);
        let svd = thin_svd(&z).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-12);
        assert!((svd.s[1] - 2.0).abs() < 1e-12);
        assert!(svd.reconstruct().max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn svd_of_orthonormal_is_all_ones() {
        let mut r = rng(11);
        let c = random_orthogonal(5, &mut r);
        let svd = thin_svd(&c).unwrap();
        for s in &svd.s {
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn svd_reconstruction_and_orthogonality() {
        let mut r = rng(12);
        for _ in 0..10 {
            let m = gaussian_matrix(5, 3, 1.0, &mut r);
            let svd = thin_svd(&m).unwrap();
            assert!(svd.reconstruct().max_abs_diff(&m) <= 1e-9);
            assert!(svd.p.orthonormality_defect() <= 1e-10);
            assert!(svd.q.orthonormality_defect() <= 1e-10);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(svd.s.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn svd_rank_deficient_input_keeps_p_orthonormal() {
        // second column is a multiple of the first
        let m = Matrix::from_rows(&[&[1., 2.], &[2., 4.], &[3., 6.]]);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.p.orthonormality_defect() <= 1e-10);
        assert!(svd.s[1].abs() < 1e-12);
        assert!(svd.reconstruct().max_abs_diff(&m) <= 1e-9);
    }

    #[test]
    fn svd_is_deterministic() {
        let mut r = rng(13);
        let m = gaussian_matrix(6, 3, 1.0, &mut r);
        let a = thin_svd(&m).unwrap();
        let b = thin_svd(&m).unwrap();
        assert_eq!(a.p, b.p);
        assert_eq!(a.q, b.q);
        assert_eq!(a.s, b.s);
    }

    #[test]
    fn orthonormalize_fixes_orthonormal_input() {
        let mut r = rng(14);
        let w = random_orthogonal(4, &mut r);
        let f = orthonormalize(w.clone()).unwrap();
        assert!(f.c().max_abs_diff(&w) <= 1e-10);
    }

    #[test]
    fn orthonormalize_diag_case() {
        let z = Matrix::from_rows(&[&[2., 0.], &[0., 3.], &[0., 0.]]);
        let f = orthonormalize(z).unwrap();
        let expected = Matrix::from_rows(&[&[1., 0.], &[0., 1.], &[0., 0.]]);
        assert!(f.c().max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn orthonormalize_scale_invariant() {
        let mut r = rng(15);
        for scale in [0.5, 3.0, 100.0] {
            let mut w = random_orthogonal(5, &mut r);
            let target = w.clone();
            w.scale(scale);
            let f = orthonormalize(w).unwrap();
            assert!(f.c().max_abs_diff(&target) <= 1e-10);
        }
    }

    #[test]
    fn orthonormalize_rejects_rank_deficiency() {
        let z = Matrix::from_rows(&[&[1., 2.], &[2., 4.], &[3., 6.]]);
        assert!(matches!(
            orthonormalize(z),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn orthonormality_always_tight() {
        let mut r = rng(16);
        for _ in 0..20 {
            let z = gaussian_matrix(7, 3, 1.0, &mut r);
            let f = orthonormalize(z).unwrap();
            assert!(f.c().orthonormality_defect() <= 1e-8);
        }
    }

    #[test]
    fn manifold_grad_identity_case() {
        let z = Matrix::identity(2);
        let f = orthonormalize(z).unwrap();
        let a = Matrix::from_rows(&[&[0., 1.], &[0., 0.]]);
        let g = manifold_grad(&a, &f);
        let expected = Matrix::from_rows(&[&[0., 0.5], &[-0.5, 0.]]);
        assert!(g.max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn manifold_grad_zero_is_zero() {
        let mut r = rng(17);
        let f = orthonormalize(gaussian_matrix(5, 2, 1.0, &mut r)).unwrap();
        let g = manifold_grad(&Matrix::zeros(5, 2), &f);
        assert!(g.frob_norm() == 0.0);
    }

    /// Central finite difference of E(Z) = <A, orthonormalize(Z).C>.
    fn fd_grad(a: &Matrix, z: &Matrix, eps: f64) -> Matrix {
        let h = |zz: &Matrix| -> f64 {
            let f = orthonormalize(zz.clone()).unwrap();
            a.values()
                .iter()
                .zip(f.c().values())
                .map(|(x, y)| x * y)
                .sum()
        };
        Matrix::from_fn(z.rows(), z.cols(), |i, j| {
            let mut zp = z.clone();
            zp.set(i, j, z.get(i, j) + eps);
            let mut zm = z.clone();
            zm.set(i, j, z.get(i, j) - eps);
            (h(&zp) - h(&zm)) / (2.0 * eps)
        })
    }

    #[test]
    fn manifold_grad_matches_finite_differences() {
        let mut r = rng(18);
        for trial in 0..25 {
            let rows = 3 + trial % 6; // 3..=8
            let cols = 1 + trial % 3; // 1..=3
            let cols = cols.min(rows);
            let z = gaussian_matrix(rows, cols, 1.0, &mut r);
            let a = gaussian_matrix(rows, cols, 1.0, &mut r);
            let f = orthonormalize(z.clone()).unwrap();
            let g = manifold_grad(&a, &f);
            let fd = fd_grad(&a, &z, 1e-6);
            let mut diff = g.clone();
            diff.add_scaled(&fd, -1.0);
            let rel = diff.frob_norm() / fd.frob_norm().max(1e-30);
            assert!(rel <= 1e-5, "trial {trial}: relative error {rel:.3e}");
        }
    }

    #[test]
    fn manifold_grad_tangent_part_is_skew() {
        let mut r = rng(19);
        for _ in 0..10 {
            let z = gaussian_matrix(6, 3, 1.0, &mut r);
            let a = gaussian_matrix(6, 3, 1.0, &mut r);
            let f = orthonormalize(z).unwrap();
            let g = manifold_grad(&a, &f);
            // P^T f Q recovers the skew-symmetric core; the second summand
            // lives in the orthogonal complement of span(P) and drops out.
            let b = f.svd().p.tr_matmul(&g).matmul(&f.svd().q);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((b.get(i, j) + b.get(j, i)).abs() <= 1e-10);
                }
            }
        }
    }
}
