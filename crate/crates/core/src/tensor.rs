//! Dense and sparse K-th order tensors and the operator algebra built on them:
//! mode-k matricization, k-mode products, Khatri-Rao products, outer products
//! and inner products.
//!
//! Conventions, fixed once for the whole crate:
//!
//! - Dense tensor values are stored flat in first-index-fastest order: the
//!   flat offset of `(i_1, .., i_K)` is `i_1 + I_1*(i_2 + I_2*(i_3 + ..))`.
//! - `Matrix` is column-major.
//! - `matricize(t, k)` has one column per mode-k slice, so its size is
//!   `(prod_{l != k} I_l) x I_k`; slice entries are vectorized in the same
//!   first-index-fastest order.
//! - Kronecker/Khatri-Rao products put the second factor's index fastest:
//!   `(a (x) b)[i*len(b) + j] = a[i] * b[j]`.
//!
//! All modes are 0-indexed in code.

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 8;

/// Extents `I_1..I_K` of a K-th order tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("tensor order must be >= 1".into()));
        }
        if dims.len() > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "tensor order {} exceeds supported maximum {}",
                dims.len(),
                MAX_ORDER
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "every extent must be >= 1, got {:?}",
                dims
            )));
        }
        Ok(Shape { dims })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// Total number of elements. Computed in u128 because coordinate-format
    /// tensors may declare extents whose product overflows usize.
    pub fn num_elements(&self) -> u128 {
        self.dims.iter().map(|&d| d as u128).product()
    }

    /// Flat offset of a multi-index, first index fastest.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0usize;
        for k in (0..self.dims.len()).rev() {
            off = off * self.dims[k] + idx[k];
        }
        off
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.len() == self.dims.len() && idx.iter().zip(&self.dims).all(|(&i, &d)| i < d)
    }
}

/// Dense K-th order tensor, values flat in first-index-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if shape.num_elements() != values.len() as u128 {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {} values",
                shape.dims(),
                shape.num_elements(),
                values.len()
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.num_elements() as usize;
        DenseTensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.shape.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.shape.flat_index(idx);
        self.values[off] = v;
    }

    /// Keeps the non-zero entries, in ascending flat order.
    pub fn sparsify(&self) -> SparseTensor {
        let k = self.order();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![0usize; k];
        for &v in &self.values {
            if v != 0.0 {
                indices.extend_from_slice(&idx);
                values.push(v);
            }
            // advance multi-index, first index fastest
            for d in 0..k {
                idx[d] += 1;
                if idx[d] < self.shape.dim(d) {
                    break;
                }
                idx[d] = 0;
            }
        }
        SparseTensor {
            shape: self.shape.clone(),
            indices,
            values,
        }
    }
}

/// Coordinate-format sparse tensor. Entries hold distinct in-range indices
/// and non-zero values; index tuples are stored flattened, K per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    shape: Shape,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    pub fn new(shape: Shape, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let k = shape.order();
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        let mut indices = Vec::with_capacity(entries.len() * k);
        let mut values = Vec::with_capacity(entries.len());
        for (idx, v) in entries {
            if !shape.contains(&idx) {
                return Err(Error::ShapeMismatch(format!(
                    "index {:?} out of bounds for shape {:?}",
                    idx,
                    shape.dims()
                )));
            }
            if v == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "explicit zero entry at {:?}",
                    idx
                )));
            }
            let mut key = 0u128;
            for d in (0..k).rev() {
                key = key * shape.dim(d) as u128 + idx[d] as u128;
            }
            if !seen.insert(key) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry at {:?}",
                    idx
                )));
            }
            indices.extend_from_slice(&idx);
            values.push(v);
        }
        Ok(SparseTensor {
            shape,
            indices,
            values,
        })
    }

    pub fn empty(shape: Shape) -> Self {
        SparseTensor {
            shape,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entry(&self, e: usize) -> (&[usize], f64) {
        let k = self.order();
        (&self.indices[e * k..(e + 1) * k], self.values[e])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        let k = self.order();
        self.indices.chunks_exact(k).zip(self.values.iter().copied())
    }

    pub fn densify(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.shape.clone());
        for (idx, v) in self.iter() {
            let off = self.shape.flat_index(idx);
            out.values[off] = v;
        }
        out
    }

    /// Sum of squared entry values; equals the dense Frobenius norm squared
    /// because index tuples are distinct.
    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.values[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    /// Builds from row slices, mainly for tests and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        assert!(rows.iter().all(|row| row.len() == c));
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.values[i + j * rows] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i + j * self.rows] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column j as a contiguous slice.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let out_col = &mut out.values[j * self.rows..(j + 1) * self.rows];
            for l in 0..self.cols {
                let w = other.get(l, j);
                if w == 0.0 {
                    continue;
                }
                let a_col = &self.values[l * self.rows..(l + 1) * self.rows];
                for i in 0..self.rows {
                    out_col[i] += a_col[i] * w;
                }
            }
        }
        out
    }

    /// `self^T * other`
    pub fn tr_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "tr_matmul dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            for i in 0..self.cols {
                let mut s = 0.0;
                let a = self.col(i);
                let b = other.col(j);
                for r in 0..self.rows {
                    s += a[r] * b[r];
                }
                out.set(i, j, s);
            }
        }
        out
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for j in 0..self.cols {
            let w = v[j];
            if w == 0.0 {
                continue;
            }
            let col = self.col(j);
            for i in 0..self.rows {
                out[i] += col[i] * w;
            }
        }
        out
    }

    /// `self^T * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec dimension mismatch");
        (0..self.cols)
            .map(|j| self.col(j).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b * s;
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max_ij |(self^T self - I)_ij|`
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.tr_matmul(self);
        let mut worst = 0.0f64;
        for j in 0..g.cols {
            for i in 0..g.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Solves `self * x = rhs` for square systems by Gaussian elimination
    /// with partial pivoting. Intended for the small normal-equation systems
    /// that show up in surrogate fitting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(self.rows, self.cols, "solve needs a square matrix");
        assert_eq!(self.rows, rhs.len());
        let n = self.rows;
        let mut a = self.values.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col + col * n].abs();
            for r in col + 1..n {
                let v = a[r + col * n].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Err(Error::RankDeficient { sigma_min: 0.0 });
            }
            if piv != col {
                for c in 0..n {
                    a.swap(col + c * n, piv + c * n);
                }
                b.swap(col, piv);
            }
            let d = a[col + col * n];
            for r in col + 1..n {
                let f = a[r + col * n] / d;
                if f == 0.0 {
                    continue;
                }
                for c in col..n {
                    a[r + c * n] -= f * a[col + c * n];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = b[r];
            for c in r + 1..n {
                s -= a[r + c * n] * x[c];
            }
            x[r] = s / a[r + r * n];
        }
        Ok(x)
    }
}

fn check_mode(order: usize, k: usize) -> Result<()> {
    if k >= order {
        Err(Error::ModeOutOfRange { mode: k, order })
    } else {
        Ok(())
    }
}

/// Mode-k matricization: one column per mode-k slice, slice entries
/// vectorized first-index-fastest. Size `(prod_{l != k} I_l) x I_k`.
pub fn matricize(t: &DenseTensor, k: usize) -> Result<Matrix> {
    let order = t.order();
    check_mode(order, k)?;
    let dims = t.shape().dims();
    let ik = dims[k];
    let rest: usize = (t.shape().num_elements() / ik as u128) as usize;
    let mut out = Matrix::zeros(rest, ik);
    // pre = stride of mode k, post = number of blocks above mode k
    let pre: usize = dims[..k].iter().product();
    let post: usize = dims[k + 1..].iter().product();
    for p2 in 0..post {
        for j in 0..ik {
            for p1 in 0..pre {
                let v = t.values()[p1 + pre * (j + ik * p2)];
                out.set(p1 + pre * p2, j, v);
            }
        }
    }
    Ok(out)
}

/// Mode-k product with a matrix: replaces extent `I_k` with `w.cols()`,
/// satisfying `matricize(result, k) = matricize(t, k) * w`.
pub fn mode_product(t: &DenseTensor, w: &Matrix, k: usize) -> Result<DenseTensor> {
    let order = t.order();
    check_mode(order, k)?;
    let dims = t.shape().dims();
    if w.rows() != dims[k] {
        return Err(Error::ShapeMismatch(format!(
            "mode {} has extent {}, factor has {} rows",
            k,
            dims[k],
            w.rows()
        )));
    }
    let ik = dims[k];
    let jk = w.cols();
    let pre: usize = dims[..k].iter().product();
    let post: usize = dims[k + 1..].iter().product();
    let mut new_dims = dims.to_vec();
    new_dims[k] = jk;
    let mut out = DenseTensor::zeros(Shape::new(new_dims)?);
    for p2 in 0..post {
        for j in 0..jk {
            let dst = pre * (j + jk * p2);
            for i in 0..ik {
                let wij = w.get(i, j);
                if wij == 0.0 {
                    continue;
                }
                let src = pre * (i + ik * p2);
                for p1 in 0..pre {
                    out.values[dst + p1] += t.values[src + p1] * wij;
                }
            }
        }
    }
    Ok(out)
}

/// Mode-k product with a vector: contracts mode k away, dropping the order
/// by one. Requires order >= 2; a full contraction of an order-1 tensor is
/// just a dot product.
pub fn mode_product_vec(t: &DenseTensor, v: &[f64], k: usize) -> Result<DenseTensor> {
    let order = t.order();
    check_mode(order, k)?;
    if order < 2 {
        return Err(Error::InvalidArgument(
            "mode-vector product on an order-1 tensor collapses to a scalar; use a dot product"
                .into(),
        ));
    }
    let dims = t.shape().dims();
    if v.len() != dims[k] {
        return Err(Error::ShapeMismatch(format!(
            "mode {} has extent {}, vector has length {}",
            k,
            dims[k],
            v.len()
        )));
    }
    let (new_dims, values) = contract_mode(dims, t.values(), k, v);
    DenseTensor::new(Shape::new(new_dims)?, values)
}

/// Raw mode contraction on flat storage; returns the remaining dims (possibly
/// empty, in which case `values` holds the single scalar).
pub(crate) fn contract_mode(
    dims: &[usize],
    values: &[f64],
    k: usize,
    v: &[f64],
) -> (Vec<usize>, Vec<f64>) {
    let ik = dims[k];
    let pre: usize = dims[..k].iter().product();
    let post: usize = dims[k + 1..].iter().product();
    let mut out = vec![0.0; pre * post];
    for p2 in 0..post {
        for i in 0..ik {
            let w = v[i];
            if w == 0.0 {
                continue;
            }
            let src = pre * (i + ik * p2);
            let dst = pre * p2;
            for p1 in 0..pre {
                out[dst + p1] += values[src + p1] * w;
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims.remove(k);
    (new_dims, out)
}

/// Contracts every mode with its vector, producing a scalar.
pub fn full_contract(t: &DenseTensor, vectors: &[&[f64]]) -> Result<f64> {
    if vectors.len() != t.order() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} vectors, got {}",
            t.order(),
            vectors.len()
        )));
    }
    for (k, v) in vectors.iter().enumerate() {
        if v.len() != t.shape().dim(k) {
            return Err(Error::ShapeMismatch(format!(
                "mode {} has extent {}, vector has length {}",
                k,
                t.shape().dim(k),
                v.len()
            )));
        }
    }
    let mut dims = t.shape().dims().to_vec();
    let mut vals = t.values().to_vec();
    for v in vectors {
        let (d, w) = contract_mode(&dims, &vals, 0, v);
        dims = d;
        vals = w;
    }
    Ok(vals[0])
}

/// Applies one matrix per mode, ascending mode order. Products on distinct
/// modes commute, so the result does not depend on the order.
pub fn multi_mode_product(t: &DenseTensor, ws: &[Matrix]) -> Result<DenseTensor> {
    if ws.len() != t.order() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} factors, got {}",
            t.order(),
            ws.len()
        )));
    }
    let mut out = t.clone();
    for (k, w) in ws.iter().enumerate() {
        out = mode_product(&out, w, k)?;
    }
    Ok(out)
}

/// Multi-mode product evaluated directly from coordinate entries: each entry
/// contributes `v * outer(rows of the factors)`. Never materializes anything
/// larger than the result, so the cost is `nnz * prod_k cols(w_k)`.
pub fn multi_mode_product_sparse(x: &SparseTensor, ws: &[&Matrix]) -> Result<DenseTensor> {
    let order = x.order();
    if ws.len() != order {
        return Err(Error::ShapeMismatch(format!(
            "expected {} factors, got {}",
            order,
            ws.len()
        )));
    }
    for (k, w) in ws.iter().enumerate() {
        if w.rows() != x.shape().dim(k) {
            return Err(Error::ShapeMismatch(format!(
                "mode {} has extent {}, factor has {} rows",
                k,
                x.shape().dim(k),
                w.rows()
            )));
        }
    }
    let out_dims: Vec<usize> = ws.iter().map(|w| w.cols()).collect();
    let out_len: usize = out_dims.iter().product();
    let mut out = DenseTensor::zeros(Shape::new(out_dims.clone())?);
    let mut buf = Vec::with_capacity(out_len);
    let mut next = Vec::with_capacity(out_len);
    for (idx, v) in x.iter() {
        buf.clear();
        buf.push(v);
        for (k, w) in ws.iter().enumerate() {
            let jk = w.cols();
            next.clear();
            next.resize(buf.len() * jk, 0.0);
            for j in 0..jk {
                let f = w.get(idx[k], j);
                let dst = j * buf.len();
                for (u, &b) in buf.iter().enumerate() {
                    next[dst + u] = b * f;
                }
            }
            std::mem::swap(&mut buf, &mut next);
        }
        for (o, b) in out.values.iter_mut().zip(&buf) {
            *o += b;
        }
    }
    Ok(out)
}

/// Khatri-Rao product: column r is the Kronecker product of the r-th columns,
/// `a_r (x) b_r`, with b's index fastest.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "column counts differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows() * b.rows(), a.cols());
    for r in 0..a.cols() {
        let ac = a.col(r);
        let bc = b.col(r);
        let oc = out.col_mut(r);
        for (i, &av) in ac.iter().enumerate() {
            let base = i * bc.len();
            for (j, &bv) in bc.iter().enumerate() {
                oc[base + j] = av * bv;
            }
        }
    }
    Ok(out)
}

/// Appends a mode of extent `w.cols()`:
/// `out[i_1..i_K, j] = t[i_1..i_K] * w[i_k, j]`.
///
/// Column r of `matricize(out, k)` is the Kronecker product of row r of `w`
/// with column r of `matricize(t, k)` (the factor order follows from the
/// first-index-fastest vectorization, since the new mode is slowest).
pub fn tensor_times_kr(t: &DenseTensor, w: &Matrix, k: usize) -> Result<DenseTensor> {
    let order = t.order();
    check_mode(order, k)?;
    let dims = t.shape().dims();
    if w.rows() != dims[k] {
        return Err(Error::ShapeMismatch(format!(
            "mode {} has extent {}, factor has {} rows",
            k,
            dims[k],
            w.rows()
        )));
    }
    let j_new = w.cols();
    let mut new_dims = dims.to_vec();
    new_dims.push(j_new);
    let mut out = DenseTensor::zeros(Shape::new(new_dims)?);
    let n = t.values.len();
    let pre: usize = dims[..k].iter().product();
    let ik = dims[k];
    for j in 0..j_new {
        let dst = &mut out.values[j * n..(j + 1) * n];
        for (p, &tv) in t.values.iter().enumerate() {
            let i_k = (p / pre) % ik;
            dst[p] = tv * w.get(i_k, j);
        }
    }
    Ok(out)
}

/// Outer product: element `(i_1..i_K)` is the product of the vector entries.
pub fn outer(vectors: &[&[f64]]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("outer product needs >= 1 vector".into()));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let shape = Shape::new(dims)?;
    let mut values = vec![1.0];
    for v in vectors {
        let mut next = vec![0.0; values.len() * v.len()];
        for (j, &f) in v.iter().enumerate() {
            let base = j * values.len();
            for (u, &b) in values.iter().enumerate() {
                next[base + u] = b * f;
            }
        }
        values = next;
    }
    DenseTensor::new(shape, values)
}

pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.values().to_vec()
}

pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape().dims(),
            b.shape().dims()
        )));
    }
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum())
}

pub fn frob_norm(t: &DenseTensor) -> f64 {
    t.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> StdRng {
        StdRng::seed_from_u64(seed)
    }

    fn random_tensor(dims: &[usize], r: &mut StdRng) -> DenseTensor {
        let shape = Shape::new(dims.to_vec()).unwrap();
        let n = shape.num_elements() as usize;
        DenseTensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, r: &mut StdRng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn shape_rejects_degenerate() {
        assert!(Shape::new(vec![]).is_err());
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Shape::new(vec![1; 9]).is_err());
        assert!(Shape::new(vec![1]).is_ok());
    }

    #[test]
    fn matricize_cube() {
        // 2x2x2 tensor holding 1..8 in first-index-fastest order
        let t = DenseTensor::new(
            Shape::new(vec![2, 2, 2]).unwrap(),
            (1..=8).map(|v| v as f64).collect(),
        )
        .unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.rows(), 4);
        assert_eq!(m.cols(), 2);
        let expected = Matrix::from_rows(&[&[1., 2.], &[3., 4.], &[5., 6.], &[7., 8.]]);
        assert_eq!(m, expected);
    }

    #[test]
    fn matricize_single_mode_is_vec() {
        let t = DenseTensor::new(Shape::new(vec![4]).unwrap(), vec![1., 2., 3., 4.]).unwrap();
        let m = matricize(&t, 0).unwrap();
        // one scalar slice per column
        assert_eq!(m.rows(), 1);
        assert_eq!(m.cols(), 4);
        assert_eq!(m.row(0), vectorize(&t));
    }

    #[test]
    fn matricize_zero_tensor() {
        let t = DenseTensor::zeros(Shape::new(vec![3, 4]).unwrap());
        let m = matricize(&t, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 4));
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matricize_mode_out_of_range() {
        let t = DenseTensor::zeros(Shape::new(vec![2, 2]).unwrap());
        assert!(matches!(
            matricize(&t, 2),
            Err(Error::ModeOutOfRange { mode: 2, order: 2 })
        ));
    }

    #[test]
    fn mode_product_identity() {
        let mut r = rng(1);
        let t = random_tensor(&[3, 4, 2], &mut r);
        for k in 0..3 {
            let w = Matrix::identity(t.shape().dim(k));
            let out = mode_product(&t, &w, k).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_matches_matricization() {
        let mut r = rng(2);
        for dims in [vec![2, 3], vec![3, 2, 4], vec![2, 2, 2, 3]] {
            let t = random_tensor(&dims, &mut r);
            for k in 0..dims.len() {
                let w = random_matrix(dims[k], 2, &mut r);
                let out = mode_product(&t, &w, k).unwrap();
                let lhs = matricize(&out, k).unwrap();
                let rhs = matricize(&t, k).unwrap().matmul(&w);
                assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
            }
        }
    }

    #[test]
    fn mode_product_vector_collapses() {
        // t[.,.] with t[0,0]=1 t[1,0]=2 t[0,1]=3 t[1,1]=4; summing over mode 0
        // leaves (t[0,j] + t[1,j])? No: the stored layout is column-major, so
        // the displayed rows [[1,2],[3,4]] mean t[0,:]=(1,2), t[1,:]=(3,4).
        let t = DenseTensor::new(Shape::new(vec![2, 2]).unwrap(), vec![1., 3., 2., 4.]).unwrap();
        let out = mode_product_vec(&t, &[1.0, 1.0], 0).unwrap();
        assert_eq!(out.shape().dims(), &[2]);
        assert_eq!(out.values(), &[4.0, 6.0]);
    }

    #[test]
    fn chained_vector_products_equal_inner_with_outer() {
        let mut r = rng(3);
        let t = random_tensor(&[3, 2, 4], &mut r);
        let v1: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v2: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v3: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let s = full_contract(&t, &[&v1, &v2, &v3]).unwrap();
        let o = outer(&[&v1, &v2, &v3]).unwrap();
        let expect = inner(&t, &o).unwrap();
        assert!((s - expect).abs() <= 1e-12);
    }

    #[test]
    fn multi_mode_product_identity_and_order() {
        let mut r = rng(4);
        let t = random_tensor(&[3, 4], &mut r);
        let ids = vec![Matrix::identity(3), Matrix::identity(4)];
        assert_eq!(multi_mode_product(&t, &ids).unwrap(), t);

        let w1 = random_matrix(3, 2, &mut r);
        let w2 = random_matrix(4, 2, &mut r);
        let ab = mode_product(&mode_product(&t, &w1, 0).unwrap(), &w2, 1).unwrap();
        let ba = mode_product(&mode_product(&t, &w2, 1).unwrap(), &w1, 0).unwrap();
        assert!(
            ab.values()
                .iter()
                .zip(ba.values())
                .all(|(a, b)| (a - b).abs() <= 1e-12)
        );
    }

    #[test]
    fn multi_mode_product_brute_force() {
        let mut r = rng(5);
        let t = random_tensor(&[2, 3], &mut r);
        let w1 = random_matrix(2, 2, &mut r);
        let w2 = random_matrix(3, 2, &mut r);
        let out = multi_mode_product(&t, &[w1.clone(), w2.clone()]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for i1 in 0..2 {
                    for i2 in 0..3 {
                        s += t.get(&[i1, i2]) * w1.get(i1, a) * w2.get(i2, b);
                    }
                }
                assert!((out.get(&[a, b]) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sparse_multi_mode_matches_dense() {
        let mut r = rng(6);
        let shape = Shape::new(vec![4, 5]).unwrap();
        let mut entries = Vec::new();
        for _ in 0..7 {
            loop {
                let idx = vec![r.gen_range(0..4), r.gen_range(0..5)];
                if !entries.iter().any(|(e, _): &(Vec<usize>, f64)| *e == idx) {
                    entries.push((idx, r.gen_range(-1.0..1.0)));
                    break;
                }
            }
        }
        let x = SparseTensor::new(shape, entries).unwrap();
        let w1 = random_matrix(4, 2, &mut r);
        let w2 = random_matrix(5, 3, &mut r);
        let sparse = multi_mode_product_sparse(&x, &[&w1, &w2]).unwrap();
        let dense = multi_mode_product(&x.densify(), &[w1, w2]).unwrap();
        assert!(
            sparse
                .values()
                .iter()
                .zip(dense.values())
                .all(|(a, b)| (a - b).abs() <= 1e-12)
        );
    }

    #[test]
    fn khatri_rao_basic() {
        let a = Matrix::from_rows(&[&[1.], &[2.]]);
        let b = Matrix::from_rows(&[&[3.], &[4.]]);
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr.col(0), &[3., 4., 6., 8.]);
    }

    #[test]
    fn khatri_rao_ones_row_is_identity() {
        let mut r = rng(7);
        let b = random_matrix(3, 2, &mut r);
        let ones = Matrix::from_fn(1, 2, |_, _| 1.0);
        assert_eq!(khatri_rao(&ones, &b).unwrap(), b);
        assert_eq!(khatri_rao(&b, &ones).unwrap(), b);
    }

    #[test]
    fn khatri_rao_zero_and_mismatch() {
        let z = Matrix::zeros(2, 3);
        let b = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let kr = khatri_rao(&z, &b).unwrap();
        assert!(kr.values().iter().all(|&v| v == 0.0));
        let c = Matrix::zeros(2, 2);
        assert!(khatri_rao(&z, &c).is_err());
    }

    #[test]
    fn tensor_times_kr_singleton_column() {
        let mut r = rng(8);
        let t = random_tensor(&[3, 2], &mut r);
        let w = Matrix::from_fn(2, 1, |_, _| 1.0);
        let out = tensor_times_kr(&t, &w, 1).unwrap();
        assert_eq!(out.shape().dims(), &[3, 2, 1]);
        assert_eq!(out.values(), t.values());
    }

    #[test]
    fn tensor_times_kr_vector_expansion() {
        let t = DenseTensor::new(Shape::new(vec![2]).unwrap(), vec![2.0, 3.0]).unwrap();
        let w = Matrix::from_rows(&[&[1., 10.], &[2., 20.]]);
        let out = tensor_times_kr(&t, &w, 0).unwrap();
        assert_eq!(out.shape().dims(), &[2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.get(&[i, j]), t.get(&[i]) * w.get(i, j));
            }
        }
    }

    #[test]
    fn tensor_times_kr_matricization_columns() {
        let mut r = rng(9);
        let t = random_tensor(&[3, 4, 2], &mut r);
        let k = 1;
        let w = random_matrix(4, 3, &mut r);
        let out = tensor_times_kr(&t, &w, k).unwrap();
        let lhs = matricize(&out, k).unwrap();
        // new mode is appended last, hence slowest in the slice vec, so the
        // Khatri-Rao takes the factor rows first
        let rhs = khatri_rao(&w.transpose(), &matricize(&t, k).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn outer_inner_frob() {
        let o = outer(&[&[1., 2.], &[3., 4.]]).unwrap();
        assert_eq!(o.get(&[0, 0]), 3.0);
        assert_eq!(o.get(&[0, 1]), 4.0);
        assert_eq!(o.get(&[1, 0]), 6.0);
        assert_eq!(o.get(&[1, 1]), 8.0);

        let mut e = DenseTensor::zeros(Shape::new(vec![2, 2]).unwrap());
        e.set(&[1, 0], 1.0);
        assert_eq!(inner(&e, &e).unwrap(), 1.0);

        assert_eq!(frob_norm(&DenseTensor::zeros(Shape::new(vec![3]).unwrap())), 0.0);
    }

    #[test]
    fn sparse_constructor_validates() {
        let shape = Shape::new(vec![2, 2]).unwrap();
        assert!(SparseTensor::new(shape.clone(), vec![(vec![2, 0], 1.0)]).is_err());
        assert!(SparseTensor::new(shape.clone(), vec![(vec![0, 0], 0.0)]).is_err());
        assert!(SparseTensor::new(
            shape,
            vec![(vec![0, 0], 1.0), (vec![0, 0], 2.0)]
        )
        .is_err());
    }

    #[test]
    fn densify_sparsify_round_trip() {
        let mut r = rng(10);
        let mut t = random_tensor(&[3, 2, 2], &mut r);
        // plant some exact zeros
        t.values_mut()[0] = 0.0;
        t.values_mut()[5] = 0.0;
        assert_eq!(t.sparsify().densify(), t);
    }

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_rows(&[&[2., 1.], &[1., 3.]]);
        let x = a.solve(&[3., 5.]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_dims() -> impl Strategy<Value = Vec<usize>> {
            prop::collection::vec(1usize..4, 1..4)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn matricize_mode_product_consistent(dims in arb_dims(), seed in 0u64..1000) {
                let mut r = rng(seed);
                let t = random_tensor(&dims, &mut r);
                for k in 0..dims.len() {
                    let w = random_matrix(dims[k], r.gen_range(1..4), &mut r);
                    let out = mode_product(&t, &w, k).unwrap();
                    let lhs = matricize(&out, k).unwrap();
                    let rhs = matricize(&t, k).unwrap().matmul(&w);
                    prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
                }
            }

            #[test]
            fn sparsify_round_trips(dims in arb_dims(), seed in 0u64..1000) {
                let mut r = rng(seed);
                let mut t = random_tensor(&dims, &mut r);
                for v in t.values_mut().iter_mut() {
                    if r.gen_bool(0.4) {
                        *v = 0.0;
                    }
                }
                prop_assert_eq!(t.sparsify().densify(), t);
            }

            #[test]
            fn khatri_rao_columns_are_kronecker(
                i1 in 1usize..5, i2 in 1usize..4, cols in 1usize..4, seed in 0u64..1000
            ) {
                let mut r = rng(seed);
                let a = random_matrix(i1, cols, &mut r);
                let b = random_matrix(i2, cols, &mut r);
                let kr = khatri_rao(&a, &b).unwrap();
                for c in 0..cols {
                    for i in 0..i1 {
                        for j in 0..i2 {
                            prop_assert_eq!(kr.col(c)[i * i2 + j], a.get(i, c) * b.get(j, c));
                        }
                    }
                }
            }
        }
    }
}
