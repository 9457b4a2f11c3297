//! Real dense linear algebra: one-sided Jacobi SVD, symmetric eigen-solve and
//! pseudo-inverse.
//!
//! Jacobi is slower than bidiagonalisation but deterministic and accurate to
//! high relative precision, which is what the bond-profile tests rely on.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Upper bound on Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `m = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows × k` with orthonormal columns.
    pub u: DenseTensor<f64>,
    /// `k` singular values, non-negative and descending.
    pub s: Vec<f64>,
    /// `k × cols` with orthonormal rows.
    pub vt: DenseTensor<f64>,
}

impl Svd {
    /// Number of singular values strictly above `rel · s[0]`.
    pub fn rank(&self, rel: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&x| x > rel * top && x > 0.0).count()
    }

    /// Rebuilds `u · diag(s) · vt`.
    pub fn reconstruct(&self) -> DenseTensor<f64> {
        let mut us = self.u.clone();
        let k = self.s.len();
        for row in us.data_mut().chunks_exact_mut(k.max(1)) {
            for (x, &s) in row.iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

/// Singular value decomposition of a real matrix.
pub fn svd(m: &DenseTensor<f64>) -> Result<Svd> {
    if m.rank() != 2 {
        return Err(Error::Dimension(format!("svd needs a matrix, got shape {:?}", m.shape())));
    }
    if !m.all_finite() {
        return Err(Error::Numeric("svd input contains non-finite entries".into()));
    }
    let (rows, cols) = (m.rows(), m.cols());
    if rows >= cols {
        jacobi_tall(m.data(), rows, cols)
    } else {
        // Work on the transpose so the rotated dimension is the short one.
        let t = m.transpose()?;
        let Svd { u, s, vt } = jacobi_tall(t.data(), cols, rows)?;
        Ok(Svd { u: vt.transpose()?, s, vt: u.transpose()? })
    }
}

/// One-sided Jacobi for `rows ≥ cols`. Columns of the working copy are
/// rotated until mutually orthogonal; their norms are the singular values.
fn jacobi_tall(a: &[f64], rows: usize, cols: usize) -> Result<Svd> {
    // Column-major working copies make the inner loops contiguous.
    let mut w = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            w[j * rows + i] = a[i * cols + j];
        }
    }
    let mut v = vec![0.0; cols * cols];
    for j in 0..cols {
        v[j * cols + j] = 1.0;
    }
    let mut norms: Vec<f64> = (0..cols).map(|j| dot(col(&w, rows, j), col(&w, rows, j))).collect();
    let scale: f64 = norms.iter().sum();
    // Columns below eps·‖A‖ are numerically zero; rounding keeps their
    // relative off-diagonal above any tolerance, so they are not rotated.
    let tiny = f64::MIN_POSITIVE.max(scale * f64::EPSILON * f64::EPSILON);
    let tol = f64::EPSILON * (rows as f64).sqrt();

    let mut converged = cols < 2;
    let mut residual = 0.0f64;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::SvdNonConvergence { sweeps, residual });
        }
        sweeps += 1;
        residual = 0.0;
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                let gamma = dot(col(&w, rows, p), col(&w, rows, q));
                // Separate roots: the product underflows for tiny columns.
                let off = gamma.abs() / alpha.sqrt() / beta.sqrt();
                residual = residual.max(off);
                if off <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, rows, p, q, c, s);
                rotate(&mut v, cols, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // Refresh the running norms to stop rounding drift.
        for (j, n) in norms.iter_mut().enumerate() {
            *n = dot(col(&w, rows, j), col(&w, rows, j));
        }
        converged = !rotated;
    }

    let sv: Vec<f64> = norms.iter().map(|&n| n.max(0.0).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let top = sv[order.first().copied().unwrap_or(0)].max(0.0);
    let zero_cut = top * f64::EPSILON * (rows.max(cols) as f64) * 0.5;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sj = sv[j];
        if sj > zero_cut && sj > 0.0 {
            u_cols.push(col(&w, rows, j).iter().map(|x| x / sj).collect());
            s.push(sj);
        } else {
            u_cols.push(vec![0.0; rows]);
            s.push(if sj > 0.0 { sj } else { 0.0 });
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &missing, rows);

    let mut u = DenseTensor::zeros(vec![rows, cols]);
    for (k, c) in u_cols.iter().enumerate() {
        for i in 0..rows {
            u.data_mut()[i * cols + k] = c[i];
        }
    }
    let mut vt = DenseTensor::zeros(vec![cols, cols]);
    for (k, &j) in order.iter().enumerate() {
        vt.data_mut()[k * cols..(k + 1) * cols].copy_from_slice(col(&v, cols, j));
    }
    Ok(Svd { u, s, vt })
}

fn col(w: &[f64], rows: usize, j: usize) -> &[f64] {
    &w[j * rows..(j + 1) * rows]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(w: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = w.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], rows: usize) {
    let mut candidate = 0;
    for &slot in missing {
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt for numerical orthogonality.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || c.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let d = dot(&e, c);
                    for (x, y) in e.iter_mut().zip(c) {
                        *x -= d * y;
                    }
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 1e-8 {
                cols[slot] = e.iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// Eigen-decomposition of a real symmetric matrix, eigenvalues descending.
///
/// Returns `(values, vectors)` with eigenvectors stored as columns.
pub fn sym_eigen(m: &DenseTensor<f64>) -> Result<(Vec<f64>, DenseTensor<f64>)> {
    if m.rank() != 2 || m.rows() != m.cols() {
        return Err(Error::Dimension(format!("sym_eigen needs a square matrix, got {:?}", m.shape())));
    }
    let n = m.rows();
    // Shift to positive definite so singular values equal shifted eigenvalues.
    let shift = m.frobenius_norm() + 1.0;
    let mut a = m.clone();
    for i in 0..n {
        a.data_mut()[i * n + i] += shift;
    }
    let d = svd(&a)?;
    let values = d.s.iter().map(|s| s - shift).collect();
    Ok((values, d.u))
}

/// Moore-Penrose pseudo-inverse, discarding singular values below
/// `rel_cutoff · σ_max`.
pub fn pinv(m: &DenseTensor<f64>, rel_cutoff: f64) -> Result<DenseTensor<f64>> {
    let d = svd(m)?;
    let top = d.s.first().copied().unwrap_or(0.0);
    let k = d.s.len();
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = DenseTensor::zeros(vec![cols, rows]);
    for (r, &s) in d.s.iter().enumerate() {
        if s <= rel_cutoff * top || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..cols {
            let vi = d.vt.data()[r * cols + i] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..rows {
                out.data_mut()[i * rows + j] += vi * d.u.data()[j * k + r];
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis (as columns) of the null space of a symmetric PSD
/// matrix, using eigenvalues below `tol · λ_max`.
pub fn null_space_psd(m: &DenseTensor<f64>, tol: f64) -> Result<Vec<Vec<f64>>> {
    let d = svd(m)?;
    let n = m.rows();
    let top = d.s.first().copied().unwrap_or(0.0);
    let k = d.s.len();
    Ok((0..k)
        .filter(|&r| d.s[r] <= tol * top.max(1.0))
        .map(|r| (0..n).map(|i| d.u.data()[i * k + r]).collect())
        .collect())
}
