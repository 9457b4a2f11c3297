//! Matrix product states with a per-site normalization ledger.
//!
//! The represented vector is `(Π ledger) × contraction(sites)`. Keeping the
//! large or small overall scale in the ledger lets site tensors stay O(1)
//! for hundreds of sites.

use serde::{Deserialize, Serialize};

use crate::commutant::PGate;
use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::tensor::{contract, DenseTensor};

/// Default relative singular-value cutoff for lossless compression.
pub const DEFAULT_CUTOFF: f64 = 1e-12;

/// Singular values below this fraction of the largest are treated as exact
/// zeros when splitting a freshly applied gate.
const SPLIT_CUTOFF: f64 = 1e-15;

/// Largest dense expansion [`Mps::to_dense`] will build.
pub const DENSE_LIMIT: usize = 1 << 24;

/// Multiplicative per-site scale factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormLedger {
    pub factors: Vec<f64>,
}

impl NormLedger {
    pub fn ones(n: usize) -> Self {
        NormLedger { factors: vec![1.0; n] }
    }

    pub fn log_product(&self) -> f64 {
        self.factors.iter().map(|f| f.ln()).sum()
    }

    pub fn product(&self) -> f64 {
        self.log_product().exp()
    }

    /// True when every entry is finite and strictly positive.
    pub fn is_valid(&self) -> bool {
        self.factors.iter().all(|&f| f.is_finite() && f > 0.0)
    }

    /// Smallest and largest entries.
    pub fn range(&self) -> (f64, f64) {
        self.factors
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| (lo.min(f), hi.max(f)))
    }
}

/// A contiguous interval of sites, 0-based and inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
}

impl Region {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument(format!("empty region {start}..={end}")));
        }
        Ok(Region { start, end })
    }

    /// `Q_j = {j}` (1-based `j`).
    pub fn single(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidArgument("qubit indices are 1-based".into()));
        }
        Region::new(j - 1, j - 1)
    }

    /// `E_j = {1, …, j}`.
    pub fn edge(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidArgument("edge region needs j ≥ 1".into()));
        }
        Region::new(0, j - 1)
    }

    /// `M_j = {n/2 − j, …, n/2 + j}` clipped to `1..=n`.
    pub fn middle(j: usize, n: usize) -> Result<Self> {
        let c = n / 2;
        if c == 0 {
            return Err(Error::InvalidArgument("middle region needs n ≥ 2".into()));
        }
        let lo = c.saturating_sub(j).max(1);
        let hi = (c + j).min(n);
        Region::new(lo - 1, hi - 1)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Result of an MPS overlap, with the per-site renormalization factors.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerProduct {
    pub value: f64,
    pub log_abs: f64,
    pub sign: f64,
    pub trace_ledger: NormLedger,
}

/// Open-boundary MPS over real site tensors of shape `(left, phys, right)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mps {
    sites: Vec<DenseTensor<f64>>,
    ledger: NormLedger,
}

fn dims3(t: &DenseTensor<f64>) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2])
}

fn take_cols(m: &DenseTensor<f64>, k: usize) -> DenseTensor<f64> {
    let (r, c) = (m.rows(), m.cols());
    DenseTensor::from_fn(vec![r, k], |ix| m.data()[ix[0] * c + ix[1]])
}

fn take_rows(m: &DenseTensor<f64>, k: usize) -> DenseTensor<f64> {
    let c = m.cols();
    DenseTensor::new(vec![k, c], m.data()[..k * c].to_vec()).expect("prefix rows")
}

impl Mps {
    pub fn new(sites: Vec<DenseTensor<f64>>, ledger: NormLedger) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("an MPS needs at least one site".into()));
        }
        if ledger.factors.len() != sites.len() {
            return Err(Error::Dimension("ledger length differs from site count".into()));
        }
        if !ledger.is_valid() {
            return Err(Error::Numeric("ledger entries must be positive and finite".into()));
        }
        let mut prev = 1;
        for (j, s) in sites.iter().enumerate() {
            if s.rank() != 3 || s.shape()[0] != prev {
                return Err(Error::Dimension(format!("site {j} has shape {:?}", s.shape())));
            }
            prev = s.shape()[2];
        }
        if prev != 1 {
            return Err(Error::Dimension("last right bond must be 1".into()));
        }
        Ok(Mps { sites, ledger })
    }

    /// A bond-1 MPS. Each site tensor is the unit-normalized site vector;
    /// the vector norms and `|coefficient|` go to the ledger and the sign of
    /// the coefficient to the first site.
    pub fn product(site_vectors: &[Vec<f64>], coefficient: f64) -> Result<Self> {
        if site_vectors.is_empty() {
            return Err(Error::InvalidArgument("no sites".into()));
        }
        if coefficient == 0.0 || !coefficient.is_finite() {
            return Err(Error::InvalidArgument(format!("coefficient {coefficient} must be nonzero and finite")));
        }
        let mut sites = Vec::with_capacity(site_vectors.len());
        let mut factors = Vec::with_capacity(site_vectors.len());
        for (j, v) in site_vectors.iter().enumerate() {
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nv == 0.0 || !nv.is_finite() {
                return Err(Error::InvalidArgument(format!("site vector {j} is zero")));
            }
            let sign = if j == 0 { coefficient.signum() } else { 1.0 };
            let data = v.iter().map(|x| sign * x / nv).collect();
            sites.push(DenseTensor::new(vec![1, v.len(), 1], data)?);
            factors.push(if j == 0 { nv * coefficient.abs() } else { nv });
        }
        Mps::new(sites, NormLedger { factors })
    }

    /// The zero vector as a bond-1 MPS.
    pub fn zero(phys: &[usize]) -> Self {
        Mps {
            sites: phys.iter().map(|&d| DenseTensor::zeros(vec![1, d, 1])).collect(),
            ledger: NormLedger::ones(phys.len()),
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[DenseTensor<f64>] {
        &self.sites
    }

    pub fn ledger(&self) -> &NormLedger {
        &self.ledger
    }

    pub fn physical_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.shape()[1]).collect()
    }

    /// Internal bond dimensions, `n − 1` entries.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites[..self.len() - 1].iter().map(|s| s.shape()[2]).collect()
    }

    /// Largest internal bond dimension (1 for a single site).
    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Full vector, site 1 most significant.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let total: usize = self.physical_dims().iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
        if total > DENSE_LIMIT {
            return Err(Error::SizeGuard(format!("dense expansion of {total} entries")));
        }
        let mut acc = DenseTensor::new(vec![1, 1], vec![1.0])?;
        for s in &self.sites {
            let (_, d, r) = dims3(s);
            let rows = acc.rows();
            acc = contract(&acc, s, &[(1, 0)])?.reshape(vec![rows * d, r])?;
        }
        let scale = self.ledger.product();
        Ok(acc.into_data().into_iter().map(|x| x * scale).collect())
    }

    /// Applies a two-site matrix `g[(o1,o2)][(i1,i2)]` to sites `a` and `b`
    /// (0-based, either order, any distance).
    pub fn apply_two_site(&self, g: &DenseTensor<f64>, dims: [usize; 2], a: usize, b: usize) -> Result<Mps> {
        let n = self.len();
        if a == b || a >= n || b >= n {
            return Err(Error::InvalidArgument(format!("bad site pair ({a}, {b}) for n = {n}")));
        }
        let phys = self.physical_dims();
        if phys[a] != dims[0] || phys[b] != dims[1] || g.shape() != [dims[0] * dims[1], dims[0] * dims[1]] {
            return Err(Error::Dimension(format!(
                "gate with legs {dims:?} on sites with dims ({}, {})",
                phys[a], phys[b]
            )));
        }
        if a > b {
            let [d1, d2] = dims;
            let n2 = d1 * d2;
            // new index x_b·d1 + x_a  ->  old index x_a·d2 + x_b
            let perm = |i: usize| (i % d1) * d2 + i / d1;
            let swapped = DenseTensor::from_fn(vec![n2, n2], |ix| g.get(&[perm(ix[0]), perm(ix[1])]));
            return self.apply_two_site(&swapped, [d2, d1], b, a);
        }
        if b == a + 1 {
            self.apply_adjacent(g, dims, a)
        } else {
            self.apply_routed(g, dims, a, b)
        }
    }

    /// Applies a P-gate to qubits `(a, b)`, 0-based, in the gate's leg order.
    pub fn apply_pgate(&self, gate: &PGate, a: usize, b: usize) -> Result<Mps> {
        self.apply_two_site(gate.matrix(), gate.dims(), a, b)
    }

    fn apply_adjacent(&self, g: &DenseTensor<f64>, dims: [usize; 2], a: usize) -> Result<Mps> {
        let [d1, d2] = dims;
        let (l, _, _) = dims3(&self.sites[a]);
        let (_, _, r) = dims3(&self.sites[a + 1]);
        // theta[l, i1, i2, r]
        let theta = contract(&self.sites[a], &self.sites[a + 1], &[(2, 0)])?;
        let g4 = g.clone().reshape(vec![d1, d2, d1, d2])?;
        // [o1, o2, l, r] -> [l, o1, o2, r]
        let out = contract(&g4, &theta, &[(2, 1), (3, 2)])?.permute(&[2, 0, 1, 3])?;
        let m = out.reshape(vec![l * d1, d2 * r])?;
        let dec = svd(&m)?;
        let top = dec.s.first().copied().unwrap_or(0.0);
        let k = dec.s.iter().filter(|&&s| s > SPLIT_CUTOFF * top && s > 0.0).count().max(1);
        let left = take_cols(&dec.u, k).reshape(vec![l, d1, k])?;
        let mut right = take_rows(&dec.vt, k);
        for (row, &s) in right.data_mut().chunks_exact_mut(d2 * r).zip(&dec.s) {
            for x in row {
                *x *= s;
            }
        }
        let mut sites = self.sites.clone();
        sites[a] = left;
        sites[a + 1] = right.reshape(vec![k, d2, r])?;
        Ok(Mps { sites, ledger: self.ledger.clone() })
    }

    /// Non-adjacent gate: operator-Schmidt decomposition routed through an
    /// identity MPO on the sites in between.
    fn apply_routed(&self, g: &DenseTensor<f64>, dims: [usize; 2], a: usize, b: usize) -> Result<Mps> {
        let [d1, d2] = dims;
        // g[(o1 o2),(i1 i2)] -> [(o1 i1),(o2 i2)]
        let m = g
            .clone()
            .reshape(vec![d1, d2, d1, d2])?
            .permute(&[0, 2, 1, 3])?
            .reshape(vec![d1 * d1, d2 * d2])?;
        let dec = svd(&m)?;
        let top = dec.s.first().copied().unwrap_or(0.0);
        let k = dec.s.iter().filter(|&&s| s > 1e-14 * top && s > 0.0).count().max(1);
        // A[k][o1][i1], B[k][o2][i2]
        let ucols = dec.u.cols();
        let mut aop = DenseTensor::zeros(vec![k, d1, d1]);
        for kk in 0..k {
            let w = dec.s[kk].sqrt();
            for x in 0..d1 * d1 {
                aop.data_mut()[kk * d1 * d1 + x] = dec.u.data()[x * ucols + kk] * w;
            }
        }
        let mut bop = DenseTensor::zeros(vec![k, d2, d2]);
        for kk in 0..k {
            let w = dec.s[kk].sqrt();
            for x in 0..d2 * d2 {
                bop.data_mut()[kk * d2 * d2 + x] = dec.vt.data()[kk * d2 * d2 + x] * w;
            }
        }
        let mut sites = self.sites.clone();
        // site a: [k, o, i] x [l, i, r] -> [k, o, l, r] -> [l, o, r, k]
        let (l, _, r) = dims3(&sites[a]);
        sites[a] = contract(&aop, &sites[a], &[(2, 1)])?.permute(&[2, 1, 3, 0])?.reshape(vec![l, d1, r * k])?;
        for site in sites.iter_mut().take(b).skip(a + 1) {
            let (l, d, r) = dims3(site);
            let src = site.data();
            let mut out = vec![0.0; l * k * d * r * k];
            for li in 0..l {
                for kk in 0..k {
                    for di in 0..d {
                        for ri in 0..r {
                            let dst = (((li * k + kk) * d + di) * r + ri) * k + kk;
                            out[dst] = src[(li * d + di) * r + ri];
                        }
                    }
                }
            }
            *site = DenseTensor::new(vec![l * k, d, r * k], out)?;
        }
        // site b: [k, o, i] x [l, i, r] -> [k, o, l, r] -> [l, k, o, r]
        let (l, _, r) = dims3(&sites[b]);
        sites[b] = contract(&bop, &sites[b], &[(2, 1)])?.permute(&[2, 0, 1, 3])?.reshape(vec![l * k, d2, r])?;
        Ok(Mps { sites, ledger: self.ledger.clone() })
    }

    /// Lossless compression: a left-to-right orthonormalizing sweep followed
    /// by a right-to-left sweep that truncates Schmidt values below
    /// `rel_cutoff · σ_max`. Singular-value vectors are normalized and their
    /// norms accumulated; the total scale is then spread evenly over the
    /// ledger so every entry stays O(1). The result is right-canonical with
    /// the first site carrying the sign.
    pub fn sweep_compress(&self, rel_cutoff: f64) -> Result<Mps> {
        if !(rel_cutoff >= 0.0) {
            return Err(Error::InvalidArgument(format!("cutoff {rel_cutoff} must be ≥ 0")));
        }
        let n = self.len();
        let phys = self.physical_dims();
        let mut sites = self.sites.clone();
        let mut log_norm = self.ledger.log_product();

        for j in 0..n.saturating_sub(1) {
            let (l, d, r) = dims3(&sites[j]);
            let dec = svd(&sites[j].clone().reshape(vec![l * d, r])?)?;
            let k = dec.s.iter().filter(|&&s| s > 0.0).count();
            if k == 0 {
                return Ok(Mps::zero(&phys));
            }
            let scale = dec.s[..k].iter().map(|s| s * s).sum::<f64>().sqrt();
            log_norm += scale.ln();
            sites[j] = take_cols(&dec.u, k).reshape(vec![l, d, k])?;
            let mut carry = take_rows(&dec.vt, k);
            for (row, &s) in carry.data_mut().chunks_exact_mut(r).zip(&dec.s) {
                for x in row {
                    *x *= s / scale;
                }
            }
            sites[j + 1] = contract(&carry, &sites[j + 1], &[(1, 0)])?;
        }
        let last = sites[n - 1].frobenius_norm();
        if last == 0.0 {
            return Ok(Mps::zero(&phys));
        }
        log_norm += last.ln();
        sites[n - 1].scale_in_place(1.0 / last);

        for j in (1..n).rev() {
            let (l, d, r) = dims3(&sites[j]);
            let dec = svd(&sites[j].clone().reshape(vec![l, d * r])?)?;
            let top = dec.s.first().copied().unwrap_or(0.0);
            if top == 0.0 {
                return Ok(Mps::zero(&phys));
            }
            let k = dec.s.iter().filter(|&&s| s > rel_cutoff * top && s > 0.0).count().max(1);
            let scale = dec.s[..k].iter().map(|s| s * s).sum::<f64>().sqrt();
            log_norm += scale.ln();
            sites[j] = take_rows(&dec.vt, k).reshape(vec![k, d, r])?;
            let mut carry = take_cols(&dec.u, k);
            let kk = k;
            for row in carry.data_mut().chunks_exact_mut(kk) {
                for (x, &s) in row.iter_mut().zip(&dec.s) {
                    *x *= s / scale;
                }
            }
            sites[j - 1] = contract(&sites[j - 1], &carry, &[(2, 0)])?;
        }
        let first = sites[0].frobenius_norm();
        if first == 0.0 {
            return Ok(Mps::zero(&phys));
        }
        log_norm += first.ln();
        sites[0].scale_in_place(1.0 / first);

        let each = (log_norm / n as f64).exp();
        if !each.is_finite() || each == 0.0 {
            return Err(Error::Numeric(format!("ledger scale overflow (log norm {log_norm})")));
        }
        Ok(Mps { sites, ledger: NormLedger { factors: vec![each; n] } })
    }

    /// Rescales site tensors so that site `j` has Frobenius norm
    /// `√χ_right(j)` (the last site 1), moving the factors into the ledger.
    pub fn balance_sites(&self) -> Mps {
        let n = self.len();
        let mut out = self.clone();
        for j in 0..n {
            let target = if j + 1 == n { 1.0 } else { (out.sites[j].shape()[2] as f64).sqrt() };
            let norm = out.sites[j].frobenius_norm();
            if norm == 0.0 {
                continue;
            }
            let f = norm / target;
            out.sites[j].scale_in_place(1.0 / f);
            out.ledger.factors[j] *= f;
        }
        out
    }

    /// Multiplies the represented vector by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Result<Mps> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("scale {alpha} must be nonzero and finite")));
        }
        let mut out = self.clone();
        out.ledger.factors[0] *= alpha.abs();
        if alpha < 0.0 {
            out.sites[0].scale_in_place(-1.0);
        }
        Ok(out)
    }

    /// Euclidean norm of the represented vector.
    pub fn norm(&self) -> Result<f64> {
        let ip = inner_product(self, self)?;
        Ok((0.5 * ip.log_abs).exp() * if ip.value == 0.0 { 0.0 } else { 1.0 })
    }

    /// The same vector scaled to unit 2-norm, in right-canonical form with an
    /// all-ones ledger.
    pub fn normalize_to_state(&self) -> Result<Mps> {
        let c = self.sweep_compress(1e-14)?;
        if c.sites.iter().all(|s| s.max_abs() == 0.0) {
            return Err(Error::InvalidArgument("cannot normalize the zero vector".into()));
        }
        Ok(Mps { sites: c.sites, ledger: NormLedger::ones(self.len()) })
    }

    fn check_normalized(&self) -> Result<()> {
        let n = self.norm()?;
        if (n - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("state is not normalized (norm {n})")));
        }
        Ok(())
    }

    /// Eigenvalues of the reduced density matrix on `region`, descending.
    pub fn reduced_spectrum(&self, region: Region) -> Result<Vec<f64>> {
        self.check_normalized()?;
        let n = self.len();
        if region.end >= n {
            return Err(Error::InvalidArgument(format!("region {region:?} outside {n} sites")));
        }
        if region.start == 0 && region.end == n - 1 {
            return Ok(vec![1.0]);
        }
        let sites = self.mixed_canonical(region.start)?;
        let scale = self.ledger.product();
        let chi_a = sites[region.start].shape()[0];
        let chi_b = sites[region.end].shape()[2];
        let dense_dim = (region.start..=region.end)
            .map(|j| sites[j].shape()[1])
            .try_fold(1usize, |acc, d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        let eig = if dense_dim <= chi_a * chi_b && dense_dim <= 4096 {
            // psi[l, phys..., r] as a (phys) x (l r) matrix; ρ = M Mᵀ.
            let mut acc = sites[region.start].clone(); // [l, D, r]
            for j in region.start + 1..=region.end {
                let (l, dd, _) = dims3(&acc);
                let (_, d, r) = dims3(&sites[j]);
                acc = contract(&acc, &sites[j], &[(2, 0)])?.reshape(vec![l, dd * d, r])?;
            }
            let (l, dd, r) = dims3(&acc);
            let m = acc.permute(&[1, 0, 2])?.reshape(vec![dd, l * r])?;
            svd(&m)?.s.into_iter().map(|s| s * s * scale * scale).collect::<Vec<_>>()
        } else {
            // Gram matrix over (l, r) via a transfer contraction.
            let mut x = DenseTensor::from_fn(vec![chi_a, chi_a, chi_a, chi_a], |ix| {
                if ix[0] == ix[2] && ix[1] == ix[3] { 1.0 } else { 0.0 }
            });
            for j in region.start..=region.end {
                // x[l, l', m, m'] A[m, d, r] A[m', d, r'] -> [l, l', r, r']
                let t1 = contract(&x, &sites[j], &[(2, 0)])?; // [l, l', m', d, r]
                x = contract(&t1, &sites[j], &[(2, 0), (3, 1)])?; // [l, l', r, r']
            }
            let g = x.permute(&[0, 2, 1, 3])?.reshape(vec![chi_a * chi_b, chi_a * chi_b])?;
            svd(&g)?.s.into_iter().map(|s| s * scale * scale).collect()
        };
        Ok(eig)
    }

    /// Von Neumann entropy (natural log) of the reduced state on `region`.
    pub fn entropy_vn(&self, region: Region) -> Result<f64> {
        Ok(vn_of(&self.reduced_spectrum(region)?))
    }

    /// Second Rényi entropy `−½ log Tr[ρ²]` of the reduced state on `region`.
    pub fn entropy_renyi2(&self, region: Region) -> Result<f64> {
        Ok(renyi2_of(&self.reduced_spectrum(region)?))
    }

    /// Spectra of every single-site reduced state `ρ_{Q_j}` and of every
    /// edge cut `ρ_{E_j}` (`j = 1..n`), from one canonical sweep.
    pub fn sweep_spectra(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_normalized()?;
        let c = self.sweep_compress(1e-14)?;
        let mut sites = c.sites;
        let scale = c.ledger.product() / self.ledger.product();
        sites[0].scale_in_place(scale);
        let n = sites.len();
        let mut singles = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(n);
        for j in 0..n {
            let (l, d, r) = dims3(&sites[j]);
            let dec = svd(&sites[j].clone().reshape(vec![l * d, r])?)?;
            edges.push(dec.s.iter().map(|s| s * s).collect());
            let m = sites[j].permute(&[1, 0, 2])?.reshape(vec![d, l * r])?;
            singles.push(svd(&m)?.s.into_iter().map(|s| s * s).collect());
            if j + 1 < n {
                let k = dec.s.len();
                sites[j] = dec.u.reshape(vec![l, d, k])?;
                let mut carry = dec.vt;
                for (row, &s) in carry.data_mut().chunks_exact_mut(r).zip(&dec.s) {
                    for x in row {
                        *x *= s;
                    }
                }
                sites[j + 1] = contract(&carry, &sites[j + 1], &[(1, 0)])?;
            }
        }
        Ok((singles, edges))
    }

    /// Site tensors with everything left of `center` left-orthonormal and
    /// everything right of it right-orthonormal.
    fn mixed_canonical(&self, center: usize) -> Result<Vec<DenseTensor<f64>>> {
        let c = self.sweep_compress(1e-14)?;
        let mut sites = c.sites;
        let scale = c.ledger.product() / self.ledger.product();
        sites[0].scale_in_place(scale);
        for j in 0..center {
            let (l, d, r) = dims3(&sites[j]);
            let dec = svd(&sites[j].clone().reshape(vec![l * d, r])?)?;
            let k = dec.s.len();
            sites[j] = dec.u.reshape(vec![l, d, k])?;
            let mut carry = dec.vt;
            for (row, &s) in carry.data_mut().chunks_exact_mut(r).zip(&dec.s) {
                for x in row {
                    *x *= s;
                }
            }
            sites[j + 1] = contract(&carry, &sites[j + 1], &[(1, 0)])?;
        }
        Ok(sites)
    }
}

/// `−Σ λ log λ` (natural log) of a spectrum.
pub fn vn_of(eig: &[f64]) -> f64 {
    eig.iter().filter(|&&l| l > 0.0).map(|&l| -l * l.ln()).sum::<f64>().max(0.0)
}

/// `−½ log Σ λ²` of a spectrum.
pub fn renyi2_of(eig: &[f64]) -> f64 {
    let p2: f64 = eig.iter().map(|l| l * l).sum();
    (-0.5 * p2.ln()).max(0.0)
}

/// `⟨bra|ket⟩` by a left-to-right sweep, renormalizing the environment at
/// every site into the trace ledger.
pub fn inner_product(bra: &Mps, ket: &Mps) -> Result<InnerProduct> {
    let n = bra.len();
    if ket.len() != n || bra.physical_dims() != ket.physical_dims() {
        return Err(Error::Dimension(format!(
            "inner product of MPS with dims {:?} and {:?}",
            bra.physical_dims(),
            ket.physical_dims()
        )));
    }
    let mut env = DenseTensor::new(vec![1, 1], vec![1.0])?;
    let mut factors = Vec::with_capacity(n);
    let mut log_abs = bra.ledger.log_product() + ket.ledger.log_product();
    let mut zero = false;
    for j in 0..n {
        if zero {
            factors.push(1.0);
            continue;
        }
        let t1 = contract(&env, &ket.sites[j], &[(1, 0)])?; // [a, d, b']
        env = contract(&bra.sites[j], &t1, &[(0, 0), (1, 1)])?; // [a', b']
        let m = env.max_abs();
        if m == 0.0 || !m.is_finite() {
            if !m.is_finite() {
                return Err(Error::Numeric("non-finite environment in inner product".into()));
            }
            zero = true;
            factors.push(1.0);
            continue;
        }
        env.scale_in_place(1.0 / m);
        log_abs += m.ln();
        factors.push(m);
    }
    let last = if zero { 0.0 } else { env.data()[0] };
    let sign = if last > 0.0 {
        1.0
    } else if last < 0.0 {
        -1.0
    } else {
        0.0
    };
    let log_abs = if last == 0.0 { f64::NEG_INFINITY } else { log_abs + last.abs().ln() };
    let value = if sign == 0.0 { 0.0 } else { sign * log_abs.exp() };
    Ok(InnerProduct { value, log_abs, sign, trace_ledger: NormLedger { factors } })
}

/// Bond-1 MPS from site vectors and an overall coefficient.
pub fn product_mps(site_vectors: &[Vec<f64>], coefficient: f64) -> Result<Mps> {
    Mps::product(site_vectors, coefficient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commutant::pgate_u4_t2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mps(phys: &[usize], chi: usize, seed: u64) -> Mps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = phys.len();
        let mut sites = Vec::new();
        for (j, &d) in phys.iter().enumerate() {
            let l = if j == 0 { 1 } else { chi };
            let r = if j + 1 == n { 1 } else { chi };
            sites.push(DenseTensor::from_fn(vec![l, d, r], |_| rng.random_range(-1.0..1.0)));
        }
        Mps::new(sites, NormLedger::ones(n)).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn product_constructions() {
        let m = Mps::product(&[vec![0.0, 1.0]], 1.0).unwrap();
        assert_eq!(m.to_dense().unwrap(), vec![0.0, 1.0]);
        let id = Mps::product(&[vec![2.0, 0.0], vec![2.0, 0.0]], 1.0).unwrap();
        assert_eq!(id.max_bond(), 1);
        assert!(close(&id.to_dense().unwrap(), &[4.0, 0.0, 0.0, 0.0], 1e-14));
        assert!(Mps::product(&[vec![0.0, 0.0]], 1.0).is_err());
        let neg = Mps::product(&[vec![1.0], vec![3.0]], -0.5).unwrap();
        assert!(close(&neg.to_dense().unwrap(), &[-1.5], 1e-15));
        assert!(neg.ledger().is_valid());
    }

    #[test]
    fn toy_gate_on_product_state() {
        // (1/3)|S⟩⟩|𝟙⟩⟩ in the orthonormal basis: S = 2√3 e_S, 𝟙 = 2 e_𝟙.
        let s3 = 3f64.sqrt();
        let m = Mps::product(&[vec![0.0, 2.0 * s3], vec![2.0, 0.0]], 1.0 / 3.0).unwrap();
        let out = m.apply_pgate(&pgate_u4_t2(), 0, 1).unwrap().to_dense().unwrap();
        // (1/15)(|S𝟙⟩⟩ + |𝟙S⟩⟩ + |SS⟩⟩)
        let want = [0.0, 4.0 * s3 / 15.0, 4.0 * s3 / 15.0, 12.0 / 15.0];
        assert!(close(&out, &want, 1e-14), "{out:?}");
    }

    fn dense_apply(v: &[f64], g: &DenseTensor<f64>, phys: &[usize], a: usize, b: usize) -> Vec<f64> {
        let total: usize = phys.iter().product();
        let mut strides = vec![1; phys.len()];
        for j in (0..phys.len() - 1).rev() {
            strides[j] = strides[j + 1] * phys[j + 1];
        }
        let (da, db) = (phys[a], phys[b]);
        let mut out = vec![0.0; total];
        for idx in 0..total {
            let ia = (idx / strides[a]) % da;
            let ib = (idx / strides[b]) % db;
            let base = idx - ia * strides[a] - ib * strides[b];
            for oa in 0..da {
                for ob in 0..db {
                    out[base + oa * strides[a] + ob * strides[b]] += g.get(&[oa * db + ob, ia * db + ib]) * v[idx];
                }
            }
        }
        out
    }

    #[test]
    fn gates_match_dense_application() {
        let phys = [2, 3, 2, 3];
        let m = random_mps(&phys, 3, 5);
        let v = m.to_dense().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (a, b) in [(0, 1), (1, 2), (2, 1), (0, 3), (3, 0), (0, 2)] {
            let d = phys[a] * phys[b];
            let g = DenseTensor::from_fn(vec![d, d], |_| rng.random_range(-1.0..1.0));
            let got = m.apply_two_site(&g, [phys[a], phys[b]], a, b).unwrap().to_dense().unwrap();
            let want = dense_apply(&v, &g, &phys, a, b);
            assert!(close(&got, &want, 1e-12), "({a},{b})");
        }
    }

    #[test]
    fn identity_gate_is_noop() {
        let m = random_mps(&[2, 2, 2], 2, 1);
        let out = m.apply_two_site(&DenseTensor::identity(4), [2, 2], 0, 1).unwrap();
        assert!(close(&out.to_dense().unwrap(), &m.to_dense().unwrap(), 1e-14));
    }

    #[test]
    fn compression_preserves_overlaps() {
        let m = random_mps(&[2, 3, 2, 3, 2, 3], 8, 3);
        let p = Mps::product(&[vec![0.3, 1.0], vec![1.0, -0.2, 0.5], vec![0.7, 0.1], vec![0.2, 0.2, 1.0], vec![1.0, 1.0], vec![0.5, -1.0, 0.1]], 1.0).unwrap();
        let before = inner_product(&p, &m).unwrap().value;
        let c = m.sweep_compress(DEFAULT_CUTOFF).unwrap();
        let after = inner_product(&p, &c).unwrap().value;
        assert!(((before - after) / before).abs() < 1e-10);
        assert_eq!(c.bond_dims(), vec![2, 6, 8, 6, 3]);
        for s in c.sites() {
            assert!(s.frobenius_norm() < 10.0);
        }
    }

    #[test]
    fn rank_one_sum_compresses_to_bond_one() {
        // |p⟩ + |p⟩ as a bond-2 MPS.
        let v = [vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 1.0]];
        let sites = vec![
            DenseTensor::new(vec![1, 2, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap(),
            DenseTensor::from_fn(vec![2, 2, 2], |ix| if ix[0] == ix[2] { v[1][ix[1]] } else { 0.0 }),
            DenseTensor::from_fn(vec![2, 2, 1], |ix| v[2][ix[1]]),
        ];
        let m = Mps::new(sites, NormLedger::ones(3)).unwrap();
        let c = m.sweep_compress(DEFAULT_CUTOFF).unwrap();
        assert_eq!(c.max_bond(), 1);
        assert!(close(&c.to_dense().unwrap(), &m.to_dense().unwrap(), 1e-13));
    }

    #[test]
    fn zero_vector_compresses_to_bond_one() {
        let sites = vec![DenseTensor::zeros(vec![1, 2, 2]), DenseTensor::zeros(vec![2, 2, 1])];
        let c = Mps::new(sites, NormLedger::ones(2)).unwrap().sweep_compress(DEFAULT_CUTOFF).unwrap();
        assert_eq!(c.max_bond(), 1);
        assert_eq!(c.ledger().factors, vec![1.0, 1.0]);
        assert!(c.normalize_to_state().is_err());
    }

    #[test]
    fn product_compression_keeps_bonds() {
        let m = Mps::product(&[vec![2.0, 0.0], vec![0.0, 4.0]], 1.0).unwrap();
        let c = m.sweep_compress(DEFAULT_CUTOFF).unwrap();
        assert_eq!(c.bond_dims(), vec![1]);
        assert!((c.ledger().product() - 8.0).abs() < 1e-13);
    }

    #[test]
    fn inner_products() {
        let a = Mps::product(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        let b = Mps::product(&[vec![0.0, 1.0], vec![0.0, 1.0]], 1.0).unwrap();
        assert_eq!(inner_product(&a, &a).unwrap().value, 1.0);
        assert!(inner_product(&a, &b).unwrap().value.abs() < 1e-14);
        let m = random_mps(&[2, 2, 2, 2], 3, 4);
        let v = m.to_dense().unwrap();
        let ip = inner_product(&m, &m).unwrap();
        let want: f64 = v.iter().map(|x| x * x).sum();
        assert!((ip.value - want).abs() < 1e-12 * want);
        assert!(ip.trace_ledger.is_valid());
        assert!(inner_product(&a, &random_mps(&[2, 3], 1, 1)).is_err());
    }

    #[test]
    fn normalization() {
        let m = Mps::product(&[vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 0.0]], 1.0).unwrap();
        let s = m.normalize_to_state().unwrap();
        assert!(close(&s.to_dense().unwrap(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-14));
        let r = random_mps(&[2, 3, 2, 2], 3, 8).normalize_to_state().unwrap();
        assert!((r.norm().unwrap() - 1.0).abs() < 1e-12);
        let rr = r.normalize_to_state().unwrap();
        assert!(close(&rr.to_dense().unwrap(), &r.to_dense().unwrap(), 1e-13));
        assert_eq!(r.ledger().factors, vec![1.0; 4]);
    }

    #[test]
    fn entropies() {
        let prod = Mps::product(&[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]], 1.0).unwrap();
        for reg in [Region::single(1).unwrap(), Region::edge(2).unwrap(), Region::new(1, 2).unwrap()] {
            assert!(prod.entropy_vn(reg).unwrap().abs() < 1e-12);
            assert!(prod.entropy_renyi2(reg).unwrap().abs() < 1e-12);
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = Mps::new(
            vec![
                DenseTensor::new(vec![1, 2, 2], vec![h, 0.0, 0.0, h]).unwrap(),
                DenseTensor::new(vec![2, 2, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            ],
            NormLedger::ones(2),
        )
        .unwrap();
        let s = bell.entropy_vn(Region::single(1).unwrap()).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-12);
        let s2 = bell.entropy_renyi2(Region::single(1).unwrap()).unwrap();
        assert!((s2 - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!(bell.entropy_vn(Region::new(0, 1).unwrap()).unwrap().abs() < 1e-15);
        let unnorm = Mps::product(&[vec![2.0, 0.0]], 1.0).unwrap();
        assert!(unnorm.entropy_vn(Region::single(1).unwrap()).is_err());
    }

    #[test]
    fn entropy_complement_and_ordering() {
        let m = random_mps(&[2, 3, 2, 2, 3, 2], 4, 12).normalize_to_state().unwrap();
        let a = m.entropy_vn(Region::new(2, 3).unwrap()).unwrap();
        let left = m.entropy_vn(Region::new(0, 1).unwrap()).unwrap();
        let right = m.entropy_vn(Region::new(2, 5).unwrap()).unwrap();
        assert!((left - right).abs() < 1e-10);
        let s2 = m.entropy_renyi2(Region::new(2, 3).unwrap()).unwrap();
        assert!(a >= s2 - 1e-12 && s2 >= 0.0);
        // Gram route (36 physical states vs χ² ≤ 16) against a dense ρ.
        let v = m.to_dense().unwrap();
        let (outer_l, inner, outer_r) = (2, 36, 2);
        let mut rho = DenseTensor::<f64>::zeros(vec![inner, inner]);
        for i in 0..inner {
            for k in 0..inner {
                let mut acc = 0.0;
                for a in 0..outer_l {
                    for b in 0..outer_r {
                        acc += v[(a * inner + i) * outer_r + b] * v[(a * inner + k) * outer_r + b];
                    }
                }
                rho.set(&[i, k], acc);
            }
        }
        let (eig, _) = crate::linalg::sym_eigen(&rho).unwrap();
        let want: f64 = eig.iter().filter(|&&l| l > 1e-300).map(|&l| -l * l.ln()).sum();
        let got = m.entropy_vn(Region::new(1, 4).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn sweep_spectra_match_region_spectra() {
        let m = random_mps(&[2, 3, 2, 4, 2], 3, 21).normalize_to_state().unwrap();
        let (singles, edges) = m.sweep_spectra().unwrap();
        for j in 1..=5 {
            let q = m.reduced_spectrum(Region::single(j).unwrap()).unwrap();
            let e = m.reduced_spectrum(Region::edge(j).unwrap()).unwrap();
            let trim = |v: &[f64]| v.iter().copied().filter(|x| *x > 1e-13).collect::<Vec<_>>();
            assert!(close(&trim(&singles[j - 1]), &trim(&q), 1e-12), "Q{j}");
            assert!(close(&trim(&edges[j - 1]), &trim(&e), 1e-12), "E{j}");
        }
    }

    #[test]
    fn regions() {
        assert_eq!(Region::middle(0, 8).unwrap(), Region { start: 3, end: 3 });
        assert_eq!(Region::middle(2, 8).unwrap(), Region { start: 1, end: 5 });
        assert_eq!(Region::middle(10, 8).unwrap(), Region { start: 0, end: 7 });
        assert_eq!(Region::edge(3).unwrap().len(), 3);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let m = random_mps(&[2, 3, 2], 2, 77);
        let s = serde_json::to_string(&m).unwrap();
        let back: Mps = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn dense_equivalence_through_many_gates() {
        let phys = [2, 2, 3, 2, 2];
        let mut m = random_mps(&phys, 2, 21);
        let mut v = m.to_dense().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for step in 0..8 {
            let a = rng.random_range(0..5);
            let mut b = rng.random_range(0..5);
            if a == b {
                b = (a + 1) % 5;
            }
            let d = phys[a] * phys[b];
            let g = DenseTensor::from_fn(vec![d, d], |_| rng.random_range(-1.0..1.0));
            m = m.apply_two_site(&g, [phys[a], phys[b]], a, b).unwrap();
            v = dense_apply(&v, &g, &phys, a, b);
            if step % 2 == 1 {
                m = m.sweep_compress(DEFAULT_CUTOFF).unwrap();
            }
        }
        let got = m.to_dense().unwrap();
        let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(close(&got, &v, 1e-10 * scale));
    }
}
