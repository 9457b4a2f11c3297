//! Brute-force reference values: Haar sampling, twirl projectors built from
//! computational-basis matrices, and dense moment evaluation for a handful
//! of qubits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::commutant::{Group, GroupSampler, SiteBasis, GRAM_CUTOFF, MAJORANAS};
use crate::error::{Error, Result};
use crate::linalg::{null_space_psd, pinv};
use crate::pauli::{copy_paulis, string_matrix, tensor_power_coords, Pauli};
use crate::pnet::{Observable, Topology};
use crate::tensor::{DenseTensor, C64};

/// Largest qubit count for exact dense moments.
pub const MAX_EXACT_QUBITS: usize = 5;
/// Largest qubit count for sampled statevector moments.
pub const MAX_SAMPLED_QUBITS: usize = 12;
/// Free-fermion exponentials composed per sample.
pub const FF_COMPOSE: usize = 32;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Haar-random unitary (`U4`) or orthogonal (`O4`) matrix of size `dim` by
/// Gram-Schmidt on Gaussian columns, which fixes the `R` diagonal positive.
pub fn haar_sample(dim: usize, family: Group, rng: &mut ChaCha8Rng) -> Result<DenseTensor<C64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be ≥ 1".into()));
    }
    let complex = match family {
        Group::U4 => true,
        Group::O4 => false,
        Group::FfSo4 => {
            return if dim == 4 {
                Ok(free_fermion_sample(rng))
            } else {
                Err(Error::UnsupportedGroup("free-fermion samples are two-qubit only".into()))
            }
        }
    };
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<C64> = (0..dim)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = if complex { rng.sample(StandardNormal) } else { 0.0 };
                C64::new(re, im)
            })
            .collect();
        for _ in 0..2 {
            for q in &cols {
                let proj: C64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= proj * y;
                }
            }
        }
        let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nv < 1e-8 {
            continue;
        }
        cols.push(v.into_iter().map(|x| x / nv).collect());
    }
    Ok(DenseTensor::from_fn(vec![dim, dim], |ix| cols[ix[1]][ix[0]]))
}

/// Hermitian generators `i c_a c_b` of the two-qubit free-fermion algebra.
pub fn free_fermion_generators() -> Vec<DenseTensor<C64>> {
    let maj: Vec<DenseTensor<C64>> = MAJORANAS.iter().map(|&(a, b)| string_matrix(&[a, b])).collect();
    let mut out = Vec::new();
    for a in 0..4 {
        for b in a + 1..4 {
            out.push(maj[a].matmul(&maj[b]).expect("4x4").scale(C64::new(0.0, 1.0)));
        }
    }
    out
}

/// `exp(a)` by scaling and squaring a Taylor series.
fn expm(a: &DenseTensor<C64>) -> DenseTensor<C64> {
    let norm = a.frobenius_norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let x = a.scale(c(0.5f64.powi(squarings as i32)));
    let n = a.rows();
    let mut term = DenseTensor::<C64>::identity(n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = term.matmul(&x).expect("square").scale(c(1.0 / k as f64));
        sum = sum.add(&term).expect("same shape");
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum).expect("square");
    }
    sum
}

/// A free-fermion gate: the product of [`FF_COMPOSE`] exponentials of
/// Gaussian algebra elements.
pub fn free_fermion_sample(rng: &mut ChaCha8Rng) -> DenseTensor<C64> {
    let gens = free_fermion_generators();
    let mut u = DenseTensor::<C64>::identity(4);
    for _ in 0..FF_COMPOSE {
        let mut h = DenseTensor::<C64>::zeros(vec![4, 4]);
        for g in &gens {
            let w: f64 = rng.sample(StandardNormal);
            h = h.add(&g.scale(c(w))).expect("4x4");
        }
        let step = expm(&h.scale(C64::new(0.0, 1.0)));
        u = step.matmul(&u).expect("4x4");
    }
    u
}

/// Two-qubit gate sampler for each group.
#[derive(Clone, Copy, Debug)]
pub struct HaarSampler(pub Group);

impl GroupSampler for HaarSampler {
    fn group(&self) -> Group {
        self.0
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DenseTensor<C64> {
        haar_sample(4, self.0, rng).expect("dim 4 is supported for every group")
    }
}

/// Real Pauli coordinates of an operator on `t` copies of two qubits whose
/// tensor factors are ordered copy-major `(c1 q1, c1 q2, c2 q1, …)`. The
/// result uses the site-major index `(q1: c1..ct, q2: c1..ct)`.
fn two_site_coords(a: &DenseTensor<C64>, t: usize) -> Result<Vec<f64>> {
    let m = 2 * t;
    let count = 4usize.pow(m as u32);
    let scale = 2f64.powf(m as f64 / 2.0);
    let mut out = Vec::with_capacity(count);
    let mut worst_im = 0.0f64;
    for idx in 0..count {
        let digits = copy_paulis(idx, m); // (q, c) at q * t + c
        let mut order = vec![Pauli::I; m];
        for q in 0..2 {
            for cp in 0..t {
                order[cp * 2 + q] = digits[q * t + cp];
            }
        }
        let p = string_matrix(&order);
        let dim = p.rows();
        let mut tr = C64::new(0.0, 0.0);
        for i in 0..dim {
            for k in 0..dim {
                let x = p.get(&[i, k]);
                if x != C64::new(0.0, 0.0) {
                    tr += x * a.get(&[k, i]);
                }
            }
        }
        worst_im = worst_im.max(tr.im.abs());
        out.push(tr.re / scale);
    }
    if worst_im > 1e-10 {
        return Err(Error::Numeric(format!("operator is not Hermitian (imaginary coordinate {worst_im:e})")));
    }
    Ok(out)
}

/// Two-copy commutant elements written as matrices on `(C^4)^{⊗2}`.
fn computational_commutant(group: Group, t: usize) -> Result<Vec<Vec<f64>>> {
    match (group, t) {
        (Group::U4 | Group::O4, 1) => Ok(vec![two_site_coords(&DenseTensor::identity(4), 1)?]),
        (Group::U4 | Group::O4, 2) => {
            let id = DenseTensor::<C64>::identity(16);
            let swap = DenseTensor::from_fn(vec![16, 16], |ix| {
                let (i, j) = (ix[0], ix[1]);
                if i == (j % 4) * 4 + j / 4 { c(1.0) } else { c(0.0) }
            });
            let mut out = vec![two_site_coords(&id, 2)?, two_site_coords(&swap, 2)?];
            if group == Group::O4 {
                // Σ_ij |ii⟩⟨jj|
                let omega = DenseTensor::from_fn(vec![16, 16], |ix| {
                    let (i, j) = (ix[0], ix[1]);
                    if i / 4 == i % 4 && j / 4 == j % 4 { c(1.0) } else { c(0.0) }
                });
                out.push(two_site_coords(&omega, 2)?);
            }
            Ok(out)
        }
        (Group::FfSo4, 1 | 2) => algebra_commutant(&free_fermion_generators(), t),
        _ => Err(Error::InvalidArgument(format!("oracle supports t ∈ {{1, 2}}, got {t}"))),
    }
}

/// Operators on `t` copies commuting with `Σ_c H_c` for every generator, as
/// the null space of `Σ_H Mᵀ M` with `M = i[H^{(t)}, ·]` in Pauli coordinates.
pub fn algebra_commutant(generators: &[DenseTensor<C64>], t: usize) -> Result<Vec<Vec<f64>>> {
    let m = 2 * t;
    let count = 4usize.pow(m as u32);
    let dim = 1usize << m;
    let id4 = DenseTensor::<C64>::identity(4);
    let lifted: Vec<DenseTensor<C64>> = generators
        .iter()
        .map(|h| {
            let mut acc = DenseTensor::<C64>::zeros(vec![dim, dim]);
            for cp in 0..t {
                let mut term = DenseTensor::<C64>::identity(1);
                for other in 0..t {
                    term = term.kron(if other == cp { h } else { &id4 }).expect("kron");
                }
                acc = acc.add(&term).expect("same shape");
            }
            acc
        })
        .collect();
    // Pauli strings in copy-major order, indexed site-major.
    let strings: Vec<DenseTensor<C64>> = (0..count)
        .map(|idx| {
            let digits = copy_paulis(idx, m);
            let mut order = vec![Pauli::I; m];
            for q in 0..2 {
                for cp in 0..t {
                    order[cp * 2 + q] = digits[q * t + cp];
                }
            }
            string_matrix(&order)
        })
        .collect();
    let mut gram = DenseTensor::<f64>::zeros(vec![count, count]);
    for h in &lifted {
        let mut cols = Vec::with_capacity(count);
        for s in &strings {
            let comm = h.matmul(s)?.sub(&s.matmul(h)?)?.scale(C64::new(0.0, 1.0));
            cols.push(two_site_coords(&comm, t)?);
        }
        // gram += Mᵀ M where column q of M is cols[q].
        for a in 0..count {
            for b in a..count {
                let v: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
                if v != 0.0 {
                    let old = gram.get(&[a, b]);
                    gram.set(&[a, b], old + v);
                    if a != b {
                        gram.set(&[b, a], old + v);
                    }
                }
            }
        }
    }
    null_space_psd(&gram, 1e-9)
}

/// The twirl projector `V W⁺ Vᵀ` on the two-site coordinate space.
#[derive(Clone, Debug)]
pub struct TwirlProjector {
    pub t: usize,
    pub vectors: Vec<Vec<f64>>,
    pub matrix: DenseTensor<f64>,
}

impl TwirlProjector {
    /// Builds and checks the projector for arbitrary spanning vectors.
    pub fn from_vectors(t: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let r = vectors.len();
        if r == 0 {
            return Err(Error::InvalidArgument("no commutant vectors".into()));
        }
        let dim = vectors[0].len();
        let gram = DenseTensor::from_fn(vec![r, r], |ix| {
            vectors[ix[0]].iter().zip(&vectors[ix[1]]).map(|(a, b)| a * b).sum()
        });
        let w = pinv(&gram, GRAM_CUTOFF)?;
        let v = DenseTensor::from_fn(vec![dim, r], |ix| vectors[ix[1]][ix[0]]);
        let matrix = v.matmul(&w)?.matmul(&v.transpose()?)?;
        let residual = matrix.matmul(&matrix)?.sub(&matrix)?.max_abs();
        if residual > 1e-8 {
            return Err(Error::BasisIncomplete { residual });
        }
        Ok(TwirlProjector { t, vectors, matrix })
    }

    /// Rank of the projector.
    pub fn rank(&self) -> usize {
        let tr: f64 = (0..self.matrix.rows()).map(|i| self.matrix.get(&[i, i])).sum();
        tr.round() as usize
    }

    /// The projector restricted to product site bases, orthonormal
    /// coordinates, indexed `[out][in]` like a P-gate matrix.
    pub fn in_site_bases(&self, a: &SiteBasis, b: &SiteBasis) -> Result<DenseTensor<f64>> {
        let q = a.orth.first().map_or(0, Vec::len);
        let (da, db) = (a.len(), b.len());
        let basis: Vec<Vec<f64>> = (0..da * db)
            .map(|k| {
                let (ea, eb) = (&a.orth[k / db], &b.orth[k % db]);
                let mut v = Vec::with_capacity(q * q);
                for x in ea {
                    for y in eb {
                        v.push(x * y);
                    }
                }
                v
            })
            .collect();
        let images: Vec<Vec<f64>> = basis.iter().map(|v| self.matrix.matvec(v)).collect::<Result<_>>()?;
        Ok(DenseTensor::from_fn(vec![da * db, da * db], |ix| {
            basis[ix[0]].iter().zip(&images[ix[1]]).map(|(x, y)| x * y).sum()
        }))
    }
}

/// Twirl projector of a two-qubit gate group, built from its commutant in
/// the computational basis.
pub fn exact_twirl_projector(group: Group, t: usize) -> Result<TwirlProjector> {
    TwirlProjector::from_vectors(t, computational_commutant(group, t)?)
}

/// How [`exact_moment_small`] evaluates the moment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

/// A reference moment; `stderr` is zero in exact mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    pub stderr: f64,
}

/// `E[Tr[U ρ U† O]^t]` by brute force.
pub fn exact_moment_small(
    topology: &Topology,
    rho_bits: &[u8],
    obs: &Observable,
    t: usize,
    mode: OracleMode,
) -> Result<OracleValue> {
    topology.validate()?;
    let n = topology.n;
    if rho_bits.len() != n || obs.n() != n {
        return Err(Error::Dimension("state, observable and circuit sizes differ".into()));
    }
    if !(1..=2).contains(&t) {
        return Err(Error::InvalidArgument(format!("oracle supports t ∈ {{1, 2}}, got {t}")));
    }
    match mode {
        OracleMode::Exact => {
            if n > MAX_EXACT_QUBITS {
                return Err(Error::SizeGuard(format!("exact oracle limited to {MAX_EXACT_QUBITS} qubits, got {n}")));
            }
            exact_dense(topology, rho_bits, obs, t).map(|value| OracleValue { value, stderr: 0.0 })
        }
        OracleMode::Sampled { samples, seed } => {
            if n > MAX_SAMPLED_QUBITS {
                return Err(Error::SizeGuard(format!(
                    "sampled oracle limited to {MAX_SAMPLED_QUBITS} qubits, got {n}"
                )));
            }
            if samples < 2 {
                return Err(Error::InvalidArgument("need at least two samples".into()));
            }
            sampled(topology, rho_bits, obs, t, samples, seed)
        }
    }
}

fn product_coords(obs: &Observable, t: usize) -> Vec<f64> {
    let n = obs.n();
    let mut v = vec![1.0];
    for j in 0..n {
        let site = tensor_power_coords(&obs.site_operator(j), t);
        let mut next = Vec::with_capacity(v.len() * site.len());
        for x in &v {
            for y in &site {
                next.push(x * y);
            }
        }
        v = next;
    }
    v
}

fn exact_dense(topology: &Topology, rho_bits: &[u8], obs: &Observable, t: usize) -> Result<f64> {
    let n = topology.n;
    let q = 4usize.pow(t as u32);
    let mut projectors: Vec<(Group, TwirlProjector)> = Vec::new();
    for g in topology.groups() {
        projectors.push((g, exact_twirl_projector(g, t)?));
    }
    let mut v = product_coords(obs, t);
    let rho = product_coords(&Observable::Projector(rho_bits.to_vec()), t);
    for gate in topology.gates.iter().rev() {
        let p = &projectors.iter().find(|(g, _)| *g == gate.group).expect("built above").1;
        let (a, b) = (gate.qubits[0] - 1, gate.qubits[1] - 1);
        let stride = |j: usize| q.pow((n - 1 - j) as u32);
        let (sa, sb) = (stride(a), stride(b));
        let others: Vec<usize> = (0..n).filter(|&j| j != a && j != b).collect();
        let mut local = vec![0.0; q * q];
        let total_other = q.pow(others.len() as u32);
        for rest in 0..total_other {
            let mut base = 0;
            let mut r = rest;
            for &j in others.iter().rev() {
                base += (r % q) * stride(j);
                r /= q;
            }
            for ia in 0..q {
                for ib in 0..q {
                    local[ia * q + ib] = v[base + ia * sa + ib * sb];
                }
            }
            let out = p.matrix.matvec(&local)?;
            for ia in 0..q {
                for ib in 0..q {
                    v[base + ia * sa + ib * sb] = out[ia * q + ib];
                }
            }
        }
    }
    Ok(rho.iter().zip(&v).map(|(x, y)| x * y).sum())
}

/// Applies a two-qubit gate to a statevector (qubit 1 most significant).
fn apply_gate(psi: &mut [C64], u: &DenseTensor<C64>, a: usize, b: usize, n: usize) {
    let (ba, bb) = (1usize << (n - 1 - a), 1usize << (n - 1 - b));
    let dim = psi.len();
    for i in 0..dim {
        if i & ba != 0 || i & bb != 0 {
            continue;
        }
        let idx = [i, i | bb, i | ba, i | ba | bb];
        let old = idx.map(|k| psi[k]);
        for (r, &k) in idx.iter().enumerate() {
            psi[k] = (0..4).map(|s| u.get(&[r, s]) * old[s]).sum();
        }
    }
}

fn expectation(psi: &[C64], obs: &Observable, n: usize) -> f64 {
    match obs {
        Observable::Projector(bits) => {
            let idx = bits.iter().fold(0usize, |acc, &b| acc * 2 + b as usize);
            psi[idx].norm_sqr()
        }
        Observable::Pauli(p) => {
            let mut acc = C64::new(0.0, 0.0);
            for (i, amp) in psi.iter().enumerate() {
                // ⟨ψ| P |i⟩ψ_i: P|i⟩ = phase |j⟩.
                let mut j = i;
                let mut phase = C64::new(1.0, 0.0);
                for (q, &op) in p.0.iter().enumerate() {
                    let bit = (i >> (n - 1 - q)) & 1;
                    match op {
                        Pauli::I => {}
                        Pauli::X => j ^= 1 << (n - 1 - q),
                        Pauli::Y => {
                            j ^= 1 << (n - 1 - q);
                            phase *= if bit == 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
                        }
                        Pauli::Z => {
                            if bit == 1 {
                                phase = -phase;
                            }
                        }
                    }
                }
                acc += psi[j].conj() * phase * amp;
            }
            acc.re
        }
    }
}

fn sampled(topology: &Topology, rho_bits: &[u8], obs: &Observable, t: usize, samples: usize, seed: u64) -> Result<OracleValue> {
    let n = topology.n;
    let start = rho_bits.iter().fold(0usize, |acc, &b| acc * 2 + b as usize);
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut psi = vec![C64::new(0.0, 0.0); 1 << n];
            psi[start] = c(1.0);
            for g in &topology.gates {
                let u = haar_sample(4, g.group, &mut rng).expect("two-qubit samplers");
                apply_gate(&mut psi, &u, g.qubits[0] - 1, g.qubits[1] - 1, n);
            }
            expectation(&psi, obs, n).powi(t as i32)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / samples as f64;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (samples - 1) as f64;
    Ok(OracleValue { value: mean, stderr: (var / samples as f64).sqrt() })
}
