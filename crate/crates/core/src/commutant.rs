//! Local commutant bases, Gram/Weingarten machinery and P-gates.
//!
//! Per-site vectors live in the real Pauli-coordinate space of `t` copies of
//! one qubit (dimension `4^t`, see [`crate::pauli`]). A two-site vector is
//! indexed `site1 · 4^t + site2`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::pauli::{adjoint_rep, copy_index, copy_paulis, Pauli};
use crate::tensor::{DenseTensor, C64};

/// Gate groups supported by the P-net.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    U4,
    O4,
    #[serde(rename = "FF_SO4")]
    FfSo4,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::U4, Group::O4, Group::FfSo4];

    pub fn name(self) -> &'static str {
        match self {
            Group::U4 => "U4",
            Group::O4 => "O4",
            Group::FfSo4 => "FF_SO4",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "U4" | "U" => Ok(Group::U4),
            "O4" | "O" => Ok(Group::O4),
            "FF_SO4" | "FF" | "FFSO4" => Ok(Group::FfSo4),
            other => Err(Error::UnsupportedGroup(other.into())),
        }
    }
}

/// Group families for the commutant dimension formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupFamily {
    U,
    O,
    Sp,
}

impl FromStr for GroupFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "U" => Ok(GroupFamily::U),
            "O" => Ok(GroupFamily::O),
            "SP" => Ok(GroupFamily::Sp),
            other => Err(Error::UnsupportedGroup(other.into())),
        }
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Number of permutations of `t` elements with no decreasing subsequence
/// longer than `dim`; this is the dimension of the span of the permutation
/// operators on `(C^dim)^{⊗t}`.
fn permutation_span_dim(t: usize, dim: usize) -> u128 {
    fn longest_decreasing(p: &[usize]) -> usize {
        let mut best = vec![1usize; p.len()];
        for i in 0..p.len() {
            for j in 0..i {
                if p[j] > p[i] {
                    best[i] = best[i].max(best[j] + 1);
                }
            }
        }
        best.into_iter().max().unwrap_or(0)
    }
    fn walk(p: &mut Vec<usize>, used: &mut [bool], dim: usize, count: &mut u128) {
        if longest_decreasing(p) > dim {
            return;
        }
        if p.len() == used.len() {
            *count += 1;
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                p.push(v);
                walk(p, used, dim, count);
                p.pop();
                used[v] = false;
            }
        }
    }
    let mut count = 0;
    walk(&mut Vec::new(), &mut vec![false; t], dim, &mut count);
    count
}

/// Upper bound on the dimension of the `t`-th order commutant of a gate on
/// `k` qudits of dimension `d`.
///
/// `t!` for unitary groups and `(2t)!/(2^t t!)` for orthogonal and
/// symplectic ones. For unitary groups whose local dimension `d^k` is smaller
/// than `t` the permutation operators become dependent; the exact span
/// dimension is returned instead (the Catalan number when `d^k = 2`).
pub fn commutant_dim_bound(family: GroupFamily, t: usize, d: usize, k: usize) -> Result<u128> {
    if d < 2 || k == 0 {
        return Err(Error::InvalidArgument(format!("need d ≥ 2 and k ≥ 1, got d={d}, k={k}")));
    }
    match family {
        GroupFamily::U => {
            let dim = (d as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
            if dim >= t as u128 {
                Ok(factorial(t))
            } else if t <= 10 {
                Ok(permutation_span_dim(t, dim as usize))
            } else {
                Err(Error::InvalidArgument(format!("t = {t} too large for local dimension {dim}")))
            }
        }
        GroupFamily::O | GroupFamily::Sp => Ok(factorial(2 * t) / (2u128.pow(t as u32) * factorial(t))),
    }
}

/// Per-site dimension of the copy space, `4^t`.
pub fn site_dim(t: usize) -> usize {
    4usize.pow(t as u32)
}

fn check_t(t: usize) -> Result<()> {
    if t == 1 || t == 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("moment order t = {t} not supported (only 1 and 2)")))
    }
}

fn diag_element(entries: &[(Pauli, f64)], t: usize) -> Vec<f64> {
    let mut v = vec![0.0; site_dim(t)];
    let scale = 2f64.powf(t as f64 / 2.0);
    for &(p, c) in entries {
        v[copy_index(&vec![p; t])] += c * scale;
    }
    v
}

/// Natural-basis site elements of a group's local commutant, in the order the
/// gate matrices use.
pub fn site_elements(group: Group, t: usize) -> Result<Vec<(String, Vec<f64>)>> {
    use Pauli::*;
    check_t(t)?;
    let one = ("1".to_string(), diag_element(&[(I, 1.0)], t));
    Ok(match (group, t) {
        (Group::U4 | Group::O4, 1) => vec![one],
        (Group::FfSo4, 1) => vec![one, ("Z".into(), diag_element(&[(Z, 1.0)], 1))],
        (Group::U4, _) => vec![one, ("S".into(), diag_element(&[(X, 1.0), (Y, 1.0), (Z, 1.0)], 2))],
        (Group::O4, _) => vec![
            one,
            ("S".into(), diag_element(&[(X, 1.0), (Y, 1.0), (Z, 1.0)], 2)),
            ("B".into(), diag_element(&[(X, 1.0), (Y, -1.0), (Z, 1.0)], 2)),
        ],
        (Group::FfSo4, _) => vec![
            one,
            ("ZZ".into(), diag_element(&[(Z, 1.0)], 2)),
            ("XX+YY".into(), diag_element(&[(X, 1.0), (Y, 1.0)], 2)),
        ],
    })
}

/// Frobenius norms of a group's natural-basis site elements (the diagonal `D`).
pub fn basis_norms(group: Group) -> Vec<f64> {
    site_elements(group, 2)
        .expect("t = 2 is supported")
        .iter()
        .map(|(_, v)| norm(v))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal local basis on one site, together with the natural-basis
/// elements it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteBasis {
    pub t: usize,
    pub labels: Vec<String>,
    /// Natural-basis elements, `dim` coordinates each.
    pub natural: Vec<Vec<f64>>,
    /// Orthonormal vectors spanning the same space (Gram-Schmidt in order).
    pub orth: Vec<Vec<f64>>,
    /// `change[j][i] = ⟨orth_j, natural_i⟩`; upper triangular.
    pub change: DenseTensor<f64>,
}

impl SiteBasis {
    fn from_elements(t: usize, elements: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut labels = Vec::new();
        let mut natural = Vec::new();
        let mut orth: Vec<Vec<f64>> = Vec::new();
        for (label, v) in elements {
            let scale = norm(&v);
            if scale == 0.0 || labels.contains(&label) {
                continue;
            }
            let mut r = v.clone();
            for _ in 0..2 {
                for e in &orth {
                    let c = dot(e, &r);
                    for (x, y) in r.iter_mut().zip(e) {
                        *x -= c * y;
                    }
                }
            }
            let rn = norm(&r);
            if rn <= 1e-10 * scale {
                continue;
            }
            orth.push(r.iter().map(|x| x / rn).collect());
            natural.push(v);
            labels.push(label);
        }
        if orth.is_empty() {
            return Err(Error::InvalidArgument("empty site basis".into()));
        }
        let b = orth.len();
        let change = DenseTensor::from_fn(vec![b, b], |ix| {
            if ix[0] <= ix[1] {
                dot(&orth[ix[0]], &natural[ix[1]])
            } else {
                0.0
            }
        });
        Ok(SiteBasis { t, labels, natural, orth, change })
    }

    /// The basis of a single group.
    pub fn for_group(group: Group, t: usize) -> Result<Self> {
        Self::from_elements(t, site_elements(group, t)?)
    }

    /// Smallest common basis for a site acted on by all listed groups: the
    /// span of the union of their elements. An empty list gives the full
    /// Pauli-product basis.
    pub fn for_groups(groups: &[Group], t: usize) -> Result<Self> {
        check_t(t)?;
        if groups.is_empty() {
            return Ok(Self::full(t));
        }
        let mut sorted = groups.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut elements = Vec::new();
        for g in sorted {
            elements.extend(site_elements(g, t)?);
        }
        Self::from_elements(t, elements)
    }

    /// The complete orthonormal Pauli-product basis of the site.
    pub fn full(t: usize) -> Self {
        let dim = site_dim(t);
        let labels = (0..dim)
            .map(|i| copy_paulis(i, t).iter().map(|p| p.to_char()).collect())
            .collect();
        let vecs: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let mut v = vec![0.0; dim];
                v[i] = 1.0;
                v
            })
            .collect();
        SiteBasis { t, labels, natural: vecs.clone(), orth: vecs, change: DenseTensor::identity(dim) }
    }

    pub fn len(&self) -> usize {
        self.orth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orth.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == site_dim(self.t)
    }

    /// Coordinates of a site-space vector in the orthonormal basis.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.orth.iter().map(|e| dot(e, v)).collect()
    }

    /// Site-space vector of orthonormal coordinates.
    pub fn expand(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; site_dim(self.t)];
        for (e, &x) in self.orth.iter().zip(c) {
            for (o, y) in out.iter_mut().zip(e) {
                *o += x * y;
            }
        }
        out
    }

    /// Coefficients of the projection of `v` on the natural-basis elements.
    pub fn natural_coords(&self, v: &[f64]) -> Vec<f64> {
        let c = self.project(v);
        let b = c.len();
        let mut x = vec![0.0; b];
        for j in (0..b).rev() {
            let tail: f64 = (j + 1..b).map(|i| self.change.get(&[j, i]) * x[i]).sum();
            x[j] = (c[j] - tail) / self.change.get(&[j, j]);
        }
        x
    }

    /// Squared norm of the part of `v` outside the span.
    pub fn residual_sq(&self, v: &[f64]) -> f64 {
        let p = self.project(v);
        (dot(v, v) - dot(&p, &p)).max(0.0)
    }

    /// Orthonormal coordinates of the identity element `𝟙^{⊗t}`.
    pub fn identity_coords(&self) -> Vec<f64> {
        self.project(&diag_element(&[(Pauli::I, 1.0)], self.t))
    }
}

/// Two-site commutant vectors of a gate group, in Pauli coordinates.
fn commutant_vectors(group: Group, t: usize) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    use Pauli::*;
    check_t(t)?;
    let q = site_dim(t);
    let kron = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(q * q);
        for x in a {
            for y in b {
                out.push(x * y);
            }
        }
        out
    };
    let one = diag_element(&[(I, 1.0)], t);
    if t == 1 {
        return Ok(match group {
            Group::U4 | Group::O4 => (vec!["1".into()], vec![kron(&one, &one)]),
            Group::FfSo4 => {
                let z = diag_element(&[(Z, 1.0)], 1);
                (vec!["1".into(), "parity".into()], vec![kron(&one, &one), kron(&z, &z)])
            }
        });
    }
    let swap = diag_element(&[(I, 0.5), (X, 0.5), (Y, 0.5), (Z, 0.5)], 2);
    let pi = diag_element(&[(I, 0.5), (X, 0.5), (Y, -0.5), (Z, 0.5)], 2);
    Ok(match group {
        Group::U4 => (vec!["1".into(), "SWAP".into()], vec![kron(&one, &one), kron(&swap, &swap)]),
        Group::O4 => (
            vec!["1".into(), "SWAP".into(), "PI".into()],
            vec![kron(&one, &one), kron(&swap, &swap), kron(&pi, &pi)],
        ),
        Group::FfSo4 => {
            let (labels, vecs) = majorana_quadratic_invariants();
            (labels, vecs)
        }
    })
}

/// Majorana operators on two qubits as Pauli pairs (qubit 1, qubit 2).
pub const MAJORANAS: [(Pauli, Pauli); 4] =
    [(Pauli::X, Pauli::I), (Pauli::Y, Pauli::I), (Pauli::Z, Pauli::X), (Pauli::Z, Pauli::Y)];

/// `Q_κ = Σ_{|S|=κ} c_S ⊗ c_S` for `κ = 0..4`, the parity-even invariants
/// of the free-fermionic gate group on two copies.
fn majorana_quadratic_invariants() -> (Vec<String>, Vec<Vec<f64>>) {
    let q = site_dim(2);
    let mut out = vec![vec![0.0; q * q]; 5];
    for mask in 0u32..16 {
        let mut phase = C64::new(1.0, 0.0);
        let (mut p1, mut p2) = (Pauli::I, Pauli::I);
        for (m, &(a, b)) in MAJORANAS.iter().enumerate() {
            if mask & (1 << m) != 0 {
                let (f1, n1) = p1.mul(a);
                let (f2, n2) = p2.mul(b);
                phase *= f1 * f2;
                p1 = n1;
                p2 = n2;
            }
        }
        let sq = phase * phase;
        debug_assert!(sq.im.abs() < 1e-15);
        let idx = copy_index(&[p1, p1]) * q + copy_index(&[p2, p2]);
        out[mask.count_ones() as usize][idx] += sq.re * 4.0;
    }
    ((0..5).map(|k| format!("Q{k}")).collect(), out)
}

/// A commutant basis of a two-site gate group with its Gram and Weingarten
/// matrices.
#[derive(Clone, Debug)]
pub struct CommutantBasis {
    pub group: Group,
    pub t: usize,
    pub labels: Vec<String>,
    /// Two-site vectors, `16^t` coordinates each.
    pub elements: Vec<Vec<f64>>,
    pub gram: DenseTensor<f64>,
    pub weingarten: DenseTensor<f64>,
}

/// Relative cutoff for the Gram pseudo-inverse.
pub const GRAM_CUTOFF: f64 = 1e-10;

impl CommutantBasis {
    pub fn new(group: Group, t: usize) -> Result<Self> {
        let (labels, elements) = commutant_vectors(group, t)?;
        Self::from_vectors(group, t, labels, elements)
    }

    /// Builds the Gram and Weingarten matrices of arbitrary vectors.
    pub fn from_vectors(
        group: Group,
        t: usize,
        labels: Vec<String>,
        elements: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let r = elements.len();
        let gram = DenseTensor::from_fn(vec![r, r], |ix| dot(&elements[ix[0]], &elements[ix[1]]));
        let weingarten = pinv(&gram, GRAM_CUTOFF)?;
        Ok(CommutantBasis { group, t, labels, elements, gram, weingarten })
    }

    /// `‖W⁺ W W⁺ − W⁺‖_max`.
    pub fn pinv_residual(&self) -> f64 {
        let www = self
            .weingarten
            .matmul(&self.gram)
            .and_then(|x| x.matmul(&self.weingarten))
            .expect("square");
        www.sub(&self.weingarten).expect("same shape").max_abs()
    }

    /// Dense projector `Σ (W⁺)_{νμ} |P_ν⟩⟩⟨⟨P_μ|` on the two-site space.
    pub fn dense_projector(&self) -> DenseTensor<f64> {
        let dim = self.elements.first().map_or(0, Vec::len);
        let r = self.elements.len();
        let mut out = DenseTensor::zeros(vec![dim, dim]);
        for nu in 0..r {
            for mu in 0..r {
                let w = self.weingarten.get(&[nu, mu]);
                if w == 0.0 {
                    continue;
                }
                let (a, b) = (&self.elements[nu], &self.elements[mu]);
                for i in 0..dim {
                    if a[i] == 0.0 {
                        continue;
                    }
                    let row = &mut out.data_mut()[i * dim..(i + 1) * dim];
                    for (o, &y) in row.iter_mut().zip(b) {
                        *o += w * a[i] * y;
                    }
                }
            }
        }
        out
    }
}

/// An exact fraction, used for the golden gate matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: i64,
    pub den: i64,
}

impl Ratio {
    pub const fn new(num: i64, den: i64) -> Self {
        Ratio { num, den }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.num == 0 {
            write!(f, "0")
        } else if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// The moment operator of one two-site gate, acting on the product of the
/// two sites' local bases.
///
/// `matrix` is the action in the orthonormal bases, indexed
/// `[out][in]` with `index = b2 · site1 + site2`.
#[derive(Clone, Debug)]
pub struct PGate {
    pub group: Group,
    pub t: usize,
    pub bases: [SiteBasis; 2],
    matrix: DenseTensor<f64>,
    exact: Option<Vec<Vec<Ratio>>>,
}

fn kron_f(a: &DenseTensor<f64>, b: &DenseTensor<f64>) -> DenseTensor<f64> {
    a.kron(b).expect("matrices")
}

impl PGate {
    /// Builds the gate exactly from the group's commutant basis and Gram
    /// pseudo-inverse.
    pub fn build(group: Group, t: usize, a: &SiteBasis, b: &SiteBasis) -> Result<Self> {
        let comm = CommutantBasis::new(group, t)?;
        Self::from_commutant(&comm, a, b)
    }

    pub fn from_commutant(comm: &CommutantBasis, a: &SiteBasis, b: &SiteBasis) -> Result<Self> {
        let t = comm.t;
        if a.t != t || b.t != t {
            return Err(Error::Dimension("site bases and commutant disagree on t".into()));
        }
        let q = site_dim(t);
        let (ba, bb) = (a.len(), b.len());
        let r = comm.elements.len();
        // Local coordinates of each commutant vector.
        let mut y = DenseTensor::zeros(vec![ba * bb, r]);
        for (k, v) in comm.elements.iter().enumerate() {
            // Contract site 2 first, then site 1.
            let mut half = vec![0.0; q * bb];
            for i in 0..q {
                let row = &v[i * q..(i + 1) * q];
                for (beta, e) in b.orth.iter().enumerate() {
                    half[i * bb + beta] = dot(row, e);
                }
            }
            let mut local_sq = 0.0;
            for (alpha, e) in a.orth.iter().enumerate() {
                for beta in 0..bb {
                    let c: f64 = (0..q).map(|i| e[i] * half[i * bb + beta]).sum();
                    y.set(&[alpha * bb + beta, k], c);
                    local_sq += c * c;
                }
            }
            let total = dot(v, v);
            if total - local_sq > 1e-10 * total.max(1.0) {
                return Err(Error::Dimension(format!(
                    "{} commutant element {} is not spanned by the local bases {:?} x {:?}",
                    comm.group, comm.labels[k], a.labels, b.labels
                )));
            }
        }
        let matrix = y.matmul(&comm.weingarten)?.matmul(&y.transpose()?)?;
        let gate = PGate { group: comm.group, t, bases: [a.clone(), b.clone()], matrix, exact: None };
        let res = gate.idempotence_residual();
        if res > 1e-10 {
            return Err(Error::BasisIncomplete { residual: res });
        }
        Ok(gate)
    }

    fn from_exact(group: Group, exact: Vec<Vec<Ratio>>) -> Self {
        let basis = SiteBasis::for_group(group, 2).expect("t = 2");
        let n = exact.len();
        let natural = DenseTensor::from_fn(vec![n, n], |ix| exact[ix[0]][ix[1]].to_f64());
        let c = kron_f(&basis.change, &basis.change);
        let cinv = pinv(&c, 1e-14).expect("invertible change of basis");
        let matrix = c.matmul(&natural).and_then(|m| m.matmul(&cinv)).expect("conformant");
        PGate { group, t: 2, bases: [basis.clone(), basis], matrix, exact: Some(exact) }
    }

    /// Matrix in the orthonormal local bases.
    pub fn matrix(&self) -> &DenseTensor<f64> {
        &self.matrix
    }

    /// Leg dimensions `[b1, b2]`.
    pub fn dims(&self) -> [usize; 2] {
        [self.bases[0].len(), self.bases[1].len()]
    }

    /// Exact entries in the natural basis, when known.
    pub fn exact(&self) -> Option<&Vec<Vec<Ratio>>> {
        self.exact.as_ref()
    }

    fn change(&self) -> DenseTensor<f64> {
        kron_f(&self.bases[0].change, &self.bases[1].change)
    }

    /// Matrix in the (generally non-orthogonal) natural basis: `C⁻¹ P C`.
    pub fn natural_matrix(&self) -> DenseTensor<f64> {
        if let Some(ex) = &self.exact {
            let n = ex.len();
            return DenseTensor::from_fn(vec![n, n], |ix| ex[ix[0]][ix[1]].to_f64());
        }
        let c = self.change();
        let cinv = pinv(&c, 1e-14).expect("invertible change of basis");
        cinv.matmul(&self.matrix).and_then(|m| m.matmul(&c)).expect("conformant")
    }

    /// Per-site norms of the natural-basis elements (the diagonal `D`).
    pub fn basis_norms(&self) -> [Vec<f64>; 2] {
        [self.bases[0].natural.iter().map(|v| norm(v)).collect(), self.bases[1].natural.iter().map(|v| norm(v)).collect()]
    }

    /// `‖P·P − P‖_max`.
    pub fn idempotence_residual(&self) -> f64 {
        let pp = self.matrix.matmul(&self.matrix).expect("square");
        pp.sub(&self.matrix).expect("same shape").max_abs()
    }

    /// `‖P − Pᵀ‖_max` in the orthonormal basis.
    pub fn symmetry_residual(&self) -> f64 {
        self.matrix.sub(&self.matrix.transpose().expect("matrix")).expect("same shape").max_abs()
    }

    /// `‖P|𝟙𝟙⟩⟩ − |𝟙𝟙⟩⟩‖_max`.
    pub fn identity_residual(&self) -> f64 {
        let ia = self.bases[0].identity_coords();
        let ib = self.bases[1].identity_coords();
        let v: Vec<f64> = ia.iter().flat_map(|x| ib.iter().map(move |y| x * y)).collect();
        let pv = self.matrix.matvec(&v).expect("conformant");
        pv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// The same gate with its two legs exchanged.
    pub fn swapped(&self) -> PGate {
        let [b1, b2] = self.dims();
        let n = b1 * b2;
        let perm = |i: usize| (i % b2) * b1 + i / b2;
        let mut m = DenseTensor::zeros(vec![n, n]);
        for o in 0..n {
            for i in 0..n {
                m.set(&[perm(o), perm(i)], self.matrix.get(&[o, i]));
            }
        }
        PGate {
            group: self.group,
            t: self.t,
            bases: [self.bases[1].clone(), self.bases[0].clone()],
            matrix: m,
            exact: None,
        }
    }

    /// JSON export: group, t, basis order, natural-basis rows, orthonormal
    /// rows and the per-site norms.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DenseTensor<f64>| -> Vec<Vec<f64>> {
            m.data().chunks(m.cols()).map(<[f64]>::to_vec).collect()
        };
        let mut obj = serde_json::json!({
            "group": self.group.name(),
            "t": self.t,
            "basis_order": [self.bases[0].labels, self.bases[1].labels],
            "natural_matrix": rows(&self.natural_matrix()),
            "orthonormal_matrix": rows(&self.matrix),
            "D": self.basis_norms(),
        });
        if let Some(ex) = &self.exact {
            obj["exact"] = serde_json::to_value(ex).expect("ratios serialize");
        }
        obj
    }
}

/// The U(4), t = 2 gate from its exact rational matrix.
pub fn pgate_u4_t2() -> PGate {
    let z = Ratio::new(0, 1);
    let f = Ratio::new(1, 5);
    let row = vec![z, f, f, Ratio::new(3, 5)];
    PGate::from_exact(
        Group::U4,
        vec![vec![Ratio::new(1, 1), z, z, z], row.clone(), row.clone(), row],
    )
}

/// The O(4), t = 2 gate from its exact rational matrix, basis order
/// (𝟙, S, B) per site.
pub fn pgate_o4_t2() -> PGate {
    let r = Ratio::new;
    let z = r(0, 1);
    let a_s = vec![z, r(7, 36), r(1, 36), r(7, 36), r(11, 18), r(1, 6), r(1, 36), r(1, 6), r(-1, 18)];
    let a_b = vec![z, r(1, 36), r(7, 36), r(1, 36), r(-1, 18), r(1, 6), r(7, 36), r(1, 6), r(11, 18)];
    let mut rows = vec![vec![z; 9]; 9];
    rows[0][0] = r(1, 1);
    for i in [1, 3, 4] {
        rows[i] = a_s.clone();
    }
    for i in [2, 6, 8] {
        rows[i] = a_b.clone();
    }
    PGate::from_exact(Group::O4, rows)
}

/// The fixed-parity free-fermionic SO(4), t = 2 gate on the per-site basis
/// (𝟙, ZZ, XX+YY), built by exact projection onto the parity-even Majorana
/// invariants.
pub fn pgate_ff_so4_t2() -> PGate {
    let basis = SiteBasis::for_group(Group::FfSo4, 2).expect("t = 2");
    PGate::build(Group::FfSo4, 2, &basis, &basis).expect("free-fermion invariants lie in the local span")
}

/// Source of group elements (4×4 unitaries acting on two qubits).
pub trait GroupSampler: Sync {
    fn group(&self) -> Group;
    fn sample(&self, rng: &mut ChaCha8Rng) -> DenseTensor<C64>;
}

/// Action of `g^{⊗t} · g^{†⊗t}` on a two-site vector, given the real
/// adjoint representation `r` of `g`.
pub fn copy_action(r: &DenseTensor<f64>, t: usize, v: &[f64]) -> Vec<f64> {
    if t == 1 {
        return r.matvec(v).expect("16-dim");
    }
    // v[(a1 b1)(a2 b2)] -> V[(a1 a2)][(b1 b2)]; out = R V Rᵀ.
    let reindex = |a1: usize, a2: usize, b1: usize, b2: usize| (a1 * 4 + b1) * 16 + a2 * 4 + b2;
    let mut m = DenseTensor::zeros(vec![16, 16]);
    for a1 in 0..4 {
        for a2 in 0..4 {
            for b1 in 0..4 {
                for b2 in 0..4 {
                    m.set(&[a1 * 4 + a2, b1 * 4 + b2], v[reindex(a1, a2, b1, b2)]);
                }
            }
        }
    }
    let out = r.matmul(&m).and_then(|x| x.matmul(&r.transpose()?)).expect("16x16");
    let mut res = vec![0.0; 256];
    for a1 in 0..4 {
        for a2 in 0..4 {
            for b1 in 0..4 {
                for b2 in 0..4 {
                    res[reindex(a1, a2, b1, b2)] = out.get(&[a1 * 4 + a2, b1 * 4 + b2]);
                }
            }
        }
    }
    res
}

/// Number of group samples used to verify the commutant in
/// [`pgate_from_samples`].
pub const VERIFY_SAMPLES: usize = 16;

/// Builds `τ̂ = Σ (W⁺)_{νμ} |P_ν⟩⟩⟨⟨P_μ|` from the basis and Gram
/// pseudo-inverse, after checking against sampled group elements that every
/// basis element is invariant. Fails when the sampled invariance or the
/// idempotence residual exceeds `1e-6`.
pub fn pgate_from_samples(
    sampler: &dyn GroupSampler,
    t: usize,
    basis: &CommutantBasis,
    rng: &mut ChaCha8Rng,
) -> Result<PGate> {
    if basis.t != t {
        return Err(Error::InvalidArgument("commutant basis order differs from t".into()));
    }
    let mut worst = 0.0f64;
    for _ in 0..VERIFY_SAMPLES {
        let g = sampler.sample(rng);
        let r = adjoint_rep(&g)?;
        for v in &basis.elements {
            let gv = copy_action(&r, t, v);
            let diff = gv.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff / norm(v).max(1e-300));
        }
    }
    if worst > 1e-6 {
        return Err(Error::BasisIncomplete { residual: worst });
    }
    let site = SiteBasis::for_group(sampler.group(), t)?;
    let gate = PGate::from_commutant(basis, &site, &site)?;
    if gate.idempotence_residual() > 1e-6 {
        return Err(Error::BasisIncomplete { residual: gate.idempotence_residual() });
    }
    Ok(gate)
}

/// Cache of gates keyed by group and the two site bases.
#[derive(Debug, Default)]
pub struct GateTable {
    gates: BTreeMap<(Group, usize, Vec<String>, Vec<String>), PGate>,
}

impl GateTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the gate for `group` acting on sites with the given bases,
    /// building it on first use. The golden matrices are used whenever the
    /// bases are the group's own.
    pub fn get(&mut self, group: Group, t: usize, a: &SiteBasis, b: &SiteBasis) -> Result<&PGate> {
        let key = (group, t, a.labels.clone(), b.labels.clone());
        if !self.gates.contains_key(&key) {
            let own = SiteBasis::for_group(group, t)?;
            let gate = if t == 2 && *a == own && *b == own && group != Group::FfSo4 {
                match group {
                    Group::U4 => pgate_u4_t2(),
                    _ => pgate_o4_t2(),
                }
            } else {
                PGate::build(group, t, a, b)?
            };
            self.gates.insert(key.clone(), gate);
        }
        Ok(&self.gates[&key])
    }

    pub fn iter(&self) -> impl Iterator<Item = &PGate> {
        self.gates.values()
    }
}
