//! Derived quantities: k-purities, collision probabilities, deep-circuit
//! closed forms and entanglement scans of the evolved observable.

use serde::{Deserialize, Serialize};

use crate::commutant::{site_dim, Group, GroupFamily, SiteBasis};
use crate::error::{Error, Result};
use crate::mps::{inner_product, renyi2_of, vn_of, Mps, NormLedger, Region};
use crate::pauli::{copy_index, Pauli, PauliString};
use crate::pnet::{build_pnet, Observable, PNet, Topology};
use crate::tensor::DenseTensor;

/// Pauli coordinates of the two-copy functionals behind the k-purities:
/// `⟨⟨s_I|A⟩⟩ = Tr[(I⊗I) A]/4` and `⟨⟨s_P|A⟩⟩ = Σ_{P≠I} Tr[(P⊗P) A]/4`.
pub fn raw_s_vectors() -> (Vec<f64>, Vec<f64>) {
    let mut s_i = vec![0.0; site_dim(2)];
    let mut s_p = vec![0.0; site_dim(2)];
    s_i[copy_index(&[Pauli::I, Pauli::I])] = 0.5;
    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
        s_p[copy_index(&[p, p])] = 0.5;
    }
    (s_i, s_p)
}

/// `(s_I, s_P)` in the orthonormal coordinates of `basis`.
pub fn s_vectors_in(basis: &SiteBasis) -> Result<(Vec<f64>, Vec<f64>)> {
    if basis.t != 2 {
        return Err(Error::InvalidArgument(format!("k-purities need t = 2, got {}", basis.t)));
    }
    let (s_i, s_p) = raw_s_vectors();
    Ok((basis.project(&s_i), basis.project(&s_p)))
}

/// `(s_I, s_P)` in the orthonormal basis of `group`.
pub fn s_vectors(group: Group) -> Result<(Vec<f64>, Vec<f64>)> {
    s_vectors_in(&SiteBasis::for_group(group, 2)?)
}

/// MPS of `Σ_{|c|=k} ⊗_j (s_P if j ∈ c else s_I)`.
///
/// The bond index counts the `s_P` factors placed so far, restricted to the
/// counts that can still reach `k`, so the largest bond is
/// `min(k, n − k) + 1`.
pub fn phi_k_mps(n: usize, k: usize, s_i: &[f64], s_p: &[f64]) -> Result<Mps> {
    if n == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 0 ≤ k ≤ n and n ≥ 1, got n={n}, k={k}")));
    }
    if s_i.len() != s_p.len() {
        return Err(Error::Dimension("s_I and s_P differ in length".into()));
    }
    let d = s_i.len();
    // Counts allowed on the bond left of site j.
    let range = |j: usize| (k.saturating_sub(n - j), k.min(j));
    let mut sites = Vec::with_capacity(n);
    for j in 0..n {
        let (l0, l1) = range(j);
        let (r0, r1) = range(j + 1);
        let mut t = DenseTensor::zeros(vec![l1 - l0 + 1, d, r1 - r0 + 1]);
        for c in l0..=l1 {
            for (next, v) in [(c, s_i), (c + 1, s_p)] {
                if (r0..=r1).contains(&next) {
                    for (p, &x) in v.iter().enumerate() {
                        t.set(&[c - l0, p, next - r0], x);
                    }
                }
            }
        }
        sites.push(t);
    }
    Mps::new(sites, NormLedger::ones(n))
}

/// The k-purities `p^(k)`, `k = 0..n`, of an observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityDistribution {
    pub n: usize,
    pub values: Vec<f64>,
    pub max_bond: usize,
    #[serde(default)]
    pub bond_profile: Vec<usize>,
}

impl PurityDistribution {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest entry.
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

/// Every `⟨⟨φ_k|m⟩⟩`, `k = 0..n`, in one sweep. The environment carries one
/// bond vector per count and is rescaled at every site.
pub fn purities_of(m: &Mps, bases: &[SiteBasis]) -> Result<Vec<f64>> {
    let n = m.len();
    if bases.len() != n || m.physical_dims() != bases.iter().map(SiteBasis::len).collect::<Vec<_>>() {
        return Err(Error::Dimension("MPS and site bases disagree".into()));
    }
    let mut env: Vec<Vec<f64>> = vec![vec![1.0]];
    let mut log_scale = m.ledger().log_product();
    for (site, basis) in m.sites().iter().zip(bases) {
        let (s_i, s_p) = s_vectors_in(basis)?;
        let (l, d, r) = (site.shape()[0], site.shape()[1], site.shape()[2]);
        let data = site.data();
        let reduce = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; l * r];
            for a in 0..l {
                for (p, &x) in v.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let row = &data[(a * d + p) * r..(a * d + p + 1) * r];
                    for (o, y) in out[a * r..(a + 1) * r].iter_mut().zip(row) {
                        *o += x * y;
                    }
                }
            }
            out
        };
        let (mi, mp) = (reduce(&s_i), reduce(&s_p));
        let apply = |e: &[f64], mat: &[f64], out: &mut [f64]| {
            for (a, &x) in e.iter().enumerate() {
                if x != 0.0 {
                    for (o, y) in out.iter_mut().zip(&mat[a * r..(a + 1) * r]) {
                        *o += x * y;
                    }
                }
            }
        };
        let mut next = vec![vec![0.0; r]; env.len() + 1];
        for (c, e) in env.iter().enumerate() {
            apply(e, &mi, &mut next[c]);
            apply(e, &mp, &mut next[c + 1]);
        }
        let scale = next.iter().flatten().fold(0.0f64, |a, &x| a.max(x.abs()));
        if !scale.is_finite() {
            return Err(Error::Numeric("non-finite purity environment".into()));
        }
        if scale == 0.0 {
            return Ok(vec![0.0; n + 1]);
        }
        for e in &mut next {
            e.iter_mut().for_each(|x| *x /= scale);
        }
        log_scale += scale.ln();
        env = next;
    }
    Ok(env.iter().map(|e| e[0] * log_scale.exp()).map(|x| if x == 0.0 { 0.0 } else { x }).collect())
}

/// k-purities of a Pauli observable under a topology.
pub fn k_purities(topology: &Topology, obs: &PauliString) -> Result<PurityDistribution> {
    let pnet = build_pnet(topology, 2)?;
    k_purities_with(&pnet, obs)
}

pub fn k_purities_with(pnet: &PNet, obs: &PauliString) -> Result<PurityDistribution> {
    if obs.len() != pnet.n() {
        return Err(Error::InvalidArgument(format!("observable on {} qubits, circuit on {}", obs.len(), pnet.n())));
    }
    if obs.weight() == 0 {
        return Err(Error::InvalidArgument("k-purities need a non-identity Pauli".into()));
    }
    let evo = pnet.evolve(&pnet.observable_mps(&Observable::Pauli(obs.clone()))?)?;
    Ok(PurityDistribution {
        n: pnet.n(),
        values: purities_of(&evo.mps, &pnet.bases)?,
        max_bond: evo.max_bond,
        bond_profile: evo.bond_profile,
    })
}

/// `ln C(n, k)` for every `k`.
fn ln_binomials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += ((n + 1 - k) as f64).ln() - (k as f64).ln();
        out.push(acc);
    }
    out
}

/// k-purities of a global 2-design: `3^k C(n,k) / (4^n − 1)` for `k ≥ 1`.
pub fn haar_purities(n: usize) -> Result<PurityDistribution> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1".into()));
    }
    let ln_c = ln_binomials(n);
    // ln(4^n − 1) without overflow.
    let ln_den = n as f64 * 4f64.ln() + (-(0.25f64.powi(n as i32))).ln_1p();
    let values = (0..=n)
        .map(|k| if k == 0 { 0.0 } else { (k as f64 * 3f64.ln() + ln_c[k] - ln_den).exp() })
        .collect();
    Ok(PurityDistribution { n, values, max_bond: 1, bond_profile: Vec::new() })
}

/// `Z = 2^n E[p(0ⁿ)²]`, flagged when the equiprobability shortcut does not
/// apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub z: f64,
    pub log_z: f64,
    pub max_bond: usize,
    /// Empty when every outcome has the same second moment.
    pub warnings: Vec<String>,
}

/// Reasons the shortcut `Σ_x E[p(x)²] = 2^n E[p(0ⁿ)²]` may fail.
pub fn collision_warnings(topology: &Topology) -> Vec<String> {
    let mut out = Vec::new();
    let untouched: Vec<usize> = (1..=topology.n).filter(|q| !topology.touched().contains(&(q - 1))).collect();
    if !untouched.is_empty() {
        out.push(format!("qubits {untouched:?} are not touched by any gate"));
    }
    if topology.groups().contains(&Group::FfSo4) {
        out.push("free-fermionic gates do not make outcomes equiprobable".into());
    }
    out
}

pub fn collision_probability(topology: &Topology) -> Result<Collision> {
    collision_with(&build_pnet(topology, 2)?)
}

pub fn collision_with(pnet: &PNet) -> Result<Collision> {
    let n = pnet.n();
    let zeros = Observable::zeros(n);
    let v = pnet.moment_of(&vec![0; n], &zeros)?;
    Ok(collision_from(pnet, v.log_abs, v.sign, v.max_bond))
}

fn collision_from(pnet: &PNet, log_abs: f64, sign: f64, max_bond: usize) -> Collision {
    let log_z = log_abs + pnet.n() as f64 * 2f64.ln();
    Collision {
        z: if sign == 0.0 { 0.0 } else { sign * log_z.exp() },
        log_z,
        max_bond,
        warnings: collision_warnings(&pnet.topology),
    }
}

/// Collision probabilities after each of `1..=layers` repetitions of a
/// one-layer circuit, reusing the evolved MPS between depths.
pub fn collision_sweep(layer: &Topology, layers: usize) -> Result<Vec<Collision>> {
    collision_sweep_with(&build_pnet(layer, 2)?, layers)
}

pub fn collision_sweep_with(pnet: &PNet, layers: usize) -> Result<Vec<Collision>> {
    let n = pnet.n();
    let obs = pnet.observable_mps(&Observable::zeros(n))?;
    let rho = pnet.state_mps(&vec![0; n])?.balance_sites();
    let mut out = Vec::with_capacity(layers);
    pnet.evolve_repeated(&obs, layers, |_, m| {
        let ip = inner_product(&rho, m)?;
        out.push(collision_from(pnet, ip.log_abs, ip.sign, m.max_bond()));
        Ok(())
    })?;
    Ok(out)
}

/// Collision probability of a globally Haar-random circuit.
pub fn z_haar(n: usize, family: GroupFamily) -> Result<f64> {
    let d = 2f64.powi(n as i32);
    match family {
        GroupFamily::U => Ok(2.0 / (d + 1.0)),
        GroupFamily::O => Ok(3.0 / (d + 2.0)),
        GroupFamily::Sp => Err(Error::UnsupportedGroup("no collision limit for Sp".into())),
    }
}

/// Single-qubit reduced state of the normalized deep-circuit observable in
/// the orthonormal `{𝟙, S}` basis, and its eigenvalues `λ₁ > λ₂`.
pub fn deep_hea_reduced_state(n: usize) -> Result<(DenseTensor<f64>, [f64; 2])> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1".into()));
    }
    // Entries scaled by 4^{-n} so they stay finite for any n.
    let q = 0.25f64.powi(n as i32);
    let den = 1.0 - q;
    let a = (0.25 - q) / den;
    let c = 0.75 / den;
    let b = 3f64.sqrt() * a;
    let rho = DenseTensor::from_rows(&[vec![a, b], vec![b, c]])?;
    let tr = a + c;
    let det = 3.0 * (0.25 - q) * q / (den * den);
    let l1 = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
    Ok((rho, [l1, det / l1]))
}

/// `−Σ λ ln λ` of a two-level spectrum.
pub fn binary_entropy(l: [f64; 2]) -> f64 {
    vn_of(&l)
}

/// Region families for entanglement scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Q,
    E,
    M,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "Q" => Ok(Family::Q),
            "E" => Ok(Family::E),
            "M" => Ok(Family::M),
            other => Err(Error::InvalidArgument(format!("unknown region family {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    S,
    S2,
}

/// One entry of an entanglement scan; `value` is `None` when skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub layer: usize,
    pub family: Family,
    pub index: usize,
    pub measure: Measure,
    pub value: Option<f64>,
}

/// Largest bond for which second Rényi entropies are computed.
pub const S2_BOND_BUDGET: usize = 64;

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub families: Vec<Family>,
    pub renyi2: bool,
    pub bond_budget: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { families: vec![Family::Q, Family::E, Family::M], renyi2: true, bond_budget: S2_BOND_BUDGET }
    }
}

/// Entropies of the normalized evolving observable for one MPS.
pub fn entropy_rows(m: &Mps, layer: usize, opts: &ScanOptions) -> Result<Vec<EntropyRow>> {
    let n = m.len();
    let state = m.normalize_to_state()?;
    let (singles, edges) = state.sweep_spectra()?;
    let allow_s2 = state.max_bond() <= opts.bond_budget;
    let mut rows = Vec::new();
    let mut push = |family, index, eig: Option<&[f64]>| {
        rows.push(EntropyRow { layer, family, index, measure: Measure::S, value: eig.map(vn_of) });
        if opts.renyi2 {
            let value = if allow_s2 { eig.map(renyi2_of) } else { None };
            rows.push(EntropyRow { layer, family, index, measure: Measure::S2, value });
        }
    };
    for &family in &opts.families {
        match family {
            Family::Q => {
                for (j, eig) in singles.iter().enumerate() {
                    push(Family::Q, j + 1, Some(eig));
                }
            }
            Family::E => {
                for (j, eig) in edges.iter().enumerate().take(n.saturating_sub(1)) {
                    push(Family::E, j + 1, Some(eig));
                }
            }
            Family::M => {
                for j in 0..n / 2 {
                    let region = Region::middle(j, n)?;
                    if region.len() == n {
                        break;
                    }
                    let eig = state.reduced_spectrum(region)?;
                    push(Family::M, j, Some(&eig));
                }
            }
        }
    }
    Ok(rows)
}

/// Entropies after every layer boundary (or every compression point when
/// the topology has no layer marks), layer 0 being the bare observable.
pub fn entropy_scan(topology: &Topology, obs: &Observable, opts: &ScanOptions) -> Result<Vec<EntropyRow>> {
    entropy_scan_with(&build_pnet(topology, 2)?, obs, opts)
}

pub fn entropy_scan_with(pnet: &PNet, obs: &Observable, opts: &ScanOptions) -> Result<Vec<EntropyRow>> {
    let topology = &pnet.topology;
    let start = pnet.observable_mps(obs)?;
    let mut rows = entropy_rows(&start, 0, opts)?;
    let marked = !topology.layers.is_empty();
    let mut point = 0;
    pnet.evolve_with(&start, |applied, m| {
        point += 1;
        let layer = if marked { pnet.layers_absorbed(applied) } else { Some(point) };
        if let Some(layer) = layer {
            rows.extend(entropy_rows(m, layer, opts)?);
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Bond-3 MPS of `Σ_j |0…1_j…0⟩ + Σ_{i<j} |0…2_i 1…1 2_j 0…⟩`.
pub fn q02_mps(n: usize) -> Result<Mps> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n ≥ 2, got {n}")));
    }
    // Bond states: 0 nothing placed yet, 1 finished, 2 inside an open string.
    let e = |p: usize| {
        let mut v = [0.0; 3];
        v[p] = 1.0;
        v
    };
    let bulk: [[Option<usize>; 3]; 3] = [[Some(0), Some(1), Some(2)], [None, Some(0), None], [None, Some(2), Some(1)]];
    let first = [0, 1, 2];
    let last = [1, 0, 2];
    let mut sites = Vec::with_capacity(n);
    let mut t = DenseTensor::zeros(vec![1, 3, 3]);
    for (nu, &p) in first.iter().enumerate() {
        t.set(&[0, p, nu], 1.0);
    }
    sites.push(t);
    for _ in 1..n - 1 {
        let mut t = DenseTensor::zeros(vec![3, 3, 3]);
        for (mu, row) in bulk.iter().enumerate() {
            for (nu, entry) in row.iter().enumerate() {
                if let Some(p) = entry {
                    for (q, x) in e(*p).iter().enumerate() {
                        if *x != 0.0 {
                            t.set(&[mu, q, nu], *x);
                        }
                    }
                }
            }
        }
        sites.push(t);
    }
    let mut t = DenseTensor::zeros(vec![3, 3, 1]);
    for (mu, &p) in last.iter().enumerate() {
        t.set(&[mu, p, 0], 1.0);
    }
    sites.push(t);
    Mps::new(sites, NormLedger::ones(n))
}
