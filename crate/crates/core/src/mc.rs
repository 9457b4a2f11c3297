//! Signed Monte Carlo estimate of k-purities by sampling paths through the
//! P-gate columns.
//!
//! Site elements are rescaled so that each reads out to exactly one unit of
//! purity (`𝟙`, `S/3`, `B`, ...). In that basis a U(4) gate column is a
//! probability vector and a path's weight stays 1; gates with negative or
//! super-stochastic columns make weights signed and growing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{raw_s_vectors, PurityDistribution};
use crate::commutant::{PGate, SiteBasis};
use crate::error::{Error, Result};
use crate::pauli::{tensor_power_coords, PauliString};
use crate::pnet::{build_pnet, Topology};
use crate::tensor::DenseTensor;

const ZERO_TOL: f64 = 1e-14;

/// Sign structure of a P-gate in its natural basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub has_negative: bool,
    pub min_entry: f64,
    /// `Σ|column| / |Σ column|` per input; 1 for non-negative columns.
    pub column_ratios: Vec<f64>,
}

pub fn sign_problem_report(matrix: &DenseTensor<f64>) -> SignReport {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let min_entry = matrix.data().iter().copied().fold(f64::INFINITY, f64::min);
    let column_ratios = (0..cols)
        .map(|j| {
            let col: Vec<f64> = (0..rows).map(|i| matrix.get(&[i, j])).collect();
            let l1: f64 = col.iter().map(|x| x.abs()).sum();
            let sum: f64 = col.iter().sum();
            if l1 == 0.0 {
                1.0
            } else {
                l1 / sum.abs()
            }
        })
        .collect();
    SignReport { has_negative: min_entry < -ZERO_TOL, min_entry, column_ratios }
}

pub fn gate_sign_report(gate: &PGate) -> SignReport {
    sign_problem_report(&gate.natural_matrix())
}

/// `⌈ε⁻² ln(1/δ)⌉` samples for additive error `ε` with confidence `1 − δ`.
pub fn sample_complexity_bound(epsilon: f64, delta: f64) -> Result<u128> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("need ε > 0 and 0 < δ ≤ 1, got ε={epsilon}, δ={delta}")));
    }
    let v = (1.0 / delta).ln() / (epsilon * epsilon);
    if v >= u128::MAX as f64 {
        return Err(Error::Numeric("sample bound overflows".into()));
    }
    // Snap to the integer below when rounding pushed the value just past it.
    let r = v.round();
    Ok(if (v - r).abs() <= 1e-9 * r.max(1.0) { r as u128 } else { v.ceil() as u128 })
}

/// The bound for resolving a single Pauli weight `4^{-n}`.
pub fn pauli_resolution_bound(n: usize, delta: f64) -> Result<u128> {
    sample_complexity_bound(0.25f64.powi(n as i32), delta)
}

/// `Σ p log(p / p̂)` with `p̂` floored at `1/(10 n_s)` and renormalized.
pub fn kl_divergence(p_true: &[f64], p_est: &[f64], n_s: usize) -> Result<f64> {
    if p_true.len() != p_est.len() {
        return Err(Error::Dimension(format!("distributions of length {} and {}", p_true.len(), p_est.len())));
    }
    let floor = 1.0 / (10.0 * n_s.max(1) as f64);
    let floored: Vec<f64> = p_est.iter().map(|&x| x.max(floor)).collect();
    let total: f64 = floored.iter().sum();
    Ok(p_true
        .iter()
        .zip(&floored)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / (q / total)).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Transition table for one site basis: elements rescaled to unit readout.
#[derive(Clone, Debug)]
struct SiteTable {
    /// Bodyness contributed by each element (0 for `𝟙`, 1 otherwise).
    body: Vec<u8>,
    /// Readout `r_b` of each natural element.
    readout: Vec<f64>,
}

impl SiteTable {
    fn new(basis: &SiteBasis) -> Result<Self> {
        let (s_i, s_p) = raw_s_vectors();
        let mut body = Vec::new();
        let mut readout = Vec::new();
        for (label, v) in basis.labels.iter().zip(&basis.natural) {
            let a: f64 = s_i.iter().zip(v).map(|(x, y)| x * y).sum();
            let b: f64 = s_p.iter().zip(v).map(|(x, y)| x * y).sum();
            let r = a + b;
            if r.abs() < ZERO_TOL || (a.abs() > ZERO_TOL && b.abs() > ZERO_TOL) {
                return Err(Error::UnsupportedGroup(format!("site element {label} has no single bodyness")));
            }
            body.push(u8::from(b.abs() > ZERO_TOL));
            readout.push(r);
        }
        Ok(SiteTable { body, readout })
    }
}

/// A gate's columns in the unit-readout basis, ready for sampling.
#[derive(Clone, Debug)]
struct Transition {
    a: usize,
    b: usize,
    db: usize,
    /// `columns[in]` lists `(out, value)` for the nonzero entries.
    columns: Vec<Vec<(usize, f64)>>,
}

/// One sampled path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trajectory {
    pub bodyness: usize,
    pub sign: f64,
    pub log_weight: f64,
}

impl Trajectory {
    pub fn weight(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_weight.exp()
        }
    }
}

/// Sign statistics of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignStats {
    /// Fraction of trajectories with negative weight.
    pub negative_fraction: f64,
    /// `(Σ|w|)² / Σw²`.
    pub effective_samples: f64,
    /// Fraction of trajectories absorbed by an all-zero column.
    pub annihilated_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n_s: usize,
    pub seed: u64,
    pub estimates: Vec<f64>,
    pub stderr: Vec<f64>,
    pub signs: SignStats,
}

impl McEstimate {
    pub fn distribution(&self) -> PurityDistribution {
        PurityDistribution { n: self.estimates.len() - 1, values: self.estimates.clone(), max_bond: 0, bond_profile: Vec::new() }
    }
}

/// Prepared sampler for one circuit and observable.
#[derive(Clone, Debug)]
pub struct McSampler {
    n: usize,
    sites: Vec<SiteTable>,
    /// Per-site initial distribution `(element, value)` in unit-readout form.
    start: Vec<Vec<(usize, f64)>>,
    /// Heisenberg order.
    transitions: Vec<Transition>,
}

impl McSampler {
    pub fn new(topology: &Topology, obs: &PauliString) -> Result<Self> {
        let n = topology.n;
        if obs.len() != n {
            return Err(Error::InvalidArgument(format!("observable on {} qubits, circuit on {n}", obs.len())));
        }
        let pnet = build_pnet(topology, 2)?;
        let touched = topology.touched();
        // Untouched sites carry the observable factor unchanged.
        let bases: Vec<SiteBasis> = pnet
            .bases
            .iter()
            .enumerate()
            .map(|(j, b)| {
                if touched.contains(&j) {
                    Ok(b.clone())
                } else {
                    let v = tensor_power_coords(&obs.0[j].matrix(), 2);
                    let mut single = SiteBasis::full(2);
                    single.labels = vec![format!("{}{}", obs.0[j].to_char(), obs.0[j].to_char())];
                    single.natural = vec![v.clone()];
                    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    single.orth = vec![v.iter().map(|x| x / nv).collect()];
                    single.change = DenseTensor::new(vec![1, 1], vec![nv])?;
                    Ok(single)
                }
            })
            .collect::<Result<_>>()?;
        let sites: Vec<SiteTable> = bases.iter().map(SiteTable::new).collect::<Result<_>>()?;
        let mut start = Vec::with_capacity(n);
        for (j, basis) in bases.iter().enumerate() {
            let v = tensor_power_coords(&obs.0[j].matrix(), 2);
            let x = basis.natural_coords(&v);
            let entries: Vec<(usize, f64)> = x
                .iter()
                .zip(&sites[j].readout)
                .enumerate()
                .map(|(i, (c, r))| (i, c * r))
                .filter(|(_, c)| c.abs() > ZERO_TOL)
                .collect();
            if entries.is_empty() {
                return Err(Error::InvalidArgument(format!("observable factor on qubit {} vanishes", j + 1)));
            }
            start.push(entries);
        }
        let mut transitions = Vec::with_capacity(pnet.num_gates());
        let placements: Vec<_> = pnet.placements().collect();
        for (gate, a, b) in placements.into_iter().rev() {
            let m = gate.natural_matrix();
            let (ra, rb) = (&sites[a].readout, &sites[b].readout);
            let db = rb.len();
            let dim = ra.len() * db;
            let r = |k: usize| ra[k / db] * rb[k % db];
            let columns = (0..dim)
                .map(|i| {
                    (0..dim)
                        .map(|o| (o, m.get(&[o, i]) * r(o) / r(i)))
                        .filter(|(_, v)| v.abs() > ZERO_TOL)
                        .collect()
                })
                .collect();
            transitions.push(Transition { a, b, db, columns });
        }
        Ok(McSampler { n, sites, start, transitions })
    }

    fn pick(entries: &[(usize, f64)], rng: &mut ChaCha8Rng) -> (usize, f64, f64) {
        let l1: f64 = entries.iter().map(|(_, v)| v.abs()).sum();
        let mut u = rng.random::<f64>() * l1;
        for &(i, v) in entries {
            u -= v.abs();
            if u < 0.0 {
                return (i, v.signum(), l1);
            }
        }
        let &(i, v) = entries.last().expect("non-empty");
        (i, v.signum(), l1)
    }

    /// One path: sample the start configuration, then each gate column in
    /// turn with probability `∝ |entry|`.
    pub fn trajectory(&self, rng: &mut ChaCha8Rng) -> Trajectory {
        let mut config = Vec::with_capacity(self.n);
        let mut sign = 1.0;
        let mut log_weight = 0.0;
        for entries in &self.start {
            let (i, s, l1) = Self::pick(entries, rng);
            config.push(i);
            sign *= s;
            log_weight += l1.ln();
        }
        for t in &self.transitions {
            let input = config[t.a] * t.db + config[t.b];
            let col = &t.columns[input];
            if col.is_empty() {
                return Trajectory { bodyness: 0, sign: 0.0, log_weight: f64::NEG_INFINITY };
            }
            let (out, s, l1) = Self::pick(col, rng);
            config[t.a] = out / t.db;
            config[t.b] = out % t.db;
            sign *= s;
            log_weight += l1.ln();
        }
        let bodyness = config.iter().zip(&self.sites).map(|(&c, s)| s.body[c] as usize).sum();
        Trajectory { bodyness, sign, log_weight }
    }

    /// Runs `n_s` trajectories, trajectory `i` on substream `i` of `seed`.
    pub fn run(&self, n_s: usize, seed: u64) -> Result<McEstimate> {
        if n_s == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let paths: Vec<Trajectory> = (0..n_s)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                self.trajectory(&mut rng)
            })
            .collect();
        let mut sum = vec![0.0; self.n + 1];
        let mut sum_sq = vec![0.0; self.n + 1];
        let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
        let (mut negative, mut annihilated) = (0usize, 0usize);
        for p in &paths {
            let w = p.weight();
            if p.sign == 0.0 {
                annihilated += 1;
            } else if p.sign < 0.0 {
                negative += 1;
            }
            sum[p.bodyness] += w;
            sum_sq[p.bodyness] += w * w;
            abs_sum += w.abs();
            sq_sum += w * w;
        }
        let ns = n_s as f64;
        let floor = (1.0 / ns) * (1.0 - 1.0 / ns);
        let estimates: Vec<f64> = sum.iter().map(|s| s / ns).collect();
        let stderr = estimates
            .iter()
            .zip(&sum_sq)
            .map(|(m, sq)| {
                let var = if n_s > 1 { ((sq - ns * m * m) / (ns - 1.0)).max(0.0) } else { 0.0 };
                (var.max(floor) / ns).sqrt()
            })
            .collect();
        Ok(McEstimate {
            n_s,
            seed,
            estimates,
            stderr,
            signs: SignStats {
                negative_fraction: negative as f64 / ns,
                effective_samples: if sq_sum > 0.0 { abs_sum * abs_sum / sq_sum } else { 0.0 },
                annihilated_fraction: annihilated as f64 / ns,
            },
        })
    }
}

/// Monte Carlo k-purities of a Pauli observable.
pub fn mc_sample_purities(topology: &Topology, obs: &PauliString, n_s: usize, seed: u64) -> Result<McEstimate> {
    McSampler::new(topology, obs)?.run(n_s, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::k_purities;
    use crate::commutant::{pgate_ff_so4_t2, pgate_o4_t2, pgate_u4_t2, Group};
    use crate::pnet::hea_topology;

    #[test]
    fn sign_reports() {
        let u = gate_sign_report(&pgate_u4_t2());
        assert!(!u.has_negative);
        assert!(u.column_ratios.iter().all(|r| (r - 1.0).abs() < 1e-12 || *r == 1.0));
        let o = gate_sign_report(&pgate_o4_t2());
        assert!(o.has_negative);
        assert!((o.min_entry + 1.0 / 18.0).abs() < 1e-15);
        assert!(!sign_problem_report(&DenseTensor::identity(4)).has_negative);
        let _ = gate_sign_report(&pgate_ff_so4_t2());
    }

    #[test]
    fn complexity_bounds() {
        assert_eq!(sample_complexity_bound(0.1, 0.05).unwrap(), 300);
        assert_eq!(sample_complexity_bound(0.3, 1.0).unwrap(), 0);
        let a = pauli_resolution_bound(3, 0.05).unwrap();
        let b = pauli_resolution_bound(4, 0.05).unwrap();
        assert!((b as f64 / a as f64 - 16.0).abs() < 1e-3);
        assert!(sample_complexity_bound(0.0, 0.5).is_err());
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8], 1_000_000).unwrap(), 0.0);
        let v = kl_divergence(&[0.5, 0.5], &[0.75, 0.25], 1_000_000_000).unwrap();
        let want = 0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln();
        assert!((v - want).abs() < 1e-8);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0], 10).unwrap().is_finite());
        assert!(kl_divergence(&[1.0], &[0.5, 0.5], 10).is_err());
    }

    #[test]
    fn zero_gates_are_degenerate() {
        let obs = PauliString::parse("XIZ", 3).unwrap();
        let est = mc_sample_purities(&Topology::empty(3).unwrap(), &obs, 100, 1).unwrap();
        for (e, w) in est.estimates.iter().zip([0.0, 0.0, 1.0, 0.0]) {
            assert!((e - w).abs() < 1e-14);
        }
    }

    #[test]
    fn single_gate_frequencies() {
        let t = hea_topology(2, 1, Group::U4).unwrap();
        let est = mc_sample_purities(&t, &PauliString::parse("Z1", 2).unwrap(), 100_000, 7).unwrap();
        for (e, (want, s)) in est.estimates.iter().zip([0.0, 0.4, 0.6].iter().zip(&est.stderr)) {
            assert!((e - want).abs() <= 3.0 * s, "{e} vs {want} ± {s}");
        }
        assert_eq!(est.signs.negative_fraction, 0.0);
    }

    #[test]
    fn u4_paths_have_unit_weight() {
        let t = hea_topology(4, 2, Group::U4).unwrap();
        let s = McSampler::new(&t, &PauliString::parse("Y2", 4).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let tr = s.trajectory(&mut rng);
            assert_eq!(tr.sign, 1.0);
            assert!(tr.log_weight.abs() < 1e-12);
        }
    }

    #[test]
    fn o4_estimates_are_unbiased_but_signed() {
        let t = hea_topology(4, 1, Group::O4).unwrap();
        let obs = PauliString::parse("Z2", 4).unwrap();
        let exact = k_purities(&t, &obs).unwrap();
        let est = mc_sample_purities(&t, &obs, 50_000, 11).unwrap();
        for k in 0..=4 {
            assert!((est.estimates[k] - exact.values[k]).abs() <= 4.0 * est.stderr[k], "k={k}");
        }
        assert!(est.signs.effective_samples < est.n_s as f64);
    }

    #[test]
    fn runs_are_reproducible() {
        let t = hea_topology(3, 2, Group::U4).unwrap();
        let obs = PauliString::parse("Z1", 3).unwrap();
        let a = mc_sample_purities(&t, &obs, 2_000, 3).unwrap();
        let b = mc_sample_purities(&t, &obs, 2_000, 3).unwrap();
        assert_eq!(a, b);
    }
}
