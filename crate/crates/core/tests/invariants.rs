//! Cross-module properties of the P-net engine, the analysis layer and the
//! Monte Carlo baseline, checked on random small instances.

use momentnet::analysis::{k_purities, purities_of};
use momentnet::commutant::{commutant_dim_bound, Group, GroupFamily, PGate, SiteBasis};
use momentnet::mc::{kl_divergence, McSampler};
use momentnet::mps::{Mps, Region};
use momentnet::oracle::{exact_moment_small, OracleMode};
use momentnet::pauli::{Pauli, PauliString};
use momentnet::pnet::{build_pnet, hea_topology, moment, qcnn_topology, GatePlacement, Observable, Topology};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn group_strategy(with_ff: bool) -> BoxedStrategy<Group> {
    if with_ff {
        prop_oneof![Just(Group::U4), Just(Group::O4), Just(Group::FfSo4)].boxed()
    } else {
        prop_oneof![Just(Group::U4), Just(Group::O4)].boxed()
    }
}

/// Random topology on 2..=max_n qubits with up to `max_gates` gates on
/// arbitrary (possibly distant) pairs.
fn topology(max_n: usize, max_gates: usize, with_ff: bool) -> impl Strategy<Value = Topology> {
    (2..=max_n).prop_flat_map(move |n| {
        let gate = (1..=n, 1..n, group_strategy(with_ff)).prop_map(move |(a, b, group)| {
            let b = if b >= a { b + 1 } else { b };
            GatePlacement { qubits: vec![a, b], group }
        });
        prop::collection::vec(gate, 0..=max_gates).prop_map(move |gates| Topology::new(n, gates).unwrap())
    })
}

fn pauli(n: usize) -> impl Strategy<Value = PauliString> {
    prop::collection::vec(0usize..4, n).prop_map(|v| PauliString(v.into_iter().map(Pauli::from_index).collect()))
}

fn nontrivial_pauli(n: usize) -> impl Strategy<Value = PauliString> {
    pauli(n).prop_map(|mut p| {
        if p.weight() == 0 {
            p.0[0] = Pauli::Y;
        }
        p
    })
}

fn with_obs(max_n: usize, max_gates: usize, with_ff: bool) -> impl Strategy<Value = (Topology, PauliString, Vec<u8>)> {
    topology(max_n, max_gates, with_ff).prop_flat_map(|t| {
        let n = t.n;
        (Just(t), pauli(n), prop::collection::vec(0u8..2, n))
    })
}

fn reflect_pauli(p: &PauliString) -> PauliString {
    PauliString(p.0.iter().rev().copied().collect())
}

/// Applies `gate` to sites `(a, b)` of a dense vector with per-site dims.
fn apply_dense(v: &[f64], dims: &[usize], gate: &PGate, a: usize, b: usize) -> Vec<f64> {
    let stride = |j: usize| dims[j + 1..].iter().product::<usize>();
    let (sa, sb) = (stride(a), stride(b));
    let (da, db) = (dims[a], dims[b]);
    let m = gate.matrix();
    let mut out = vec![0.0; v.len()];
    for (idx, x) in v.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        let (ia, ib) = ((idx / sa) % da, (idx / sb) % db);
        let base = idx - ia * sa - ib * sb;
        for oa in 0..da {
            for ob in 0..db {
                out[base + oa * sa + ob * sb] += m.get(&[oa * db + ob, ia * db + ib]) * x;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn moments_match_the_dense_oracle((topo, obs, bits) in with_obs(5, 6, false), t in 1usize..=2) {
        let obs = Observable::Pauli(obs);
        let tn = moment(&topo, t, &bits, &obs).unwrap();
        let exact = exact_moment_small(&topo, &bits, &obs, t, OracleMode::Exact).unwrap().value;
        prop_assert!((tn - exact).abs() <= 1e-10, "{tn} vs {exact}");
    }

}

proptest! {
    // The free-fermion commutant is solved for densely and is slow.
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn free_fermion_moments_match_the_dense_oracle((topo, obs, bits) in with_obs(4, 4, true)) {
        let obs = Observable::Pauli(obs);
        let tn = moment(&topo, 2, &bits, &obs).unwrap();
        let exact = exact_moment_small(&topo, &bits, &obs, 2, OracleMode::Exact).unwrap().value;
        prop_assert!((tn - exact).abs() <= 1e-10, "{tn} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_observables_match_the_dense_oracle(
        topo in topology(4, 5, false),
        seed in any::<u64>(),
    ) {
        let n = topo.n;
        let bits: Vec<u8> = (0..n).map(|j| ((seed >> j) & 1) as u8).collect();
        let obs = Observable::Projector((0..n).map(|j| ((seed >> (j + 8)) & 1) as u8).collect());
        let tn = moment(&topo, 2, &bits, &obs).unwrap();
        let exact = exact_moment_small(&topo, &bits, &obs, 2, OracleMode::Exact).unwrap().value;
        prop_assert!((tn - exact).abs() <= 1e-10, "{tn} vs {exact}");
    }

    #[test]
    fn reflection_relabels_qubits((topo, obs, bits) in with_obs(6, 8, true)) {
        let a = moment(&topo, 2, &bits, &Observable::Pauli(obs.clone())).unwrap();
        let rbits: Vec<u8> = bits.iter().rev().copied().collect();
        let b = moment(&topo.reflected(), 2, &rbits, &Observable::Pauli(reflect_pauli(&obs))).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn dense_expansion_matches_mps_evolution((topo, obs, _bits) in with_obs(6, 8, false)) {
        let pnet = build_pnet(&topo, 2).unwrap();
        let start = pnet.observable_mps(&Observable::Pauli(obs)).unwrap();
        let dims = pnet.physical_dims();
        let mut dense = start.to_dense().unwrap();
        for (gate, a, b) in pnet.placements().collect::<Vec<_>>().into_iter().rev() {
            dense = apply_dense(&dense, &dims, gate, a, b);
        }
        let got = pnet.evolve(&start).unwrap().mps.to_dense().unwrap();
        let scale = dense.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        let err = dense.iter().zip(&got).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(err <= 1e-10 * scale, "error {err} at scale {scale}");
    }

    #[test]
    fn purities_are_a_distribution((topo, obs, _bits) in with_obs(7, 10, false).prop_flat_map(|(t, _, b)| {
        let n = t.n;
        (Just(t), nontrivial_pauli(n), Just(b))
    })) {
        let p = k_purities(&topo, &obs).unwrap();
        prop_assert!((p.total() - 1.0).abs() <= 1e-10, "total {}", p.total());
        prop_assert!(p.values.iter().all(|&x| x >= -1e-12));
        prop_assert!(p.values[0].abs() <= 1e-12);
    }

    #[test]
    fn entropies_are_ordered_and_symmetric((topo, obs, _bits) in with_obs(6, 8, false), cut in 0usize..5) {
        let pnet = build_pnet(&topo, 2).unwrap();
        let m = pnet.evolve(&pnet.observable_mps(&Observable::Pauli(obs)).unwrap()).unwrap().mps;
        let n = m.len();
        let j = cut % (n - 1);
        let state = m.normalize_to_state().unwrap();
        let left = Region::new(0, j).unwrap();
        let right = Region::new(j + 1, n - 1).unwrap();
        let s = state.entropy_vn(left).unwrap();
        let s2 = state.entropy_renyi2(left).unwrap();
        prop_assert!(s2 >= -1e-12 && s + 1e-12 >= s2, "S = {s}, S2 = {s2}");
        let sc = state.entropy_vn(right).unwrap();
        prop_assert!((s - sc).abs() <= 1e-10, "{s} vs complement {sc}");
    }

    #[test]
    fn unitary_trajectories_are_unsigned(
        (topo, obs, _bits) in with_obs(6, 10, false).prop_flat_map(|(t, _, b)| {
            let n = t.n;
            (Just(t.with_group(Group::U4)), nontrivial_pauli(n), Just(b))
        }),
        seed in any::<u64>(),
    ) {
        let sampler = McSampler::new(&topo, &obs).unwrap();
        let est = sampler.run(200, seed).unwrap();
        prop_assert_eq!(est.signs.negative_fraction, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let tr = sampler.trajectory(&mut rng);
            prop_assert!(tr.sign >= 0.0);
        }
    }

    #[test]
    fn kl_is_zero_on_equal_and_permutation_invariant(
        raw in prop::collection::vec(0.0f64..1.0, 2..10),
        noise in prop::collection::vec(0.0f64..1.0, 10),
        shift in 0usize..10,
    ) {
        let total: f64 = raw.iter().sum::<f64>().max(1e-9);
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        prop_assert!(kl_divergence(&p, &p, 1_000_000_000).unwrap().abs() <= 1e-9);
        let q: Vec<f64> = p.iter().zip(&noise).map(|(a, b)| 0.5 * a + 0.5 * b / noise.len() as f64).collect();
        let k = p.len();
        let rot = |v: &[f64]| (0..k).map(|i| v[(i + shift) % k]).collect::<Vec<f64>>();
        let a = kl_divergence(&p, &q, 1000).unwrap();
        let b = kl_divergence(&rot(&p), &rot(&q), 1000).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn order_within_a_layer_does_not_matter() {
    let topo = hea_topology(7, 3, Group::O4).unwrap();
    let mut shuffled = topo.clone();
    // Reverse each layer's disjoint sublayers.
    let mut start = 0;
    for &end in &topo.layers {
        let layer = &mut shuffled.gates[start..end];
        let odd = layer.iter().filter(|g| g.qubits[0] % 2 == 1).count();
        layer[..odd].reverse();
        layer[odd..].reverse();
        start = end;
    }
    assert_ne!(shuffled.gates, topo.gates);
    let obs = Observable::Pauli(PauliString::parse("X2 Z5", 7).unwrap());
    let a = moment(&topo, 2, &[0, 1, 0, 0, 1, 1, 0], &obs).unwrap();
    let b = moment(&shuffled, 2, &[0, 1, 0, 0, 1, 1, 0], &obs).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
}

#[test]
fn ledger_entries_stay_order_one() {
    let cases = [
        (hea_topology(16, 16, Group::U4).unwrap(), "Z8"),
        (hea_topology(16, 8, Group::O4).unwrap(), "Z8"),
        (qcnn_topology(64, Group::U4).unwrap(), "Z1"),
    ];
    for (topo, obs) in cases {
        let n = topo.n;
        let pnet = build_pnet(&topo, 2).unwrap();
        let v = pnet.moment_of(&vec![0; n], &Observable::Pauli(PauliString::parse(obs, n).unwrap())).unwrap();
        for ledger in [&v.obs_ledger, &v.rho_ledger, &v.trace_ledger] {
            let (lo, hi) = ledger.range();
            assert!(lo >= 1e-3 && hi <= 1e3, "{obs}: ledger range [{lo}, {hi}]");
        }
        assert!(v.value.is_finite() && v.value > 0.0);
    }
}

#[test]
fn qcnn_bond_jumps_only_at_powers_of_two() {
    let chi = |n: usize| {
        let pnet = build_pnet(&qcnn_topology(n, Group::U4).unwrap(), 2).unwrap();
        let obs = pnet.observable_mps(&Observable::Pauli(PauliString::parse("Z1", n).unwrap())).unwrap();
        pnet.evolve(&obs).unwrap().max_bond
    };
    let at_powers: Vec<usize> = (1..=7).map(|e| chi(1 << e)).collect();
    for n in 2..=128usize {
        let p = n.next_power_of_two().trailing_zeros() as usize;
        assert!(chi(n) <= at_powers[p - 1], "n = {n}: {} > {}", chi(n), at_powers[p - 1]);
    }
}

#[test]
fn gate_legs_match_commutant_dimensions() {
    for (group, family) in [(Group::U4, GroupFamily::U), (Group::O4, GroupFamily::O)] {
        let basis = SiteBasis::for_group(group, 2).unwrap();
        let gate = PGate::build(group, 2, &basis, &basis).unwrap();
        let bound = commutant_dim_bound(family, 2, 2, 1).unwrap() as usize;
        assert_eq!(gate.dims(), [bound, bound], "{group}");
        assert!(gate.idempotence_residual() <= 1e-10);
        assert!(gate.symmetry_residual() <= 1e-10);
        assert!(gate.identity_residual() <= 1e-10);
    }
}

#[test]
fn purities_from_any_basis_agree() {
    // The same circuit evaluated in its own basis and in the full basis.
    let topo = hea_topology(4, 2, Group::U4).unwrap();
    let obs = PauliString::parse("X2", 4).unwrap();
    let own = k_purities(&topo, &obs).unwrap();
    let full: Vec<SiteBasis> = vec![SiteBasis::full(2); 4];
    let pnet = build_pnet(&topo, 2).unwrap();
    let start = momentnet::pnet::vectorize_observable(&Observable::Pauli(obs.clone()), &full).unwrap();
    let mut dense = start.to_dense().unwrap();
    let dims = vec![16; 4];
    for (gate, a, b) in pnet.placements().collect::<Vec<_>>().into_iter().rev() {
        let lifted = PGate::build(gate.group, 2, &full[a], &full[b]).unwrap();
        dense = apply_dense(&dense, &dims, &lifted, a, b);
    }
    let m = dense_to_mps(&dense, &dims);
    let values = purities_of(&m, &full).unwrap();
    for (x, y) in own.values.iter().zip(&values) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

fn dense_to_mps(v: &[f64], dims: &[usize]) -> Mps {
    use momentnet::linalg::svd;
    use momentnet::mps::NormLedger;
    use momentnet::tensor::DenseTensor;
    let n = dims.len();
    let mut sites = Vec::with_capacity(n);
    let mut rest = DenseTensor::new(vec![1, v.len()], v.to_vec()).unwrap();
    let mut left = 1;
    for &d in &dims[..n - 1] {
        let cols = rest.data().len() / (left * d);
        let m = rest.reshape(vec![left * d, cols]).unwrap();
        let dec = svd(&m).unwrap();
        let k = dec.s.iter().filter(|&&s| s > 1e-14 * dec.s[0]).count().max(1);
        let u = DenseTensor::from_fn(vec![left, d, k], |ix| dec.u.get(&[ix[0] * d + ix[1], ix[2]]));
        sites.push(u);
        rest = DenseTensor::from_fn(vec![k, cols], |ix| dec.s[ix[0]] * dec.vt.get(&[ix[0], ix[1]]));
        left = k;
    }
    sites.push(rest.reshape(vec![left, dims[n - 1], 1]).unwrap());
    Mps::new(sites, NormLedger::ones(n)).unwrap()
}
