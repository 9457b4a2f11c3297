//! Circuit topologies, P-net assembly and end-to-end moments.
//!
//! Topologies list gates in circuit order (the order they act on the
//! state). The observable is propagated in the Heisenberg picture, i.e.
//! through the gates in reverse order, and finally contracted with the
//! vectorized initial state.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::commutant::{GateTable, Group, PGate, SiteBasis};
use crate::error::{Error, Result};
use crate::mps::{inner_product, Mps, NormLedger, DEFAULT_CUTOFF};
use crate::pauli::{tensor_power_coords, Pauli, PauliString};
use crate::tensor::{DenseTensor, C64};

/// One gate: the qubits it acts on (1-based) and the group it is drawn from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePlacement {
    pub qubits: Vec<usize>,
    pub group: Group,
}

/// Ordered gate placements on `n` qubits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub n: usize,
    pub gates: Vec<GatePlacement>,
    /// Gate counts at the end of each circuit layer, when the generator
    /// knows them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
}

impl Topology {
    pub fn new(n: usize, gates: Vec<GatePlacement>) -> Result<Self> {
        let t = Topology { n, gates, layers: Vec::new() };
        t.validate()?;
        Ok(t)
    }

    pub fn empty(n: usize) -> Result<Self> {
        Topology::new(n, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("topology needs n ≥ 1".into()));
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.qubits.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "gate {i} acts on {} qubits; only two-qubit gates are supported",
                    g.qubits.len()
                )));
            }
            if g.qubits.iter().any(|&q| q == 0 || q > self.n) {
                return Err(Error::InvalidArgument(format!("gate {i} has qubits {:?} outside 1..={}", g.qubits, self.n)));
            }
            if g.qubits[0] == g.qubits[1] {
                return Err(Error::InvalidArgument(format!("gate {i} repeats qubit {}", g.qubits[0])));
            }
        }
        let mut prev = 0;
        for &l in &self.layers {
            if l < prev || l > self.gates.len() {
                return Err(Error::InvalidArgument("layer marks must be non-decreasing gate counts".into()));
            }
            prev = l;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Topology = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topology serializes")
    }

    /// Qubits (0-based) touched by at least one gate.
    pub fn touched(&self) -> BTreeSet<usize> {
        self.gates.iter().flat_map(|g| g.qubits.iter().map(|q| q - 1)).collect()
    }

    pub fn groups(&self) -> BTreeSet<Group> {
        self.gates.iter().map(|g| g.group).collect()
    }

    /// The mirror image under `j → n + 1 − j`.
    pub fn reflected(&self) -> Topology {
        Topology {
            n: self.n,
            gates: self
                .gates
                .iter()
                .map(|g| GatePlacement { qubits: g.qubits.iter().map(|q| self.n + 1 - q).collect(), group: g.group })
                .collect(),
            layers: self.layers.clone(),
        }
    }

    /// The first `count` circuit layers, when layer marks are known.
    pub fn truncated(&self, count: usize) -> Result<Topology> {
        if count > self.layers.len() {
            return Err(Error::InvalidArgument(format!("topology has only {} layers", self.layers.len())));
        }
        let end = if count == 0 { 0 } else { self.layers[count - 1] };
        Ok(Topology { n: self.n, gates: self.gates[..end].to_vec(), layers: self.layers[..count].to_vec() })
    }

    /// Same placements with every gate drawn from `group`.
    pub fn with_group(&self, group: Group) -> Topology {
        let mut t = self.clone();
        for g in &mut t.gates {
            g.group = group;
        }
        t
    }
}

/// Brick-wall circuit: per layer, gates on (1,2),(3,4),… then (2,3),(4,5),…
pub fn hea_topology(n: usize, n_layers: usize, group: Group) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("HEA needs n ≥ 2, got {n}")));
    }
    let mut gates = Vec::new();
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        for start in [1, 2] {
            let mut q = start;
            while q < n {
                gates.push(GatePlacement { qubits: vec![q, q + 1], group });
                q += 2;
            }
        }
        layers.push(gates.len());
    }
    let t = Topology { n, gates, layers };
    t.validate()?;
    Ok(t)
}

/// Convolutional tree: each layer pairs consecutive active qubits, then
/// keeps every second active qubit, until only qubit 1 remains.
pub fn qcnn_topology(n: usize, group: Group) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("QCNN needs n ≥ 2, got {n}")));
    }
    let mut active: Vec<usize> = (1..=n).collect();
    let mut gates = Vec::new();
    let mut layers = Vec::new();
    while active.len() > 1 {
        for pair in active.chunks_exact(2) {
            gates.push(GatePlacement { qubits: vec![pair[0], pair[1]], group });
        }
        layers.push(gates.len());
        active = active.into_iter().step_by(2).collect();
    }
    let t = Topology { n, gates, layers };
    t.validate()?;
    Ok(t)
}

/// An observable (or a pure product initial state) on `n` qubits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observable {
    Pauli(PauliString),
    /// `|b⟩⟨b|` for a computational-basis bit string.
    Projector(Vec<u8>),
}

impl Observable {
    pub fn n(&self) -> usize {
        match self {
            Observable::Pauli(p) => p.len(),
            Observable::Projector(b) => b.len(),
        }
    }

    /// All-zeros projector `|0…0⟩⟨0…0|`.
    pub fn zeros(n: usize) -> Self {
        Observable::Projector(vec![0; n])
    }

    /// The single-qubit factor on qubit `j` (0-based).
    pub fn site_operator(&self, j: usize) -> DenseTensor<C64> {
        match self {
            Observable::Pauli(p) => p.0[j].matrix(),
            Observable::Projector(bits) => {
                let mut m = DenseTensor::zeros(vec![2, 2]);
                let b = bits[j] as usize & 1;
                m.set(&[b, b], C64::new(1.0, 0.0));
                m
            }
        }
    }

    /// Parses a bit string such as `"0010"`.
    pub fn parse_bits(s: &str) -> Result<Self> {
        let bits: Option<Vec<u8>> = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Some(0),
                '1' => Some(1),
                _ => None,
            })
            .collect();
        match bits {
            Some(b) if !b.is_empty() => Ok(Observable::Projector(b)),
            _ => Err(Error::InvalidArgument(format!("bad bit string {s:?}"))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Observable::Pauli(p) => p.sparse(),
            Observable::Projector(b) => {
                format!("|{}><{}|", b.iter().map(|x| x.to_string()).collect::<String>(), b.iter().map(|x| x.to_string()).collect::<String>())
            }
        }
    }
}

/// Bond-1 MPS of `op^{⊗t}` projected onto the given per-site bases.
pub fn vectorize_observable(obs: &Observable, bases: &[SiteBasis]) -> Result<Mps> {
    if obs.n() != bases.len() {
        return Err(Error::Dimension(format!("observable on {} qubits, {} site bases", obs.n(), bases.len())));
    }
    let vectors: Vec<Vec<f64>> = bases
        .iter()
        .enumerate()
        .map(|(j, b)| b.project(&tensor_power_coords(&obs.site_operator(j), b.t)))
        .collect();
    // A factor outside the local span is annihilated by the twirl.
    if vectors.iter().any(|v| v.iter().all(|&x| x.abs() < 1e-15)) {
        return Ok(Mps::zero(&bases.iter().map(SiteBasis::len).collect::<Vec<_>>()));
    }
    Mps::product(&vectors, 1.0)
}

/// `|P^{⊗2}⟩⟩` in a single group's basis on every site.
pub fn vectorize_pauli_obs(pauli: &PauliString, group: Group) -> Result<Mps> {
    let basis = SiteBasis::for_group(group, 2)?;
    vectorize_observable(&Observable::Pauli(pauli.clone()), &vec![basis; pauli.len()])
}

/// `|ρ^{⊗t}⟩⟩` for a computational-basis product state.
pub fn vectorize_product_state(bits: &[u8], bases: &[SiteBasis]) -> Result<Mps> {
    vectorize_observable(&Observable::Projector(bits.to_vec()), bases)
}

/// A gate in the P-net: index into the gate list plus the 0-based sites.
#[derive(Clone, Debug)]
struct Step {
    gate: usize,
    a: usize,
    b: usize,
}

/// The ordered P-gates of a topology with per-site bases.
#[derive(Clone, Debug)]
pub struct PNet {
    pub topology: Topology,
    pub t: usize,
    pub bases: Vec<SiteBasis>,
    gates: Vec<PGate>,
    /// Circuit order.
    steps: Vec<Step>,
    /// Heisenberg-order compression groups as ranges into the reversed
    /// step list.
    groups: Vec<std::ops::Range<usize>>,
    cutoff: f64,
}

/// Per-site bases for a topology: each touched site gets the smallest basis
/// shared by the groups acting on it, untouched sites the full basis.
pub fn site_bases(topology: &Topology, t: usize) -> Result<Vec<SiteBasis>> {
    let mut per_site: Vec<Vec<Group>> = vec![Vec::new(); topology.n];
    for g in &topology.gates {
        for &q in &g.qubits {
            per_site[q - 1].push(g.group);
        }
    }
    per_site.iter().map(|gs| SiteBasis::for_groups(gs, t)).collect()
}

/// Gates between compressions when a topology has no layer marks.
pub const UNSTRUCTURED_GROUP: usize = 8;

/// Bond above which a group is compressed early, mid-group.
pub const BOND_GUARD: usize = 64;

/// Compression points in Heisenberg order: one group per circuit layer when
/// layer marks are known, otherwise every [`UNSTRUCTURED_GROUP`] gates.
fn compression_groups(total: usize, breaks: Option<&[usize]>) -> Vec<std::ops::Range<usize>> {
    let mut cuts: Vec<usize> = match breaks {
        Some(b) => b.iter().copied().filter(|&c| c > 0 && c < total).collect(),
        None => (1..total.div_ceil(UNSTRUCTURED_GROUP)).map(|i| i * UNSTRUCTURED_GROUP).collect(),
    };
    cuts.sort_unstable();
    cuts.dedup();
    if total > 0 {
        cuts.push(total);
    }
    let mut start = 0;
    cuts.into_iter()
        .map(|c| {
            let r = start..c;
            start = c;
            r
        })
        .collect()
}

/// Assembles the P-net of a topology at moment order `t`.
pub fn build_pnet(topology: &Topology, t: usize) -> Result<PNet> {
    build_pnet_with(topology, t, &mut GateTable::new())
}

/// As [`build_pnet`] but drawing gates from a shared cache.
pub fn build_pnet_with(topology: &Topology, t: usize, table: &mut GateTable) -> Result<PNet> {
    topology.validate()?;
    let bases = site_bases(topology, t)?;
    let mut gates: Vec<PGate> = Vec::new();
    let mut keys: Vec<(Group, Vec<String>, Vec<String>)> = Vec::new();
    let mut steps = Vec::with_capacity(topology.gates.len());
    for g in &topology.gates {
        let (a, b) = (g.qubits[0] - 1, g.qubits[1] - 1);
        let key = (g.group, bases[a].labels.clone(), bases[b].labels.clone());
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                gates.push(table.get(g.group, t, &bases[a], &bases[b])?.clone());
                keys.push(key);
                gates.len() - 1
            }
        };
        steps.push(Step { gate: idx, a, b });
    }
    let total = steps.len();
    let breaks: Vec<usize> = topology.layers.iter().map(|&m| total - m).collect();
    let groups = compression_groups(total, (!breaks.is_empty()).then_some(&breaks[..]));
    Ok(PNet { topology: topology.clone(), t, bases, gates, steps, groups, cutoff: DEFAULT_CUTOFF })
}

/// Outcome of propagating an MPS through a P-net.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub mps: Mps,
    /// Maximum bond after each compression point (Heisenberg order).
    pub bond_profile: Vec<usize>,
    /// Largest bond seen at any compression point.
    pub max_bond: usize,
}

/// Value of `⟨⟨ρ^{⊗t}| τ̂ |O^{⊗t}⟩⟩` with its bookkeeping.
#[derive(Clone, Debug)]
pub struct MomentValue {
    pub value: f64,
    pub log_abs: f64,
    pub sign: f64,
    pub max_bond: usize,
    pub obs_ledger: NormLedger,
    pub rho_ledger: NormLedger,
    pub trace_ledger: NormLedger,
}

impl PNet {
    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn n(&self) -> usize {
        self.topology.n
    }

    pub fn num_gates(&self) -> usize {
        self.steps.len()
    }

    pub fn gates(&self) -> &[PGate] {
        &self.gates
    }

    /// Gates in circuit order as `(gate, site_a, site_b)`, 0-based sites.
    pub fn placements(&self) -> impl Iterator<Item = (&PGate, usize, usize)> {
        self.steps.iter().map(|s| (&self.gates[s.gate], s.a, s.b))
    }

    /// Sizes of the Heisenberg-order compression groups.
    pub fn compression_groups(&self) -> Vec<usize> {
        self.groups.iter().map(|r| r.len()).collect()
    }

    pub fn physical_dims(&self) -> Vec<usize> {
        self.bases.iter().map(SiteBasis::len).collect()
    }

    pub fn observable_mps(&self, obs: &Observable) -> Result<Mps> {
        vectorize_observable(obs, &self.bases)
    }

    pub fn state_mps(&self, bits: &[u8]) -> Result<Mps> {
        vectorize_product_state(bits, &self.bases)
    }

    fn check_dims(&self, m: &Mps) -> Result<()> {
        if m.physical_dims() != self.physical_dims() {
            return Err(Error::Dimension(format!(
                "MPS dims {:?} do not match the P-net's {:?}",
                m.physical_dims(),
                self.physical_dims()
            )));
        }
        Ok(())
    }

    /// Applies the gates in Heisenberg order, compressing at every layer
    /// boundary (or every few gates without layer marks). `visit` sees the
    /// compressed MPS after each group together with the number of gates
    /// applied so far.
    pub fn evolve_with(&self, m: &Mps, mut visit: impl FnMut(usize, &Mps) -> Result<()>) -> Result<Evolution> {
        self.check_dims(m)?;
        let reversed: Vec<&Step> = self.steps.iter().rev().collect();
        let mut cur = m.clone();
        let mut profile = Vec::with_capacity(self.groups.len());
        for range in &self.groups {
            for s in &reversed[range.clone()] {
                cur = cur.apply_pgate(&self.gates[s.gate], s.a, s.b)?;
                // Routed long-range gates multiply bonds; keep them in check.
                if cur.max_bond() > BOND_GUARD {
                    cur = cur.sweep_compress(self.cutoff)?;
                }
            }
            cur = cur.sweep_compress(self.cutoff)?;
            profile.push(cur.max_bond());
            visit(range.end, &cur)?;
        }
        let max_bond = profile.iter().copied().fold(m.max_bond(), usize::max);
        Ok(Evolution { mps: cur, bond_profile: profile, max_bond })
    }

    pub fn evolve(&self, m: &Mps) -> Result<Evolution> {
        self.evolve_with(m, |_, _| Ok(()))
    }

    /// Number of circuit layers absorbed once `applied` gates have been
    /// applied in Heisenberg order, if that count is a layer boundary.
    pub fn layers_absorbed(&self, applied: usize) -> Option<usize> {
        let total = self.steps.len();
        let marks = &self.topology.layers;
        if applied == 0 {
            return Some(0);
        }
        if applied > total {
            return None;
        }
        let circuit = total - applied;
        if circuit == 0 {
            return Some(marks.len().max(1));
        }
        marks.iter().position(|&m| m == circuit).map(|i| marks.len() - 1 - i)
    }

    /// Applies the whole P-net `repeats` times, calling `visit(r, mps)` after
    /// each pass `r = 1..=repeats`. For a one-layer P-net of a circuit made
    /// of identical layers this yields every depth incrementally.
    pub fn evolve_repeated(
        &self,
        m: &Mps,
        repeats: usize,
        mut visit: impl FnMut(usize, &Mps) -> Result<()>,
    ) -> Result<Evolution> {
        let mut cur = m.clone();
        let mut profile = Vec::new();
        let mut max_bond = m.max_bond();
        for r in 1..=repeats {
            let evo = self.evolve(&cur)?;
            max_bond = max_bond.max(evo.max_bond);
            profile.extend(evo.bond_profile);
            cur = evo.mps;
            visit(r, &cur)?;
        }
        Ok(Evolution { mps: cur, bond_profile: profile, max_bond })
    }

    /// `⟨⟨ρ|τ̂|O⟩⟩` for MPSs already expressed in this P-net's bases.
    pub fn moment(&self, rho: &Mps, obs: &Mps) -> Result<MomentValue> {
        self.check_dims(rho)?;
        let evo = self.evolve(obs)?;
        let rho_b = rho.balance_sites();
        let ip = inner_product(&rho_b, &evo.mps)?;
        Ok(MomentValue {
            value: ip.value,
            log_abs: ip.log_abs,
            sign: ip.sign,
            max_bond: evo.max_bond,
            obs_ledger: evo.mps.ledger().clone(),
            rho_ledger: rho_b.ledger().clone(),
            trace_ledger: ip.trace_ledger,
        })
    }

    /// `E[Tr[U ρ U† O]^t]` for a product initial state and an observable.
    pub fn moment_of(&self, rho_bits: &[u8], obs: &Observable) -> Result<MomentValue> {
        self.moment(&self.state_mps(rho_bits)?, &self.observable_mps(obs)?)
    }
}

/// `E[Tr[U ρ U† O]^t]` for a topology, computed by the P-net.
pub fn moment(topology: &Topology, t: usize, rho_bits: &[u8], obs: &Observable) -> Result<f64> {
    Ok(build_pnet(topology, t)?.moment_of(rho_bits, obs)?.value)
}

/// A single-qubit Pauli `p` on qubit `j` (1-based) of `n`.
pub fn pauli_on(n: usize, j: usize, p: Pauli) -> Result<PauliString> {
    if j == 0 || j > n {
        return Err(Error::InvalidArgument(format!("qubit {j} outside 1..={n}")));
    }
    let mut s = PauliString::identity(n);
    s.0[j - 1] = p;
    Ok(s)
}
