use std::ops::RangeInclusive;

use momentnet::analysis::{
    collision_sweep_with, collision_warnings, collision_with, entropy_scan_with, haar_purities, k_purities_with,
    purities_of, z_haar, Measure, ScanOptions,
};
use momentnet::commutant::{pgate_o4_t2, pgate_u4_t2, Group, GroupFamily, PGate, SiteBasis};
use momentnet::mc::{gate_sign_report, kl_divergence, McSampler};
use momentnet::oracle::{exact_moment_small, OracleMode};
use momentnet::pauli::PauliString;
use momentnet::pnet::{build_pnet, hea_topology, qcnn_topology, Observable, PNet, Topology};
use serde_json::{json, Value};

use crate::output::{csv, emit, fmt17, to_json_string, with_provenance, Provenance};
use crate::{CliError, Command, Common, Format};

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_SAMPLES: usize = 10_000;
/// Agreement required by `oracle-check`.
const ORACLE_TOL: f64 = 1e-10;

pub fn run(cmd: Command, c: &Common) -> Result<String> {
    if let Some(cut) = c.cutoff {
        if !(cut.is_finite() && cut >= 0.0) {
            return Err(invalid(format!("--cutoff must be finite and ≥ 0, got {cut}")));
        }
    }
    match cmd {
        Command::Pgate => pgate(c),
        Command::Purities => purities(c),
        Command::HaarPurities => haar(c),
        Command::Anticoncentrate => anticoncentrate(c),
        Command::EntropyScan => entropy_scan(c),
        Command::McCompare => mc_compare(c),
        Command::BondProfile => bond_profile(c),
        Command::OracleCheck => oracle_check(c),
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn group(c: &Common) -> Result<Group> {
    Ok(c.group.parse::<Group>()?)
}

fn need_n(c: &Common) -> Result<usize> {
    c.n.ok_or_else(|| invalid("--n is required for this topology"))
}

/// The circuit family named by `--topology`.
enum Source {
    /// Brick wall; sweeps repeat its single layer.
    Hea { n: usize, depth: RangeInclusive<usize> },
    Fixed(Topology),
}

impl Source {
    fn n(&self) -> usize {
        match self {
            Source::Hea { n, .. } => *n,
            Source::Fixed(t) => t.n,
        }
    }
}

fn source(c: &Common) -> Result<Source> {
    let g = group(c)?;
    let fixed = |t: Topology| {
        if c.layers.is_some() {
            return Err(invalid("--layers only applies to --topology hea"));
        }
        Ok(Source::Fixed(t))
    };
    match c.topology.as_str() {
        "hea" => {
            let n = need_n(c)?;
            hea_topology(n, 1, g)?;
            Ok(Source::Hea { n, depth: c.layers.clone().unwrap_or(n..=n) })
        }
        "qcnn" => fixed(qcnn_topology(need_n(c)?, g)?),
        other => {
            let Some(path) = other.strip_prefix("file:") else {
                return Err(invalid(format!("unknown topology {other:?}; use hea, qcnn or file:PATH")));
            };
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {path}: {e}")))?;
            let t = Topology::from_json(&text)?;
            if c.n.is_some_and(|n| n != t.n) {
                return Err(invalid(format!("--n {} disagrees with the file's n = {}", c.n.unwrap_or(0), t.n)));
            }
            fixed(t)
        }
    }
}

fn pnet_for(t: &Topology, c: &Common) -> Result<PNet> {
    let p = build_pnet(t, c.t as usize)?;
    Ok(match c.cutoff {
        Some(cut) => p.with_cutoff(cut),
        None => p,
    })
}

/// Single-layer P-net of a brick wall, repeated for depth sweeps.
fn hea_layer(n: usize, c: &Common) -> Result<PNet> {
    pnet_for(&hea_topology(n, 1, group(c)?)?, c)
}

fn observable(c: &Common, n: usize) -> Result<Observable> {
    let s = c.obs.as_deref().unwrap_or("Z1");
    if s.len() == n && s.chars().all(|ch| ch == '0' || ch == '1') {
        return Ok(Observable::parse_bits(s)?);
    }
    Ok(Observable::Pauli(PauliString::parse(s, n)?))
}

fn pauli(c: &Common, n: usize) -> Result<PauliString> {
    match observable(c, n)? {
        Observable::Pauli(p) if p.weight() > 0 => Ok(p),
        _ => Err(invalid("this command needs a non-identity Pauli observable")),
    }
}

fn second_moment_only(c: &Common, what: &str) -> Result<()> {
    if c.t != 2 {
        return Err(invalid(format!("{what} is a second-moment quantity; use --t 2")));
    }
    Ok(())
}

fn write_json(doc: Value, prov: &Provenance, c: &Common) -> Result<()> {
    emit(&to_json_string(&with_provenance(doc, prov)), c.out.as_deref())
}

fn write_csv(prov: &Provenance, columns: &[&str], rows: &[Vec<String>], c: &Common) -> Result<()> {
    emit(&csv(prov, columns, rows), c.out.as_deref())
}

fn pgate(c: &Common) -> Result<String> {
    let g = group(c)?;
    let t = c.t as usize;
    let gate = match (g, t) {
        (Group::U4, 2) => pgate_u4_t2(),
        (Group::O4, 2) => pgate_o4_t2(),
        _ => {
            let basis = SiteBasis::for_group(g, t)?;
            PGate::build(g, t, &basis, &basis)?
        }
    };
    let residual = gate.idempotence_residual();
    let signs = gate_sign_report(&gate);
    let prov = Provenance::new("pgate");
    match c.format {
        Format::Json => {
            let mut doc = json!({
                "gate": gate.to_json(),
                "idempotence_residual": residual,
                "has_negative_entries": signs.has_negative,
                "min_entry": signs.min_entry,
            });
            if (g, t) == (Group::O4, 2) {
                let labels = pair_labels(&gate);
                let entry = gate.exact().map(|e| e[8][6].to_string()).unwrap_or_default();
                doc["note"] = json!(format!(
                    "natural_matrix[8][6] (out {}, in {}) is {entry}, as fixed by projecting the exact twirl onto \
                     the commutant basis",
                    labels[8], labels[6]
                ));
            }
            write_json(doc, &prov, c)?;
        }
        Format::Csv => {
            let m = gate.natural_matrix();
            let labels = pair_labels(&gate);
            let mut columns = vec!["out".to_string()];
            columns.extend(labels.iter().cloned());
            let rows: Vec<Vec<String>> = (0..m.rows())
                .map(|o| {
                    let mut row = vec![labels[o].clone()];
                    row.extend((0..m.cols()).map(|i| fmt17(m.get(&[o, i]))));
                    row
                })
                .collect();
            let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
            write_csv(&prov, &cols, &rows, c)?;
        }
    }
    Ok(format!("pgate {g} t={t}: {} legs per site, idempotence residual {residual:.1e}", gate.dims()[0]))
}

fn pair_labels(gate: &PGate) -> Vec<String> {
    let [a, b] = [&gate.bases[0].labels, &gate.bases[1].labels];
    a.iter().flat_map(|x| b.iter().map(move |y| format!("{x}|{y}"))).collect()
}

fn purity_row(depth: Option<usize>, values: &[f64], max_bond: usize) -> Value {
    let total: f64 = values.iter().sum();
    let argmax = values.iter().enumerate().fold(0, |b, (i, &v)| if v > values[b] { i } else { b });
    let mut row = json!({ "k_purities": values, "sum": total, "argmax": argmax, "max_bond": max_bond });
    if let Some(d) = depth {
        row["layers"] = json!(d);
    }
    row
}

fn purities(c: &Common) -> Result<String> {
    second_moment_only(c, "k-purity")?;
    let src = source(c)?;
    let n = src.n();
    let obs = pauli(c, n)?;
    let (rows, prov, trace) = match src {
        Source::Hea { depth, .. } => {
            let pnet = hea_layer(n, c)?;
            let start = pnet.observable_mps(&Observable::Pauli(obs.clone()))?;
            let mut rows = Vec::new();
            if *depth.start() == 0 {
                rows.push((0, purities_of(&start, &pnet.bases)?, start.max_bond()));
            }
            let mut running = start.max_bond();
            pnet.evolve_repeated(&start, *depth.end(), |r, m| {
                running = running.max(m.max_bond());
                if depth.contains(&r) {
                    rows.push((r, purities_of(m, &pnet.bases)?, running));
                }
                Ok(())
            })?;
            (rows, Provenance::new("purities").with_pnet(&pnet), None)
        }
        Source::Fixed(t) => {
            let pnet = pnet_for(&t, c)?;
            let p = k_purities_with(&pnet, &obs)?;
            let prov = Provenance::new("purities").with_pnet(&pnet);
            (vec![(t.layers.len(), p.values, p.max_bond)], prov, Some(p.bond_profile))
        }
    };
    let last = rows.last().expect("at least one depth");
    let total: f64 = last.1.iter().sum();
    let summary = format!(
        "purities n={n} obs={}: {} depth(s), sum {:.12}, max bond {}",
        obs.sparse(),
        rows.len(),
        total,
        rows.iter().map(|r| r.2).max().unwrap_or(0)
    );
    match c.format {
        Format::Json => {
            let sweep: Vec<Value> = rows.iter().map(|(d, v, b)| purity_row(Some(*d), v, *b)).collect();
            let mut doc = json!({
                "n": n,
                "observable": obs.sparse(),
                "k_purities": last.1,
                "max_bond": rows.iter().map(|r| r.2).max(),
                "sum": total,
                "sweep": sweep,
            });
            if let Some(profile) = trace {
                doc["bond_profile"] = json!(profile);
            }
            doc["topology"] = prov.to_json()["topology"].clone();
            write_json(doc, &prov, c)?;
        }
        Format::Csv => {
            let out: Vec<Vec<String>> = rows
                .iter()
                .flat_map(|(d, v, _)| v.iter().enumerate().map(move |(k, x)| vec![d.to_string(), k.to_string(), fmt17(*x)]))
                .collect();
            write_csv(&prov, &["layers", "k", "value"], &out, c)?;
        }
    }
    Ok(summary)
}

fn haar(c: &Common) -> Result<String> {
    let n = need_n(c)?;
    let p = haar_purities(n)?;
    let prov = Provenance::new("haar-purities");
    match c.format {
        Format::Json => write_json(json!({ "n": n, "k_purities": p.values, "sum": p.total() }), &prov, c)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = p.values.iter().enumerate().map(|(k, x)| vec![k.to_string(), fmt17(*x)]).collect();
            write_csv(&prov, &["k", "value"], &rows, c)?;
        }
    }
    Ok(format!("haar-purities n={n}: argmax k = {}", p.argmax()))
}

fn family(g: Group) -> Option<GroupFamily> {
    match g {
        Group::U4 => Some(GroupFamily::U),
        Group::O4 => Some(GroupFamily::O),
        Group::FfSo4 => None,
    }
}

fn anticoncentrate(c: &Common) -> Result<String> {
    second_moment_only(c, "the collision probability")?;
    let src = source(c)?;
    let n = src.n();
    let (rows, warnings, prov) = match src {
        Source::Hea { depth, .. } => {
            let pnet = hea_layer(n, c)?;
            let sweep = collision_sweep_with(&pnet, *depth.end())?;
            let rows: Vec<(usize, f64, f64, usize)> = sweep
                .iter()
                .enumerate()
                .map(|(i, z)| (i + 1, z.z, z.log_z, z.max_bond))
                .filter(|r| depth.contains(&r.0))
                .collect();
            (rows, collision_warnings(&pnet.topology), Provenance::new("anticoncentrate").with_pnet(&pnet))
        }
        Source::Fixed(t) => {
            let pnet = pnet_for(&t, c)?;
            let z = collision_with(&pnet)?;
            (vec![(t.layers.len(), z.z, z.log_z, z.max_bond)], z.warnings, Provenance::new("anticoncentrate").with_pnet(&pnet))
        }
    };
    // Gates of one family only have a global limit.
    let groups = prov.topology.as_ref().map(Topology::groups).unwrap_or_default();
    let limit = match groups.iter().collect::<Vec<_>>().as_slice() {
        [g] => family(**g).map(|f| z_haar(n, f)).transpose()?,
        _ => None,
    };
    match c.format {
        Format::Json => {
            let curve: Vec<Value> =
                rows.iter().map(|(d, z, lz, b)| json!({ "layers": d, "z": z, "log_z": lz, "max_bond": b })).collect();
            write_json(json!({ "n": n, "curve": curve, "z_haar": limit, "warnings": warnings }), &prov, c)?;
        }
        Format::Csv => {
            let out: Vec<Vec<String>> = rows
                .iter()
                .map(|(d, z, lz, b)| vec![d.to_string(), fmt17(*z), fmt17(*lz), b.to_string()])
                .collect();
            write_csv(&prov, &["layers", "z", "log_z", "max_bond"], &out, c)?;
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let last = rows.last().map(|r| r.1).unwrap_or(f64::NAN);
    Ok(match limit {
        Some(h) => format!("anticoncentrate n={n}: {} depth(s), last Z {last:.6e}, Haar limit {h:.6e}", rows.len()),
        None => format!("anticoncentrate n={n}: {} depth(s), last Z {last:.6e}", rows.len()),
    })
}

fn entropy_scan(c: &Common) -> Result<String> {
    second_moment_only(c, "the entropy scan")?;
    let src = source(c)?;
    let n = src.n();
    let obs = observable(c, n)?;
    let (pnet, keep) = match src {
        Source::Hea { depth, .. } => (pnet_for(&hea_topology(n, *depth.end(), group(c)?)?, c)?, depth),
        Source::Fixed(t) => (pnet_for(&t, c)?, 0..=usize::MAX),
    };
    let rows: Vec<_> = entropy_scan_with(&pnet, &obs, &ScanOptions::default())?
        .into_iter()
        .filter(|r| keep.contains(&r.layer))
        .collect();
    let prov = Provenance::new("entropy-scan").with_pnet(&pnet);
    match c.format {
        Format::Json => {
            let doc = json!({ "n": n, "observable": obs.describe(), "rows": rows });
            write_json(doc, &prov, c)?;
        }
        Format::Csv => {
            // The CSV table carries the von Neumann entropies only.
            let out: Vec<Vec<String>> = rows
                .iter()
                .filter(|r| r.measure == Measure::S)
                .map(|r| {
                    vec![
                        r.layer.to_string(),
                        format!("{:?}", r.family),
                        r.index.to_string(),
                        r.value.map(fmt17).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(&prov, &["layer", "family", "index", "value"], &out, c)?;
        }
    }
    Ok(format!("entropy-scan n={n}: {} rows", rows.len()))
}

fn mc_compare(c: &Common) -> Result<String> {
    second_moment_only(c, "Monte Carlo sampling")?;
    let topo = match source(c)? {
        Source::Hea { n, depth } => {
            if depth.start() != depth.end() {
                return Err(invalid("mc-compare takes a single depth"));
            }
            hea_topology(n, *depth.end(), group(c)?)?
        }
        Source::Fixed(t) => t,
    };
    let n = topo.n;
    let obs = pauli(c, n)?;
    let n_s = c.samples.unwrap_or(DEFAULT_SAMPLES);
    let pnet = pnet_for(&topo, c)?;
    let exact = k_purities_with(&pnet, &obs)?;
    let est = McSampler::new(&topo, &obs)?.run(n_s, c.seed)?;
    let kl = kl_divergence(&exact.values, &est.estimates, n_s)?;
    let z_max = est
        .estimates
        .iter()
        .zip(&est.stderr)
        .zip(&exact.values)
        .map(|((m, s), e)| (m - e).abs() / s)
        .fold(0.0f64, f64::max);
    let mut prov = Provenance::new("mc-compare").with_pnet(&pnet);
    prov.seed = Some(c.seed);
    prov.samples = Some(n_s);
    match c.format {
        Format::Json => {
            let doc = json!({
                "n_s": n_s,
                "seed": c.seed,
                "estimates": est.estimates,
                "stderr": est.stderr,
                "sign_fraction": est.signs.negative_fraction,
                "effective_samples": est.signs.effective_samples,
                "annihilated_fraction": est.signs.annihilated_fraction,
                "exact": exact.values,
                "kl": kl,
                "max_z_score": z_max,
            });
            write_json(doc, &prov, c)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = (0..=n)
                .map(|k| vec![k.to_string(), fmt17(exact.values[k]), fmt17(est.estimates[k]), fmt17(est.stderr[k])])
                .collect();
            write_csv(&prov, &["k", "exact", "estimate", "stderr"], &rows, c)?;
        }
    }
    Ok(format!(
        "mc-compare n={n} n_s={n_s}: KL {kl:.3e}, max |z| {z_max:.2}, negative fraction {:.3}",
        est.signs.negative_fraction
    ))
}

fn bond_profile(c: &Common) -> Result<String> {
    let src = source(c)?;
    let n = src.n();
    let obs = observable(c, n)?;
    // (layers or compression point, bonds after it)
    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    let pnet = match src {
        Source::Hea { depth, .. } => {
            let pnet = hea_layer(n, c)?;
            let start = pnet.observable_mps(&obs)?;
            pnet.evolve_repeated(&start, *depth.end(), |r, m| {
                if depth.contains(&r) {
                    rows.push((r, m.bond_dims()));
                }
                Ok(())
            })?;
            pnet
        }
        Source::Fixed(t) => {
            let pnet = pnet_for(&t, c)?;
            let start = pnet.observable_mps(&obs)?;
            let mut point = 0;
            pnet.evolve_with(&start, |applied, m| {
                point += 1;
                rows.push((pnet.layers_absorbed(applied).unwrap_or(point), m.bond_dims()));
                Ok(())
            })?;
            pnet
        }
    };
    let max_bond = rows.iter().flat_map(|r| r.1.iter().copied()).max().unwrap_or(1);
    let prov = Provenance::new("bond-profile").with_pnet(&pnet);
    match c.format {
        Format::Json => {
            let profile: Vec<Value> = rows
                .iter()
                .map(|(d, b)| json!({ "layers": d, "max_bond": b.iter().max(), "bonds": b }))
                .collect();
            write_json(json!({ "n": n, "observable": obs.describe(), "max_bond": max_bond, "profile": profile }), &prov, c)?;
        }
        Format::Csv => {
            let out: Vec<Vec<String>> = rows
                .iter()
                .map(|(d, b)| vec![d.to_string(), b.iter().max().copied().unwrap_or(1).to_string()])
                .collect();
            write_csv(&prov, &["layers", "max_bond"], &out, c)?;
        }
    }
    Ok(format!("bond-profile n={n}: {} point(s), max bond {max_bond}", rows.len()))
}

fn oracle_check(c: &Common) -> Result<String> {
    let topo = match source(c)? {
        Source::Hea { n, depth } => {
            if depth.start() != depth.end() {
                return Err(invalid("oracle-check takes a single depth"));
            }
            hea_topology(n, *depth.end(), group(c)?)?
        }
        Source::Fixed(t) => t,
    };
    let n = topo.n;
    let t = c.t as usize;
    let obs = observable(c, n)?;
    let bits = vec![0u8; n];
    let pnet = pnet_for(&topo, c)?;
    let tn = pnet.moment_of(&bits, &obs)?.value;
    let exact = exact_moment_small(&topo, &bits, &obs, t, OracleMode::Exact)?.value;
    let diff = (tn - exact).abs();
    let mut prov = Provenance::new("oracle-check").with_pnet(&pnet);
    let mut doc = json!({
        "n": n,
        "t": t,
        "observable": obs.describe(),
        "state": "0".repeat(n),
        "tn": tn,
        "exact": exact,
        "abs_diff": diff,
        "tolerance": ORACLE_TOL,
    });
    let mut sampled_line = String::new();
    if let Some(samples) = c.samples {
        let s = exact_moment_small(&topo, &bits, &obs, t, OracleMode::Sampled { samples, seed: c.seed })?;
        doc["sampled"] = json!({ "value": s.value, "stderr": s.stderr });
        prov.seed = Some(c.seed);
        prov.samples = Some(samples);
        sampled_line = format!(", sampled {:.6e} ± {:.1e}", s.value, s.stderr);
    }
    match c.format {
        Format::Json => write_json(doc, &prov, c)?,
        Format::Csv => {
            let row = vec![fmt17(tn), fmt17(exact), fmt17(diff)];
            write_csv(&prov, &["tn", "exact", "abs_diff"], &[row], c)?;
        }
    }
    if diff > ORACLE_TOL {
        return Err(CliError::Numeric(format!("contraction {tn:e} and dense oracle {exact:e} differ by {diff:.1e}")));
    }
    Ok(format!("oracle-check n={n} t={t}: |TN − exact| = {diff:.1e}{sampled_line}"))
}
