use std::io::{self, Write};
use std::path::Path;

use momentnet::pnet::{PNet, Topology};
use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Floats as 17 significant digits so every double round-trips.
struct Digits17;

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{}", fmt17(value))
    }
}

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Compact JSON with 17-digit floats and a trailing newline.
pub fn to_json_string(v: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    v.serialize(&mut ser).expect("in-memory JSON cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// SHA-256 over the JSON export of every distinct gate, in circuit order.
pub fn gate_table_hash(pnet: &PNet) -> String {
    let mut h = Sha256::new();
    for gate in pnet.gates() {
        h.update(to_json_string(&gate.to_json()).as_bytes());
    }
    hex::encode(h.finalize())
}

/// Everything needed to rerun an output: circuit, gates, cutoffs, seeds.
pub struct Provenance {
    pub topology: Option<Topology>,
    pub gate_hash: Option<String>,
    pub cutoff: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub command: String,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance { topology: None, gate_hash: None, cutoff: None, seed: None, samples: None, command: command.into() }
    }

    pub fn with_pnet(mut self, pnet: &PNet) -> Self {
        self.topology = Some(pnet.topology.clone());
        self.gate_hash = Some(gate_table_hash(pnet));
        self.cutoff = Some(pnet.cutoff());
        self
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "topology": self.topology.as_ref().map(|t| serde_json::to_value(t).expect("topology serializes")),
            "gate_table_sha256": self.gate_hash,
            "cutoff": self.cutoff,
            "seed": self.seed,
            "samples": self.samples,
        })
    }

    /// `# key: value` header lines for CSV files.
    pub fn csv_header(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# command: {}\n", self.command));
        out.push_str(&format!("# version: {}\n", env!("CARGO_PKG_VERSION")));
        if let Some(t) = &self.topology {
            out.push_str(&format!("# topology: {}\n", t.to_json()));
        }
        if let Some(h) = &self.gate_hash {
            out.push_str(&format!("# gate_table_sha256: {h}\n"));
        }
        if let Some(c) = self.cutoff {
            out.push_str(&format!("# cutoff: {}\n", fmt17(c)));
        }
        if let Some(s) = self.seed {
            out.push_str(&format!("# seed: {s}\n"));
        }
        if let Some(s) = self.samples {
            out.push_str(&format!("# samples: {s}\n"));
        }
        out
    }
}

/// Adds the provenance block to a JSON document.
pub fn with_provenance(mut doc: Value, prov: &Provenance) -> Value {
    doc["provenance"] = prov.to_json();
    doc
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source }),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

/// A CSV table with the provenance header.
pub fn csv(prov: &Provenance, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = prov.csv_header();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
