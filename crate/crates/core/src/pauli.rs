//! Single-qubit Pauli algebra and real Pauli-product coordinates.
//!
//! An operator `A` on `t` copies of one qubit is stored as the real vector
//! `a[P1..Pt] = Tr[(P1⊗…⊗Pt) A] / √(2^t)`, i.e. its coordinates in the
//! orthonormal Pauli-product basis. The flat index is `Σ_c P_c · 4^(t-1-c)`
//! with `I=0, X=1, Y=2, Z=3`. Hermitian operators get real coordinates.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

pub const PAULIS: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

impl Pauli {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Pauli {
        PAULIS[i & 3]
    }

    pub fn from_char(c: char) -> Option<Pauli> {
        match c.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        ['I', 'X', 'Y', 'Z'][self.index()]
    }

    /// The 2×2 matrix.
    pub fn matrix(self) -> DenseTensor<C64> {
        let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
        let data = match self {
            Pauli::I => vec![o, z, z, o],
            Pauli::X => vec![z, o, o, z],
            Pauli::Y => vec![z, -i, i, z],
            Pauli::Z => vec![o, z, z, -o],
        };
        DenseTensor::new(vec![2, 2], data).expect("2x2")
    }

    /// `self · other = phase · result`.
    pub fn mul(self, other: Pauli) -> (C64, Pauli) {
        use Pauli::*;
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        match (self, other) {
            (I, p) | (p, I) => (one, p),
            (a, b) if a == b => (one, I),
            (X, Y) => (i, Z),
            (Y, X) => (-i, Z),
            (Y, Z) => (i, X),
            (Z, Y) => (-i, X),
            (Z, X) => (i, Y),
            (X, Z) => (-i, Y),
            _ => unreachable!(),
        }
    }
}

/// A Pauli string on `n` qubits; qubit 1 is the first entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString(pub Vec<Pauli>);

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString(vec![Pauli::I; n])
    }

    /// Parses either a dense string such as `"ZIIX"` (length must equal `n`)
    /// or a sparse one such as `"Z1"` / `"X2Y5"` / `"Z1 Z3"` (1-based).
    pub fn parse(s: &str, n: usize) -> Result<Self> {
        let s = s.trim();
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(Error::InvalidArgument("empty Pauli string".into()));
        }
        if compact.chars().all(|c| Pauli::from_char(c).is_some()) {
            if compact.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "dense Pauli string {compact:?} has length {} but n = {n}",
                    compact.len()
                )));
            }
            return Ok(PauliString(compact.chars().filter_map(Pauli::from_char).collect()));
        }
        let mut ops = vec![Pauli::I; n];
        let chars: Vec<char> = compact.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let p = Pauli::from_char(chars[i])
                .ok_or_else(|| Error::InvalidArgument(format!("bad Pauli letter in {s:?}")))?;
            i += 1;
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let q: usize = chars[start..i]
                .iter()
                .collect::<String>()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("missing qubit index in {s:?}")))?;
            if q == 0 || q > n {
                return Err(Error::InvalidArgument(format!("qubit {q} outside 1..={n}")));
            }
            if ops[q - 1] != Pauli::I {
                return Err(Error::InvalidArgument(format!("qubit {q} repeated in {s:?}")));
            }
            ops[q - 1] = p;
        }
        Ok(PauliString(ops))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of non-identity factors.
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn reversed(&self) -> Self {
        PauliString(self.0.iter().rev().copied().collect())
    }

    /// Sparse 1-based label such as `"X2 Z5"`; `"I"` for the identity.
    pub fn sparse(&self) -> String {
        let parts: Vec<String> =
            self.0.iter().enumerate().filter(|(_, &p)| p != Pauli::I).map(|(j, p)| format!("{}{}", p.to_char(), j + 1)).collect();
        if parts.is_empty() {
            "I".into()
        } else {
            parts.join(" ")
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let n = s.chars().filter(|c| !c.is_whitespace()).count();
        PauliString::parse(s, n)
    }
}

/// Flat index of a Pauli product over copies.
pub fn copy_index(ps: &[Pauli]) -> usize {
    ps.iter().fold(0, |acc, p| acc * 4 + p.index())
}

/// Pauli product for a flat index over `t` copies.
pub fn copy_paulis(mut idx: usize, t: usize) -> Vec<Pauli> {
    let mut out = vec![Pauli::I; t];
    for c in (0..t).rev() {
        out[c] = Pauli::from_index(idx % 4);
        idx /= 4;
    }
    out
}

/// Coordinates of a single-qubit operator, `Tr[P o] / √2`, real part.
///
/// Only meaningful for Hermitian `o`, where the coordinates are real.
pub fn single_coords(o: &DenseTensor<C64>) -> [f64; 4] {
    let mut out = [0.0; 4];
    for p in PAULIS {
        let m = p.matrix();
        let mut tr = C64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                tr += m.get(&[a, b]) * o.get(&[b, a]);
            }
        }
        out[p.index()] = tr.re / std::f64::consts::SQRT_2;
    }
    out
}

/// Coordinates of `o^{⊗t}` for a Hermitian single-qubit `o`.
pub fn tensor_power_coords(o: &DenseTensor<C64>, t: usize) -> Vec<f64> {
    let c = single_coords(o);
    (0..4usize.pow(t as u32))
        .map(|idx| copy_paulis(idx, t).iter().map(|p| c[p.index()]).product())
        .collect()
}

/// Coordinates of `P^{⊗t}` for a Pauli `P`: `√2^t` at the diagonal entry.
pub fn pauli_power_coords(p: Pauli, t: usize) -> Vec<f64> {
    let mut v = vec![0.0; 4usize.pow(t as u32)];
    v[copy_index(&vec![p; t])] = 2f64.powf(t as f64 / 2.0);
    v
}

/// Matrix of a Pauli string on `m` qubits (qubit 1 is the most significant).
pub fn string_matrix(ps: &[Pauli]) -> DenseTensor<C64> {
    ps.iter()
        .fold(DenseTensor::<C64>::identity(1), |acc, p| acc.kron(&p.matrix()).expect("kron"))
}

/// Real adjoint representation of a unitary `g` on `m` qubits in the
/// normalized Pauli basis: `R[P][Q] = Tr[P g Q g†] / 2^m`.
pub fn adjoint_rep(g: &DenseTensor<C64>) -> Result<DenseTensor<f64>> {
    let dim = g.rows();
    if g.rank() != 2 || g.cols() != dim || !dim.is_power_of_two() {
        return Err(Error::Dimension(format!("adjoint_rep needs a 2^m square matrix, got {:?}", g.shape())));
    }
    let m = dim.trailing_zeros() as usize;
    let count = 4usize.pow(m as u32);
    let paulis: Vec<DenseTensor<C64>> =
        (0..count).map(|i| string_matrix(&copy_paulis(i, m))).collect();
    let gd = g.adjoint()?;
    let conj: Vec<DenseTensor<C64>> = paulis
        .iter()
        .map(|q| g.matmul(q).and_then(|x| x.matmul(&gd)))
        .collect::<Result<_>>()?;
    let mut r = DenseTensor::zeros(vec![count, count]);
    for (pi, p) in paulis.iter().enumerate() {
        for (qi, cq) in conj.iter().enumerate() {
            let mut tr = C64::new(0.0, 0.0);
            for a in 0..dim {
                for b in 0..dim {
                    tr += p.get(&[a, b]) * cq.get(&[b, a]);
                }
            }
            r.set(&[pi, qi], tr.re / dim as f64);
        }
    }
    Ok(r)
}
