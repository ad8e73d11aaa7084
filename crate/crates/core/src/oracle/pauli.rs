//! Pauli strings and sparse Pauli-basis operators.
//!
//! A string on `n` sites is a base-4 integer whose digit `i` is the Pauli on
//! site `i`: 0 = I, 1 = X, 2 = Y, 3 = Z. Internally strings are also handled
//! as bit masks `(x, z)` with `X = (1,0)`, `Z = (0,1)`, `Y = (1,1)`, so that
//! `P |b⟩ = i^{|x∧z|} (−1)^{b·z} |b ⊕ x⟩` with site `i` on bit `i`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dense::CMat;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn digit(self) -> u64 {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    pub fn from_digit(d: u64) -> Self {
        match d & 3 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    fn xz(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }
}

pub fn num_strings(n_qubits: usize) -> usize {
    1 << (2 * n_qubits)
}

pub fn site(index: u64, i: usize) -> Pauli {
    Pauli::from_digit(index >> (2 * i))
}

/// Number of non-identity sites.
pub fn weight(index: u64, n_qubits: usize) -> usize {
    (0..n_qubits).filter(|&i| (index >> (2 * i)) & 3 != 0).count()
}

pub fn to_xz(index: u64, n_qubits: usize) -> (usize, usize) {
    let mut x = 0;
    let mut z = 0;
    for i in 0..n_qubits {
        let (xi, zi) = site(index, i).xz();
        x |= (xi as usize) << i;
        z |= (zi as usize) << i;
    }
    (x, z)
}

pub fn from_xz(x: usize, z: usize, n_qubits: usize) -> u64 {
    let mut index = 0;
    for i in 0..n_qubits {
        let d = match ((x >> i) & 1, (z >> i) & 1) {
            (0, 0) => 0,
            (1, 0) => 1,
            (1, 1) => 2,
            _ => 3,
        };
        index |= d << (2 * i);
    }
    index
}

/// String with `pauli` on `site_index` and identity elsewhere.
pub fn single_site(site_index: usize, pauli: Pauli) -> u64 {
    pauli.digit() << (2 * site_index)
}

/// Two-site string `σ^a_i σ^b_j`.
pub fn two_site(i: usize, a: Pauli, j: usize, b: Pauli) -> u64 {
    single_site(i, a) | single_site(j, b)
}

pub fn anticommute(p: u64, q: u64, n_qubits: usize) -> bool {
    let (px, pz) = to_xz(p, n_qubits);
    let (qx, qz) = to_xz(q, n_qubits);
    ((px & qz) ^ (pz & qx)).count_ones() % 2 == 1
}

/// Real coefficients `c_P` of a Hermitian operator `Σ_P c_P P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliOperator {
    n_qubits: usize,
    coefficients: BTreeMap<u64, f64>,
}

impl PauliOperator {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            coefficients: BTreeMap::new(),
        }
    }

    pub fn single(n_qubits: usize, index: u64) -> Result<Self> {
        if index as usize >= num_strings(n_qubits) {
            return Err(Error::invalid("pauli", index, "string index out of range"));
        }
        let mut op = Self::new(n_qubits);
        op.coefficients.insert(index, 1.0);
        Ok(op)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn coefficient(&self, index: u64) -> f64 {
        self.coefficients.get(&index).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, index: u64, value: f64) {
        if value == 0.0 {
            self.coefficients.remove(&index);
        } else {
            self.coefficients.insert(index, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.coefficients.iter().map(|(&k, &v)| (k, v))
    }

    pub fn norm_sq(&self) -> f64 {
        self.coefficients.values().map(|c| c * c).sum()
    }

    /// `Σ_P c_P c̃_P`, equal to `tr(W W̃)/2^N`.
    pub fn overlap(&self, other: &PauliOperator) -> f64 {
        self.iter().map(|(k, v)| v * other.coefficient(k)).sum()
    }

    /// Dense `2^N × 2^N` matrix.
    pub fn to_dense(&self) -> CMat {
        let d = 1usize << self.n_qubits;
        let mut m = CMat::zeros(d);
        for (index, c) in self.iter() {
            let (x, z) = to_xz(index, self.n_qubits);
            add_string(&mut m, x, z, c);
        }
        m
    }

    /// Projects a dense Hermitian matrix onto the Pauli basis, dropping
    /// coefficients with magnitude below `drop_below`.
    pub fn from_dense(m: &CMat, n_qubits: usize, drop_below: f64) -> Self {
        let coeffs = coefficients(m, n_qubits);
        let mut op = Self::new(n_qubits);
        for (index, c) in coeffs.into_iter().enumerate() {
            if c.abs() > drop_below {
                op.coefficients.insert(index as u64, c);
            }
        }
        op
    }
}

/// `m += c · P` for the string with masks `(x, z)`.
pub(crate) fn add_string(m: &mut CMat, x: usize, z: usize, c: f64) {
    let d = m.dim();
    let k = (x & z).count_ones() % 4;
    for col in 0..d {
        let sign = if (col & z).count_ones() % 2 == 1 { -c } else { c };
        let row = col ^ x;
        // i^k · sign
        match k {
            0 => m.re[(row, col)] += sign,
            1 => m.im[(row, col)] += sign,
            2 => m.re[(row, col)] -= sign,
            _ => m.im[(row, col)] -= sign,
        }
    }
}

/// All `4^N` coefficients `c_P = Re tr(P m)/2^N`, indexed by string.
///
/// For each `x` mask the entries `m_{b, b⊕x}` are gathered and a
/// Walsh–Hadamard transform over `b` produces every `z` at once.
pub fn coefficients(m: &CMat, n_qubits: usize) -> Vec<f64> {
    let d = 1usize << n_qubits;
    let norm = 1.0 / d as f64;
    let mut out = vec![0.0; num_strings(n_qubits)];
    let mut re = vec![0.0; d];
    let mut im = vec![0.0; d];
    for x in 0..d {
        for b in 0..d {
            re[b] = m.re[(b, b ^ x)];
            im[b] = m.im[(b, b ^ x)];
        }
        walsh_hadamard(&mut re);
        walsh_hadamard(&mut im);
        for z in 0..d {
            // Re(i^k (a + ib))
            let v = match (x & z).count_ones() % 4 {
                0 => re[z],
                1 => -im[z],
                2 => -re[z],
                _ => im[z],
            };
            out[from_xz(x, z, n_qubits) as usize] = v * norm;
        }
    }
    out
}

fn walsh_hadamard(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let a = v[i];
                let b = v[i + h];
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}
