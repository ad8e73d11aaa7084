//! Small dense complex matrices stored as separate real and imaginary parts,
//! so that products run on the real matrix-multiplication kernels.

use nalgebra::{Complex, DMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl CMat {
    pub fn zeros(d: usize) -> Self {
        Self {
            re: DMatrix::zeros(d, d),
            im: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            re: DMatrix::identity(d, d),
            im: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        let d = self.dim();
        let mut re = DMatrix::zeros(d, d);
        let mut im = DMatrix::zeros(d, d);
        re.gemm(1.0, &self.re, &other.re, 0.0);
        re.gemm(-1.0, &self.im, &other.im, 1.0);
        im.gemm(1.0, &self.re, &other.im, 0.0);
        im.gemm(1.0, &self.im, &other.re, 1.0);
        CMat { re, im }
    }

    /// `self† · other` without forming the adjoint.
    pub fn adjoint_mul(&self, other: &CMat) -> CMat {
        let d = self.dim();
        let mut re = DMatrix::zeros(d, d);
        let mut im = DMatrix::zeros(d, d);
        re.gemm_tr(1.0, &self.re, &other.re, 0.0);
        re.gemm_tr(1.0, &self.im, &other.im, 1.0);
        im.gemm_tr(1.0, &self.re, &other.im, 0.0);
        im.gemm_tr(-1.0, &self.im, &other.re, 1.0);
        CMat { re, im }
    }

    pub fn adjoint(&self) -> CMat {
        CMat {
            re: self.re.transpose(),
            im: -self.im.transpose(),
        }
    }

    pub fn add(&self, other: &CMat) -> CMat {
        CMat {
            re: &self.re + &other.re,
            im: &self.im + &other.im,
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        CMat {
            re: &self.re - &other.re,
            im: &self.im - &other.im,
        }
    }

    pub fn scale(&self, s: f64) -> CMat {
        CMat {
            re: &self.re * s,
            im: &self.im * s,
        }
    }

    /// `U† · self · U`.
    pub fn conjugate_by(&self, u: &CMat) -> CMat {
        u.adjoint_mul(&self.mul(u))
    }

    /// `Re tr(self · other)`.
    pub fn trace_product_re(&self, other: &CMat) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.re[(i, j)] * other.re[(j, i)] - self.im[(i, j)] * other.im[(j, i)];
            }
        }
        acc
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.re.norm_squared() + self.im.norm_squared()
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        let d = self.dim();
        (0..d)
            .map(|j| (0..d).map(|i| self.re[(i, j)].hypot(self.im[(i, j)])).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `exp(self)` by scaling and squaring with a Taylor series.
    pub fn expm(&self) -> CMat {
        let d = self.dim();
        let norm = self.one_norm();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let a = self.scale(0.5f64.powi(squarings));
        let mut sum = CMat::identity(d);
        let mut term = CMat::identity(d);
        for k in 1..40 {
            term = term.mul(&a).scale(1.0 / k as f64);
            sum = sum.add(&term);
            if term.one_norm() <= 1e-18 * sum.one_norm() {
                break;
            }
        }
        for _ in 0..squarings {
            sum = sum.mul(&sum);
        }
        sum
    }

    pub fn to_complex(&self) -> DMatrix<Complex<f64>> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| Complex::new(self.re[(i, j)], self.im[(i, j)]))
    }

    pub fn from_complex(m: &DMatrix<Complex<f64>>) -> CMat {
        CMat {
            re: m.map(|c| c.re),
            im: m.map(|c| c.im),
        }
    }
}

/// `exp(−i H dt)` for Hermitian `H`.
pub fn unitary_step(h: &CMat, dt: f64) -> CMat {
    // −i H dt = dt·H.im − i dt·H.re
    let a = CMat {
        re: &h.im * dt,
        im: &h.re * (-dt),
    };
    a.expm()
}

/// Same as [`unitary_step`] via a Hermitian eigendecomposition.
pub fn unitary_step_eigen(h: &CMat, dt: f64) -> CMat {
    let eig = h.to_complex().symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex::new(0.0, -l * dt).exp()));
    CMat::from_complex(&(v * phases * v.adjoint()))
}

/// Single-qubit depolarizing channel with Pauli damping `q` on every qubit:
/// a string of weight `w` is multiplied by `q^w`.
pub fn depolarize(m: &mut CMat, n_qubits: usize, q: f64) {
    let d = m.dim();
    for site in 0..n_qubits {
        let bit = 1usize << site;
        let old = m.clone();
        for i in 0..d {
            for j in 0..d {
                if (i ^ j) & bit == 0 {
                    let (pi, pj) = (i ^ bit, j ^ bit);
                    let avg_re = 0.5 * (old.re[(i, j)] + old.re[(pi, pj)]);
                    let avg_im = 0.5 * (old.im[(i, j)] + old.im[(pi, pj)]);
                    m.re[(i, j)] = q * old.re[(i, j)] + (1.0 - q) * avg_re;
                    m.im[(i, j)] = q * old.im[(i, j)] + (1.0 - q) * avg_im;
                } else {
                    m.re[(i, j)] = q * old.re[(i, j)];
                    m.im[(i, j)] = q * old.im[(i, j)];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::pauli::{coefficients, single_site, two_site, weight, Pauli, PauliOperator};
    use super::*;

    fn random_hermitian(n_qubits: usize, seed: u64) -> CMat {
        // deterministic pseudo-random Pauli expansion
        let mut op = PauliOperator::new(n_qubits);
        let mut s = seed;
        for index in 1..(1u64 << (2 * n_qubits)) {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((s >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
            op.set(index, u);
        }
        op.to_dense()
    }

    fn max_diff(a: &CMat, b: &CMat) -> f64 {
        let d = a.sub(b);
        d.re.amax().max(d.im.amax())
    }

    #[test]
    fn taylor_and_eigen_routes_agree() {
        for (n, dt) in [(2, 0.3), (3, 0.05), (5, 0.01), (5, 0.2)] {
            let h = random_hermitian(n, 17 + n as u64);
            let a = unitary_step(&h, dt);
            let b = unitary_step_eigen(&h, dt);
            assert!(max_diff(&a, &b) < 1e-12, "n={n} dt={dt}: {}", max_diff(&a, &b));
            let eye = CMat::identity(1 << n);
            assert!(max_diff(&a.adjoint_mul(&a), &eye) < 1e-12);
        }
    }

    #[test]
    fn adjoint_mul_matches_explicit() {
        let a = random_hermitian(3, 1).add(&random_hermitian(3, 2).mul(&random_hermitian(3, 3)));
        let b = random_hermitian(3, 4);
        assert!(max_diff(&a.adjoint_mul(&b), &a.adjoint().mul(&b)) < 1e-13);
    }

    #[test]
    fn depolarizing_damps_by_weight() {
        let n = 3;
        let mut op = PauliOperator::new(n);
        let strings = [
            single_site(1, Pauli::Y),
            two_site(0, Pauli::X, 2, Pauli::Z),
            single_site(0, Pauli::Z) | single_site(1, Pauli::X) | single_site(2, Pauli::Y),
        ];
        for s in strings {
            op.set(s, 1.0);
        }
        let mut m = op.to_dense();
        depolarize(&mut m, n, 0.9);
        let c = coefficients(&m, n);
        for s in strings {
            assert!((c[s as usize] - 0.9f64.powi(weight(s, n) as i32)).abs() < 1e-15);
        }
        assert!(c.iter().enumerate().all(|(i, v)| strings.contains(&(i as u64)) || v.abs() < 1e-15));
    }
}
