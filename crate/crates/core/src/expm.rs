//! Dense complex matrix exponential by scaled Taylor series and repeated
//! squaring. Used only by the position-basis oracle.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Scaled matrices have 1-norm at most this before the series is summed.
const SCALED_NORM: f64 = 0.5;

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(A) for a square complex matrix.
///
/// The series is summed to order n + 30 (or until terms underflow) rather
/// than to a norm tolerance. For a banded generator the entry k bonds away
/// first appears at order k, so this keeps far-off-diagonal entries
/// accurate relative to their own size, not only relative to the norm.
pub fn expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    let norm = one_norm(a);
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a * Complex64::from(0.5f64.powi(squarings as i32));

    let mut result = DMatrix::<Complex64>::identity(n, n);
    let mut term = DMatrix::<Complex64>::identity(n, n);
    for k in 1..=(n + 30) {
        term = (&term * &scaled) / Complex64::from(k as f64);
        if term.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
            break;
        }
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// U^τ = exp(-iτH) for a real symmetric Hamiltonian.
pub fn propagator(hamiltonian: &DMatrix<f64>, tau: f64) -> DMatrix<Complex64> {
    let generator = hamiltonian.map(|h| Complex64::new(0.0, -tau * h));
    expm(&generator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{dense_hamiltonian, LatticeSpec};
    use crate::spectral::SpectralBasis;

    #[test]
    fn zero_matrix_gives_identity() {
        let z = DMatrix::<Complex64>::zeros(3, 3);
        assert_eq!(expm(&z), DMatrix::identity(3, 3));
    }

    #[test]
    fn two_site_rotation() {
        let h = dense_hamiltonian(&LatticeSpec::open(2).unwrap());
        for tau in [0.1, 0.7, 3.0, 25.0] {
            let u = propagator(&h, tau);
            let (c, s) = (tau.cos(), tau.sin());
            assert!((u[(0, 0)] - Complex64::new(c, 0.0)).norm() < 1e-13);
            assert!((u[(1, 0)] - Complex64::new(0.0, s)).norm() < 1e-13);
        }
    }

    #[test]
    fn matches_eigen_decomposition_and_is_unitary() {
        for spec in [LatticeSpec::open(9).unwrap(), LatticeSpec::ring(10).unwrap()] {
            let h = dense_hamiltonian(&spec);
            let basis = SpectralBasis::for_lattice(&spec).unwrap();
            let v = basis.eigenvectors().map(Complex64::from);
            for tau in [0.05, 0.5, 4.0] {
                let u = propagator(&h, tau);
                let phases = nalgebra::DVector::from_iterator(
                    basis.dimension(),
                    basis
                        .eigenvalues()
                        .iter()
                        .map(|e| Complex64::from_polar(1.0, -e * tau)),
                );
                let reference = &v * DMatrix::from_diagonal(&phases) * v.transpose();
                assert!((&u - reference).camax() < 1e-12);
                let gram = u.adjoint() * &u;
                assert!((gram - DMatrix::identity(spec.n_sites(), spec.n_sites())).camax() < 1e-12);
            }
        }
    }

    #[test]
    fn far_entries_keep_relative_accuracy() {
        // <1+d| e^{-iτH} |1> ≈ (iτ)^d / d! on a long chain
        let h = dense_hamiltonian(&LatticeSpec::open(40).unwrap());
        let tau = 0.01;
        let u = propagator(&h, tau);
        let mut leading = 1.0;
        for d in 1..=25usize {
            leading *= tau / d as f64;
            let got = u[(d, 0)].norm();
            assert!((got / leading - 1.0).abs() < 1e-3, "d={d}: {got} vs {leading}");
        }
    }
}
