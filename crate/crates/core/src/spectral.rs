//! Analytic eigensystems of the tight-binding chain and ring.
//!
//! Open chain of N sites: ε_s = -2 cos(sπ/(N+1)), ψ_s(ℓ) = √(2/(N+1)) sin(sℓπ/(N+1)).
//! Even ring: sine/cosine pairs sharing ε_s = -2 cos(2sπ/N) plus the uniform
//! (ε = -2) and staggered (ε = +2) modes. The reduced basis is the open chain
//! on N-1 sites, i.e. the lattice with the detector site removed.
//!
//! Trigonometric arguments are reduced with integer arithmetic before
//! evaluation; `sin(sℓπ/(N+1))` evaluated directly loses ~1e-9 at N ~ 5000.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dense_hamiltonian, Boundary, LatticeSpec, Mode, Site};

/// Eigenvalues closer than this are grouped into one degeneracy class.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Ring classification of reduced-basis modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeTag {
    /// Vanishes on the detector site and is an exact ring eigenstate.
    Dark,
    Bright,
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    /// Column `s - 1` holds mode `s`; row `ℓ - 1` holds site `ℓ`.
    eigenvectors: DMatrix<f64>,
    degeneracy_classes: Vec<Vec<Mode>>,
    tags: Option<Vec<ModeTag>>,
}

impl SpectralBasis {
    fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Self {
        debug_assert_eq!(eigenvectors.ncols(), eigenvalues.len());
        let degeneracy_classes = group_degenerate(&eigenvalues);
        Self {
            eigenvalues,
            eigenvectors,
            degeneracy_classes,
            tags: None,
        }
    }

    /// Full-lattice eigenbasis for `spec`: analytic for open chains and even
    /// rings with N >= 4, dense numerical diagonalization otherwise.
    pub fn for_lattice(spec: &LatticeSpec) -> Result<Self> {
        let n = spec.n_sites();
        match spec.boundary() {
            Boundary::Open => open_chain_eigensystem(n),
            Boundary::Ring if n >= 4 && n % 2 == 0 => ring_eigensystem(n),
            Boundary::Ring => Ok(numeric_eigensystem(spec)),
        }
    }

    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, mode: Mode) -> f64 {
        self.eigenvalues[mode.index0()]
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Amplitude of `mode` on `site`.
    pub fn amplitude(&self, site: Site, mode: Mode) -> f64 {
        self.eigenvectors[(site.index0(), mode.index0())]
    }

    /// Amplitudes of every mode on one site, indexed by mode.
    pub fn site_row(&self, site: Site) -> Vec<f64> {
        self.eigenvectors.row(site.index0()).iter().copied().collect()
    }

    pub fn degeneracy_classes(&self) -> &[Vec<Mode>] {
        &self.degeneracy_classes
    }

    pub fn tags(&self) -> Option<&[ModeTag]> {
        self.tags.as_deref()
    }

    pub fn tag(&self, mode: Mode) -> Option<ModeTag> {
        self.tags.as_ref().map(|t| t[mode.index0()])
    }

    pub fn dark_modes(&self) -> Vec<Mode> {
        match &self.tags {
            Some(tags) => tags
                .iter()
                .enumerate()
                .filter(|(_, t)| **t == ModeTag::Dark)
                .map(|(i, _)| Mode(i + 1))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn check_mode(&self, mode: Mode) -> Result<()> {
        if mode.0 < 1 || mode.0 > self.dimension() {
            return Err(Error::OutOfRange {
                what: "mode",
                index: mode.0,
                max: self.dimension(),
            });
        }
        Ok(())
    }
}

fn group_degenerate(eigenvalues: &[f64]) -> Vec<Vec<Mode>> {
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]).then(a.cmp(&b)));
    let mut classes: Vec<Vec<Mode>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for i in order {
        let e = eigenvalues[i];
        match classes.last_mut() {
            Some(class) if e - last < DEGENERACY_TOL => class.push(Mode(i + 1)),
            _ => classes.push(vec![Mode(i + 1)]),
        }
        last = e;
    }
    for class in &mut classes {
        class.sort();
    }
    classes
}

/// sin(kπ/m) for k in 0..2m.
fn sine_table(m: usize) -> Vec<f64> {
    let mut table: Vec<f64> = (0..2 * m).map(|k| (k as f64 * PI / m as f64).sin()).collect();
    table[m] = 0.0;
    if m % 2 == 0 {
        table[m / 2] = 1.0;
        table[3 * m / 2] = -1.0;
    }
    table
}

/// Eigensystem of the open N-site chain, eigenvalues ascending in s.
pub fn open_chain_eigensystem(n: usize) -> Result<SpectralBasis> {
    if n < 2 {
        return Err(Error::InvalidSpec(format!(
            "open chain needs at least 2 sites, got {n}"
        )));
    }
    Ok(open_chain_unchecked(n))
}

fn open_chain_unchecked(n: usize) -> SpectralBasis {
    let m = n + 1;
    let table = sine_table(m);
    let norm = (2.0 / m as f64).sqrt();
    let eigenvalues = (1..=n)
        .map(|s| -2.0 * (s as f64 * PI / m as f64).cos())
        .collect();
    let vectors = DMatrix::from_fn(n, n, |l, s| norm * table[((l + 1) * (s + 1)) % (2 * m)]);
    SpectralBasis::from_parts(eigenvalues, vectors)
}

/// Basis of the (N-1)-site chain left after removing the detector site N.
///
/// With `Boundary::Ring` every mode is tagged: even s are dark (they vanish
/// at the removed site and remain eigenstates of the ring), odd s bright.
pub fn reduced_open_basis(n: usize, boundary: Boundary) -> Result<SpectralBasis> {
    if n < 3 {
        return Err(Error::InvalidSpec(format!(
            "reduced basis needs at least 3 sites, got {n}"
        )));
    }
    let mut basis = open_chain_unchecked(n - 1);
    if boundary == Boundary::Ring {
        basis.tags = Some(
            (1..n)
                .map(|s| if s % 2 == 0 { ModeTag::Dark } else { ModeTag::Bright })
                .collect(),
        );
    }
    Ok(basis)
}

/// Analytic eigensystem of the even ring.
///
/// Mode order: sines for s = 1..N/2-1, the matching cosines as modes
/// s + N/2 - 1, then the staggered mode (-1)^ℓ/√N with ε = +2 and the
/// uniform mode 1/√N with ε = -2.
pub fn ring_eigensystem(n: usize) -> Result<SpectralBasis> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::OddRing(n));
    }
    let half = n / 2;
    let angle = |k: usize| 2.0 * PI * k as f64 / n as f64;
    let sines: Vec<f64> = (0..n).map(|k| angle(k).sin()).collect();
    let cosines: Vec<f64> = (0..n).map(|k| angle(k).cos()).collect();
    let norm = (2.0 / n as f64).sqrt();
    let mut eigenvalues = vec![0.0; n];
    let mut vectors = DMatrix::zeros(n, n);
    for s in 1..half {
        let e = -2.0 * cosines[s];
        eigenvalues[s - 1] = e;
        eigenvalues[s + half - 2] = e;
        for l in 1..=n {
            let k = (s * l) % n;
            vectors[(l - 1, s - 1)] = norm * sines[k];
            vectors[(l - 1, s + half - 2)] = norm * cosines[k];
        }
    }
    let inv_sqrt = 1.0 / (n as f64).sqrt();
    eigenvalues[n - 2] = 2.0;
    eigenvalues[n - 1] = -2.0;
    for l in 1..=n {
        vectors[(l - 1, n - 2)] = if l % 2 == 0 { inv_sqrt } else { -inv_sqrt };
        vectors[(l - 1, n - 1)] = inv_sqrt;
    }
    Ok(SpectralBasis::from_parts(eigenvalues, vectors))
}

/// Dense diagonalization of `dense_hamiltonian(spec)`, eigenvalues ascending.
pub fn numeric_eigensystem(spec: &LatticeSpec) -> SpectralBasis {
    let eig = SymmetricEigen::new(dense_hamiltonian(spec));
    let n = spec.n_sites();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |l, s| eig.eigenvectors[(l, order[s])]);
    SpectralBasis::from_parts(eigenvalues, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    fn max_residual(h: &DMatrix<f64>, basis: &SpectralBasis) -> f64 {
        let v = basis.eigenvectors();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(basis.eigenvalues()));
        (h * v - v * d).amax()
    }

    fn max_orthonormality_error(basis: &SpectralBasis) -> f64 {
        let v = basis.eigenvectors();
        (v.transpose() * v - DMatrix::identity(v.ncols(), v.ncols())).amax()
    }

    #[test]
    fn open_chain_small_spectra() {
        let b2 = open_chain_eigensystem(2).unwrap();
        assert_abs_diff_eq!(b2.eigenvalues()[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b2.eigenvalues()[1], 1.0, epsilon = 1e-15);

        let b3 = open_chain_eigensystem(3).unwrap();
        let r2 = 2f64.sqrt();
        for (got, want) in b3.eigenvalues().iter().zip([-r2, 0.0, r2]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        for (l, want) in [0.5, 1.0 / r2, 0.5].iter().enumerate() {
            assert_abs_diff_eq!(b3.amplitude(Site(l + 1), Mode(1)), *want, epsilon = 1e-15);
        }
        assert!(open_chain_eigensystem(1).is_err());
    }

    #[test]
    fn reduced_basis_examples() {
        let b = reduced_open_basis(4, Boundary::Open).unwrap();
        assert_eq!(b.dimension(), 3);
        let r2 = 2f64.sqrt();
        for (got, want) in b.eigenvalues().iter().zip([-r2, 0.0, r2]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        assert_eq!(b.amplitude(Site(2), Mode(2)), 0.0);
        assert!(b.tags().is_none());

        let ring = reduced_open_basis(8, Boundary::Ring).unwrap();
        assert_eq!(ring.dark_modes(), vec![Mode(2), Mode(4), Mode(6)]);
        assert_eq!(ring.tag(Mode(3)), Some(ModeTag::Bright));
        assert!(reduced_open_basis(2, Boundary::Open).is_err());
    }

    #[test]
    fn ring_spectra() {
        let b4 = ring_eigensystem(4).unwrap();
        let e4 = sorted(b4.eigenvalues().to_vec());
        for (got, want) in e4.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        for l in 1..=4 {
            assert_abs_diff_eq!(b4.amplitude(Site(l), Mode(4)), 0.5, epsilon = 1e-15);
        }
        let b6 = ring_eigensystem(6).unwrap();
        let e6 = sorted(b6.eigenvalues().to_vec());
        for (got, want) in e6.iter().zip([-2.0, -1.0, -1.0, 1.0, 1.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        assert_eq!(ring_eigensystem(7).unwrap_err(), Error::OddRing(7));
        assert_eq!(ring_eigensystem(2).unwrap_err(), Error::OddRing(2));
    }

    #[test]
    fn ring_degeneracy_classes() {
        let b = ring_eigensystem(8).unwrap();
        let classes = b.degeneracy_classes();
        // -2, then three pairs, then +2
        assert_eq!(classes.len(), 5);
        assert_eq!(classes[0], vec![Mode(8)]);
        assert_eq!(classes[4], vec![Mode(7)]);
        assert!(classes[1..4].iter().all(|c| c.len() == 2));
        assert_eq!(classes[1], vec![Mode(1), Mode(4)]);
        let open = open_chain_eigensystem(8).unwrap();
        assert!(open.degeneracy_classes().iter().all(|c| c.len() == 1));
    }

    #[test]
    fn analytic_bases_diagonalize_dense_hamiltonian() {
        for n in 2..=12 {
            let spec = LatticeSpec::open(n).unwrap();
            let basis = SpectralBasis::for_lattice(&spec).unwrap();
            assert!(max_residual(&dense_hamiltonian(&spec), &basis) < 1e-12, "open {n}");
            assert!(max_orthonormality_error(&basis) < 1e-12);

            let spec = LatticeSpec::ring(n).unwrap();
            let basis = SpectralBasis::for_lattice(&spec).unwrap();
            assert!(max_residual(&dense_hamiltonian(&spec), &basis) < 1e-12, "ring {n}");
            assert!(max_orthonormality_error(&basis) < 1e-12);
        }
    }

    #[test]
    fn reduced_completeness() {
        for n in [3, 4, 9, 50] {
            let b = reduced_open_basis(n, Boundary::Open).unwrap();
            for l in 1..n {
                let total: f64 = b.site_row(Site(l)).iter().map(|a| a * a).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dark_modes_are_ring_eigenstates() {
        for n in [4, 6, 8, 20, 7, 9] {
            let spec = LatticeSpec::ring(n).unwrap();
            let h = dense_hamiltonian(&spec);
            let reduced = reduced_open_basis(n, Boundary::Ring).unwrap();
            for mode in reduced.dark_modes() {
                let mut v = nalgebra::DVector::zeros(n);
                for l in 1..n {
                    v[l - 1] = reduced.amplitude(Site(l), mode);
                }
                assert_eq!(v[n - 1], 0.0);
                let residual = (&h * &v - &v * reduced.eigenvalue(mode)).amax();
                assert!(residual < 1e-12, "n={n} mode={mode:?} residual={residual}");
            }
        }
    }
}
