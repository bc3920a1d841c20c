//! Lattice geometry and the dense tight-binding Hamiltonian.
//!
//! Sites and modes are numbered from 1, so `Site(1)` is the first lattice
//! site and `Mode(1)` the lowest-index eigenmode. Hopping and ħ are both 1.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Ring,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Open => "open",
            Boundary::Ring => "ring",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" => Ok(Boundary::Open),
            "ring" | "periodic" => Ok(Boundary::Ring),
            other => Err(Error::InvalidSpec(format!(
                "unknown boundary `{other}` (expected open|ring)"
            ))),
        }
    }
}

/// 1-based lattice site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site(pub usize);

/// 1-based eigenmode index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mode(pub usize);

impl Site {
    pub fn index0(self) -> usize {
        self.0 - 1
    }
}

impl Mode {
    pub fn index0(self) -> usize {
        self.0 - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    n_sites: usize,
    boundary: Boundary,
    detector: Site,
}

impl LatticeSpec {
    /// Lattice with the detector on the last site.
    pub fn new(n_sites: usize, boundary: Boundary) -> Result<Self> {
        Self::with_detector(n_sites, boundary, Site(n_sites))
    }

    pub fn open(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, Boundary::Open)
    }

    pub fn ring(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, Boundary::Ring)
    }

    pub fn with_detector(n_sites: usize, boundary: Boundary, detector: Site) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 sites, got {n_sites}"
            )));
        }
        if detector.0 < 1 || detector.0 > n_sites {
            return Err(Error::OutOfRange {
                what: "detector site",
                index: detector.0,
                max: n_sites,
            });
        }
        Ok(Self {
            n_sites,
            boundary,
            detector,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn detector(&self) -> Site {
        self.detector
    }

    pub fn detector_at_edge(&self) -> bool {
        self.detector.0 == self.n_sites
    }

    pub fn check_site(&self, site: Site) -> Result<()> {
        if site.0 < 1 || site.0 > self.n_sites {
            return Err(Error::OutOfRange {
                what: "site",
                index: site.0,
                max: self.n_sites,
            });
        }
        Ok(())
    }
}

/// Dense real symmetric Hamiltonian: -1 on the nearest-neighbour bonds,
/// plus the closing bond between sites 1 and N on a ring.
///
/// Entries accumulate, so a two-site ring carries a doubled bond (-2).
pub fn dense_hamiltonian(spec: &LatticeSpec) -> DMatrix<f64> {
    let n = spec.n_sites();
    let mut h = DMatrix::zeros(n, n);
    for k in 0..n - 1 {
        h[(k, k + 1)] -= 1.0;
        h[(k + 1, k)] -= 1.0;
    }
    if spec.boundary() == Boundary::Ring {
        h[(0, n - 1)] -= 1.0;
        h[(n - 1, 0)] -= 1.0;
    }
    h
}
