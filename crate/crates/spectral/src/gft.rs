//! Graph Fourier transform and band perturbations.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpectralError};
use crate::nystrom::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `f̃ = Ũᵀ f`.
    Forward,
    /// `f = Ũ f̃`.
    Inverse,
}

pub fn gft(basis: &SpectralBasis, f: &[f64], direction: Direction) -> Result<Vec<f64>> {
    let u = &basis.vectors;
    let expect = match direction {
        Direction::Forward => u.nrows(),
        Direction::Inverse => u.ncols(),
    };
    if f.len() != expect {
        return Err(SpectralError::Shape(format!("{direction:?} transform expects length {expect}, got {}", f.len())));
    }
    let x = DVector::from_column_slice(f);
    let y = match direction {
        Direction::Forward => u.tr_mul(&x),
        Direction::Inverse => u * x,
    };
    Ok(y.as_slice().to_vec())
}

/// A set of eigen-indices, counted from the low end of the spectrum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Band {
    indices: Vec<usize>,
}

impl Band {
    pub fn new(mut indices: Vec<usize>, rank: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rank) {
            return Err(SpectralError::Config(format!("band index {bad} outside basis of rank {rank}")));
        }
        Ok(Band { indices })
    }

    pub fn range(range: Range<usize>, rank: usize) -> Result<Self> {
        Band::new(range.collect(), rank)
    }

    /// Indices whose eigenvalue is strictly above `threshold`.
    pub fn above(basis: &SpectralBasis, threshold: f64) -> Self {
        let indices = basis.eigenvalues.iter().enumerate().filter(|(_, &l)| l > threshold).map(|(i, _)| i).collect();
        Band { indices }
    }

    /// Parses `a..b` as a half-open index range.
    pub fn parse_range(text: &str, rank: usize) -> Result<Self> {
        let bad = || SpectralError::Config(format!("band `{text}` is not of the form a..b"));
        let (a, b) = text.trim().split_once("..").ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        Band::range(a..b, rank)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn check(&self, basis: &SpectralBasis) -> Result<()> {
        match self.indices.last() {
            Some(&i) if i >= basis.rank() => {
                Err(SpectralError::Config(format!("band index {i} outside basis of rank {}", basis.rank())))
            }
            _ => Ok(()),
        }
    }
}

/// `Σ_{l∈S} u_l u_lᵀ y`.
fn project(basis: &SpectralBasis, y: &DVector<f64>, band: &Band) -> DVector<f64> {
    let cols: DMatrix<f64> = basis.vectors.select_columns(band.indices());
    &cols * cols.tr_mul(y)
}

fn signal(basis: &SpectralBasis, y: &[f64]) -> Result<DVector<f64>> {
    if y.len() != basis.n() {
        return Err(SpectralError::Shape(format!("signal length {} but basis has {} nodes", y.len(), basis.n())));
    }
    Ok(DVector::from_column_slice(y))
}

/// Removes the content of `y` in `band`.
pub fn intra_perturb(basis: &SpectralBasis, y: &[f64], band: &Band) -> Result<Vec<f64>> {
    band.check(basis)?;
    let y = signal(basis, y)?;
    let out = &y - project(basis, &y, band);
    Ok(out.as_slice().to_vec())
}

/// Replaces the content of `y2` in `band` by that of `y1`.
pub fn inter_perturb(basis: &SpectralBasis, y1: &[f64], y2: &[f64], band: &Band) -> Result<Vec<f64>> {
    band.check(basis)?;
    let y1 = signal(basis, y1)?;
    let y2 = signal(basis, y2)?;
    let out = &y2 - project(basis, &y2, band) + project(basis, &y1, band);
    Ok(out.as_slice().to_vec())
}
