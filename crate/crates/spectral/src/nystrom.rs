use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SpectralError};
use crate::laplacian::NormalizedLaplacian;

/// Floor applied to the sampled block's eigenvalues before `A^{-1/2}`, and
/// below which Ritz values are discarded.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Which end of the Laplacian spectrum the decomposition targets.
///
/// The range finder converges to dominant eigenpairs. `High` decomposes `L`
/// itself and yields its largest eigenvalues; `Low` decomposes `2I − L`
/// (the normalized spectrum lies in `[0, 2]`) and maps `λ = 2 − σ`, which
/// yields the smallest frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumEnd {
    #[default]
    Low,
    High,
}

/// Matrix raised to the power `q` in the range finder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerTarget {
    /// The sampled `s×s` intersection block `A`.
    #[default]
    Intersection,
    /// The orthogonalized matrix `W = A^{-1/2} CᵀC A^{-1/2}`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NystromConfig {
    /// Sampled columns.
    pub s: usize,
    /// Returned rank.
    pub r: usize,
    /// Oversampling.
    pub p: usize,
    /// Power iterations.
    pub q: usize,
    pub seed: u64,
    pub end: SpectrumEnd,
    pub power: PowerTarget,
}

impl NystromConfig {
    pub fn new(s: usize, r: usize, p: usize, q: usize, seed: u64) -> Self {
        NystromConfig {
            s,
            r,
            p,
            q,
            seed,
            end: SpectrumEnd::default(),
            power: PowerTarget::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut bad = Vec::new();
        if self.r == 0 {
            bad.push("r must be positive".to_string());
        }
        if self.r + self.p > self.s {
            bad.push(format!("r + p = {} exceeds s = {}", self.r + self.p, self.s));
        }
        if self.s > n {
            bad.push(format!("s = {} exceeds N = {n}", self.s));
        }
        if self.q == 0 {
            bad.push("q must be at least 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SpectralError::Config(bad.join("; ")))
        }
    }
}

/// How a basis was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMeta {
    /// `None` for an exact dense decomposition.
    pub config: Option<NystromConfig>,
    pub end: SpectrumEnd,
    /// Eigenvalues of the sampled block that hit [`EIGEN_FLOOR`].
    pub floored: usize,
}

/// Approximate Laplacian eigenpairs with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    /// `N×r`, one eigenvector per column.
    pub vectors: DMatrix<f64>,
    /// Input ids of the rows, as retained by the Laplacian.
    pub nodes: Vec<usize>,
    pub meta: BasisMeta,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    /// `‖ŨᵀŨ − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.vectors.tr_mul(&self.vectors);
        (g - DMatrix::identity(self.rank(), self.rank())).norm()
    }

    /// `Ũ diag(λ) Ũᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (mut col, &l) in scaled.column_iter_mut().zip(&self.eigenvalues) {
            col *= l;
        }
        scaled * self.vectors.transpose()
    }
}

/// Column `j` of the decomposed operator: `L` or `2I − L`, both unit on the
/// diagonal and differing only in the sign of the off-diagonal part.
fn off_sign(end: SpectrumEnd) -> f64 {
    match end {
        SpectrumEnd::High => 1.0,
        SpectrumEnd::Low => -1.0,
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Orthonormal basis of the column space of `y`.
fn orthonormal(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Sampled, orthogonalized Nyström eigendecomposition.
///
/// Samples `s` columns `C` of the operator uniformly without replacement,
/// orthogonalizes with `W = A^{-1/2} CᵀC A^{-1/2}` where `A` is the sampled
/// intersection block, finds the range of `A^q Ω` (or `W^q Ω`) for a
/// Gaussian `Ω` of width `r + p`, solves `Z QᵀΩ = QᵀWΩ`, and lifts the top
/// `r` eigenpairs of `Z` back with `Ũ = C A^{-1/2} U_W Σ_W^{-1/2}`.
pub fn nystrom_eig(lap: &NormalizedLaplacian, cfg: &NystromConfig) -> Result<SpectralBasis> {
    let n = lap.n();
    cfg.validate(n)?;
    let (s, width) = (cfg.s, cfg.r + cfg.p);
    let sign = off_sign(cfg.end);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut sample = rand::seq::index::sample(&mut rng, n, s).into_vec();
    sample.sort_unstable();
    // C in compressed rows: hits[i] lists (sample slot, value) of row i
    let mut hits: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (k, &j) in sample.iter().enumerate() {
        hits[j].push((k, lap.diag(j)));
        for (i, v) in lap.row(j) {
            hits[i].push((k, sign * v));
        }
    }

    let mut a = DMatrix::zeros(s, s);
    for (k, &j) in sample.iter().enumerate() {
        for &(k2, v) in &hits[j] {
            a[(k, k2)] = v;
        }
    }
    let mut ctc = DMatrix::zeros(s, s);
    for row in &hits {
        for &(k1, v1) in row {
            for &(k2, v2) in row {
                ctc[(k1, k2)] += v1 * v2;
            }
        }
    }

    // Work in the eigenbasis V of A, where A^{-1/2} is diagonal. Forming
    // A^{-1/2} = V D^{-1/2} Vᵀ densely would spread the rounding error of
    // floored modes (scale 1e5) into every entry.
    let a_eig = SymmetricEigen::new(a);
    let floored = a_eig.eigenvalues.iter().filter(|&&l| l < EIGEN_FLOOR).count();
    if floored > 0 {
        log::warn!("{floored} eigenvalues of the sampled block floored at {EIGEN_FLOOR:e}");
    }
    let v = &a_eig.eigenvectors;
    let d: Vec<f64> = a_eig.eigenvalues.iter().map(|&l| l.max(EIGEN_FLOOR)).collect();
    let isqrt: Vec<f64> = d.iter().map(|l| 1.0 / l.sqrt()).collect();
    // W in rotated coordinates: D^{-1/2} Vᵀ CᵀC V D^{-1/2}
    let mut w = v.tr_mul(&(&ctc * v));
    for i in 0..s {
        for j in 0..s {
            w[(i, j)] *= isqrt[i] * isqrt[j];
        }
    }
    symmetrize(&mut w);

    let normal = StandardNormal;
    let omega = DMatrix::from_fn(s, width, |_, _| Distribution::<f64>::sample(&normal, &mut rng));
    let omega = v.tr_mul(&omega);
    let apply = |y: &DMatrix<f64>| -> DMatrix<f64> {
        match cfg.power {
            PowerTarget::Intersection => DMatrix::from_fn(s, y.ncols(), |i, j| d[i] * y[(i, j)]),
            PowerTarget::Normalized => &w * y,
        }
    };
    // re-orthonormalizing after each product keeps the same range as
    // target^q Ω without the columns collapsing onto the top eigenvector
    let mut q = orthonormal(apply(&omega));
    for _ in 1..cfg.q {
        q = orthonormal(apply(&q));
    }

    let b = q.tr_mul(&omega);
    let rhs = q.tr_mul(&(&w * &omega));
    // Z B = rhs  <=>  Bᵀ Zᵀ = rhsᵀ
    let mut z = b
        .transpose()
        .lu()
        .solve(&rhs.transpose())
        .ok_or_else(|| SpectralError::Config("QᵀΩ is singular; try another seed or more oversampling".into()))?
        .transpose();
    symmetrize(&mut z);
    let z_eig = SymmetricEigen::new(z);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&i, &j| z_eig.eigenvalues[j].total_cmp(&z_eig.eigenvalues[i]));
    let mut keep: Vec<usize> = order.into_iter().take(cfg.r).collect();
    let before = keep.len();
    keep.retain(|&i| z_eig.eigenvalues[i] >= EIGEN_FLOOR);
    if keep.len() < before {
        log::warn!("rank reduced from {before} to {}: eigenvalues below {EIGEN_FLOOR:e}", keep.len());
    }
    if keep.is_empty() {
        return Err(SpectralError::Config("no eigenvalue above the floor".into()));
    }
    let r = keep.len();
    let sigma: Vec<f64> = keep.iter().map(|&i| z_eig.eigenvalues[i]).collect();
    let u_z = DMatrix::from_fn(width, r, |row, c| z_eig.eigenvectors[(row, keep[c])]);
    let mut g = &q * u_z;
    for (i, mut row) in g.row_iter_mut().enumerate() {
        row *= isqrt[i];
    }
    for (mut col, &sg) in g.column_iter_mut().zip(&sigma) {
        col /= sg.sqrt();
    }
    let g = v * g;
    let mut vectors = DMatrix::zeros(n, r);
    for (i, row) in hits.iter().enumerate() {
        for &(k, v) in row {
            for c in 0..r {
                vectors[(i, c)] += v * g[(k, c)];
            }
        }
    }

    let values: Vec<f64> = match cfg.end {
        SpectrumEnd::High => sigma,
        SpectrumEnd::Low => sigma.iter().map(|sg| 2.0 - sg).collect(),
    };
    let meta = BasisMeta {
        config: Some(NystromConfig { r, ..*cfg }),
        end: cfg.end,
        floored,
    };
    Ok(sorted(values, vectors, lap.nodes().to_vec(), meta))
}

fn sorted(values: Vec<f64>, vectors: DMatrix<f64>, nodes: Vec<usize>, meta: BasisMeta) -> SpectralBasis {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    SpectralBasis {
        eigenvalues: order.iter().map(|&i| values[i]).collect(),
        vectors: DMatrix::from_fn(vectors.nrows(), order.len(), |row, c| vectors[(row, order[c])]),
        nodes,
        meta,
    }
}

/// Exact dense decomposition keeping `r` eigenpairs from the chosen end.
pub fn exact_basis(lap: &NormalizedLaplacian, r: usize, end: SpectrumEnd) -> Result<SpectralBasis> {
    let n = lap.n();
    if r == 0 || r > n {
        return Err(SpectralError::Config(format!("rank {r} outside 1..={n}")));
    }
    let e = SymmetricEigen::new(lap.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let keep: Vec<usize> = match end {
        SpectrumEnd::Low => order[..r].to_vec(),
        SpectrumEnd::High => order[n - r..].to_vec(),
    };
    let values = keep.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, r, |row, c| e.eigenvectors[(row, keep[c])]);
    let meta = BasisMeta {
        config: None,
        end,
        floored: 0,
    };
    Ok(sorted(values, vectors, lap.nodes().to_vec(), meta))
}

impl fmt::Display for SpectrumEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumEnd::Low => "low",
            SpectrumEnd::High => "high",
        })
    }
}

impl FromStr for SpectrumEnd {
    type Err = SpectralError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(SpectrumEnd::Low),
            "high" => Ok(SpectrumEnd::High),
            other => Err(SpectralError::Config(format!("unknown spectrum end `{other}` (low|high)"))),
        }
    }
}

impl fmt::Display for PowerTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerTarget::Intersection => "intersection",
            PowerTarget::Normalized => "normalized",
        })
    }
}

impl FromStr for PowerTarget {
    type Err = SpectralError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intersection" | "a" => Ok(PowerTarget::Intersection),
            "normalized" | "w" => Ok(PowerTarget::Normalized),
            other => Err(SpectralError::Config(format!("unknown power target `{other}` (intersection|normalized)"))),
        }
    }
}
