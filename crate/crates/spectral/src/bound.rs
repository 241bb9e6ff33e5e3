//! Empirical check of the expected-error bound of the Nyström decomposition.

use crate::dense::{jacobi_eigen, spectral_norm_sym};
use crate::error::{Result, SpectralError};
use crate::laplacian::NormalizedLaplacian;
use crate::nystrom::{nystrom_eig, NystromConfig, SpectrumEnd};

/// Largest graph accepted; the check needs dense residuals.
pub const MAX_NODES: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub trials: usize,
    /// Mean of `‖L − Ũ Σ̃ Ũᵀ‖₂`.
    pub empirical: f64,
    /// `‖L − L_r‖₂` of the best rank-r approximation.
    pub best_rank_r: f64,
    pub zeta: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `1 + √(r/(p−1)) + (e√(r+p)/p)·√(s−r)`; needs `p > 1`.
pub fn zeta(s: usize, r: usize, p: usize) -> Result<f64> {
    if p <= 1 {
        return Err(SpectralError::Config(format!("oversampling p = {p} must exceed 1 for the bound")));
    }
    let (s, r, p) = (s as f64, r as f64, p as f64);
    Ok(1.0 + (r / (p - 1.0)).sqrt() + std::f64::consts::E * (r + p).sqrt() / p * (s - r).sqrt())
}

/// Runs `trials` decompositions of `L` with seeds `seed, seed+1, …` and
/// compares the mean spectral error with
/// `ζ^{1/q}‖L − L_r‖₂ + (1 + ζ^{1/q})(N/√s)·max L_ii`.
pub fn bound_check(lap: &NormalizedLaplacian, cfg: &NystromConfig, trials: usize) -> Result<BoundReport> {
    let n = lap.n();
    if n > MAX_NODES {
        return Err(SpectralError::Config(format!("bound check limited to {MAX_NODES} nodes, graph has {n}")));
    }
    if cfg.end != SpectrumEnd::High {
        return Err(SpectralError::Config("the bound concerns L itself; use spectrum end `high`".into()));
    }
    if trials == 0 {
        return Err(SpectralError::Config("trials must be positive".into()));
    }
    cfg.validate(n)?;
    let z = zeta(cfg.s, cfg.r, cfg.p)?;
    let dense = lap.to_dense();
    let (values, _) = jacobi_eigen(&dense);
    // L is PSD, so its best rank-r error is the (r+1)-th largest eigenvalue
    let best_rank_r = if cfg.r >= n { 0.0 } else { values[n - 1 - cfg.r].max(0.0) };
    let mut total = 0.0;
    for t in 0..trials {
        let basis = nystrom_eig(lap, &NystromConfig { seed: cfg.seed.wrapping_add(t as u64), ..*cfg })?;
        total += spectral_norm_sym(&(&dense - basis.reconstruct()), 10_000, 1e-12);
    }
    let empirical = total / trials as f64;
    let max_diag = (0..n).map(|i| lap.diag(i)).fold(0.0, f64::max);
    let root = z.powf(1.0 / cfg.q as f64);
    let rhs = root * best_rank_r + (1.0 + root) * (n as f64 / (cfg.s as f64).sqrt()) * max_diag;
    Ok(BoundReport {
        trials,
        empirical,
        best_rank_r,
        zeta: z,
        rhs,
        pass: empirical <= rhs,
    })
}
