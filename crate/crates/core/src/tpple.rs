//! Temporal point process log-likelihood of a node's observed events and the
//! integral estimators used for its compensator term.
//!
//! Both estimators reduce to a quadrature rule (points and weights) over the
//! observed event grid, so the same rule drives the scalar evaluation here
//! and the differentiable version recorded on a tape during training.

use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

pub const DEFAULT_MC_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Integrator {
    /// Trapezoid rule on the event grid, each interval split into `refine`
    /// equal pieces.
    Trapezoid { refine: usize },
    /// `samples` uniform draws per interval.
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Trapezoid { refine: 1 }
    }
}

impl Integrator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Integrator::Trapezoid { refine: 0 } => Err(Error::invalid("trapezoid refinement must be >= 1")),
            Integrator::MonteCarlo { samples: 0, .. } => Err(Error::invalid("Monte Carlo samples must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Same rule with a different Monte Carlo stream.
    pub fn reseeded(self, seed: u64) -> Self {
        match self {
            Integrator::MonteCarlo { samples, .. } => Integrator::MonteCarlo { samples, seed },
            other => other,
        }
    }
}

/// Points and weights approximating `∫ f` over consecutive intervals of a
/// time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Quadrature {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Rule over `[grid[0], grid[last]]`; `grid` must be ascending.
    pub fn over(grid: &[f64], integrator: Integrator) -> Result<Self> {
        integrator.validate()?;
        if grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("integration grid is not ascending"));
        }
        let mut q = Quadrature::default();
        match integrator {
            Integrator::Trapezoid { refine } => {
                for w in grid.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if b == a {
                        continue;
                    }
                    let h = (b - a) / refine as f64;
                    for j in 0..refine {
                        let lo = a + h * j as f64;
                        let hi = if j + 1 == refine { b } else { a + h * (j + 1) as f64 };
                        q.push(lo, h / 2.0);
                        q.push(hi, h / 2.0);
                    }
                }
            }
            Integrator::MonteCarlo { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for w in grid.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if b == a {
                        continue;
                    }
                    let wt = (b - a) / samples as f64;
                    for _ in 0..samples {
                        let u: f64 = rng.random();
                        q.points.push(a + u * (b - a));
                        q.weights.push(wt);
                    }
                }
            }
        }
        Ok(q)
    }

    // Merges with the previous point when it sits at the same time.
    fn push(&mut self, t: f64, w: f64) {
        if let (Some(&last), Some(lw)) = (self.points.last(), self.weights.last_mut()) {
            if last == t {
                *lw += w;
                return;
            }
        }
        self.points.push(t);
        self.weights.push(w);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (&t, &w) in self.points.iter().zip(&self.weights) {
            total += w * f(t)?;
        }
        Ok(total)
    }
}

/// Observed events of one node together with an intensity evaluator.
pub struct IntensityPath<'a> {
    evaluator: Box<dyn Fn(f64) -> Result<Vec<f64>> + 'a>,
    /// `(cluster, time)` in ascending time.
    events: Vec<(usize, f64)>,
    t0: f64,
}

impl<'a> IntensityPath<'a> {
    /// The integration window starts at the first event.
    pub fn new(evaluator: impl Fn(f64) -> Result<Vec<f64>> + 'a, events: Vec<(usize, f64)>) -> Result<Self> {
        let t0 = events.first().map(|e| e.1).ok_or(Error::EmptyEvaluation)?;
        Self::with_start(evaluator, events, t0)
    }

    pub fn with_start(
        evaluator: impl Fn(f64) -> Result<Vec<f64>> + 'a,
        events: Vec<(usize, f64)>,
        t0: f64,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        if events.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::invalid("event times are not ascending"));
        }
        if events[0].1 < t0 {
            return Err(Error::TimeOrder {
                t: events[0].1,
                last: t0,
            });
        }
        Ok(IntensityPath {
            evaluator: Box::new(evaluator),
            events,
            t0,
        })
    }

    pub fn events(&self) -> &[(usize, f64)] {
        &self.events
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    /// Per-cluster intensities at `t`, rejecting non-finite or non-positive
    /// values.
    pub fn intensities(&self, t: f64) -> Result<Vec<f64>> {
        let lam = (self.evaluator)(t)?;
        if lam.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::NonFiniteIntensity(t));
        }
        Ok(lam)
    }

    pub fn total_intensity(&self, t: f64) -> Result<f64> {
        Ok(self.intensities(t)?.iter().sum())
    }

    /// `t0` followed by every event time.
    pub fn grid(&self) -> Vec<f64> {
        std::iter::once(self.t0).chain(self.events.iter().map(|e| e.1)).collect()
    }

    pub fn compensator(&self, integrator: Integrator) -> Result<f64> {
        Quadrature::over(&self.grid(), integrator)?.integrate(|t| self.total_intensity(t))
    }
}

/// `R = Σ_i log λ_{k_i}(t_i) − ∫_{t_0}^{t_n} Σ_k λ_k(s) ds`.
pub fn tpp_log_likelihood(path: &IntensityPath<'_>, integrator: Integrator) -> Result<f64> {
    let mut log_sum = 0.0;
    for &(k, t) in path.events() {
        let lam = path.intensities(t)?;
        let l = *lam
            .get(k)
            .ok_or_else(|| Error::invalid(format!("event cluster {k} outside {} clusters", lam.len())))?;
        log_sum += l.ln();
    }
    Ok(log_sum - path.compensator(integrator)?)
}

pub fn integral_mc(path: &IntensityPath<'_>, samples: usize, seed: u64) -> Result<f64> {
    path.compensator(Integrator::MonteCarlo { samples, seed })
}

pub fn integral_trapezoid(path: &IntensityPath<'_>) -> Result<f64> {
    path.compensator(Integrator::Trapezoid { refine: 1 })
}

/// `f*_k(t) = λ_k(t) · exp(−∫_{t_n}^{t} Σ_k λ_k(s) ds)`.
pub fn interevent_density(
    path: &IntensityPath<'_>,
    k: usize,
    t: f64,
    t_n: f64,
    integrator: Integrator,
) -> Result<f64> {
    if t < t_n {
        return Err(Error::TimeOrder { t, last: t_n });
    }
    let lam = path.intensities(t)?;
    let lk = *lam
        .get(k)
        .ok_or_else(|| Error::invalid(format!("cluster {k} outside {} clusters", lam.len())))?;
    let q = Quadrature::over(&[t_n, t], integrator)?;
    let big = q.integrate(|s| path.total_intensity(s))?;
    Ok(lk * (-big).exp())
}

/// Differentiable `R` given a `rows×K` intensity matrix.
///
/// `observed` lists `(row, cluster)` of each event; `integral` lists
/// `(row, weight)` of each quadrature point.
pub fn log_likelihood_tape(
    tape: &mut Tape,
    intensity: Var,
    observed: &[(usize, usize)],
    integral: &[(usize, f64)],
) -> Var {
    let picked = tape.pick(intensity, Rc::new(observed.to_vec()));
    let logs = tape.log(picked);
    let log_sum = tape.sum(logs);
    let rows: Vec<usize> = integral.iter().map(|r| r.0).collect();
    let weights = Array2::from_shape_vec((integral.len(), 1), integral.iter().map(|r| r.1).collect())
        .expect("column of weights");
    let at = tape.gather_rows(intensity, Rc::new(rows));
    let w = tape.constant(weights);
    let weighted = tape.mul_col(at, w);
    let comp = tape.sum(weighted);
    tape.sub(log_sum, comp)
}
