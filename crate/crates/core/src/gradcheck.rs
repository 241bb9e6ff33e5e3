//! Finite-difference verification of tape gradients.

use crate::error::Result;
use crate::learn::{Model, StepContext, Task};
use crate::params::Bound;
use crate::tape::{Tape, Var};

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// One parameter entry: tensor index in the store and element position.
pub type Coord = (usize, (usize, usize));

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub checked: usize,
    /// Entries skipped because the one-sided differences disagree, i.e. a
    /// LeakyReLU input sits within one step of zero.
    pub kinks: usize,
    pub max_rel_error: f64,
    /// `(tensor, position, analytic, numeric)` of the worst checked entry.
    pub worst: Option<(String, (usize, usize), f64, f64)>,
}

impl CheckReport {
    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares analytic gradients of `objective` with central differences at
/// `coords`.
pub fn check_objective<F>(model: &Model, coords: &[Coord], step: f64, tol: f64, objective: F) -> Result<CheckReport>
where
    F: Fn(&Model, &mut Tape, &Bound<'_>) -> Result<Var>,
{
    let eval = |m: &Model| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let out = objective(m, &mut tape, &bound)?;
        Ok(tape.scalar(out))
    };
    let analytic = {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let out = objective(model, &mut tape, &bound)?;
        bound.collect(&tape.backward(out))
    };
    let f0 = eval(model)?;
    let mut report = CheckReport::default();
    let mut probe = model.clone();
    for &(t, pos) in coords {
        let orig = model.params.values()[t][pos];
        probe.params.values_mut()[t][pos] = orig + step;
        let fp = eval(&probe)?;
        probe.params.values_mut()[t][pos] = orig - step;
        let fm = eval(&probe)?;
        probe.params.values_mut()[t][pos] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[t][pos];
        let err = relative_error(a, numeric);
        if err > tol && relative_error((fp - f0) / step, (f0 - fm) / step) > tol {
            report.kinks += 1;
            continue;
        }
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((model.params.names()[t].clone(), pos, a, numeric));
        }
    }
    Ok(report)
}

/// Gradient check of a task's training objective on one batch.
pub fn check_task(
    task: &dyn Task,
    model: &Model,
    batch: &[usize],
    ctx: &StepContext,
    coords: &[Coord],
    step: f64,
    tol: f64,
) -> Result<CheckReport> {
    check_objective(model, coords, step, tol, |m, tape, bound| {
        Ok(task.batch_objective(m, tape, bound, batch, ctx)?.objective)
    })
}

/// Every entry of every tensor.
pub fn all_coords(model: &Model) -> Vec<Coord> {
    let mut out = Vec::new();
    for (t, v) in model.params.values().iter().enumerate() {
        for r in 0..v.nrows() {
            for c in 0..v.ncols() {
                out.push((t, (r, c)));
            }
        }
    }
    out
}
