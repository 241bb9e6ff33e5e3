//! Mini-batch training with step decay, validation selection and early
//! stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{decayed_lr, Adam, AdamConfig};
use super::{Model, StepContext, Task};
use crate::cam::{MaskingMode, DEFAULT_MASK_RATIO};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, indexed_seed};
use crate::tape::Tape;
use crate::tpple::Integrator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub mask_ratio: f64,
    pub masking: MaskingMode,
    pub integrator: Integrator,
    pub gamma: f64,
    pub tpp_max_events: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.01,
            lr_decay: 0.9,
            decay_every: 10,
            batch_size: 32,
            patience: 10,
            mask_ratio: DEFAULT_MASK_RATIO,
            masking: MaskingMode::LabelAware,
            integrator: Integrator::default(),
            gamma: 0.1,
            tpp_max_events: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr > 0.0) {
            bad.push("lr must be positive");
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be positive");
        }
        if self.patience == 0 {
            bad.push("patience must be >= 1");
        }
        if !(self.gamma >= 0.0) {
            bad.push("gamma must be >= 0");
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            bad.push("mask_ratio must be in [0, 1)");
        }
        if self.integrator.validate().is_err() {
            bad.push("integrator needs at least one sample / refinement");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(bad.join("; ")))
        }
    }

    pub fn step_context(&self, epoch: usize, batch: usize) -> StepContext {
        let seed = indexed_seed(self.seed, "step", ((epoch as u64) << 32) | batch as u64);
        StepContext {
            mask_ratio: self.mask_ratio,
            masking: self.masking,
            integrator: self.integrator.reseeded(derive_seed(seed, "integral")),
            gamma: self.gamma,
            tpp_max_events: self.tpp_max_events,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the best validation metric (epoch 0 included); ties go to
    /// the lower training objective.
    pub model: Model,
    pub log: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Set when training stopped on a non-finite objective or parameter.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    /// `epoch,lr,train_loss,val_metric` CSV.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_metric\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_metric);
        }
        s
    }
}

fn is_better(candidate: f64, best: f64, higher: bool) -> bool {
    if !candidate.is_finite() {
        return false;
    }
    if !best.is_finite() {
        return true;
    }
    if higher {
        candidate > best
    } else {
        candidate < best
    }
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    order.chunks(size).collect()
}

/// Mean objective over the training batches without updating anything.
fn mean_objective(task: &dyn Task, model: &Model, cfg: &TrainConfig, order: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, batch) in batches(order, cfg.batch_size).into_iter().enumerate() {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let out = task.batch_objective(model, &mut tape, &bound, batch, &cfg.step_context(0, b))?;
        total += tape.scalar(out.objective) * batch.len() as f64;
        count += batch.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Minimizes the task objective from `init`.
pub fn train(task: &dyn Task, init: Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if task.num_train() == 0 {
        return Err(Error::invalid("training split is empty"));
    }
    let higher = task.higher_is_better();
    let mut model = init;
    let mut order: Vec<usize> = (0..task.num_train()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));

    let val0 = task.validation_metric(&model)?;
    let loss0 = mean_objective(task, &model, cfg, &order)?;
    let mut log = vec![EpochRow {
        epoch: 0,
        lr: cfg.lr,
        train_loss: loss0,
        val_metric: val0,
    }];
    let mut best = model.clone();
    let mut best_metric = val0;
    let mut best_epoch = 0;
    let mut best_loss = loss0;
    let mut stale = 0;
    let mut diverged = None;
    let mut opt = Adam::new(cfg.adam, model.params.values().iter().map(|v| v.dim()));

    'epochs: for epoch in 1..=cfg.epochs {
        let lr = decayed_lr(cfg.lr, cfg.lr_decay, cfg.decay_every, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let ctx = cfg.step_context(epoch, b);
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let out = task.batch_objective(&model, &mut tape, &bound, batch, &ctx)?;
            let value = tape.scalar(out.objective);
            if !value.is_finite() {
                diverged = Some(format!("non-finite objective at epoch {epoch}, batch {b}"));
                break 'epochs;
            }
            let grads = bound.collect(&tape.backward(out.objective));
            drop(bound);
            if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                diverged = Some(format!("non-finite gradient at epoch {epoch}, batch {b}"));
                break 'epochs;
            }
            let snapshot = model.params.clone();
            opt.step(model.params.values_mut(), &grads, lr);
            if !model.params.all_finite() {
                model.params = snapshot;
                diverged = Some(format!("non-finite parameters after epoch {epoch}, batch {b}"));
                break 'epochs;
            }
            total += value * batch.len() as f64;
            seen += batch.len();
        }
        let val = task.validation_metric(&model)?;
        let train_loss = total / seen.max(1) as f64;
        log.push(EpochRow {
            epoch,
            lr,
            train_loss,
            val_metric: val,
        });
        log::info!("epoch {epoch}: lr {lr:.3e} loss {train_loss:.6} val {val:.6}");
        let improved = is_better(val, best_metric, higher);
        // ties on the validation metric go to the lower training objective
        if improved || (val == best_metric && train_loss < best_loss) {
            best = model.clone();
            best_metric = val;
            best_epoch = epoch;
            best_loss = train_loss;
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some(msg) = &diverged {
        log::warn!("training stopped: {msg}; returning the best finite checkpoint");
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_metric,
        diverged,
    })
}
