//! Task heads, the combined objective, training and evaluation.

pub mod link;
pub mod metrics;
pub mod node;
pub mod optim;
pub mod program;
pub mod traffic;
pub mod train;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam::{MaskingMode, DEFAULT_MASK_RATIO};
use crate::checkpoint::Checkpoint;
use crate::encoder::{init_encoder_params, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{glorot, uniform, Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tpple::Integrator;

pub use metrics::MetricReport;
pub use program::{LABEL_EMBEDDING, MASK_TOKEN};
pub use train::{train, EpochRow, TrainOutcome};

pub const HEAD_WEIGHT: &str = "head.w_o";
pub const HEAD_BIAS: &str = "head.b_o";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Link,
    Node,
    Traffic,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(TaskKind::Link),
            "node" => Ok(TaskKind::Node),
            "traffic" => Ok(TaskKind::Traffic),
            other => Err(Error::invalid(format!("unknown task `{other}` (link, node, traffic)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Width of the label vectors fed to the label-aware query embedding.
    pub label_dim: usize,
    /// Output width of the task head.
    pub output_dim: usize,
}

/// Encoder, masking embeddings and task head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        let d = config.encoder.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_encoder_params(&config.encoder, &mut rng, &mut params);
        params.insert(LABEL_EMBEDDING, glorot(config.label_dim, d, &mut rng));
        params.insert(MASK_TOKEN, uniform(1, d, 0.1, &mut rng));
        params.insert(HEAD_WEIGHT, glorot(d, config.output_dim, &mut rng));
        params.insert(HEAD_BIAS, Array2::zeros((1, config.output_dim)));
        Ok(Model { config, params })
    }

    pub fn to_checkpoint(&self, metadata: impl Into<String>) -> Checkpoint {
        Checkpoint::new(metadata, self.params.clone())
    }

    /// Restores a model, checking that every expected tensor is present with
    /// the expected shape.
    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let template = Model::init(config.clone(), 0)?;
        for (name, value) in template.params.iter() {
            let got = ck.tensors.get(name)?;
            if got.dim() != value.dim() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.dim(),
                    value.dim()
                )));
            }
        }
        Ok(Model {
            config,
            params: ck.tensors.clone(),
        })
    }
}

/// `h W_O + b_O`.
pub fn head(tape: &mut Tape, bound: &Bound<'_>, h: Var) -> Result<Var> {
    let z = tape.matmul(h, bound.var(HEAD_WEIGHT)?);
    Ok(tape.add_row(z, bound.var(HEAD_BIAS)?))
}

/// Mean softmax cross-entropy of `logits` rows against `targets`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Var {
    let ls = tape.log_softmax_rows(logits);
    let at: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
    let picked = tape.pick(ls, std::rc::Rc::new(at));
    let m = tape.mean(picked);
    tape.scale(m, -1.0)
}

/// Mean squared error of a column of predictions.
pub fn squared_error(tape: &mut Tape, pred: Var, target: Array2<f64>) -> Var {
    let t = tape.constant(target);
    let diff = tape.sub(pred, t);
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// `loss − γ·R`.
pub fn total_objective(tape: &mut Tape, loss: Var, tpp: Option<Var>, gamma: f64) -> Var {
    match tpp {
        Some(r) if gamma != 0.0 => {
            let scaled = tape.scale(r, -gamma);
            tape.add(loss, scaled)
        }
        _ => loss,
    }
}

/// Per-step settings shared by all tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub mask_ratio: f64,
    pub masking: MaskingMode,
    pub integrator: Integrator,
    pub gamma: f64,
    pub tpp_max_events: usize,
    /// Seed of this step's mask plan and Monte Carlo draws.
    pub seed: u64,
}

impl Default for StepContext {
    fn default() -> Self {
        StepContext {
            mask_ratio: DEFAULT_MASK_RATIO,
            masking: MaskingMode::LabelAware,
            integrator: Integrator::default(),
            gamma: 0.0,
            tpp_max_events: 64,
            seed: 0,
        }
    }
}

pub struct BatchOut {
    pub objective: Var,
    pub loss: Var,
    pub tpp: Option<Var>,
}

/// A trainable task over a fixed dataset split.
pub trait Task {
    fn kind(&self) -> TaskKind;

    fn num_train(&self) -> usize;

    /// Records the objective of one training batch.
    fn batch_objective(
        &self,
        model: &Model,
        tape: &mut Tape,
        bound: &Bound<'_>,
        batch: &[usize],
        ctx: &StepContext,
    ) -> Result<BatchOut>;

    /// Validation metric of the model (masking disabled).
    fn validation_metric(&self, model: &Model) -> Result<f64>;

    fn higher_is_better(&self) -> bool;

    /// Full report on the held-out test split.
    fn evaluate_test(&self, model: &Model) -> Result<MetricReport>;
}
