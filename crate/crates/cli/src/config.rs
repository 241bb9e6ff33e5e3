//! Run configuration: a TOML file with one flat section per module.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set
//! section.key=value` overrides, then the dedicated flags (`--seed`, `--out`,
//! `--band`, `--freq-above`). Relative paths in the file resolve against the
//! file's directory; relative paths given on the command line resolve
//! against the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctdg::cam::{MaskingMode, DEFAULT_MASK_RATIO};
use ctdg::encoder::{AttentionVariant, EncoderConfig, IntensityMode};
use ctdg::learn::optim::AdamConfig;
use ctdg::learn::train::TrainConfig;
use ctdg::learn::TaskKind;
use ctdg::seed::derive_seed;
use ctdg::tpple::Integrator;
use ctdg_spectral::{NystromConfig, PowerTarget, SpectrumEnd};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    /// Top-level seed; every module derives its own labeled sub-seed.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub cluster: ClusterSection,
    pub link: LinkSection,
    pub node: NodeSection,
    pub traffic: TrafficSection,
    pub spectral: SpectralSection,
    pub interpret: InterpretSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Link,
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataSection::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
            cluster: ClusterSection::default(),
            link: LinkSection::default(),
            node: NodeSection::default(),
            traffic: TrafficSection::default(),
            spectral: SpectralSection::default(),
            interpret: InterpretSection::default(),
        }
    }
}

/// Dataset files. Link and node tasks read `events` (plus optional
/// `features` and `initial_edges`); node tasks also read `labels`; traffic
/// reads `readings` and `road_edges`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub events: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub initial_edges: Option<PathBuf>,
    pub num_nodes: Option<usize>,
    /// CSV `node,label`.
    pub labels: Option<PathBuf>,
    pub readings: Option<PathBuf>,
    pub road_edges: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub variant: AttentionVariant,
    /// Seconds per model time unit.
    pub time_unit: f64,
    pub slope: f64,
    pub temporal_encoding: bool,
    /// Pins every intensity to this value instead of learning it.
    pub constant_intensity: Option<f64>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let base = EncoderConfig::new(1, 1);
        EncoderSection {
            layers: base.layers,
            heads: base.heads,
            dim: base.dim,
            variant: base.variant,
            time_unit: 3600.0,
            slope: base.slope,
            temporal_encoding: base.temporal_encoding,
            constant_intensity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    Trapezoid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub mask_ratio: f64,
    pub masking: MaskingMode,
    pub integrator: IntegratorKind,
    /// Trapezoid sub-intervals per event gap.
    pub refine: usize,
    /// Monte Carlo draws per event gap.
    pub samples: usize,
    pub gamma: f64,
    pub tpp_max_events: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            batch_size: t.batch_size,
            patience: t.patience,
            mask_ratio: DEFAULT_MASK_RATIO,
            masking: t.masking,
            integrator: IntegratorKind::Trapezoid,
            refine: 1,
            samples: 5,
            gamma: t.gamma,
            tpp_max_events: t.tpp_max_events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: ctdg::cluster::DEFAULT_CLUSTERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub max_len: usize,
    pub ks: Vec<usize>,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            max_len: 50,
            ks: vec![10, 20],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSection {
    /// Class count; inferred from the labels when absent.
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub window: usize,
    pub horizons: Vec<usize>,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection {
            window: 12,
            horizons: vec![3, 6, 9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMethod {
    Nystrom,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub method: BasisMethod,
    pub s: usize,
    pub r: usize,
    pub p: usize,
    pub q: usize,
    pub end: String,
    pub power: String,
    /// Reject isolated nodes instead of dropping them.
    pub strict: bool,
    /// Precomputed basis; built from the graph when absent.
    pub basis: Option<PathBuf>,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            method: BasisMethod::Nystrom,
            s: 200,
            r: 32,
            p: 8,
            q: 3,
            end: SpectrumEnd::Low.to_string(),
            power: PowerTarget::Intersection.to_string(),
            strict: false,
            basis: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Ranking,
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSection {
    pub mode: PerturbMode,
    /// Half-open eigen-index range `a..b`, counted from the low end.
    pub band: Option<String>,
    /// Alternative to `band`: every frequency strictly above this value.
    pub freq_above: Option<f64>,
    /// Metric family for prediction files; checkpoints imply it from the task.
    pub metric: Option<MetricKind>,
}

impl Default for InterpretSection {
    fn default() -> Self {
        InterpretSection {
            mode: PerturbMode::Intra,
            band: None,
            freq_above: None,
            metric: None,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub band: Option<String>,
    pub freq_above: Option<f64>,
}

fn set_dotted(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{assignment}`")))?;
    let key = key.trim();
    let raw = raw.trim();
    // values that are not valid TOML are taken as bare strings
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Usage(format!("empty key in `{assignment}`")))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{p}` in `{key}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text; `base` resolves relative paths.
    pub fn from_toml(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::invalid(format!("config: {e}")))?;
        for s in &overrides.set {
            set_dotted(&mut table, s)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::invalid(format!("config: {e}")))?;
        cfg.resolve_paths(base);
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(band) = &overrides.band {
            cfg.interpret.band = Some(band.clone());
            cfg.interpret.freq_above = None;
        }
        if let Some(f) = overrides.freq_above {
            cfg.interpret.freq_above = Some(f);
            cfg.interpret.band = None;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("config `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base, overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [&mut d.events, &mut d.features, &mut d.initial_edges, &mut d.labels, &mut d.readings, &mut d.road_edges, &mut self.spectral.basis]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let d = &self.data;
        let mut need = |field: &str, p: &Option<PathBuf>| match p {
            None => bad.push(format!("data.{field}: required for the {:?} task", self.task)),
            Some(p) if !p.exists() => bad.push(format!("data.{field}: `{}` does not exist", p.display())),
            _ => {}
        };
        match self.task {
            TaskKind::Link => need("events", &d.events),
            TaskKind::Node => {
                need("events", &d.events);
                need("labels", &d.labels);
            }
            TaskKind::Traffic => {
                need("readings", &d.readings);
                need("road_edges", &d.road_edges);
            }
        }
        for (field, p) in [("features", &d.features), ("initial_edges", &d.initial_edges)] {
            if let Some(p) = p {
                if !p.exists() {
                    bad.push(format!("data.{field}: `{}` does not exist", p.display()));
                }
            }
        }
        let e = &self.encoder;
        if e.layers == 0 {
            bad.push("encoder.layers: must be at least 1".into());
        }
        if e.heads == 0 || e.dim == 0 || e.dim % e.heads != 0 {
            bad.push(format!("encoder.dim: {} must be a positive multiple of encoder.heads = {}", e.dim, e.heads));
        }
        if !(e.time_unit > 0.0) {
            bad.push("encoder.time_unit: must be positive".into());
        }
        if let Some(c) = e.constant_intensity {
            if !(c > 0.0) {
                bad.push("encoder.constant_intensity: must be positive".into());
            }
            if self.train.gamma > 0.0 {
                bad.push("train.gamma: must be 0 when encoder.constant_intensity pins the intensity".into());
            }
        }
        let t = &self.train;
        if !(t.lr > 0.0) {
            bad.push("train.lr: must be positive".into());
        }
        if !(t.lr_decay > 0.0 && t.lr_decay <= 1.0) {
            bad.push("train.lr_decay: must be in (0, 1]".into());
        }
        if t.decay_every == 0 {
            bad.push("train.decay_every: must be at least 1".into());
        }
        if t.batch_size == 0 {
            bad.push("train.batch_size: must be at least 1".into());
        }
        if t.patience == 0 {
            bad.push("train.patience: must be at least 1".into());
        }
        if !(0.0..1.0).contains(&t.mask_ratio) {
            bad.push("train.mask_ratio: must be in [0, 1)".into());
        }
        if !(t.gamma >= 0.0) {
            bad.push("train.gamma: must be >= 0".into());
        }
        match t.integrator {
            IntegratorKind::Trapezoid if t.refine == 0 => bad.push("train.refine: must be at least 1".into()),
            IntegratorKind::MonteCarlo if t.samples == 0 => bad.push("train.samples: must be at least 1".into()),
            _ => {}
        }
        if self.cluster.k == 0 {
            bad.push("cluster.k: must be at least 1".into());
        }
        if self.link.max_len == 0 {
            bad.push("link.max_len: must be at least 1".into());
        }
        if self.link.ks.is_empty() || self.link.ks.contains(&0) {
            bad.push("link.ks: needs at least one positive cutoff".into());
        }
        if self.node.classes == Some(0) {
            bad.push("node.classes: must be at least 1".into());
        }
        if self.traffic.window == 0 {
            bad.push("traffic.window: must be at least 1".into());
        }
        if self.traffic.horizons.is_empty() || self.traffic.horizons.contains(&0) {
            bad.push("traffic.horizons: needs at least one positive horizon".into());
        }
        let s = &self.spectral;
        if let Err(e) = s.end.parse::<SpectrumEnd>() {
            bad.push(format!("spectral.end: {e}"));
        }
        if let Err(e) = s.power.parse::<PowerTarget>() {
            bad.push(format!("spectral.power: {e}"));
        }
        if s.method == BasisMethod::Nystrom {
            if s.r == 0 {
                bad.push("spectral.r: must be at least 1".into());
            }
            if s.r + s.p > s.s {
                bad.push(format!("spectral.s: r + p = {} exceeds s = {}", s.r + s.p, s.s));
            }
            if s.q == 0 {
                bad.push("spectral.q: must be at least 1".into());
            }
        }
        if let Some(p) = &s.basis {
            if !p.exists() {
                bad.push(format!("spectral.basis: `{}` does not exist", p.display()));
            }
        }
        let i = &self.interpret;
        if i.band.is_some() && i.freq_above.is_some() {
            bad.push("interpret.band: conflicts with interpret.freq_above".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad))
        }
    }

    /// Labeled sub-seed for one module.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn encoder_config(&self, input_dim: usize, clusters: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            layers: e.layers,
            heads: e.heads,
            dim: e.dim,
            variant: e.variant,
            clusters,
            input_dim,
            slope: e.slope,
            time_unit: e.time_unit,
            intensity: match e.constant_intensity {
                Some(c) => IntensityMode::Constant(c),
                None => IntensityMode::Learned,
            },
            temporal_encoding: e.temporal_encoding,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let seed = self.seed_for("train");
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            batch_size: t.batch_size,
            patience: t.patience,
            mask_ratio: t.mask_ratio,
            masking: t.masking,
            integrator: match t.integrator {
                IntegratorKind::Trapezoid => Integrator::Trapezoid { refine: t.refine },
                IntegratorKind::MonteCarlo => Integrator::MonteCarlo {
                    samples: t.samples,
                    seed: derive_seed(seed, "integrator"),
                },
            },
            gamma: t.gamma,
            tpp_max_events: t.tpp_max_events,
            seed,
            adam: AdamConfig::default(),
        }
    }

    /// Decomposition settings; only meaningful after [`RunConfig::validate`].
    pub fn nystrom_config(&self) -> Result<NystromConfig> {
        let s = &self.spectral;
        Ok(NystromConfig {
            s: s.s,
            r: s.r,
            p: s.p,
            q: s.q,
            seed: self.seed_for("spectral"),
            end: s.end.parse()?,
            power: s.power.parse()?,
        })
    }
}
