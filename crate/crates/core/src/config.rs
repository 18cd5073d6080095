//! Experiment configuration as a flat `key = value` text file.
//!
//! Keys carry a dotted section prefix, e.g. `manifold.curvature = 1.0`.
//! Blank lines and lines starting with `#` are ignored.

use std::path::PathBuf;

use crate::data::SyntheticDatasetSpec;
use crate::encoder::{Arch, ClipPolicy, TrainConfig};
use crate::error::{HbctError, Result};
use crate::losses::{AlignmentConfig, ContrastKind, DistanceKind, QMode};
use crate::manifold::ManifoldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Old model sees a random fraction of the training data.
    ExtData,
    /// Old model sees the first fraction of the classes.
    ExtClass,
    /// Same data, new encoder architecture.
    NewArch,
    /// Extended classes and a new architecture.
    Both,
    /// A chain of updates, each adding classes.
    Sequential,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ExtData => "ext_data",
            ScenarioKind::ExtClass => "ext_class",
            ScenarioKind::NewArch => "new_arch",
            ScenarioKind::Both => "both",
            ScenarioKind::Sequential => "sequential",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "ext_data" => Ok(ScenarioKind::ExtData),
            "ext_class" => Ok(ScenarioKind::ExtClass),
            "new_arch" => Ok(ScenarioKind::NewArch),
            "both" => Ok(ScenarioKind::Both),
            "sequential" => Ok(ScenarioKind::Sequential),
            other => Err(HbctError::Config(format!(
                "unknown scenario kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Number of model generations in a sequential run.
    pub steps: usize,
    pub old_fraction: f64,
    pub class_fraction: f64,
    pub old_arch: Arch,
    pub new_arch: Arch,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::ExtClass,
            steps: 3,
            old_fraction: 0.3,
            class_fraction: 0.5,
            old_arch: Arch::mlp(&[32]),
            new_arch: Arch::mlp(&[64, 32]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Its seed is replaced by the run seed.
    pub dataset: SyntheticDatasetSpec,
    pub curvature: f64,
    pub embed_dim: usize,
    pub alignment: AlignmentConfig,
    pub clip: ClipPolicy,
    /// Its seed is replaced by the run seed.
    pub train: TrainConfig,
    pub scenario: ScenarioSpec,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetSpec::default(),
            curvature: 1.0,
            embed_dim: 8,
            alignment: AlignmentConfig::default(),
            clip: ClipPolicy::default(),
            train: TrainConfig::default(),
            scenario: ScenarioSpec::default(),
            output_dir: PathBuf::from("runs"),
            seeds: (0..5).collect(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> HbctError {
    HbctError::Config(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| cfg_err(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

pub fn parse_arch(value: &str) -> Result<Arch> {
    let v = value.trim();
    if v.is_empty() || v == "linear" {
        return Ok(Arch::linear());
    }
    let hidden = v
        .split(',')
        .map(|w| num::<usize>("arch", w))
        .collect::<Result<Vec<_>>>()?;
    if hidden.contains(&0) {
        return Err(cfg_err("hidden widths must be positive"));
    }
    Ok(Arch { hidden })
}

pub fn format_arch(arch: &Arch) -> String {
    if arch.hidden.is_empty() {
        "linear".into()
    } else {
        arch.hidden
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let v = value.trim();
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (num("run.seeds", a)?, num("run.seeds", b)?);
        return Ok((a..b).collect());
    }
    v.split(',').map(|s| num("run.seeds", s)).collect()
}

fn distance_name(d: DistanceKind) -> &'static str {
    match d {
        DistanceKind::Geodesic => "geodesic",
        DistanceKind::LorentzInner => "lorentz_inner",
        DistanceKind::SquaredLorentz => "squared_lorentz",
    }
}

fn contrast_name(c: ContrastKind) -> &'static str {
    match c {
        ContrastKind::Rince => "rince",
        ContrastKind::Infonce => "infonce",
        ContrastKind::MeanDistortion => "mean_distortion",
    }
}

impl ExperimentConfig {
    pub fn manifold(&self) -> Result<ManifoldConfig> {
        ManifoldConfig::new(self.curvature, self.embed_dim).map_err(|e| cfg_err(e.to_string()))
    }

    /// Highest model generation the scenario trains.
    pub fn max_generation(&self) -> u32 {
        match self.scenario.kind {
            ScenarioKind::Sequential => self.scenario.steps.saturating_sub(1) as u32,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset
            .validate()
            .map_err(|e| cfg_err(e.to_string()))?;
        self.manifold()?;
        self.alignment.validate()?;
        self.clip.validate(self.max_generation())?;
        self.train.validate()?;
        let s = &self.scenario;
        for (name, f) in [
            ("old_fraction", s.old_fraction),
            ("class_fraction", s.class_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(cfg_err(format!(
                    "scenario.{name} must lie in (0, 1], got {f}"
                )));
            }
        }
        if s.kind == ScenarioKind::Sequential && !(2..=self.dataset.num_classes).contains(&s.steps)
        {
            return Err(cfg_err(
                "a sequential run needs between 2 and num_classes generations",
            ));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("at least one seed is required"));
        }
        Ok(())
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "dataset.num_classes" => self.dataset.num_classes = num(key, v)?,
            "dataset.samples_per_class" => self.dataset.samples_per_class = num(key, v)?,
            "dataset.input_dim" => self.dataset.input_dim = num(key, v)?,
            "dataset.cluster_spread" => self.dataset.cluster_spread = num(key, v)?,
            "dataset.class_center_scale" => self.dataset.class_center_scale = num(key, v)?,
            "manifold.curvature" => self.curvature = num(key, v)?,
            "manifold.dim" => self.embed_dim = num(key, v)?,
            "alignment.lambda" => self.alignment.lambda = num(key, v)?,
            "alignment.lambda_entail" => self.alignment.lambda_entail = num(key, v)?,
            "alignment.tau" => self.alignment.tau = num(key, v)?,
            "alignment.beta" => self.alignment.beta = num(key, v)?,
            "alignment.epsilon" => self.alignment.epsilon_aperture = num(key, v)?,
            "alignment.q" => {
                self.alignment.q_mode = match v {
                    "adaptive" => QMode::Adaptive,
                    _ => QMode::Fixed(num(key, v)?),
                }
            }
            "alignment.distance" => {
                self.alignment.distance = match v {
                    "geodesic" => DistanceKind::Geodesic,
                    "lorentz_inner" => DistanceKind::LorentzInner,
                    "squared_lorentz" => DistanceKind::SquaredLorentz,
                    _ => return Err(cfg_err(format!("{key}: unknown distance {v:?}"))),
                }
            }
            "alignment.contrast" => {
                self.alignment.contrast = match v {
                    "rince" => ContrastKind::Rince,
                    "infonce" => ContrastKind::Infonce,
                    "mean_distortion" => ContrastKind::MeanDistortion,
                    _ => return Err(cfg_err(format!("{key}: unknown contrastive loss {v:?}"))),
                }
            }
            "clip.zeta_old" => self.clip.zeta_old = num(key, v)?,
            "clip.zeta_step" => self.clip.zeta_step = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = num(key, v)?,
            "train.momentum" => self.train.momentum = num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = num(key, v)?,
            "train.cosine_schedule" => self.train.cosine_schedule = flag(key, v)?,
            "train.init_from_old" => self.train.init_from_old = flag(key, v)?,
            "scenario.kind" => self.scenario.kind = ScenarioKind::parse(v)?,
            "scenario.steps" => self.scenario.steps = num(key, v)?,
            "scenario.old_fraction" => self.scenario.old_fraction = num(key, v)?,
            "scenario.class_fraction" => self.scenario.class_fraction = num(key, v)?,
            "scenario.old_arch" => self.scenario.old_arch = parse_arch(v)?,
            "scenario.new_arch" => self.scenario.new_arch = parse_arch(v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "run.seeds" => self.seeds = parse_seeds(v)?,
            _ => return Err(cfg_err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// All keys with their current values, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.alignment;
        let q = match a.q_mode {
            QMode::Adaptive => "adaptive".to_string(),
            QMode::Fixed(q) => format!("{q:?}"),
        };
        vec![
            ("dataset.num_classes", self.dataset.num_classes.to_string()),
            (
                "dataset.samples_per_class",
                self.dataset.samples_per_class.to_string(),
            ),
            ("dataset.input_dim", self.dataset.input_dim.to_string()),
            (
                "dataset.cluster_spread",
                format!("{:?}", self.dataset.cluster_spread),
            ),
            (
                "dataset.class_center_scale",
                format!("{:?}", self.dataset.class_center_scale),
            ),
            ("manifold.curvature", format!("{:?}", self.curvature)),
            ("manifold.dim", self.embed_dim.to_string()),
            ("alignment.lambda", format!("{:?}", a.lambda)),
            ("alignment.lambda_entail", format!("{:?}", a.lambda_entail)),
            ("alignment.tau", format!("{:?}", a.tau)),
            ("alignment.beta", format!("{:?}", a.beta)),
            ("alignment.epsilon", format!("{:?}", a.epsilon_aperture)),
            ("alignment.q", q),
            ("alignment.distance", distance_name(a.distance).into()),
            ("alignment.contrast", contrast_name(a.contrast).into()),
            ("clip.zeta_old", format!("{:?}", self.clip.zeta_old)),
            ("clip.zeta_step", format!("{:?}", self.clip.zeta_step)),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            (
                "train.learning_rate",
                format!("{:?}", self.train.learning_rate),
            ),
            ("train.momentum", format!("{:?}", self.train.momentum)),
            (
                "train.weight_decay",
                format!("{:?}", self.train.weight_decay),
            ),
            (
                "train.cosine_schedule",
                self.train.cosine_schedule.to_string(),
            ),
            ("train.init_from_old", self.train.init_from_old.to_string()),
            ("scenario.kind", self.scenario.kind.name().into()),
            ("scenario.steps", self.scenario.steps.to_string()),
            (
                "scenario.old_fraction",
                format!("{:?}", self.scenario.old_fraction),
            ),
            (
                "scenario.class_fraction",
                format!("{:?}", self.scenario.class_fraction),
            ),
            ("scenario.old_arch", format_arch(&self.scenario.old_arch)),
            ("scenario.new_arch", format_arch(&self.scenario.new_arch)),
            ("output.dir", self.output_dir.display().to_string()),
            (
                "run.seeds",
                self.seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let prefix = key.split('.').next().unwrap_or_default();
            if prefix != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = prefix;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key, value).map_err(|e| match e {
                HbctError::Config(msg) => cfg_err(format!("line {}: {msg}", n + 1)),
                other => cfg_err(format!("line {}: {other}", n + 1)),
            })?;
        }
        Ok(cfg)
    }
}
