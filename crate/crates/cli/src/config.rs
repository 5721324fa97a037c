//! Experiment configuration files (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! name = "fig1-c"
//!
//! [dataset]
//! kind = "spiral"
//! n = 1000
//!
//! [model]
//! arch = "200-1-200"
//!
//! [train]
//! iterations = 20000
//!
//! [[risk.penalty]]
//! kind = "normalized-ortho"
//! weight = 0.02
//!
//! [[sweep.axis]]
//! field = "risk.penalty.0.weight"
//! values = [0.04, 0.02, 0.005]
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use aelab_core::data::{DatasetMeta, Generator};
use aelab_core::gnorm::{Gallery, IterOptions, Method};
use aelab_core::risks::DEFAULT_EPSILON_FLOOR;
use aelab_core::{
    parse_arch, Activation, ArchSpec, BaseRisk, LatentRule, Optimizer, Penalty, PenaltyKind, RiskSpec, Schedule,
    TrainConfig,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SWEEP_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("unsupported config version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("`{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("sweep: {0}")]
    Sweep(String),
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnorm: Option<GnormSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shapes: Option<ShapesSection>,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub kind: String,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variances: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "spiral".into(),
            n: 1000,
            sigma: 0.05,
            seed: 0,
            test_fraction: 0.2,
            turns: None,
            r0: None,
            r1: None,
            radius: None,
            variances: None,
            angle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LatentSetting {
    Index(usize),
    Rule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: String,
    #[serde(default = "auto_latent")]
    pub latent: LatentSetting,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn auto_latent() -> LatentSetting {
    LatentSetting::Rule("auto".into())
}

fn default_activation() -> String {
    "tanh".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 20_000,
            batch_size: 100,
            eval_every: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub base: String,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub epsilon_floor: f64,
    pub penalty: Vec<PenaltySection>,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self {
            base: "uls".into(),
            noise_sigma: 0.0,
            noise_seed: 0,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            penalty: Vec::new(),
        }
    }
}

/// Either `weight` (constant) or all three `ramp_*` keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub rays: usize,
    pub circles: usize,
    pub r_max: f64,
    pub samples: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            rays: 12,
            circles: 6,
            r_max: 2.5,
            samples: 65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub axis: Vec<AxisSection>,
}

fn default_cap() -> usize {
    DEFAULT_SWEEP_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub field: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnormSection {
    pub function: String,
    pub x0: Vec<f64>,
    pub method: String,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub classify_tol: f64,
}

impl Default for GnormSection {
    fn default() -> Self {
        let opts = IterOptions::default();
        Self {
            function: "saddle".into(),
            x0: vec![0.5, 0.5],
            method: "gnorm".into(),
            step: opts.step,
            max_iters: opts.max_iters,
            tol: opts.tol,
            classify_tol: aelab_core::gnorm::DEFAULT_CLASSIFY_TOL,
        }
    }
}

impl GnormSection {
    pub fn function(&self) -> Result<Gallery, ConfigError> {
        let f: Gallery = self
            .function
            .parse()
            .map_err(|e: aelab_core::gnorm::GnormError| invalid("gnorm.function", e.to_string()))?;
        // `bowl` takes its dimension from the starting point.
        Ok(match f {
            Gallery::Bowl { dim: 1 } if self.function == "bowl" => Gallery::Bowl { dim: self.x0.len().max(1) },
            other => other,
        })
    }

    pub fn method(&self) -> Result<Method, ConfigError> {
        self.method.parse().map_err(|e: String| invalid("gnorm.method", e))
    }

    pub fn options(&self) -> IterOptions {
        IterOptions {
            step: self.step,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Relative paths resolve against the config file's directory.
    pub checkpoint: String,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    aelab_core::diagnostics::DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesSection {
    pub alpha: f64,
    pub samples: usize,
}

impl Default for ShapesSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            samples: 1001,
        }
    }
}

/// A parsed config and its location (for relative paths).
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
}

pub fn parse_str(text: &str, origin: &Path) -> Result<ExperimentConfig, ConfigError> {
    let parse_err = |msg: String| ConfigError::Parse {
        path: origin.to_path_buf(),
        msg,
    };
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_str(&text, path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, dir })
}

impl ExperimentConfig {
    /// A config with every section at its defaults and no model.
    pub fn minimal() -> Self {
        toml::from_str("version = 1").expect("defaults parse")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        self.dataset_meta()?;
        self.risk_spec()?;
        Ok(())
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.risk.noise_seed = seed;
    }

    pub fn dataset_meta(&self) -> Result<DatasetMeta, ConfigError> {
        let d = &self.dataset;
        let allowed: &[&str] = match d.kind.as_str() {
            "spiral" => &["turns", "r0", "r1"],
            "circle" => &["radius"],
            "gaussian" => &["variances", "angle"],
            "line" | "strip" => &[],
            other => {
                return Err(invalid(
                    "dataset.kind",
                    format!("unknown kind {other:?} (expected spiral, line, circle, strip or gaussian)"),
                ))
            }
        };
        let given = [
            ("turns", d.turns.is_some()),
            ("r0", d.r0.is_some()),
            ("r1", d.r1.is_some()),
            ("radius", d.radius.is_some()),
            ("variances", d.variances.is_some()),
            ("angle", d.angle.is_some()),
        ];
        if let Some((key, _)) = given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            return Err(invalid(
                &format!("dataset.{key}"),
                format!("not a parameter of kind {:?}", d.kind),
            ));
        }
        let generator = match d.kind.as_str() {
            "spiral" => {
                let Generator::Spiral { turns, r0, r1 } = Generator::default_spiral() else {
                    unreachable!()
                };
                Generator::Spiral {
                    turns: d.turns.unwrap_or(turns),
                    r0: d.r0.unwrap_or(r0),
                    r1: d.r1.unwrap_or(r1),
                }
            }
            "circle" => Generator::Circle {
                radius: d.radius.unwrap_or(1.0),
            },
            "gaussian" => Generator::Gaussian {
                variances: d.variances.unwrap_or([4.0, 1.0]),
                angle: d.angle.unwrap_or(0.0),
            },
            "line" => Generator::Line,
            _ => Generator::Strip,
        };
        let meta = DatasetMeta {
            generator,
            n: d.n,
            sigma: d.sigma,
            seed: d.seed,
            test_fraction: d.test_fraction,
        };
        aelab_core::Dataset::generate(&DatasetMeta { n: 2, ..meta.clone() })
            .map_err(|e| invalid("dataset", e.to_string()))?;
        if d.n < 2 {
            return Err(invalid("dataset.n", "need at least 2 points"));
        }
        Ok(meta)
    }

    pub fn arch(&self, input_dim: usize) -> Result<ArchSpec, ConfigError> {
        let m = self.model.as_ref().ok_or(ConfigError::MissingSection("model"))?;
        let latent = match &m.latent {
            LatentSetting::Index(i) => LatentRule::Explicit(*i),
            LatentSetting::Rule(r) if r == "auto" => LatentRule::Auto,
            LatentSetting::Rule(r) => {
                return Err(invalid("model.latent", format!("expected \"auto\" or a layer index, got {r:?}")))
            }
        };
        let activation: Activation = m
            .activation
            .parse()
            .map_err(|e: aelab_core::network::ParseError| invalid("model.activation", e.to_string()))?;
        parse_arch(&m.arch, input_dim, latent)
            .map(|a| a.with_activation(activation))
            .map_err(|e| invalid("model.arch", e.to_string()))
    }

    pub fn risk_spec(&self) -> Result<RiskSpec, ConfigError> {
        let r = &self.risk;
        let base = match r.base.as_str() {
            "uls" => {
                if r.noise_sigma != 0.0 {
                    return Err(invalid("risk.noise_sigma", "only used with base = \"denoising\""));
                }
                BaseRisk::Uls
            }
            "denoising" => BaseRisk::UlsDenoising {
                sigma: r.noise_sigma,
                seed: r.noise_seed,
            },
            other => return Err(invalid("risk.base", format!("unknown base {other:?} (expected uls or denoising)"))),
        };
        let penalties = r
            .penalty
            .iter()
            .enumerate()
            .map(|(i, p)| penalty(i, p))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = RiskSpec {
            base,
            penalties,
            epsilon_floor: r.epsilon_floor,
        };
        spec.validate().map_err(|e| invalid("risk", e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self, input_dim: usize) -> Result<TrainConfig, ConfigError> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "adam" => Optimizer::Adam {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            "sgd" => Optimizer::Sgd { lr: t.lr },
            other => return Err(invalid("train.optimizer", format!("unknown optimizer {other:?} (expected adam or sgd)"))),
        };
        let config = TrainConfig {
            optimizer,
            iterations: t.iterations,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            seed: t.seed,
            risk: self.risk_spec()?,
            arch: self.arch(input_dim)?,
        };
        config.validate().map_err(|e| invalid("train", e.to_string()))?;
        Ok(config)
    }

    pub fn gnorm(&self) -> GnormSection {
        self.gnorm.clone().unwrap_or_default()
    }

    pub fn shapes(&self) -> ShapesSection {
        self.shapes.clone().unwrap_or_default()
    }
}

fn penalty(i: usize, p: &PenaltySection) -> Result<Penalty, ConfigError> {
    let field = |k: &str| format!("risk.penalty.{i}.{k}");
    let kind = match p.kind.as_str() {
        "contractive" => PenaltyKind::Contractive,
        "ortho" => PenaltyKind::OrthoContractive,
        "normalized-ortho" => PenaltyKind::NormalizedOrthoContractive,
        other => {
            return Err(invalid(
                &field("kind"),
                format!("unknown penalty {other:?} (expected contractive, ortho or normalized-ortho)"),
            ))
        }
    };
    let schedule = match (p.weight, p.ramp_from, p.ramp_to, p.ramp_iterations) {
        (Some(w), None, None, None) => Schedule::Constant(w),
        (None, Some(from), Some(to), Some(iterations)) => Schedule::LinearRamp { from, to, iterations },
        _ => {
            return Err(invalid(
                &field("weight"),
                "give either `weight` or all of `ramp_from`, `ramp_to`, `ramp_iterations`",
            ))
        }
    };
    Ok(Penalty { kind, schedule })
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub assignments: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

/// Cartesian product of the sweep axes, first axis varying slowest.
///
/// Axis paths address the config with defaults filled in, so any field
/// with a default can be swept without being spelled out.
pub fn expand_sweep(loaded: &Loaded) -> Result<Vec<Cell>, ConfigError> {
    let Some(sweep) = &loaded.config.sweep else {
        return Ok(Vec::new());
    };
    if sweep.axis.is_empty() {
        return Ok(Vec::new());
    }
    let mut base = loaded.config.clone();
    base.sweep = None;
    let doc: toml::Table = toml::Table::try_from(&base).map_err(|e| ConfigError::Sweep(e.to_string()))?;
    let mut total: usize = 1;
    for a in &sweep.axis {
        if a.values.is_empty() {
            return Err(ConfigError::Sweep(format!("axis `{}` has no values", a.field)));
        }
        if a.field == "version" || a.field.starts_with("sweep") {
            return Err(ConfigError::Sweep(format!("axis `{}` cannot be swept", a.field)));
        }
        if lookup(&doc, &a.field).is_none() {
            return Err(ConfigError::Sweep(format!(
                "axis `{}` does not name a field present in the config",
                a.field
            )));
        }
        total = total.saturating_mul(a.values.len());
    }
    if total > sweep.cap {
        return Err(ConfigError::Sweep(format!("{total} cells exceed the cap of {}", sweep.cap)));
    }
    (0..total)
        .map(|index| {
            let mut rest = index;
            let mut picks = vec![0; sweep.axis.len()];
            for (k, a) in sweep.axis.iter().enumerate().rev() {
                picks[k] = rest % a.values.len();
                rest /= a.values.len();
            }
            let mut cell_doc = doc.clone();
            let mut assignments = Vec::new();
            for (a, &p) in sweep.axis.iter().zip(&picks) {
                let v = a.values[p].clone();
                *lookup_mut(&mut cell_doc, &a.field).expect("checked above") = v.clone();
                assignments.push((a.field.clone(), v));
            }
            let config: ExperimentConfig = toml::Value::Table(cell_doc)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Sweep(format!("cell {index}: {e}")))?;
            config
                .validate()
                .map_err(|e| ConfigError::Sweep(format!("cell {index}: {e}")))?;
            Ok(Cell {
                index,
                assignments,
                config,
            })
        })
        .collect()
}

fn lookup<'a>(table: &'a toml::Table, path: &str) -> Option<&'a toml::Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = match cur {
            toml::Value::Table(t) => t.get(p)?,
            toml::Value::Array(a) => a.get(p.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn lookup_mut<'a>(table: &'a mut toml::Table, path: &str) -> Option<&'a mut toml::Value> {
    let mut parts = path.split('.');
    let mut cur = table.get_mut(parts.next()?)?;
    for p in parts {
        cur = match cur {
            toml::Value::Table(t) => t.get_mut(p)?,
            toml::Value::Array(a) => a.get_mut(p.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

/// Display form of a sweep value for summary tables.
pub fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) => aelab_core::table::fmt_num(*f),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_str(text, Path::new("test.toml"))
    }

    fn loaded(text: &str) -> Loaded {
        Loaded {
            config: parse_str(text, Path::new("t.toml")).unwrap(),
            dir: PathBuf::new(),
        }
    }

    const BASE: &str = r#"
version = 1
[model]
arch = "50-50-50-50"
[[risk.penalty]]
kind = "contractive"
weight = 0.02
"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.train.iterations, 20_000);
        assert_eq!(c.dataset_meta().unwrap(), DatasetMeta::spiral_default(0));
        let t = c.train_config(2).unwrap();
        assert_eq!(t.batch_size, 100);
        assert_eq!(t.risk.penalties[0].schedule, Schedule::Constant(0.02));
    }

    #[test]
    fn unknown_keys_are_errors_with_location() {
        let err = parse("version = 1\n[train]\nitertions = 5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("itertions") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn version_is_checked() {
        assert!(matches!(parse("version = 2"), Err(ConfigError::Version(2))));
    }

    #[test]
    fn kind_specific_dataset_fields() {
        let err = parse("version = 1\n[dataset]\nkind = \"line\"\nradius = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("dataset.radius"));
        let c = parse("version = 1\n[dataset]\nkind = \"circle\"\nradius = 2.0\n").unwrap();
        assert_eq!(c.dataset_meta().unwrap().generator, Generator::Circle { radius: 2.0 });
    }

    #[test]
    fn penalty_needs_one_schedule() {
        let text = "version = 1\n[[risk.penalty]]\nkind = \"ortho\"\nweight = 0.1\nramp_to = 0.2\n";
        assert!(parse(text).is_err());
        let text = "version = 1\n[[risk.penalty]]\nkind = \"ortho\"\nramp_from = 0.0\nramp_to = 0.04\nramp_iterations = 100\n";
        let spec = parse(text).unwrap().risk_spec().unwrap();
        assert_eq!(spec.penalties[0].schedule.weight_at(50), 0.02);
    }

    #[test]
    fn sweep_expands_cartesian_product() {
        let text = format!(
            "{BASE}\n[[sweep.axis]]\nfield = \"risk.penalty.0.weight\"\nvalues = [0.04, 0.02, 0.005]\n\
             [[sweep.axis]]\nfield = \"model.arch\"\nvalues = [\"4-1-4\", \"8-1-8\"]\n"
        );
        let cells = expand_sweep(&loaded(&text)).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].config.model.as_ref().unwrap().arch, "8-1-8");
        assert_eq!(cells[2].config.risk.penalty[0].weight, Some(0.02));
        assert!(cells.iter().all(|c| c.config.sweep.is_none()));
    }

    #[test]
    fn sweep_rejects_missing_fields_and_big_grids() {
        let text = format!("{BASE}\n[[sweep.axis]]\nfield = \"train.learning_rate\"\nvalues = [0.1]\n");
        assert!(matches!(expand_sweep(&loaded(&text)), Err(ConfigError::Sweep(_))));
        let text = format!(
            "{BASE}\n[sweep]\ncap = 2\n[[sweep.axis]]\nfield = \"risk.penalty.0.weight\"\nvalues = [1.0, 2.0, 3.0]\n"
        );
        assert!(matches!(expand_sweep(&loaded(&text)), Err(ConfigError::Sweep(_))));
    }

    #[test]
    fn sweep_type_errors_surface_per_cell() {
        let text = format!("{BASE}\n[[sweep.axis]]\nfield = \"risk.penalty.0.weight\"\nvalues = [\"heavy\"]\n");
        assert!(matches!(expand_sweep(&loaded(&text)), Err(ConfigError::Sweep(_))));
    }

    #[test]
    fn seed_override_reaches_every_seed() {
        let mut c = parse(BASE).unwrap();
        c.override_seed(9);
        assert_eq!((c.dataset.seed, c.train.seed, c.risk.noise_seed), (9, 9, 9));
    }
}
