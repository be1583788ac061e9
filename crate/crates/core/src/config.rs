//! Run configuration files. Every table rejects unknown keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::crossfit::{Candidate, LearnerSpec, Selection};
use crate::error::{Error, Result};
use crate::estimators::{EffectKey, Estimand, Method, Scale};
use crate::inference::{AnalysisOptions, InferenceKind};
use crate::model::{validate_dataset, ColumnMap, Dataset, MediatorKind, Monotonicity, RawTable, TargetIndex};
use crate::nuisance::{CovariateMap, CovariateTransform, ModelSpec, OutcomeKind, Positivity};
use crate::sensitivity::{GridOptions, SensitivityPoint, TSpec, XiSpec};
use crate::simulation::{DgpParams, ScenarioId, StudyConfig};

/// Reads and validates a TOML file into `T`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediatorConfig {
    Binary,
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub treatment: String,
    pub event: String,
    pub mediator: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub mediator_kind: MediatorConfig,
    /// Largest categorical level; taken from the data when absent.
    #[serde(default)]
    pub max_level: Option<u32>,
    pub monotonicity: Monotonicity,
}

impl DataConfig {
    pub fn columns(&self) -> ColumnMap {
        ColumnMap {
            z: self.treatment.clone(),
            d: self.event.clone(),
            m: self.mediator.clone(),
            y: self.outcome.clone(),
            x: self.covariates.clone(),
        }
    }

    /// Reads the CSV relative to `base` and validates it.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let path = if self.path.is_absolute() { self.path.clone() } else { base.join(&self.path) };
        let file = fs::File::open(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let raw = RawTable::from_csv(file)?;
        let kind = match self.mediator_kind {
            MediatorConfig::Binary => MediatorKind::Binary,
            MediatorConfig::Continuous => MediatorKind::ContinuousGaussian,
            MediatorConfig::Categorical => {
                let top = match self.max_level {
                    Some(v) => v,
                    None => raw
                        .column(&self.mediator)?
                        .iter()
                        .flatten()
                        .fold(0.0f64, |a, b| a.max(*b))
                        .round() as u32,
                };
                MediatorKind::Categorical(top)
            }
        };
        validate_dataset(&raw, &self.columns(), kind, self.monotonicity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    /// Covariate names; all covariates when absent.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default = "identity_transform")]
    pub transform: CovariateTransform,
}

fn identity_transform() -> CovariateTransform {
    CovariateTransform::Identity
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default)]
    pub pi: Option<ComponentConfig>,
    #[serde(default)]
    pub p: Option<ComponentConfig>,
    #[serde(default)]
    pub r: Option<ComponentConfig>,
    #[serde(default)]
    pub mu: Option<ComponentConfig>,
    /// Outcome model family; detected from the data when absent.
    #[serde(default)]
    pub outcome: Option<OutcomeKind>,
}

impl ModelsConfig {
    pub fn spec(&self, data: &Dataset) -> Result<ModelSpec> {
        let names = data.covariate_names();
        let map = |c: &Option<ComponentConfig>| -> Result<CovariateMap> {
            let Some(c) = c else {
                return Ok(CovariateMap::identity(data.p()));
            };
            let columns = match &c.covariates {
                None => (0..data.p()).collect(),
                Some(list) => list
                    .iter()
                    .map(|n| {
                        names
                            .iter()
                            .position(|m| m == n)
                            .ok_or_else(|| Error::Config(format!("model covariate `{n}` is not a data covariate")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            Ok(CovariateMap {
                columns,
                transform: c.transform,
            })
        };
        Ok(ModelSpec {
            pi: map(&self.pi)?,
            p: map(&self.p)?,
            r: map(&self.r)?,
            mu: map(&self.mu)?,
            outcome: self.outcome.unwrap_or_else(|| OutcomeKind::detect(data.y())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub candidates: Vec<Candidate>,
    #[serde(default = "default_inner_folds")]
    pub inner_folds: usize,
}

fn default_inner_folds() -> usize {
    5
}

impl LearnerConfig {
    pub fn spec(&self) -> Result<LearnerSpec> {
        if self.candidates.is_empty() {
            return Err(Error::Config("learner needs at least one candidate".into()));
        }
        if self.candidates.len() > 1 && self.inner_folds < 2 {
            return Err(Error::Config("inner_folds must be at least 2".into()));
        }
        Ok(LearnerSpec {
            candidates: self.candidates.clone(),
            selection: Selection::DiscreteCvBest,
            inner_folds: self.inner_folds,
        })
    }
}

fn learner(cfg: &Option<LearnerConfig>) -> Result<LearnerSpec> {
    cfg.as_ref().map(LearnerConfig::spec).unwrap_or_else(|| Ok(LearnerSpec::default()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositivityConfig {
    #[serde(default = "default_clip")]
    pub clip_floor: f64,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_ratio_limit")]
    pub ratio_limit: f64,
}

fn default_clip() -> f64 {
    Positivity::default().clip_floor
}

fn default_ratio_limit() -> f64 {
    Positivity::default().ratio_limit
}

impl Default for PositivityConfig {
    fn default() -> Self {
        PositivityConfig {
            clip_floor: default_clip(),
            strict: false,
            ratio_limit: default_ratio_limit(),
        }
    }
}

impl PositivityConfig {
    pub fn positivity(&self) -> Result<Positivity> {
        if !(self.clip_floor >= 0.0 && self.clip_floor < 0.5) {
            return Err(Error::Config(format!("clip_floor {} outside [0, 0.5)", self.clip_floor)));
        }
        if !(self.ratio_limit > 1.0) {
            return Err(Error::Config("ratio_limit must exceed 1".into()));
        }
        Ok(Positivity {
            clip_floor: self.clip_floor,
            strict: self.strict,
            ratio_limit: self.ratio_limit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_prefix() -> String {
    "psmed".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            prefix: default_prefix(),
        }
    }
}

impl OutputConfig {
    pub fn file(&self, base: &Path, name: &str) -> PathBuf {
        let dir = if self.dir.is_absolute() { self.dir.clone() } else { base.join(&self.dir) };
        dir.join(format!("{}_{name}", self.prefix))
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mr]
}

fn default_scales() -> Vec<Scale> {
    vec![Scale::Difference]
}

fn default_folds() -> usize {
    5
}

fn default_bootstrap() -> usize {
    1000
}

fn default_interval() -> InferenceKind {
    InferenceKind::BootstrapPercentile
}

fn default_level() -> f64 {
    0.95
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_scales")]
    pub scales: Vec<Scale>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_interval")]
    pub interval: InferenceKind,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub learner: Option<LearnerConfig>,
    #[serde(default)]
    pub positivity: PositivityConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl EstimateConfig {
    pub fn options(&self, data: &Dataset) -> Result<AnalysisOptions> {
        let a = &self.analysis;
        Ok(AnalysisOptions {
            methods: dedup(&a.methods),
            scales: dedup(&a.scales),
            model: self.models.spec(data)?,
            learner: learner(&self.learner)?,
            folds: a.folds,
            bootstrap: a.bootstrap,
            interval: a.interval,
            level: a.level,
            seed: a.seed,
            positivity: self.positivity.positivity()?,
        })
    }
}

fn dedup<T: PartialEq + Copy>(v: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(v.len());
    for x in v {
        if !out.contains(x) {
            out.push(*x);
        }
    }
    out
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            methods: default_methods(),
            scales: default_scales(),
            folds: default_folds(),
            bootstrap: default_bootstrap(),
            interval: default_interval(),
            level: default_level(),
            seed: default_seed(),
        }
    }
}

/// An effect named by estimand and, for stratum effects, stratum label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectConfig {
    pub estimand: String,
    #[serde(default)]
    pub stratum: Option<String>,
}

impl EffectConfig {
    pub fn key(&self) -> Result<EffectKey> {
        EffectKey::parse(&self.estimand, self.stratum.as_deref())
    }

    pub fn target(&self) -> Result<TargetIndex> {
        let key = self.key()?;
        match (key.estimand, key.stratum) {
            (Estimand::Theta { z, z_prime }, Some(s)) => TargetIndex::new(z, z_prime, s).map_err(|e| Error::Config(e.to_string())),
            _ => Err(Error::Config(format!("`{}` is not a theta target", self.estimand))),
        }
    }
}

fn default_n() -> usize {
    1000
}

fn default_reps() -> usize {
    500
}

fn default_sim_methods() -> Vec<Method> {
    vec![Method::A, Method::B, Method::C, Method::D, Method::Mr]
}

fn default_targets() -> Vec<EffectConfig> {
    vec![EffectConfig {
        estimand: "theta10".into(),
        stratum: Some("10".into()),
    }]
}

fn default_truth_draws() -> usize {
    10_000_000
}

fn default_sim_bootstrap() -> usize {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_sim_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_targets")]
    pub targets: Vec<EffectConfig>,
    #[serde(default = "default_sim_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_truth_draws")]
    pub truth_draws: usize,
    /// Seed of the truth computation; the study seed when absent.
    #[serde(default)]
    pub truth_seed: Option<u64>,
    /// Use the process whose outcome ignores treatment, event and mediator.
    #[serde(default)]
    pub null: bool,
    #[serde(default)]
    pub learner: Option<LearnerConfig>,
    #[serde(default)]
    pub positivity: PositivityConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl SimulateConfig {
    pub fn study(&self) -> Result<StudyConfig> {
        Ok(StudyConfig {
            scenario: self.scenario.parse::<ScenarioId>()?,
            n: self.n,
            reps: self.reps,
            methods: dedup(&self.methods),
            targets: self.targets.iter().map(EffectConfig::target).collect::<Result<_>>()?,
            bootstrap: self.bootstrap,
            folds: self.folds,
            learner: learner(&self.learner)?,
            level: self.level,
            seed: self.seed,
            positivity: self.positivity.positivity()?,
            params: if self.null { DgpParams::null() } else { DgpParams::BENCHMARK },
        })
    }
}

fn ones() -> Vec<f64> {
    vec![1.0]
}

/// Grid axes; the grid is their Cartesian product in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "framework", rename_all = "lowercase", deny_unknown_fields)]
pub enum GridConfig {
    Xi {
        #[serde(default = "ones")]
        lambda_m1: Vec<f64>,
        #[serde(default = "ones")]
        lambda_m0: Vec<f64>,
        #[serde(default = "ones")]
        lambda_y1: Vec<f64>,
        #[serde(default = "ones")]
        lambda_y0: Vec<f64>,
    },
    T {
        zeta: Vec<f64>,
    },
}

impl GridConfig {
    pub fn points(&self) -> Result<Vec<SensitivityPoint>> {
        let pts: Vec<SensitivityPoint> = match self {
            GridConfig::Xi {
                lambda_m1,
                lambda_m0,
                lambda_y1,
                lambda_y0,
            } => {
                let mut out = Vec::new();
                for &a in lambda_m1 {
                    for &b in lambda_m0 {
                        for &c in lambda_y1 {
                            for &d in lambda_y0 {
                                out.push(SensitivityPoint::Xi(XiSpec {
                                    lambda_m1: a,
                                    lambda_m0: b,
                                    lambda_y1: c,
                                    lambda_y0: d,
                                }));
                            }
                        }
                    }
                }
                out
            }
            GridConfig::T { zeta } => zeta.iter().map(|z| SensitivityPoint::T(TSpec { zeta: *z })).collect(),
        };
        if pts.is_empty() {
            return Err(Error::Config("sensitivity grid is empty".into()));
        }
        let bad = pts.iter().any(|p| match p {
            SensitivityPoint::Xi(s) => [s.lambda_m1, s.lambda_m0, s.lambda_y1, s.lambda_y0].iter().any(|v| !(*v > 0.0 && v.is_finite())),
            SensitivityPoint::T(s) => !(s.zeta > 0.0 && s.zeta.is_finite()),
        });
        if bad {
            return Err(Error::Config("grid values must be positive and finite".into()));
        }
        Ok(pts)
    }
}

fn default_sens_bootstrap() -> usize {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub data: DataConfig,
    pub effect: EffectConfig,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    #[serde(default = "default_sens_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_interval")]
    pub interval: InferenceKind,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub positivity: PositivityConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_scale() -> Scale {
    Scale::Difference
}

impl SensitivityConfig {
    pub fn options(&self, data: &Dataset) -> Result<GridOptions> {
        if self.interval == InferenceKind::EifWald {
            return Err(Error::Config("sensitivity intervals are bootstrapped".into()));
        }
        if self.bootstrap > 0 && self.bootstrap < crate::inference::MIN_REPLICATES {
            return Err(Error::Config(format!("bootstrap must be 0 or at least {}", crate::inference::MIN_REPLICATES)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(GridOptions {
            effect: self.effect.key()?,
            scale: self.scale,
            model: self.models.spec(data)?,
            positivity: self.positivity.positivity()?,
            bootstrap: self.bootstrap,
            interval: self.interval,
            level: self.level,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Fixture file; the shipped reference fixture when absent.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputConfig,
}
