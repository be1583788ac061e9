//! Kang-Schafer style data-generating process, misspecification scenarios,
//! Monte Carlo truths and scenario studies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{np_estimate, partition, CrossFit, LearnerSpec};
use crate::error::{Error, Result};
use crate::estimators::{assemble_effects, estimate_thetas, EffectSet, Method, Scale, ThetaTable};
use crate::inference::{bootstrap_multi, wald_interval, MAX_FAILED_SHARE};
use crate::model::{strata_for_mode, Dataset, MediatorKind, Monotonicity, Stratum, TargetIndex};
use crate::nuisance::{fit_parametric_bundle, CovariateMap, ModelSpec, OutcomeKind, Positivity};
use crate::numeric::{expit, sample_sd};

/// Studies with fewer replicates are flagged in the summary.
pub const LOW_REPLICATES: usize = 100;

/// Draws per parallel chunk of the Monte Carlo truth.
const CHUNK: usize = 1 << 16;

/// Coefficients of the four generating models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    /// `Z | X`: slopes on `X`, no intercept.
    pub alpha: [f64; 4],
    /// `D | Z, X`: intercept, `Z`, then `X`.
    pub beta0: f64,
    pub beta_z: f64,
    pub beta: [f64; 4],
    /// `M | D, Z, X`: intercept, `Z`, `D`, then `X`.
    pub gamma0: f64,
    pub gamma_z: f64,
    pub gamma_d: f64,
    pub gamma: [f64; 4],
    /// `Y | M, D, Z, X` mean: intercept, `Z`, `D`, `M`, then `X`; unit residual SD.
    pub kappa0: f64,
    pub kappa_z: f64,
    pub kappa_d: f64,
    pub kappa_m: f64,
    pub kappa: [f64; 4],
}

impl DgpParams {
    pub const BENCHMARK: DgpParams = DgpParams {
        alpha: [-1.0, 0.5, -0.25, -0.1],
        beta0: -1.0,
        beta_z: 2.0,
        beta: [1.0, -0.8, 0.6, -1.0],
        gamma0: -1.8,
        gamma_z: 2.0,
        gamma_d: 1.5,
        gamma: [1.0, -0.5, 0.9, -1.0],
        kappa0: 210.0,
        kappa_z: 1.5,
        kappa_d: -1.0,
        kappa_m: 1.0,
        kappa: [27.4, 13.7, 13.7, 13.7],
    };

    /// Outcome free of `Z`, `D` and `M`, so every stratum effect is zero.
    pub fn null() -> DgpParams {
        DgpParams {
            kappa_z: 0.0,
            kappa_d: 0.0,
            kappa_m: 0.0,
            ..DgpParams::BENCHMARK
        }
    }

    #[inline]
    fn dot(a: &[f64; 4], x: &[f64; 4]) -> f64 {
        a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + a[3] * x[3]
    }

    #[inline]
    pub fn pi1(&self, x: &[f64; 4]) -> f64 {
        expit(Self::dot(&self.alpha, x))
    }

    /// `P(D = 1 | Z = z, X = x)`.
    #[inline]
    pub fn p1(&self, z: u8, x: &[f64; 4]) -> f64 {
        expit(self.beta0 + self.beta_z * z as f64 + Self::dot(&self.beta, x))
    }

    /// `P(M = 1 | Z = z, D = d, X = x)`.
    #[inline]
    pub fn r1(&self, z: u8, d: u8, x: &[f64; 4]) -> f64 {
        expit(self.gamma0 + self.gamma_z * z as f64 + self.gamma_d * d as f64 + Self::dot(&self.gamma, x))
    }

    #[inline]
    pub fn mu(&self, z: u8, d: u8, m: f64, x: &[f64; 4]) -> f64 {
        self.kappa0 + self.kappa_z * z as f64 + self.kappa_d * d as f64 + self.kappa_m * m + Self::dot(&self.kappa, x)
    }

    /// Principal score of `s` at `x` under standard monotonicity.
    pub fn score(&self, s: Stratum, x: &[f64; 4]) -> f64 {
        let (p11, p01) = (self.p1(1, x), self.p1(0, x));
        match (s.d1, s.d0) {
            (1, 0) => p11 - p01,
            (1, 1) => p01,
            _ => 1.0 - p11,
        }
    }

    /// `sum_m mu_{z d_z}(m, x) r_{z' d_{z'}}(m, x)`.
    pub fn eta(&self, t: &TargetIndex, x: &[f64; 4]) -> f64 {
        let r = self.r1(t.z_prime, t.d_z_prime(), x);
        let d = t.d_z();
        (1.0 - r) * self.mu(t.z, d, 0.0, x) + r * self.mu(t.z, d, 1.0, x)
    }
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams::BENCHMARK
    }
}

/// One unit with every potential value, coupled through shared uniforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub x: [f64; 4],
    pub z: u8,
    /// `D_z` indexed by `z`.
    pub d_pot: [u8; 2],
    /// `M_{zd}` indexed by `[z][d]`.
    pub m_pot: [[u8; 2]; 2],
    pub eps: f64,
}

impl Unit {
    pub fn draw(params: &DgpParams, rng: &mut impl Rng) -> Unit {
        let mut x = [0.0; 4];
        for v in &mut x {
            *v = rng.sample(StandardNormal);
        }
        let u_z: f64 = rng.gen();
        let u_d: f64 = rng.gen();
        let u_m: f64 = rng.gen();
        let eps: f64 = rng.sample(StandardNormal);
        let z = (u_z <= params.pi1(&x)) as u8;
        let d_pot = [(u_d <= params.p1(0, &x)) as u8, (u_d <= params.p1(1, &x)) as u8];
        let mut m_pot = [[0u8; 2]; 2];
        for (zz, row) in m_pot.iter_mut().enumerate() {
            for (dd, v) in row.iter_mut().enumerate() {
                *v = (u_m <= params.r1(zz as u8, dd as u8, &x)) as u8;
            }
        }
        Unit { x, z, d_pot, m_pot, eps }
    }

    pub fn stratum(&self) -> Stratum {
        Stratum {
            d1: self.d_pot[1],
            d0: self.d_pot[0],
        }
    }

    pub fn d(&self) -> u8 {
        self.d_pot[self.z as usize]
    }

    pub fn m(&self) -> u8 {
        self.m_pot[self.z as usize][self.d() as usize]
    }

    pub fn y(&self, params: &DgpParams) -> f64 {
        params.mu(self.z, self.d(), self.m() as f64, &self.x) + self.eps
    }

    /// `Y_{z M_{z'}}`, the outcome under arm `z` with the mediator of arm `z'`.
    pub fn y_cross(&self, params: &DgpParams, z: u8, z_prime: u8) -> f64 {
        let dz = self.d_pot[z as usize];
        let dzp = self.d_pot[z_prime as usize];
        let m = self.m_pot[z_prime as usize][dzp as usize];
        params.mu(z, dz, m as f64, &self.x) + self.eps
    }
}

fn stream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Observed data for `n` units drawn from stream `index` of `seed`.
pub fn simulate_with(params: &DgpParams, n: usize, seed: u64, index: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = stream(seed, index);
    let mut x = Vec::with_capacity(4 * n);
    let (mut z, mut d, mut m, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let u = Unit::draw(params, &mut rng);
        x.extend_from_slice(&u.x);
        z.push(u.z);
        d.push(u.d());
        m.push(u.m() as f64);
        y.push(u.y(params));
    }
    Dataset::new(x, 4, z, d, m, y, MediatorKind::Binary, Monotonicity::Standard)
}

/// Observed data from the default process.
pub fn simulate(n: usize, seed: u64) -> Result<Dataset> {
    simulate_with(&DgpParams::BENCHMARK, n, seed, 0)
}

/// Column-wise `(exp(x1/2), x2/(1+x1), (x2 x3/25 + 0.6)^3, (x2 + x4 + 20)^2)` of a row-major
/// four-column matrix.
pub fn transform_covariates(x: &[f64]) -> Result<Vec<f64>> {
    if !x.len().is_multiple_of(4) {
        return Err(Error::LengthMismatch("covariate matrix must have four columns".into()));
    }
    let map = &CovariateMap::kang_schafer([0, 1, 2, 3]);
    Ok(x.chunks_exact(4).flat_map(|row| (0..4).map(move |j| map.value(row, j))).collect::<Vec<_>>())
}

/// Number of non-finite entries the transform produces.
pub fn count_nonfinite_transformed(data: &Dataset) -> usize {
    transform_covariates(data.x())
        .map(|v| v.iter().filter(|t| !t.is_finite()).count())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [ScenarioId::I, ScenarioId::II, ScenarioId::III, ScenarioId::IV, ScenarioId::V, ScenarioId::VI];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
            ScenarioId::IV => "IV",
            ScenarioId::V => "V",
            ScenarioId::VI => "VI",
        }
    }

    /// Which of `(pi, p, r, mu)` see transformed covariates.
    pub fn misspecified(&self) -> [bool; 4] {
        match self {
            ScenarioId::I => [false; 4],
            ScenarioId::II => [true, false, false, false],
            ScenarioId::III => [false, true, false, false],
            ScenarioId::IV => [false, false, true, false],
            ScenarioId::V => [false, false, false, true],
            ScenarioId::VI => [true; 4],
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let pick = |wrong: bool| {
            if wrong {
                CovariateMap::kang_schafer([0, 1, 2, 3])
            } else {
                CovariateMap::identity(4)
            }
        };
        let w = self.misspecified();
        ModelSpec {
            pi: pick(w[0]),
            p: pick(w[1]),
            r: pick(w[2]),
            mu: pick(w[3]),
            outcome: OutcomeKind::Continuous,
        }
    }

    /// Whether `method` is consistent for every `theta` under this scenario.
    pub fn licensed(&self, method: Method) -> bool {
        let w = self.misspecified();
        let wrong = w.iter().filter(|v| **v).count();
        match method {
            Method::A => !w[0] && !w[1] && !w[2],
            Method::B => !w[0] && !w[2] && !w[3],
            Method::C => !w[0] && !w[1] && !w[3],
            Method::D => !w[1] && !w[2] && !w[3],
            Method::Mr | Method::Np => wrong <= 1,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<ScenarioId> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "I" | "1" => ScenarioId::I,
            "II" | "2" => ScenarioId::II,
            "III" | "3" => ScenarioId::III,
            "IV" | "4" => ScenarioId::IV,
            "V" | "5" => ScenarioId::V,
            "VI" | "6" => ScenarioId::VI,
            _ => return Err(Error::Config(format!("unknown scenario `{s}`"))),
        })
    }
}

/// A Monte Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TruthMethod {
    /// Plug-in of the identification formula with the generating nuisances.
    PlugIn,
    /// Stratum means of simulated cross-world potential outcomes.
    PotentialOutcomes,
}

/// True `theta` values and stratum proportions of a process.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthHandle {
    pub theta: BTreeMap<TargetIndex, McValue>,
    pub proportion: BTreeMap<Stratum, McValue>,
    pub draws: usize,
    pub seed: u64,
    pub method: TruthMethod,
    pub params: DgpParams,
}

impl TruthHandle {
    pub fn theta(&self, t: &TargetIndex) -> Result<McValue> {
        self.theta
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no truth for {}", t.label())))
    }

    pub fn table(&self) -> ThetaTable {
        ThetaTable {
            mode: Monotonicity::Standard,
            theta: self.theta.iter().map(|(k, v)| (*k, v.value)).collect(),
            proportion: self.proportion.iter().map(|(k, v)| (*k, v.value)).collect(),
        }
    }

    /// `(quantity, stratum, value, se)` rows: every `theta`, then every proportion.
    pub fn rows(&self) -> Vec<(String, String, f64, f64)> {
        let mut out: Vec<_> = self
            .theta
            .iter()
            .map(|(t, v)| (format!("theta{}{}", t.z, t.z_prime), t.stratum.label(), v.value, v.se))
            .collect();
        out.extend(self.proportion.iter().map(|(s, v)| ("proportion".to_string(), s.label(), v.value, v.se)));
        out
    }

    /// Stratum and population effects implied by the true `theta` values.
    pub fn effects(&self, scale: Scale) -> Result<EffectSet> {
        assemble_effects(&self.table(), scale)
    }
}

fn all_targets() -> Vec<TargetIndex> {
    strata_for_mode(Monotonicity::Standard)
        .into_iter()
        .flat_map(TargetIndex::effect_targets)
        .collect()
}

/// Running sums for a ratio of means `sum(a) / sum(b)`.
#[derive(Debug, Clone, Copy, Default)]
struct RatioSums {
    a: f64,
    b: f64,
    aa: f64,
    ab: f64,
    bb: f64,
}

impl RatioSums {
    #[inline]
    fn add(&mut self, a: f64, b: f64) {
        self.a += a;
        self.b += b;
        self.aa += a * a;
        self.ab += a * b;
        self.bb += b * b;
    }

    fn merge(&mut self, o: &RatioSums) {
        self.a += o.a;
        self.b += o.b;
        self.aa += o.aa;
        self.ab += o.ab;
        self.bb += o.bb;
    }

    /// Ratio and its delta-method standard error over `n` draws.
    fn value(&self, n: usize) -> McValue {
        let n = n as f64;
        let r = self.a / self.b;
        let ss = (self.aa - 2.0 * r * self.ab + r * r * self.bb).max(0.0);
        let var = ss / (n - 1.0);
        McValue {
            value: r,
            se: var.sqrt() / (self.b / n) / n.sqrt(),
        }
    }
}

fn chunked<F>(draws: usize, seed: u64, slots: usize, f: F) -> Vec<RatioSums>
where
    F: Fn(&mut ChaCha20Rng, usize, &mut [RatioSums]) + Sync,
{
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut acc = vec![RatioSums::default(); slots];
            f(&mut rng, CHUNK.min(draws - c * CHUNK), &mut acc);
            acc
        })
        .reduce(
            || vec![RatioSums::default(); slots],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y));
                a
            },
        )
}

const MIN_TRUTH_DRAWS: usize = 1_000_000;

/// Truth by Monte Carlo plug-in of the identification formula with the generating nuisances.
pub fn compute_truth_with(params: &DgpParams, seed: u64, draws: usize) -> Result<TruthHandle> {
    if draws < MIN_TRUTH_DRAWS {
        return Err(Error::InvalidArgument(format!("truth needs at least {MIN_TRUTH_DRAWS} draws")));
    }
    let targets = all_targets();
    let strata = strata_for_mode(Monotonicity::Standard);
    let ns = strata.len();
    let sums = chunked(draws, seed, targets.len() + ns, |rng, n, acc| {
        for _ in 0..n {
            let mut x = [0.0; 4];
            for v in &mut x {
                *v = rng.sample(StandardNormal);
            }
            for (k, s) in strata.iter().enumerate() {
                acc[targets.len() + k].add(params.score(*s, &x), 1.0);
            }
            for (k, t) in targets.iter().enumerate() {
                let e = params.score(t.stratum, &x);
                acc[k].add(e * params.eta(t, &x), e);
            }
        }
    });
    Ok(TruthHandle {
        theta: targets.iter().zip(&sums).map(|(t, s)| (*t, s.value(draws))).collect(),
        proportion: strata.iter().zip(&sums[targets.len()..]).map(|(s, v)| (*s, v.value(draws))).collect(),
        draws,
        seed,
        method: TruthMethod::PlugIn,
        params: *params,
    })
}

pub fn compute_truth(seed: u64, draws: usize) -> Result<TruthHandle> {
    compute_truth_with(&DgpParams::BENCHMARK, seed, draws)
}

/// Truth as stratum means of simulated cross-world potential outcomes.
pub fn potential_outcome_truth(params: &DgpParams, seed: u64, draws: usize) -> Result<TruthHandle> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let targets = all_targets();
    let strata = strata_for_mode(Monotonicity::Standard);
    let ns = strata.len();
    let sums = chunked(draws, seed, targets.len() + ns, |rng, n, acc| {
        for _ in 0..n {
            let u = Unit::draw(params, rng);
            let s = u.stratum();
            for (k, st) in strata.iter().enumerate() {
                acc[targets.len() + k].add((s == *st) as u8 as f64, 1.0);
            }
            for (k, t) in targets.iter().enumerate() {
                if t.stratum == s {
                    acc[k].add(u.y_cross(params, t.z, t.z_prime), 1.0);
                } else {
                    acc[k].add(0.0, 0.0);
                }
            }
        }
    });
    Ok(TruthHandle {
        theta: targets.iter().zip(&sums).map(|(t, s)| (*t, s.value(draws))).collect(),
        proportion: strata.iter().zip(&sums[targets.len()..]).map(|(s, v)| (*s, v.value(draws))).collect(),
        draws,
        seed,
        method: TruthMethod::PotentialOutcomes,
        params: *params,
    })
}

/// Settings of a scenario study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioId,
    pub n: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub targets: Vec<TargetIndex>,
    /// Bootstrap replicates for the parametric methods; 0 skips their intervals.
    pub bootstrap: usize,
    pub folds: usize,
    pub learner: LearnerSpec,
    pub level: f64,
    pub seed: u64,
    pub positivity: Positivity,
    pub params: DgpParams,
}

impl StudyConfig {
    pub fn new(scenario: ScenarioId) -> StudyConfig {
        StudyConfig {
            scenario,
            n: 1000,
            reps: 500,
            methods: vec![Method::A, Method::B, Method::C, Method::D, Method::Mr],
            targets: vec![TargetIndex::new(1, 0, Stratum::COMPLIER).expect("admissible")],
            bootstrap: 0,
            folds: 5,
            learner: LearnerSpec::default(),
            level: 0.95,
            seed: 1,
            positivity: Positivity::default(),
            params: DgpParams::BENCHMARK,
        }
    }

    fn check(&self) -> Result<()> {
        if self.reps == 0 || self.n == 0 {
            return Err(Error::Config("n and reps must be positive".into()));
        }
        if self.methods.is_empty() || self.targets.is_empty() {
            return Err(Error::Config("at least one method and one target are required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", self.level)));
        }
        if self.bootstrap > 0 && self.bootstrap < crate::inference::MIN_REPLICATES {
            return Err(Error::Config(format!("bootstrap must be 0 or at least {}", crate::inference::MIN_REPLICATES)));
        }
        Ok(())
    }
}

/// One estimate from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub scenario: ScenarioId,
    pub rep: usize,
    pub method: Method,
    pub target: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

/// Aggregate performance of one method for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: ScenarioId,
    pub method: Method,
    pub target: String,
    pub truth: f64,
    pub truth_se: f64,
    pub reps: usize,
    pub failed: usize,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    /// Monte Carlo standard error of the bias.
    pub bias_se: f64,
    pub coverage: Option<f64>,
    pub low_replicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyOutput {
    pub replicates: Vec<ReplicateRow>,
    pub summary: Vec<SummaryRow>,
    /// Non-finite transformed covariates handed to misspecified working models, over all replicates.
    pub nonfinite_features: usize,
}

fn derived_seed(seed: u64, rep: u64) -> u64 {
    stream(seed ^ 0x5eed_b007_5eed_b007, rep).next_u64()
}

type Estimate = (f64, f64, f64, f64);

/// Estimates for every (method, target) pair of one replicate, in config order.
fn replicate(cfg: &StudyConfig, model: &ModelSpec, rep: usize) -> Result<(Vec<Result<Estimate>>, usize)> {
    let data = simulate_with(&cfg.params, cfg.n, cfg.seed, rep as u64)?;
    let nonfinite = if cfg.scenario.misspecified().iter().any(|w| *w) { count_nonfinite_transformed(&data) } else { 0 };
    let inner = derived_seed(cfg.seed, rep as u64);
    let parametric: Vec<Method> = cfg.methods.iter().copied().filter(|m| *m != Method::Np).collect();
    let values = |d: &Dataset| -> Result<Vec<f64>> {
        let bundle = fit_parametric_bundle(d, model)?;
        let mut out = Vec::with_capacity(parametric.len() * cfg.targets.len());
        for &m in &parametric {
            match estimate_thetas(d, &bundle, m, &cfg.positivity) {
                Ok(table) => out.extend(cfg.targets.iter().map(|t| table.theta.get(t).copied().unwrap_or(f64::NAN))),
                Err(_) => out.extend(std::iter::repeat_n(f64::NAN, cfg.targets.len())),
            }
        }
        Ok(out)
    };
    let mut out = Vec::with_capacity(cfg.methods.len() * cfg.targets.len());
    let mut par = if parametric.is_empty() { Vec::new() } else { values(&data)? }.into_iter();
    let boots = if !parametric.is_empty() && cfg.bootstrap > 0 {
        Some(bootstrap_multi(&data, values, parametric.len() * cfg.targets.len(), cfg.bootstrap, inner, cfg.level)?)
    } else {
        None
    };
    let mut k = 0;
    let mut np: Option<Result<CrossFit>> = None;
    for &m in &cfg.methods {
        for t in &cfg.targets {
            if m == Method::Np {
                let cf = np.get_or_insert_with(|| {
                    partition(data.n(), cfg.folds, inner).and_then(|plan| CrossFit::fit(&data, plan, &cfg.learner, model))
                });
                let est = match cf {
                    Ok(cf) => cf.components(&data, t, &cfg.positivity).and_then(|c| np_estimate(&data, &c)).map(|(v, var)| {
                        let se = var.sqrt();
                        let (lo, hi) = wald_interval(v, se, cfg.level);
                        (v, se, lo, hi)
                    }),
                    Err(e) => Err(e.clone()),
                };
                out.push(est);
                continue;
            }
            let v = par.next().unwrap_or(f64::NAN);
            let est = if !v.is_finite() {
                Err(Error::InvalidArgument(format!("{m} estimate is not finite")))
            } else {
                match &boots {
                    Some(b) => b[k].clone().map(|b| {
                        let (lo, hi) = wald_interval(v, b.se, cfg.level);
                        (v, b.se, lo, hi)
                    }),
                    None => Ok((v, f64::NAN, f64::NAN, f64::NAN)),
                }
            };
            k += 1;
            out.push(est);
        }
    }
    Ok((out, nonfinite))
}

/// Repeated simulation and estimation under one scenario, summarised against `truth`.
pub fn run_scenario_study(cfg: &StudyConfig, truth: &TruthHandle) -> Result<StudyOutput> {
    cfg.check()?;
    let model = cfg.scenario.model_spec();
    let pairs: Vec<(Method, TargetIndex)> = cfg.methods.iter().flat_map(|m| cfg.targets.iter().map(move |t| (*m, *t))).collect();
    let results: Vec<(Vec<Result<Estimate>>, usize)> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| match replicate(cfg, &model, rep) {
            Ok(v) => v,
            Err(e) => (pairs.iter().map(|_| Err(e.clone())).collect(), 0),
        })
        .collect();
    let nonfinite_features = results.iter().map(|r| r.1).sum();

    let mut rows = Vec::with_capacity(cfg.reps * pairs.len());
    for (rep, (ests, _)) in results.iter().enumerate() {
        for ((method, t), est) in pairs.iter().zip(ests) {
            let truth_v = truth.theta(t)?.value;
            rows.push(match est {
                Ok((v, se, lo, hi)) => ReplicateRow {
                    scenario: cfg.scenario,
                    rep,
                    method: *method,
                    target: t.label(),
                    estimate: *v,
                    se: *se,
                    ci_low: *lo,
                    ci_high: *hi,
                    covered: lo.is_finite().then_some(*lo <= truth_v && truth_v <= *hi),
                    error: None,
                },
                Err(e) => ReplicateRow {
                    scenario: cfg.scenario,
                    rep,
                    method: *method,
                    target: t.label(),
                    estimate: f64::NAN,
                    se: f64::NAN,
                    ci_low: f64::NAN,
                    ci_high: f64::NAN,
                    covered: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    let mut summary = Vec::with_capacity(pairs.len());
    for (j, (method, t)) in pairs.iter().enumerate() {
        let mine: Vec<&ReplicateRow> = rows.iter().skip(j).step_by(pairs.len()).collect();
        let failed = mine.iter().filter(|r| r.error.is_some()).count();
        if failed as f64 > MAX_FAILED_SHARE * cfg.reps as f64 {
            let last = mine.iter().rev().find_map(|r| r.error.clone()).unwrap_or_default();
            return Err(Error::TooManyFailedReplicates {
                failed,
                total: cfg.reps,
                last,
            });
        }
        let est: Vec<f64> = mine.iter().filter(|r| r.error.is_none()).map(|r| r.estimate).collect();
        let covered: Vec<bool> = mine.iter().filter_map(|r| r.covered).collect();
        let tv = truth.theta(t)?;
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        let sd = sample_sd(&est);
        summary.push(SummaryRow {
            scenario: cfg.scenario,
            method: *method,
            target: t.label(),
            truth: tv.value,
            truth_se: tv.se,
            reps: cfg.reps,
            failed,
            mean,
            bias: mean - tv.value,
            sd,
            bias_se: sd / (est.len() as f64).sqrt(),
            coverage: (!covered.is_empty()).then(|| covered.iter().filter(|c| **c).count() as f64 / covered.len() as f64),
            low_replicate: cfg.reps < LOW_REPLICATES,
        });
    }
    Ok(StudyOutput {
        replicates: rows,
        summary,
        nonfinite_features,
    })
}
