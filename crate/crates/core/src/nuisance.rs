//! Nuisance functions: treatment propensity `pi`, post-treatment event
//! probability `p`, mediator law `r` and outcome regression `mu`, plus the
//! derived principal score, mediated mean `eta` and the doubly robust cell
//! probability.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{fit_linear, fit_logistic, Design, GlmFit};
use crate::model::{Dataset, MediatorKind, Monotonicity, Stratum, TargetIndex};
use crate::numeric::{normal_expectation_rule, normal_pdf};

/// The four nuisance functions, evaluated at a raw covariate row.
pub trait Nuisance: Send + Sync {
    fn mediator_kind(&self) -> MediatorKind;
    fn monotonicity(&self) -> Monotonicity;
    /// `P(Z = z | x)`.
    fn pi(&self, z: u8, x: &[f64]) -> f64;
    /// `P(D = d | Z = z, x)`.
    fn p(&self, z: u8, d: u8, x: &[f64]) -> f64;
    /// Mediator pmf or density at `m` given `(z, d, x)`.
    fn r(&self, z: u8, d: u8, m: f64, x: &[f64]) -> f64;
    /// `E[Y | z, d, m, x]`.
    fn mu(&self, z: u8, d: u8, m: f64, x: &[f64]) -> f64;
    /// Mean and standard deviation of a Gaussian mediator model.
    fn mediator_normal(&self, _z: u8, _d: u8, _x: &[f64]) -> Option<(f64, f64)> {
        None
    }
    /// Fills `out` with the pmf over all mediator levels.
    fn r_pmf(&self, z: u8, d: u8, x: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.r(z, d, m as f64, x);
        }
    }
}

/// How a covariate row is turned into working-model regressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTransform {
    Identity,
    /// `(exp(x1/2), x2/(1+x1), (x2 x3/25 + 0.6)^3, (x2 + x4 + 20)^2)`; needs four columns.
    KangSchafer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateMap {
    pub columns: Vec<usize>,
    pub transform: CovariateTransform,
}

impl CovariateMap {
    pub fn identity(p: usize) -> CovariateMap {
        CovariateMap {
            columns: (0..p).collect(),
            transform: CovariateTransform::Identity,
        }
    }

    pub fn kang_schafer(columns: [usize; 4]) -> CovariateMap {
        CovariateMap {
            columns: columns.to_vec(),
            transform: CovariateTransform::KangSchafer,
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    fn check(&self, p: usize) -> Result<()> {
        if let Some(&c) = self.columns.iter().find(|&&c| c >= p) {
            return Err(Error::Config(format!("covariate index {c} out of range (p = {p})")));
        }
        if self.transform == CovariateTransform::KangSchafer && self.columns.len() != 4 {
            return Err(Error::Config("transformed covariates need exactly four columns".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, x: &[f64], j: usize) -> f64 {
        match self.transform {
            CovariateTransform::Identity => x[self.columns[j]],
            CovariateTransform::KangSchafer => {
                let c = &self.columns;
                match j {
                    0 => (0.5 * x[c[0]]).exp(),
                    1 => x[c[1]] / (1.0 + x[c[0]]),
                    2 => (x[c[1]] * x[c[2]] / 25.0 + 0.6).powi(3),
                    _ => (x[c[1]] + x[c[3]] + 20.0).powi(2),
                }
            }
        }
    }
}

/// Regressor vector `[lead..., mapped covariates...]` without materialising it.
#[derive(Clone, Copy)]
pub struct FeatureRow<'a> {
    pub lead: &'a [f64],
    pub x: &'a [f64],
    pub map: &'a CovariateMap,
}

static NO_COVARIATES: CovariateMap = CovariateMap {
    columns: Vec::new(),
    transform: CovariateTransform::Identity,
};

impl<'a> FeatureRow<'a> {
    /// Wraps a row that is already fully assembled.
    pub fn from_design_row(row: &'a [f64]) -> FeatureRow<'a> {
        FeatureRow {
            lead: row,
            x: &[],
            map: &NO_COVARIATES,
        }
    }

    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        if j < self.lead.len() {
            self.lead[j]
        } else {
            self.map.value(self.x, j - self.lead.len())
        }
    }

    pub fn len(&self) -> usize {
        self.lead.len() + self.map.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.get(j)).collect()
    }
}

/// A fitted predictor of a probability or conditional mean.
pub trait FittedModel: Send + Sync + fmt::Debug {
    fn predict(&self, row: &FeatureRow<'_>) -> f64;
    fn summary(&self) -> FitSummary;
}

impl FittedModel for GlmFit {
    #[inline]
    fn predict(&self, row: &FeatureRow<'_>) -> f64 {
        self.mean_with(|j| row.get(j))
    }

    fn summary(&self) -> FitSummary {
        FitSummary {
            learner: "glm".into(),
            converged: self.converged,
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FitSummary {
    pub learner: String,
    pub converged: bool,
    pub separation: bool,
}

/// Response type of a component fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Regression,
}

/// Fits one nuisance component on an assembled design.
pub trait ComponentFitter: Sync {
    fn fit(&self, name: &str, design: &Design, y: &[f64], task: Task) -> Result<Box<dyn FittedModel>>;
}

/// Parametric working models: logistic or linear GLMs.
pub struct GlmFitter;

impl ComponentFitter for GlmFitter {
    fn fit(&self, _name: &str, design: &Design, y: &[f64], task: Task) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(match task {
            Task::Classification => fit_logistic(design, y, None)?,
            Task::Regression => fit_linear(design, y)?,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

impl OutcomeKind {
    /// Binary when every outcome is 0 or 1.
    pub fn detect(y: &[f64]) -> OutcomeKind {
        if y.iter().all(|v| *v == 0.0 || *v == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        }
    }
}

/// Per-nuisance regressor definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub pi: CovariateMap,
    pub p: CovariateMap,
    pub r: CovariateMap,
    pub mu: CovariateMap,
    pub outcome: OutcomeKind,
}

impl ModelSpec {
    /// Every nuisance uses all covariates untransformed.
    pub fn all_covariates(data: &Dataset) -> ModelSpec {
        let map = CovariateMap::identity(data.p());
        ModelSpec {
            pi: map.clone(),
            p: map.clone(),
            r: map.clone(),
            mu: map,
            outcome: OutcomeKind::detect(data.y()),
        }
    }

    fn check(&self, p: usize) -> Result<()> {
        for m in [&self.pi, &self.p, &self.r, &self.mu] {
            m.check(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Provenance {
    Parametric,
    Learner { fold: usize },
}

#[derive(Debug)]
struct Component {
    model: Box<dyn FittedModel>,
    map: CovariateMap,
}

impl Component {
    #[inline]
    fn predict(&self, lead: &[f64], x: &[f64]) -> f64 {
        self.model.predict(&FeatureRow {
            lead,
            x,
            map: &self.map,
        })
    }
}

#[derive(Debug)]
enum MediatorModel {
    Binary(Component),
    /// `h_j = P(M = j | M <= j)` for `j = 1..=m_max`.
    Sequential(Vec<Component>),
    Gaussian { fit: GlmFit, map: CovariateMap },
}

#[derive(Debug)]
enum EventModel {
    /// `P(D = 1 | z, x)` from a model with `z` as a regressor.
    Joint(Component),
    /// `P(D = 1 | Z = 1, x)`; the control arm is fixed at `D = 0`.
    TreatedOnly(Component),
}

/// Fitted nuisance functions. Immutable and shareable across threads.
#[derive(Debug)]
pub struct NuisanceBundle {
    kind: MediatorKind,
    mode: Monotonicity,
    pi: Component,
    p: EventModel,
    r: MediatorModel,
    mu: Component,
    provenance: Provenance,
    fits: Vec<(String, FitSummary)>,
}

impl NuisanceBundle {
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Learner and convergence status per fitted component.
    pub fn fit_summaries(&self) -> &[(String, FitSummary)] {
        &self.fits
    }
}

impl Nuisance for NuisanceBundle {
    fn mediator_kind(&self) -> MediatorKind {
        self.kind
    }

    fn monotonicity(&self) -> Monotonicity {
        self.mode
    }

    #[inline]
    fn pi(&self, z: u8, x: &[f64]) -> f64 {
        let p1 = self.pi.predict(&[], x);
        if z == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    #[inline]
    fn p(&self, z: u8, d: u8, x: &[f64]) -> f64 {
        let p1 = match &self.p {
            EventModel::Joint(c) => c.predict(&[z as f64], x),
            EventModel::TreatedOnly(c) => {
                if z == 1 {
                    c.predict(&[], x)
                } else {
                    0.0
                }
            }
        };
        if d == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    fn r(&self, z: u8, d: u8, m: f64, x: &[f64]) -> f64 {
        match &self.r {
            MediatorModel::Binary(c) => {
                let p1 = c.predict(&[z as f64, d as f64], x);
                if m == 1.0 {
                    p1
                } else {
                    1.0 - p1
                }
            }
            MediatorModel::Sequential(_) => {
                let levels = self.kind.levels().unwrap_or(0);
                let mut pmf = vec![0.0; levels];
                self.r_pmf(z, d, x, &mut pmf);
                pmf.get(m as usize).copied().unwrap_or(0.0)
            }
            MediatorModel::Gaussian { fit, map } => {
                let lead = [z as f64, d as f64];
                let row = FeatureRow { lead: &lead, x, map };
                normal_pdf(
                    m,
                    fit.linear_predictor_with(|j| row.get(j)),
                    fit.residual_variance.sqrt(),
                )
            }
        }
    }

    #[inline]
    fn mu(&self, z: u8, d: u8, m: f64, x: &[f64]) -> f64 {
        self.mu.predict(&[z as f64, d as f64, m], x)
    }

    fn mediator_normal(&self, z: u8, d: u8, x: &[f64]) -> Option<(f64, f64)> {
        match &self.r {
            MediatorModel::Gaussian { fit, map } => {
                let lead = [z as f64, d as f64];
                let row = FeatureRow { lead: &lead, x, map };
                Some((
                    fit.linear_predictor_with(|j| row.get(j)),
                    fit.residual_variance.sqrt(),
                ))
            }
            _ => None,
        }
    }

    fn r_pmf(&self, z: u8, d: u8, x: &[f64], out: &mut [f64]) {
        match &self.r {
            MediatorModel::Sequential(splits) => {
                let lead = [z as f64, d as f64];
                // P(M <= j) accumulates from the top level down.
                let mut below = 1.0;
                for j in (1..out.len()).rev() {
                    let h = splits[j - 1].predict(&lead, x);
                    out[j] = h * below;
                    below *= 1.0 - h;
                }
                out[0] = below;
            }
            _ => {
                for (m, o) in out.iter_mut().enumerate() {
                    *o = self.r(z, d, m as f64, x);
                }
            }
        }
    }
}

/// Builds the design `[lead(i)..., map(x_i)...]` over the selected rows.
fn assemble(data: &Dataset, rows: &[usize], lead: &dyn Fn(usize) -> Vec<f64>, map: &CovariateMap) -> Result<Design> {
    let q = lead(rows.first().copied().unwrap_or(0)).len() + map.dim();
    let mut buf = Vec::with_capacity(rows.len() * q);
    for &i in rows {
        let l = lead(i);
        let row = FeatureRow {
            lead: &l,
            x: data.x_row(i),
            map,
        };
        for j in 0..q {
            buf.push(row.get(j));
        }
    }
    Design::new(rows.len(), q, buf)
}

#[allow(clippy::too_many_arguments)]
fn fit_component(
    fitter: &dyn ComponentFitter,
    name: &str,
    data: &Dataset,
    rows: &[usize],
    lead: &dyn Fn(usize) -> Vec<f64>,
    map: &CovariateMap,
    y: Vec<f64>,
    task: Task,
) -> Result<Component> {
    let design = assemble(data, rows, lead, map).map_err(|e| e.in_nuisance(name))?;
    let model = fitter
        .fit(name, &design, &y, task)
        .map_err(|e| e.in_nuisance(name))?;
    Ok(Component {
        model,
        map: map.clone(),
    })
}

/// Fits all four nuisances with the given component fitter.
pub fn fit_bundle_with(
    data: &Dataset,
    spec: &ModelSpec,
    fitter: &dyn ComponentFitter,
    provenance: Provenance,
) -> Result<NuisanceBundle> {
    spec.check(data.p())?;
    let n = data.n();
    let all: Vec<usize> = (0..n).collect();
    let z = data.z();
    let d = data.d();
    let m = data.m();
    let mut fits = Vec::new();

    let pi = fit_component(
        fitter,
        "pi",
        data,
        &all,
        &|_| vec![],
        &spec.pi,
        z.iter().map(|&v| v as f64).collect(),
        Task::Classification,
    )?;
    fits.push(("pi".to_string(), pi.model.summary()));

    let p = match data.monotonicity() {
        Monotonicity::Standard => {
            let c = fit_component(
                fitter,
                "p",
                data,
                &all,
                &|i| vec![z[i] as f64],
                &spec.p,
                d.iter().map(|&v| v as f64).collect(),
                Task::Classification,
            )?;
            fits.push(("p".to_string(), c.model.summary()));
            EventModel::Joint(c)
        }
        Monotonicity::Strong => {
            let rows: Vec<usize> = all.iter().copied().filter(|&i| z[i] == 1).collect();
            let y = rows.iter().map(|&i| d[i] as f64).collect();
            let c = fit_component(fitter, "p", data, &rows, &|_| vec![], &spec.p, y, Task::Classification)?;
            fits.push(("p".to_string(), c.model.summary()));
            EventModel::TreatedOnly(c)
        }
    };

    let zd = |i: usize| vec![z[i] as f64, d[i] as f64];
    let r = match data.mediator_kind() {
        MediatorKind::Binary => {
            let c = fit_component(fitter, "r", data, &all, &zd, &spec.r, m.to_vec(), Task::Classification)?;
            fits.push(("r".to_string(), c.model.summary()));
            MediatorModel::Binary(c)
        }
        MediatorKind::Categorical(m_max) => {
            let mut splits = Vec::with_capacity(m_max as usize);
            for j in 1..=m_max {
                let jf = j as f64;
                let rows: Vec<usize> = all.iter().copied().filter(|&i| m[i] <= jf).collect();
                let y: Vec<f64> = rows.iter().map(|&i| if m[i] == jf { 1.0 } else { 0.0 }).collect();
                if !y.contains(&1.0) {
                    return Err(Error::UnsupportedMediator(format!("level {j} never observed")).in_nuisance("r"));
                }
                let name = format!("r[{j}]");
                let c = fit_component(fitter, &name, data, &rows, &zd, &spec.r, y, Task::Classification)?;
                fits.push((name, c.model.summary()));
                splits.push(c);
            }
            MediatorModel::Sequential(splits)
        }
        MediatorKind::ContinuousGaussian => {
            let design = assemble(data, &all, &zd, &spec.r).map_err(|e| e.in_nuisance("r"))?;
            let fit = fit_linear(&design, m).map_err(|e| e.in_nuisance("r"))?;
            if fit.is_degenerate() {
                return Err(Error::DegenerateVariance.in_nuisance("r"));
            }
            fits.push(("r".to_string(), fit.summary()));
            MediatorModel::Gaussian {
                fit,
                map: spec.r.clone(),
            }
        }
    };

    let task = match spec.outcome {
        OutcomeKind::Continuous => Task::Regression,
        OutcomeKind::Binary => Task::Classification,
    };
    let mu = fit_component(
        fitter,
        "mu",
        data,
        &all,
        &|i| vec![z[i] as f64, d[i] as f64, m[i]],
        &spec.mu,
        data.y().to_vec(),
        task,
    )?;
    fits.push(("mu".to_string(), mu.model.summary()));

    Ok(NuisanceBundle {
        kind: data.mediator_kind(),
        mode: data.monotonicity(),
        pi,
        p,
        r,
        mu,
        provenance,
        fits,
    })
}

/// Parametric working models per the model spec.
pub fn fit_parametric_bundle(data: &Dataset, spec: &ModelSpec) -> Result<NuisanceBundle> {
    fit_bundle_with(data, spec, &GlmFitter, Provenance::Parametric)
}

/// Positivity handling for denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    /// Values of `pi`, `p` and `r` used as denominators are raised to this floor.
    pub clip_floor: f64,
    /// Fail with `ExtremePropensity` instead of clipping.
    pub strict: bool,
    /// Largest admissible mediator density ratio.
    pub ratio_limit: f64,
}

impl Default for Positivity {
    fn default() -> Self {
        Positivity {
            clip_floor: 1e-3,
            strict: false,
            ratio_limit: 1e6,
        }
    }
}

impl Positivity {
    /// Clipped denominator; counts clips in `clips`.
    #[inline]
    pub fn floor(&self, v: f64, unit: usize, clips: &mut usize) -> Result<f64> {
        if v >= self.clip_floor {
            return Ok(v);
        }
        if self.strict || v.is_nan() {
            return Err(Error::ExtremePropensity { unit, value: v });
        }
        *clips += 1;
        Ok(self.clip_floor)
    }
}

/// Tolerance below zero before a principal score is an error.
pub const SCORE_TOLERANCE: f64 = 1e-8;

pub(crate) fn score_at(nuis: &dyn Nuisance, stratum: Stratum, x: &[f64], unit: usize, clamps: &mut usize) -> Result<f64> {
    let (zs, ds) = stratum.companion();
    let e = nuis.p(zs, ds, x) - stratum.k() * nuis.p(0, 1, x);
    if e < -SCORE_TOLERANCE || e.is_nan() {
        return Err(Error::NegativeScore { unit, value: e });
    }
    if e < 0.0 {
        *clamps += 1;
        return Ok(0.0);
    }
    Ok(e)
}

/// Principal score `e(x) = p_{z*d*}(x) - k p_01(x)`.
pub fn principal_score(nuis: &dyn Nuisance, stratum: Stratum, x: &[f64]) -> Result<f64> {
    if !stratum.admissible(nuis.monotonicity()) {
        return Err(Error::InadmissibleStratum(stratum.label()));
    }
    let mut clamps = 0;
    score_at(nuis, stratum, x, 0, &mut clamps)
}

pub(crate) fn eta_at(nuis: &dyn Nuisance, target: &TargetIndex, x: &[f64], unit: usize) -> Result<f64> {
    let (z, dz) = (target.z, target.d_z());
    let (zp, dzp) = (target.z_prime, target.d_z_prime());
    match nuis.mediator_kind().levels() {
        Some(levels) => {
            let mut pmf = [0.0; 16];
            let mut heap;
            let pmf: &mut [f64] = if levels <= 16 {
                &mut pmf[..levels]
            } else {
                heap = vec![0.0; levels];
                &mut heap
            };
            nuis.r_pmf(zp, dzp, x, pmf);
            let mut s = 0.0;
            for (m, r) in pmf.iter().enumerate() {
                s += nuis.mu(z, dz, m as f64, x) * r;
            }
            Ok(s)
        }
        None => {
            let (mean, sd) = nuis
                .mediator_normal(zp, dzp, x)
                .ok_or_else(|| Error::UnsupportedMediator("continuous mediator needs a Gaussian model".into()))?;
            let rule = normal_expectation_rule();
            let mut s = 0.0;
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                let v = nuis.mu(z, dz, mean + sd * t, x);
                if !v.is_finite() {
                    return Err(Error::QuadratureOverflow { unit });
                }
                s += w * v;
            }
            Ok(s)
        }
    }
}

/// `eta_{zz'}(x) = int mu_{z d_z}(m, x) r_{z' d_z'}(m, x) dm`.
pub fn eta(nuis: &dyn Nuisance, target: &TargetIndex, x: &[f64]) -> Result<f64> {
    eta_at(nuis, target, x, 0)
}

/// Doubly robust estimate of the marginal cell probability `P(D = d | Z = z)`.
pub fn p_marginal_dr(data: &Dataset, nuis: &dyn Nuisance, z: u8, d: u8, pos: &Positivity) -> Result<f64> {
    let mut clips = 0;
    let mut v = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let x = data.x_row(i);
        let pzd = nuis.p(z, d, x);
        let mut term = pzd;
        if data.z()[i] == z {
            let pi = pos.floor(nuis.pi(z, x), i, &mut clips)?;
            let ind = if data.d()[i] == d { 1.0 } else { 0.0 };
            term += (ind - pzd) / pi;
        }
        v.push(term);
    }
    Ok(data.mean(&v))
}

/// `p^dr_{z*d*} - k p^dr_01`, the estimated stratum proportion.
pub fn stratum_proportion_dr(data: &Dataset, nuis: &dyn Nuisance, stratum: Stratum, pos: &Positivity) -> Result<f64> {
    let (zs, ds) = stratum.companion();
    let mut e = p_marginal_dr(data, nuis, zs, ds, pos)?;
    if stratum.k() != 0.0 {
        e -= p_marginal_dr(data, nuis, 0, 1, pos)?;
    }
    Ok(e)
}

/// Shared handle for passing bundles across threads.
pub type SharedNuisance = Arc<dyn Nuisance>;

#[cfg(test)]
mod tests {
    use super::*;

    /// Constant-valued nuisance for arithmetic checks.
    struct Fixed {
        p11: f64,
        p01: f64,
        r1: f64,
    }

    impl Nuisance for Fixed {
        fn mediator_kind(&self) -> MediatorKind {
            MediatorKind::Binary
        }
        fn monotonicity(&self) -> Monotonicity {
            Monotonicity::Standard
        }
        fn pi(&self, _z: u8, _x: &[f64]) -> f64 {
            0.5
        }
        fn p(&self, z: u8, d: u8, _x: &[f64]) -> f64 {
            let p1 = if z == 1 { self.p11 } else { self.p01 };
            if d == 1 {
                p1
            } else {
                1.0 - p1
            }
        }
        fn r(&self, _z: u8, _d: u8, m: f64, _x: &[f64]) -> f64 {
            if m == 1.0 {
                self.r1
            } else {
                1.0 - self.r1
            }
        }
        fn mu(&self, _z: u8, _d: u8, m: f64, _x: &[f64]) -> f64 {
            1.0 + 2.0 * m
        }
    }

    #[test]
    fn score_arithmetic() {
        let f = Fixed {
            p11: 0.6,
            p01: 0.2,
            r1: 0.25,
        };
        assert!((principal_score(&f, Stratum::COMPLIER, &[0.0]).unwrap() - 0.4).abs() < 1e-15);
        assert!((principal_score(&f, Stratum::ALWAYS, &[0.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!((principal_score(&f, Stratum::NEVER, &[0.0]).unwrap() - 0.4).abs() < 1e-15);
        let bad = Fixed {
            p11: 0.2,
            p01: 0.6,
            r1: 0.25,
        };
        assert!(matches!(
            principal_score(&bad, Stratum::COMPLIER, &[0.0]),
            Err(Error::NegativeScore { .. })
        ));
    }

    #[test]
    fn eta_weighted_mean() {
        let f = Fixed {
            p11: 0.6,
            p01: 0.2,
            r1: 0.25,
        };
        let t = TargetIndex::new(1, 0, Stratum::COMPLIER).unwrap();
        assert!((eta(&f, &t, &[0.0]).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn kang_schafer_values() {
        let map = CovariateMap::kang_schafer([0, 1, 2, 3]);
        let v: Vec<f64> = (0..4).map(|j| map.value(&[0.0; 4], j)).collect();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.216).abs() < 1e-15);
        assert_eq!(v[3], 400.0);
        assert!((map.value(&[2.0, 0.0, 0.0, 0.0], 0) - std::f64::consts::E).abs() < 1e-15);
        assert!((map.value(&[0.0, 5.0, 5.0, 0.0], 2) - 4.096).abs() < 1e-12);
    }

    #[test]
    fn clipping_counts() {
        let pos = Positivity::default();
        let mut clips = 0;
        assert_eq!(pos.floor(1e-5, 3, &mut clips).unwrap(), 1e-3);
        assert_eq!(clips, 1);
        let strict = Positivity {
            strict: true,
            ..pos
        };
        assert!(matches!(
            strict.floor(1e-5, 3, &mut clips),
            Err(Error::ExtremePropensity { unit: 3, .. })
        ));
    }
}
