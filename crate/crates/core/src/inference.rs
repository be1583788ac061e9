//! Nonparametric bootstrap, Wald intervals and the end-to-end effect analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{partition, CrossFit, LearnerSpec};
use crate::error::{Error, Result};
use crate::estimators::{assemble_effects, estimate_thetas, flatten, Adjustments, EffectKey, Method, Scale};
use crate::model::Dataset;
use crate::nuisance::{fit_parametric_bundle, FitSummary, ModelSpec, Positivity};
use crate::numeric::{normal_quantile, sample_sd};

/// Largest tolerated share of failed bootstrap replicates.
pub const MAX_FAILED_SHARE: f64 = 0.05;

/// Smallest accepted number of bootstrap replicates.
pub const MIN_REPLICATES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceKind {
    BootstrapPercentile,
    BootstrapWald,
    EifWald,
}

impl InferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InferenceKind::BootstrapPercentile => "bootstrap_percentile",
            InferenceKind::BootstrapWald => "bootstrap_wald",
            InferenceKind::EifWald => "eif_wald",
        }
    }
}

/// `point -/+ z_{(1 + level) / 2} se`.
pub fn wald_interval(point: f64, se: f64, level: f64) -> (f64, f64) {
    let half = normal_quantile(0.5 + level / 2.0) * se;
    if se == 0.0 {
        return (point, point);
    }
    (point - half, point + half)
}

/// Nearest-rank percentile interval of a sorted sample.
pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let b = sorted.len();
    let alpha = 1.0 - level;
    let rank = |q: f64| ((q * b as f64).ceil() as usize).clamp(1, b) - 1;
    (sorted[rank(alpha / 2.0)], sorted[rank(1.0 - alpha / 2.0)])
}

/// Row indices of replicate `rep`; each replicate reads its own stream of the seeded generator.
pub fn resample_rows(n: usize, seed: u64, rep: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci: (f64, f64),
    /// Successful replicate values in replicate order.
    pub replicates: Vec<f64>,
    pub failed: usize,
}

fn summarize(values: Vec<f64>, failed: usize, b: usize, level: f64, last: &str) -> Result<BootstrapResult> {
    if failed as f64 > MAX_FAILED_SHARE * b as f64 || values.len() < 2 {
        return Err(Error::TooManyFailedReplicates {
            failed,
            total: b,
            last: last.to_string(),
        });
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        se: sample_sd(&values),
        ci: percentile_interval(&sorted, level),
        replicates: values,
        failed,
    })
}

fn check_b(b: usize) -> Result<()> {
    if b < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least {MIN_REPLICATES} replicates, got {b}")));
    }
    Ok(())
}

/// Bootstrap of a scalar estimator; the closure re-fits everything it needs.
pub fn bootstrap<F>(data: &Dataset, estimator: F, b: usize, seed: u64, level: f64) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    let mut out = bootstrap_multi(data, |d| estimator(d).map(|v| vec![v]), 1, b, seed, level)?;
    out.pop().expect("one output")
}

/// Bootstrap of several outputs sharing each resample. A replicate that fails
/// as a whole counts against every output; a NaN entry counts against that output.
pub fn bootstrap_multi<F>(data: &Dataset, estimator: F, outputs: usize, b: usize, seed: u64, level: f64) -> Result<Vec<Result<BootstrapResult>>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    check_b(b)?;
    let reps: Vec<Result<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|rep| {
            let sample = data.subset(&resample_rows(data.n(), seed, rep));
            let v = estimator(&sample)?;
            if v.len() != outputs {
                return Err(Error::LengthMismatch(format!("expected {outputs} bootstrap outputs, got {}", v.len())));
            }
            Ok(v)
        })
        .collect();
    let mut last = String::from("none");
    let mut whole_failed = 0;
    for r in &reps {
        if let Err(e) = r {
            whole_failed += 1;
            last = e.to_string();
        }
    }
    Ok((0..outputs)
        .map(|k| {
            let mut values = Vec::with_capacity(b);
            let mut failed = whole_failed;
            for v in reps.iter().flatten() {
                if v[k].is_finite() {
                    values.push(v[k]);
                } else {
                    failed += 1;
                }
            }
            let reason = if failed > whole_failed { "non-finite replicate value" } else { last.as_str() };
            summarize(values, failed, b, level, reason)
        })
        .collect())
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub estimand: String,
    pub stratum: String,
    /// `difference`, `ratio`, or `identity` for the building blocks.
    pub scale: String,
    pub method: Method,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub inference: InferenceKind,
    /// Bootstrap replicates, or folds for cross-fitted rows.
    pub b_or_v: usize,
    pub seed: u64,
}

fn scale_label(key: &EffectKey, scale: Scale) -> &'static str {
    match key.estimand {
        crate::estimators::Estimand::Theta { .. } => "identity",
        _ => scale.as_str(),
    }
}

/// Whether `key` is reported on the log scale.
fn on_log_scale(key: &EffectKey, scale: Scale) -> bool {
    scale == Scale::RiskRatio && !matches!(key.estimand, crate::estimators::Estimand::Theta { .. })
}

/// Builds a row from a point estimate and bootstrap replicates of the same quantity.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_row(
    key: &EffectKey,
    scale: Scale,
    method: Method,
    point: f64,
    boot: &BootstrapResult,
    kind: InferenceKind,
    level: f64,
    seed: u64,
) -> EstimateResult {
    let b = boot.replicates.len() + boot.failed;
    let (se, ci) = if on_log_scale(key, scale) {
        let logs: Vec<f64> = boot.replicates.iter().map(|v| v.ln()).collect();
        let se_log = sample_sd(&logs);
        let ci = match kind {
            InferenceKind::BootstrapPercentile => boot.ci,
            _ => {
                let (lo, hi) = wald_interval(point.ln(), se_log, level);
                (lo.exp(), hi.exp())
            }
        };
        (se_log * point, ci)
    } else {
        let ci = match kind {
            InferenceKind::BootstrapPercentile => boot.ci,
            _ => wald_interval(point, boot.se, level),
        };
        (boot.se, ci)
    };
    EstimateResult {
        estimand: key.estimand.name(),
        stratum: key.stratum_label(),
        scale: scale_label(key, scale).to_string(),
        method,
        point,
        se,
        ci_low: ci.0,
        ci_high: ci.1,
        inference: kind,
        b_or_v: b,
        seed,
    }
}

/// Builds a Wald row from a point estimate and its influence function values.
pub fn eif_row(key: &EffectKey, scale: Scale, point: f64, influence: &[f64], level: f64, folds: usize, seed: u64) -> EstimateResult {
    let n = influence.len() as f64;
    let se_if = (influence.iter().map(|v| v * v).sum::<f64>() / n / n).sqrt();
    let (se, ci) = if on_log_scale(key, scale) {
        let (lo, hi) = wald_interval(point.ln(), se_if, level);
        (se_if * point, (lo.exp(), hi.exp()))
    } else {
        (se_if, wald_interval(point, se_if, level))
    };
    EstimateResult {
        estimand: key.estimand.name(),
        stratum: key.stratum_label(),
        scale: scale_label(key, scale).to_string(),
        method: Method::Np,
        point,
        se,
        ci_low: ci.0,
        ci_high: ci.1,
        inference: InferenceKind::EifWald,
        b_or_v: folds,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub methods: Vec<Method>,
    pub scales: Vec<Scale>,
    pub model: ModelSpec,
    pub learner: LearnerSpec,
    pub folds: usize,
    pub bootstrap: usize,
    /// Interval type for bootstrapped methods.
    pub interval: InferenceKind,
    pub level: f64,
    pub seed: u64,
    pub positivity: Positivity,
}

impl AnalysisOptions {
    pub fn new(data: &Dataset) -> AnalysisOptions {
        AnalysisOptions {
            methods: vec![Method::Mr],
            scales: vec![Scale::Difference],
            model: ModelSpec::all_covariates(data),
            learner: LearnerSpec::default(),
            folds: 5,
            bootstrap: 1000,
            interval: InferenceKind::BootstrapPercentile,
            level: 0.95,
            seed: 1,
            positivity: Positivity::default(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.methods.is_empty() || self.scales.is_empty() {
            return Err(Error::Config("at least one method and one scale are required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", self.level)));
        }
        if self.interval == InferenceKind::EifWald {
            return Err(Error::Config("bootstrapped methods need a bootstrap interval".into()));
        }
        if self.bootstrap > 0 && self.bootstrap < MIN_REPLICATES {
            return Err(Error::Config(format!("bootstrap must be 0 or at least {MIN_REPLICATES}")));
        }
        Ok(())
    }
}

/// Numerical facts about one analysis run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub clipped: usize,
    pub clamped_scores: usize,
    pub fits: Vec<(String, FitSummary)>,
    pub fold_plan_digest: Option<String>,
    pub fold_selections: Vec<Vec<(String, String)>>,
    pub failed_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub results: Vec<EstimateResult>,
    pub diagnostics: Diagnostics,
}

type Values = Vec<(Method, Scale, EffectKey, f64)>;

/// Point estimates of every estimand for the parametric methods on one bundle,
/// ordered by method, then scale, then key.
fn parametric_values(data: &Dataset, opts: &AnalysisOptions, methods: &[Method]) -> Result<(Values, Adjustments)> {
    let bundle = fit_parametric_bundle(data, &opts.model)?;
    let mut out = Vec::new();
    let mut adj = Adjustments::default();
    for &method in methods {
        let thetas = estimate_thetas(data, &bundle, method, &opts.positivity)?;
        for (si, &scale) in opts.scales.iter().enumerate() {
            let effects = assemble_effects(&thetas, scale)?;
            for (key, v) in flatten(&thetas, &effects) {
                let is_theta = matches!(key.estimand, crate::estimators::Estimand::Theta { .. });
                if is_theta && si > 0 {
                    continue;
                }
                out.push((method, scale, key, v));
            }
        }
    }
    if methods.contains(&Method::Mr) {
        adj = crate::estimators::EifTable::compute(data, &bundle, &opts.positivity)?.adjustments;
    }
    Ok((out, adj))
}

/// Estimates every stratum and population effect with each requested method.
pub fn analyze(data: &Dataset, opts: &AnalysisOptions) -> Result<Analysis> {
    opts.check()?;
    let mut results = Vec::new();
    let mut diag = Diagnostics::default();

    let parametric: Vec<Method> = opts.methods.iter().copied().filter(|m| *m != Method::Np).collect();
    if !parametric.is_empty() {
        let bundle = fit_parametric_bundle(data, &opts.model)?;
        diag.fits = bundle.fit_summaries().to_vec();
        let (points, adj) = parametric_values(data, opts, &parametric)?;
        diag.clipped += adj.clipped;
        diag.clamped_scores += adj.clamped_scores;
        if opts.bootstrap == 0 {
            for (method, scale, key, v) in points {
                results.push(EstimateResult {
                    estimand: key.estimand.name(),
                    stratum: key.stratum_label(),
                    scale: scale_label(&key, scale).to_string(),
                    method,
                    point: v,
                    se: f64::NAN,
                    ci_low: f64::NAN,
                    ci_high: f64::NAN,
                    inference: opts.interval,
                    b_or_v: 0,
                    seed: opts.seed,
                });
            }
        } else {
            let boots = bootstrap_multi(
                data,
                |d| Ok(parametric_values(d, opts, &parametric)?.0.into_iter().map(|t| t.3).collect()),
                points.len(),
                opts.bootstrap,
                opts.seed,
                opts.level,
            )?;
            for ((method, scale, key, v), boot) in points.iter().zip(boots) {
                let boot = boot?;
                diag.failed_replicates = diag.failed_replicates.max(boot.failed);
                results.push(bootstrap_row(key, *scale, *method, *v, &boot, opts.interval, opts.level, opts.seed));
            }
        }
    }

    if opts.methods.contains(&Method::Np) {
        let plan = partition(data.n(), opts.folds, opts.seed)?;
        diag.fold_plan_digest = Some(plan.digest());
        let cf = CrossFit::fit(data, plan, &opts.learner, &opts.model)?;
        diag.fold_selections = cf.selections();
        let table = cf.eif_table(data, &opts.positivity)?;
        diag.clipped += table.adjustments.clipped;
        diag.clamped_scores += table.adjustments.clamped_scores;
        for (si, &scale) in opts.scales.iter().enumerate() {
            for (key, point, inf) in table.influence(data, scale)? {
                let is_theta = matches!(key.estimand, crate::estimators::Estimand::Theta { .. });
                if is_theta && si > 0 {
                    continue;
                }
                results.push(eif_row(&key, scale, point, &inf, opts.level, opts.folds, opts.seed));
            }
        }
    }
    Ok(Analysis {
        results,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MediatorKind, Monotonicity};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn wald_reference_values() {
        let (lo, hi) = wald_interval(0.0, 1.0, 0.95);
        assert!((hi - 1.959963984540054).abs() < 1e-9 && (lo + hi).abs() < 1e-15);
        let (lo, hi) = wald_interval(2.0, 1.0, 0.5);
        assert!((hi - 2.0 - 0.6744897501960817).abs() < 1e-9 && (2.0 - lo - 0.6744897501960817).abs() < 1e-9);
        assert_eq!(wald_interval(1.5, 0.0, 0.95), (1.5, 1.5));
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile_interval(&v, 0.95), (3.0, 98.0));
        assert_eq!(percentile_interval(&v, 0.9), (5.0, 95.0));
    }

    fn normal_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let d: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        Dataset::new(vec![0.0; n], 1, z, d, vec![0.0; n], y, MediatorKind::Binary, Monotonicity::Standard).unwrap()
    }

    #[test]
    fn sample_mean_standard_error() {
        let data = normal_data(400, 3);
        let mean = |d: &Dataset| Ok(d.y().iter().sum::<f64>() / d.n() as f64);
        let r = bootstrap(&data, mean, 1000, 11, 0.95).unwrap();
        assert!((r.se - 0.05).abs() < 0.15 * 0.05, "{}", r.se);
        let again = bootstrap(&data, mean, 1000, 11, 0.95).unwrap();
        assert_eq!(r.replicates, again.replicates);
    }

    #[test]
    fn constant_estimator_has_zero_spread() {
        let data = normal_data(50, 1);
        let r = bootstrap(&data, |_| Ok(2.5), 60, 0, 0.95).unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!(r.ci, (2.5, 2.5));
    }

    #[test]
    fn failures_above_five_percent_abort() {
        let data = normal_data(50, 1);
        let flaky = |d: &Dataset| {
            if d.y()[0] > 1.0 {
                Err(Error::DivisionByZero("test".into()))
            } else {
                Ok(1.0)
            }
        };
        assert!(matches!(bootstrap(&data, flaky, 200, 5, 0.95), Err(Error::TooManyFailedReplicates { .. })));
        assert!(bootstrap(&data, |_| Ok(0.0), 10, 5, 0.95).is_err());
    }
}
