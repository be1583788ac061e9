//! Cross-fitting: fold plans, built-in learners with discrete cross-validated
//! selection, and the nonparametric efficient estimator.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{eif_components, Adjustments, EifComponents, EifTable};
use crate::glm::{fit_linear, fit_logistic, Design};
use crate::model::{strata_for_mode, Dataset, TargetIndex};
use crate::nuisance::{
    fit_bundle_with, ComponentFitter, FeatureRow, FitSummary, FittedModel, ModelSpec, Nuisance, NuisanceBundle, Positivity,
    Provenance, Task,
};
use crate::numeric::{expit, logit};

/// Assignment of units to folds `1..=v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub assignments: Vec<usize>,
    pub v: usize,
    pub seed: u64,
}

/// Seeded shuffle followed by round-robin assignment.
pub fn partition(n: usize, v: usize, seed: u64) -> Result<FoldPlan> {
    if v < 2 || v > n {
        return Err(Error::BadFoldCount { n, v });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        assignments[i] = k % v + 1;
    }
    Ok(FoldPlan { assignments, v, seed })
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Rows in fold `fold`.
    pub fn rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == fold).collect()
    }

    /// Rows outside fold `fold`.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.v];
        for &a in &self.assignments {
            s[a - 1] += 1;
        }
        s
    }

    /// Hex SHA-256 of the assignment vector.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.v as u64).to_le_bytes());
        for &a in &self.assignments {
            h.update((a as u32).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Candidate {
    GlmBaseline,
    /// Gradient-boosted depth-1 trees.
    BoostedStumps { trees: usize, shrinkage: f64 },
    KNearest { k: usize },
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::GlmBaseline => write!(f, "glm"),
            Candidate::BoostedStumps { trees, shrinkage } => write!(f, "stumps({trees},{shrinkage})"),
            Candidate::KNearest { k } => write!(f, "knn({k})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    DiscreteCvBest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub candidates: Vec<Candidate>,
    pub selection: Selection,
    /// Folds of the inner selection split.
    pub inner_folds: usize,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            candidates: vec![
                Candidate::GlmBaseline,
                Candidate::BoostedStumps {
                    trees: 200,
                    shrinkage: 0.1,
                },
            ],
            selection: Selection::DiscreteCvBest,
            inner_folds: 5,
        }
    }
}

impl LearnerSpec {
    pub fn glm_only() -> LearnerSpec {
        LearnerSpec {
            candidates: vec![Candidate::GlmBaseline],
            ..LearnerSpec::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("learner list is empty".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config("inner_folds must be at least 2".into()));
        }
        for c in &self.candidates {
            match *c {
                Candidate::BoostedStumps { trees, shrinkage } if trees == 0 || !(shrinkage > 0.0 && shrinkage <= 1.0) => {
                    return Err(Error::Config(format!("invalid learner {c}")));
                }
                Candidate::KNearest { k: 0 } => return Err(Error::Config("knn needs k >= 1".into())),
                _ => {}
            }
        }
        Ok(())
    }
}

/// Depth-1 regression tree on one feature.
#[derive(Debug, Clone, Copy)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

#[derive(Debug)]
struct BoostedModel {
    init: f64,
    stumps: Vec<Stump>,
    task: Task,
    label: String,
}

impl BoostedModel {
    fn score(&self, get: impl Fn(usize) -> f64) -> f64 {
        let mut f = self.init;
        for s in &self.stumps {
            f += if get(s.feature) <= s.threshold { s.left } else { s.right };
        }
        f
    }
}

impl FittedModel for BoostedModel {
    fn predict(&self, row: &FeatureRow<'_>) -> f64 {
        let f = self.score(|j| row.get(j));
        match self.task {
            Task::Classification => expit(f),
            Task::Regression => f,
        }
    }

    fn summary(&self) -> FitSummary {
        FitSummary {
            learner: self.label.clone(),
            converged: true,
            separation: false,
        }
    }
}

/// Sorted row order and split candidates of one feature.
struct FeatureIndex {
    order: Vec<usize>,
    /// Positions `k` in `order` after which a split is possible, with the threshold.
    cuts: Vec<(usize, f64)>,
}

fn index_features(design: &Design) -> Vec<FeatureIndex> {
    let n = design.nrows();
    (0..design.ncols())
        .map(|j| {
            let col = |i: usize| design.row(i)[j];
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| col(a).total_cmp(&col(b)));
            let mut cuts = Vec::new();
            for k in 0..n.saturating_sub(1) {
                let (a, b) = (col(order[k]), col(order[k + 1]));
                if a < b {
                    cuts.push((k, 0.5 * (a + b)));
                }
            }
            FeatureIndex { order, cuts }
        })
        .collect()
}

fn fit_boosted(design: &Design, y: &[f64], task: Task, trees: usize, shrinkage: f64) -> Result<BoostedModel> {
    let n = design.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no rows to fit".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let init = match task {
        Task::Classification => logit(mean.clamp(1e-6, 1.0 - 1e-6)),
        Task::Regression => mean,
    };
    let index = index_features(design);
    let mut f = vec![init; n];
    let mut stumps = Vec::with_capacity(trees);
    let mut g = vec![0.0; n];
    let mut h = vec![1.0; n];
    for _ in 0..trees {
        for i in 0..n {
            match task {
                Task::Classification => {
                    let p = expit(f[i]);
                    g[i] = y[i] - p;
                    h[i] = (p * (1.0 - p)).max(1e-12);
                }
                Task::Regression => g[i] = y[i] - f[i],
            }
        }
        let g_total: f64 = g.iter().sum();
        let h_total: f64 = h.iter().sum();
        // Split maximising the second-order gain sum_leaf G^2 / H.
        let mut best: Option<(f64, Stump)> = None;
        for (j, fi) in index.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut next = 0;
            for &(k, thr) in &fi.cuts {
                while next <= k {
                    let i = fi.order[next];
                    gl += g[i];
                    hl += h[i];
                    next += 1;
                }
                let (gr, hr) = (g_total - gl, h_total - hl);
                if hl <= 1e-12 || hr <= 1e-12 {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr;
                if best.as_ref().is_none_or(|(b, _)| gain > *b) {
                    best = Some((
                        gain,
                        Stump {
                            feature: j,
                            threshold: thr,
                            left: gl / hl,
                            right: gr / hr,
                        },
                    ));
                }
            }
        }
        let Some((_, mut s)) = best else { break };
        s.left *= shrinkage;
        s.right *= shrinkage;
        for (i, fv) in f.iter_mut().enumerate() {
            *fv += if design.row(i)[s.feature] <= s.threshold { s.left } else { s.right };
        }
        stumps.push(s);
    }
    Ok(BoostedModel {
        init,
        stumps,
        task,
        label: format!("stumps({trees},{shrinkage})"),
    })
}

#[derive(Debug)]
struct KnnModel {
    k: usize,
    rows: Vec<f64>,
    q: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    y: Vec<f64>,
    task: Task,
}

impl FittedModel for KnnModel {
    fn predict(&self, row: &FeatureRow<'_>) -> f64 {
        let q = self.q;
        let z: Vec<f64> = (0..q).map(|j| (row.get(j) - self.center[j]) / self.scale[j]).collect();
        let mut dist: Vec<(f64, usize)> = (0..self.y.len())
            .map(|i| {
                let r = &self.rows[i * q..(i + 1) * q];
                (r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum(), i)
            })
            .collect();
        let k = self.k.min(dist.len());
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let s: f64 = dist[..k].iter().map(|(_, i)| self.y[*i]).sum();
        match self.task {
            // Smoothed towards one half so no prediction is exactly 0 or 1.
            Task::Classification => (s + 0.5) / (k as f64 + 1.0),
            Task::Regression => s / k as f64,
        }
    }

    fn summary(&self) -> FitSummary {
        FitSummary {
            learner: format!("knn({})", self.k),
            converged: true,
            separation: false,
        }
    }
}

fn fit_knn(design: &Design, y: &[f64], task: Task, k: usize) -> Result<KnnModel> {
    let (n, q) = (design.nrows(), design.ncols());
    if n == 0 {
        return Err(Error::InvalidArgument("no rows to fit".into()));
    }
    let mut center = vec![0.0; q];
    let mut scale = vec![0.0; q];
    for j in 0..q {
        let col: Vec<f64> = (0..n).map(|i| design.row(i)[j]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n as f64;
        center[j] = m;
        scale[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    let mut rows = Vec::with_capacity(n * q);
    for i in 0..n {
        for j in 0..q {
            rows.push((design.row(i)[j] - center[j]) / scale[j]);
        }
    }
    Ok(KnnModel {
        k,
        rows,
        q,
        center,
        scale,
        y: y.to_vec(),
        task,
    })
}

fn fit_candidate(c: &Candidate, design: &Design, y: &[f64], task: Task) -> Result<Box<dyn FittedModel>> {
    Ok(match *c {
        Candidate::GlmBaseline => Box::new(match task {
            Task::Classification => fit_logistic(design, y, None)?,
            Task::Regression => fit_linear(design, y)?,
        }),
        Candidate::BoostedStumps { trees, shrinkage } => Box::new(fit_boosted(design, y, task, trees, shrinkage)?),
        Candidate::KNearest { k } => Box::new(fit_knn(design, y, task, k)?),
    })
}

fn loss(task: Task, y: f64, pred: f64) -> f64 {
    match task {
        Task::Classification => {
            let p = pred.clamp(1e-12, 1.0 - 1e-12);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
        Task::Regression => (y - pred) * (y - pred),
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Fits every component by the candidate with the smallest inner cross-validated loss.
pub struct CvSelector<'a> {
    pub spec: &'a LearnerSpec,
    pub seed: u64,
}

impl CvSelector<'_> {
    /// Mean held-out loss of each candidate; `inf` for candidates that fail.
    pub fn cv_losses(&self, name: &str, design: &Design, y: &[f64], task: Task) -> Vec<f64> {
        let n = design.nrows();
        let folds = self.spec.inner_folds.min(n);
        let plan = match partition(n, folds, self.seed ^ name_hash(name)) {
            Ok(p) => p,
            Err(_) => return vec![f64::INFINITY; self.spec.candidates.len()],
        };
        let splits: Vec<(Design, Vec<f64>, Vec<usize>)> = (1..=folds)
            .map(|f| {
                let train = plan.training_rows(f);
                let d = Design::from_rows(&train.iter().map(|&i| design.row(i).to_vec()).collect::<Vec<_>>())
                    .expect("rows share a width");
                let yt = train.iter().map(|&i| y[i]).collect();
                (d, yt, plan.rows(f))
            })
            .collect();
        self.spec
            .candidates
            .iter()
            .map(|c| {
                let mut total = 0.0;
                for (d, yt, test) in &splits {
                    let Ok(model) = fit_candidate(c, d, yt, task) else {
                        return f64::INFINITY;
                    };
                    for &i in test {
                        let row = design.row(i);
                        let fr = FeatureRow::from_design_row(row);
                        total += loss(task, y[i], model.predict(&fr));
                    }
                }
                let v = total / n as f64;
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

impl ComponentFitter for CvSelector<'_> {
    fn fit(&self, name: &str, design: &Design, y: &[f64], task: Task) -> Result<Box<dyn FittedModel>> {
        let cands = &self.spec.candidates;
        if cands.len() == 1 {
            return fit_candidate(&cands[0], design, y, task);
        }
        let losses = self.cv_losses(name, design, y, task);
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
        let mut last = None;
        for &c in &order {
            match fit_candidate(&cands[c], design, y, task) {
                Ok(m) => return Ok(m),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one candidate"))
    }
}

/// Nuisances fitted on every row outside fold `v`.
pub fn fit_fold_bundle(data: &Dataset, plan: &FoldPlan, v: usize, learner: &LearnerSpec, model: &ModelSpec) -> Result<NuisanceBundle> {
    learner.check()?;
    if plan.n() != data.n() {
        return Err(Error::LengthMismatch("fold plan".into()));
    }
    if !data.mediator_kind().is_discrete() {
        return Err(Error::UnsupportedMediator("cross-fitted learners need a discrete mediator".into()));
    }
    if v == 0 || v > plan.v {
        return Err(Error::InvalidArgument(format!("fold {v} outside 1..={}", plan.v)));
    }
    let train = data.subset(&plan.training_rows(v));
    let selector = CvSelector {
        spec: learner,
        seed: plan.seed.wrapping_add(v as u64),
    };
    fit_bundle_with(&train, model, &selector, Provenance::Learner { fold: v })
}

/// Out-of-fold bundles for every fold of a plan.
#[derive(Debug)]
pub struct CrossFit {
    pub plan: FoldPlan,
    bundles: Vec<NuisanceBundle>,
    held_out: Vec<(Vec<usize>, Dataset)>,
}

impl CrossFit {
    pub fn fit(data: &Dataset, plan: FoldPlan, learner: &LearnerSpec, model: &ModelSpec) -> Result<CrossFit> {
        let bundles = (1..=plan.v)
            .into_par_iter()
            .map(|v| fit_fold_bundle(data, &plan, v, learner, model))
            .collect::<Result<Vec<_>>>()?;
        let held_out = (1..=plan.v)
            .map(|v| {
                let rows = plan.rows(v);
                let d = data.subset(&rows);
                (rows, d)
            })
            .collect();
        Ok(CrossFit { plan, bundles, held_out })
    }

    pub fn bundles(&self) -> &[NuisanceBundle] {
        &self.bundles
    }

    /// Per-unit pieces with each unit evaluated under the bundle that never saw it.
    pub fn components_with(
        &self,
        data: &Dataset,
        target: &TargetIndex,
        f: impl Fn(&Dataset, &dyn Nuisance, &TargetIndex) -> Result<EifComponents>,
    ) -> Result<EifComponents> {
        let n = data.n();
        let mut psi = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let mut adjustments = Adjustments::default();
        for (v, ((rows, fold_data), bundle)) in self.held_out.iter().zip(&self.bundles).enumerate() {
            debug_assert_eq!(bundle.provenance(), &Provenance::Learner { fold: v + 1 });
            debug_assert!(rows.iter().all(|&i| self.plan.assignments[i] == v + 1));
            let c = f(fold_data, bundle, target)?;
            for (k, &i) in rows.iter().enumerate() {
                psi[i] = c.psi[k];
                delta[i] = c.delta[k];
            }
            adjustments += c.adjustments;
        }
        Ok(EifComponents {
            target: *target,
            psi,
            delta,
            adjustments,
        })
    }

    pub fn components(&self, data: &Dataset, target: &TargetIndex, pos: &Positivity) -> Result<EifComponents> {
        self.components_with(data, target, |d, b, t| eif_components(d, b, t, pos))
    }

    pub fn eif_table(&self, data: &Dataset, pos: &Positivity) -> Result<EifTable> {
        let comps = strata_for_mode(data.monotonicity())
            .into_iter()
            .flat_map(TargetIndex::effect_targets)
            .map(|t| self.components(data, &t, pos))
            .collect::<Result<Vec<_>>>()?;
        Ok(EifTable::from_components(data.monotonicity(), comps))
    }

    /// `(component, learner)` picked per fold.
    pub fn selections(&self) -> Vec<Vec<(String, String)>> {
        self.bundles
            .iter()
            .map(|b| b.fit_summaries().iter().map(|(n, s)| (n.clone(), s.learner.clone())).collect())
            .collect()
    }
}

/// Point estimate and EIF-based variance from stitched components.
pub fn np_estimate(data: &Dataset, c: &EifComponents) -> Result<(f64, f64)> {
    let theta = c.ratio(data)?;
    let e = data.mean(&c.delta);
    let sq: Vec<f64> = c
        .psi
        .iter()
        .zip(&c.delta)
        .map(|(p, d)| {
            let v = (p - theta * d) / e;
            v * v
        })
        .collect();
    Ok((theta, data.mean(&sq) / data.n() as f64))
}

/// Cross-fitted estimate of `theta` and its variance.
pub fn theta_np(
    data: &Dataset,
    plan: &FoldPlan,
    learner: &LearnerSpec,
    model: &ModelSpec,
    target: &TargetIndex,
    pos: &Positivity,
) -> Result<(f64, f64)> {
    let cf = CrossFit::fit(data, plan.clone(), learner, model)?;
    np_estimate(data, &cf.components(data, target, pos)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_balance() {
        let p = partition(10, 5, 1).unwrap();
        assert_eq!(p.sizes(), vec![2; 5]);
        let p = partition(11, 5, 1).unwrap();
        let mut s = p.sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 2, 2, 3]);
        assert_eq!(partition(11, 5, 1).unwrap(), p);
        assert_ne!(partition(11, 5, 2).unwrap().assignments, p.assignments);
        assert!(matches!(partition(3, 4, 0), Err(Error::BadFoldCount { .. })));
        assert!(matches!(partition(3, 1, 0), Err(Error::BadFoldCount { .. })));
    }

    #[test]
    fn stumps_find_a_step() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.37 { 3.0 } else { -1.0 }).collect();
        let d = Design::from_rows(&x).unwrap();
        let m = fit_boosted(&d, &y, Task::Regression, 100, 0.3).unwrap();
        let lo = m.score(|_| 0.1);
        let hi = m.score(|_| 0.9);
        assert!((lo + 1.0).abs() < 1e-3 && (hi - 3.0).abs() < 1e-3, "{lo} {hi}");
        assert!((m.stumps[0].threshold - 0.3725).abs() < 1e-9);
    }

    #[test]
    fn boosted_classifier_tracks_frequencies() {
        let x: Vec<Vec<f64>> = (0..400).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<f64> = (0..400).map(|i| if i % 2 == 1 { (i % 8 != 1) as u8 as f64 } else { (i % 8 == 0) as u8 as f64 }).collect();
        let d = Design::from_rows(&x).unwrap();
        let m = fit_boosted(&d, &y, Task::Classification, 200, 0.1).unwrap();
        assert!((expit(m.score(|_| 1.0)) - 0.75).abs() < 1e-3);
        assert!((expit(m.score(|_| 0.0)) - 0.25).abs() < 1e-3);
    }

    #[test]
    fn knn_averages_neighbours() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = Design::from_rows(&x).unwrap();
        let m = fit_knn(&d, &y, Task::Regression, 3).unwrap();
        let row = [4.1];
        assert!((m.predict(&FeatureRow::from_design_row(&row)) - 4.0).abs() < 1e-12);
    }
}
