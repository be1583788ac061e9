//! Exact enumeration over finite discrete data-generating processes.
//!
//! A [`DiscreteDgp`] fixes every observed-data law on a finite covariate
//! support. Population values of the estimators are obtained either by
//! direct summation here, or by running the library estimators on the
//! weighted lattice returned by [`DiscreteDgp::lattice`] with a
//! [`TableNuisance`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{eif_components, theta_moment, theta_mr, MomentForm};
use crate::model::{strata_for_mode, Dataset, MediatorKind, Monotonicity, Stratum, TargetIndex};
use crate::nuisance::{p_marginal_dr, Nuisance, Positivity};
use crate::sensitivity::{theta_mr_t, theta_mr_xi, TSpec, XiSpec};

const PMF_TOLERANCE: f64 = 1e-12;

/// Observed-data laws at one covariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpPoint {
    pub x: Vec<f64>,
    pub prob: f64,
    /// `P(Z = 1 | x)`.
    pub pi1: f64,
    /// `P(D = 1 | Z = z, x)` indexed by `z`.
    pub p1: [f64; 2],
    /// Mediator pmf `r[z][d][m]`.
    pub r: [[Vec<f64>; 2]; 2],
    /// Outcome mean `mu[z][d][m]`.
    pub mu: [[Vec<f64>; 2]; 2],
}

impl DgpPoint {
    #[inline]
    pub fn pi(&self, z: u8) -> f64 {
        if z == 1 {
            self.pi1
        } else {
            1.0 - self.pi1
        }
    }

    #[inline]
    pub fn p(&self, z: u8, d: u8) -> f64 {
        let p1 = self.p1[z as usize];
        if d == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    #[inline]
    pub fn r(&self, z: u8, d: u8, m: usize) -> f64 {
        self.r[z as usize][d as usize][m]
    }

    #[inline]
    pub fn mu(&self, z: u8, d: u8, m: usize) -> f64 {
        self.mu[z as usize][d as usize][m]
    }

    fn score(&self, s: Stratum) -> f64 {
        let (zs, ds) = s.companion();
        self.p(zs, ds) - s.k() * self.p(0, 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldenQuantity {
    Theta,
    Proportion,
}

/// Independently derived reference value stored with a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenValue {
    pub quantity: GoldenQuantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_prime: Option<u8>,
    pub stratum: Stratum,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteDgp {
    pub name: String,
    pub version: u32,
    pub monotonicity: Monotonicity,
    pub mediator_levels: usize,
    pub points: Vec<DgpPoint>,
    #[serde(default)]
    pub golden: Vec<GoldenValue>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidDgp(msg.into())
}

impl DiscreteDgp {
    pub fn from_json(text: &str) -> Result<DiscreteDgp> {
        let dgp: DiscreteDgp = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        dgp.validate()?;
        Ok(dgp)
    }

    pub fn load(path: &Path) -> Result<DiscreteDgp> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serialises")
    }

    pub fn mediator_kind(&self) -> MediatorKind {
        if self.mediator_levels == 2 {
            MediatorKind::Binary
        } else {
            MediatorKind::Categorical(self.mediator_levels as u32 - 1)
        }
    }

    /// Whether the `(z, d)` cell has positive probability somewhere.
    fn cell_used(&self, z: u8, d: u8) -> bool {
        self.points.iter().any(|pt| pt.p(z, d) > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.mediator_levels;
        if levels < 2 {
            return Err(invalid("mediator needs at least two levels"));
        }
        if self.points.is_empty() {
            return Err(invalid("empty covariate support"));
        }
        let dim = self.points[0].x.len();
        if dim == 0 {
            return Err(invalid("covariate points need at least one coordinate"));
        }
        let total: f64 = self.points.iter().map(|pt| pt.prob).sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(invalid(format!("covariate probabilities sum to {total}")));
        }
        for (i, pt) in self.points.iter().enumerate() {
            if pt.x.len() != dim || pt.x.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("point {i}: malformed covariate vector")));
            }
            if self.points[..i].iter().any(|q| q.x == pt.x) {
                return Err(invalid(format!("point {i}: duplicate covariate vector")));
            }
            if !(pt.prob > 0.0) {
                return Err(invalid(format!("point {i}: probability must be positive")));
            }
            if !(pt.pi1 > 0.0 && pt.pi1 < 1.0) {
                return Err(invalid(format!("point {i}: treatment probability {} outside (0, 1)", pt.pi1)));
            }
            for z in 0..2 {
                if !(0.0..=1.0).contains(&pt.p1[z]) {
                    return Err(invalid(format!("point {i}: event probability outside [0, 1]")));
                }
            }
            match self.monotonicity {
                Monotonicity::Standard if pt.p1[1] < pt.p1[0] => {
                    return Err(invalid(format!(
                        "point {i}: P(D=1|Z=1) = {} is below P(D=1|Z=0) = {}",
                        pt.p1[1], pt.p1[0]
                    )));
                }
                Monotonicity::Strong if pt.p1[0] != 0.0 => {
                    return Err(invalid(format!("point {i}: strong monotonicity needs P(D=1|Z=0) = 0")));
                }
                _ => {}
            }
            for z in 0..2u8 {
                for d in 0..2u8 {
                    let r = &pt.r[z as usize][d as usize];
                    let mu = &pt.mu[z as usize][d as usize];
                    if r.len() != levels || mu.len() != levels {
                        return Err(invalid(format!("point {i}: table (z={z}, d={d}) needs {levels} entries")));
                    }
                    if mu.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(format!("point {i}: non-finite outcome mean")));
                    }
                    if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        return Err(invalid(format!("point {i}: negative mediator probability")));
                    }
                    let sum: f64 = r.iter().sum();
                    if (sum - 1.0).abs() > PMF_TOLERANCE {
                        return Err(invalid(format!("point {i}: mediator pmf (z={z}, d={d}) sums to {sum}")));
                    }
                    if pt.p(z, d) > 0.0 && r.iter().any(|v| *v <= 0.0) {
                        return Err(invalid(format!("point {i}: mediator pmf (z={z}, d={d}) has empty levels")));
                    }
                }
            }
        }
        for (z, d) in crate::model::required_cells(self.monotonicity) {
            if !self.cell_used(z, d) {
                return Err(invalid(format!("cell (z={z}, d={d}) has probability zero")));
            }
        }
        for s in strata_for_mode(self.monotonicity) {
            if !(self.proportion(s) > 0.0) {
                return Err(invalid(format!("stratum {s} has probability zero")));
            }
        }
        Ok(())
    }

    fn proportion(&self, s: Stratum) -> f64 {
        self.points.iter().map(|pt| pt.prob * pt.score(s)).sum()
    }

    pub fn point_index(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|pt| pt.x == x)
    }

    /// Every `(x, z, d, m)` cell with positive probability, weighted by that probability,
    /// with the outcome set to its conditional mean.
    pub fn lattice(&self) -> Result<Dataset> {
        let dim = self.points[0].x.len();
        let (mut x, mut z, mut d, mut m, mut y, mut w) = (vec![], vec![], vec![], vec![], vec![], vec![]);
        for pt in &self.points {
            for zz in 0..2u8 {
                for dd in 0..2u8 {
                    for mm in 0..self.mediator_levels {
                        let weight = pt.prob * pt.pi(zz) * pt.p(zz, dd) * pt.r(zz, dd, mm);
                        if weight <= 0.0 {
                            continue;
                        }
                        x.extend_from_slice(&pt.x);
                        z.push(zz);
                        d.push(dd);
                        m.push(mm as f64);
                        y.push(pt.mu(zz, dd, mm));
                        w.push(weight);
                    }
                }
            }
        }
        Dataset::new(x, dim, z, d, m, y, self.mediator_kind(), self.monotonicity)?.with_weights(w)
    }

    /// Copy whose tables are replaced by deliberately wrong working models.
    pub fn perturbed(&self, which: Perturbation) -> DiscreteDgp {
        let mut out = self.clone();
        out.golden.clear();
        let levels = self.mediator_levels;
        for pt in &mut out.points {
            if which.pi {
                pt.pi1 = 0.25 + 0.5 * (1.0 - pt.pi1);
            }
            if which.p {
                for z in 0..2 {
                    if !(z == 0 && self.monotonicity == Monotonicity::Strong) {
                        pt.p1[z] = 0.5 * pt.p1[z] + 0.25;
                    }
                }
            }
            if which.r {
                for row in pt.r.iter_mut().flatten() {
                    let rev: Vec<f64> = row.iter().rev().copied().collect();
                    for (v, rv) in row.iter_mut().zip(rev) {
                        *v = 0.6 * rv + 0.4 / levels as f64;
                    }
                }
            }
            if which.mu {
                for row in pt.mu.iter_mut().flatten() {
                    for (m, v) in row.iter_mut().enumerate() {
                        *v = 1.5 * *v - 0.7 + 0.3 * m as f64;
                    }
                }
            }
        }
        out
    }

    pub fn nuisance(&self) -> TableNuisance {
        TableNuisance { dgp: self.clone() }
    }
}

/// Which working nuisance models are wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub pi: bool,
    pub p: bool,
    pub r: bool,
    pub mu: bool,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation {
        pi: false,
        p: false,
        r: false,
        mu: false,
    };
    pub const PI: Perturbation = Perturbation { pi: true, ..Self::NONE };
    pub const P: Perturbation = Perturbation { p: true, ..Self::NONE };
    pub const R: Perturbation = Perturbation { r: true, ..Self::NONE };
    pub const MU: Perturbation = Perturbation { mu: true, ..Self::NONE };

    pub fn label(&self) -> &'static str {
        match (self.pi, self.p, self.r, self.mu) {
            (false, false, false, false) => "all correct",
            (true, false, false, false) => "wrong pi",
            (false, true, false, false) => "wrong p",
            (false, false, true, false) => "wrong r",
            (false, false, false, true) => "wrong mu",
            _ => "several wrong",
        }
    }
}

/// The single perturbation each moment form tolerates.
pub fn licensed_perturbation(form: MomentForm) -> Perturbation {
    match form {
        MomentForm::A => Perturbation::MU,
        MomentForm::B => Perturbation::P,
        MomentForm::C => Perturbation::R,
        MomentForm::D => Perturbation::PI,
    }
}

/// Nuisance functions read from the tables of a discrete DGP; unknown covariate rows give NaN.
#[derive(Debug, Clone)]
pub struct TableNuisance {
    dgp: DiscreteDgp,
}

impl TableNuisance {
    fn point(&self, x: &[f64]) -> Option<&DgpPoint> {
        self.dgp.points.iter().find(|pt| pt.x == x)
    }
}

impl Nuisance for TableNuisance {
    fn mediator_kind(&self) -> MediatorKind {
        self.dgp.mediator_kind()
    }

    fn monotonicity(&self) -> Monotonicity {
        self.dgp.monotonicity
    }

    fn pi(&self, z: u8, x: &[f64]) -> f64 {
        self.point(x).map_or(f64::NAN, |pt| pt.pi(z))
    }

    fn p(&self, z: u8, d: u8, x: &[f64]) -> f64 {
        self.point(x).map_or(f64::NAN, |pt| pt.p(z, d))
    }

    fn r(&self, z: u8, d: u8, m: f64, x: &[f64]) -> f64 {
        let m = m as usize;
        match self.point(x) {
            Some(pt) if m < self.dgp.mediator_levels => pt.r(z, d, m),
            Some(_) => 0.0,
            None => f64::NAN,
        }
    }

    fn mu(&self, z: u8, d: u8, m: f64, x: &[f64]) -> f64 {
        let m = m as usize;
        match self.point(x) {
            Some(pt) if m < self.dgp.mediator_levels => pt.mu(z, d, m),
            _ => f64::NAN,
        }
    }
}

fn check_target(dgp: &DiscreteDgp, target: &TargetIndex) -> Result<()> {
    if target.z == 0 && target.z_prime == 1 {
        return Err(Error::UnsupportedTarget { z: 0, z_prime: 1 });
    }
    if !target.stratum.admissible(dgp.monotonicity) {
        return Err(Error::InadmissibleStratum(target.stratum.label()));
    }
    Ok(())
}

/// True stratum proportion `E[e(X)]`.
pub fn oracle_proportion(dgp: &DiscreteDgp, stratum: Stratum) -> Result<f64> {
    dgp.validate()?;
    if !stratum.admissible(dgp.monotonicity) {
        return Err(Error::InadmissibleStratum(stratum.label()));
    }
    Ok(dgp.proportion(stratum))
}

/// True `theta` by summation over covariate points and mediator levels.
pub fn oracle_theta(dgp: &DiscreteDgp, target: &TargetIndex) -> Result<f64> {
    dgp.validate()?;
    check_target(dgp, target)?;
    let (z, dz) = (target.z, target.d_z());
    let (zp, dzp) = (target.z_prime, target.d_z_prime());
    let (mut num, mut den) = (0.0, 0.0);
    for pt in &dgp.points {
        let e = pt.score(target.stratum);
        let eta: f64 = (0..dgp.mediator_levels).map(|m| pt.mu(z, dz, m) * pt.r(zp, dzp, m)).sum();
        num += pt.prob * e * eta;
        den += pt.prob * e;
    }
    Ok(num / den)
}

/// One lattice cell and its probability under the true law.
struct Cell<'a> {
    truth: &'a DgpPoint,
    work: &'a DgpPoint,
    z: u8,
    d: u8,
    m: usize,
    prob: f64,
}

/// Visits every cell, pairing the true point with its working counterpart.
fn for_each_cell(dgp: &DiscreteDgp, working: &DiscreteDgp, mut f: impl FnMut(&Cell)) -> Result<()> {
    if working.points.len() != dgp.points.len() || working.mediator_levels != dgp.mediator_levels {
        return Err(invalid("working tables do not match the DGP support"));
    }
    for (truth, work) in dgp.points.iter().zip(&working.points) {
        if truth.x != work.x {
            return Err(invalid("working tables do not match the DGP support"));
        }
        for z in 0..2u8 {
            for d in 0..2u8 {
                for m in 0..dgp.mediator_levels {
                    let prob = truth.prob * truth.pi(z) * truth.p(z, d) * truth.r(z, d, m);
                    if prob > 0.0 {
                        f(&Cell {
                            truth,
                            work,
                            z,
                            d,
                            m,
                            prob,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Working-model pieces of the estimating equation at one cell.
struct Pieces {
    score: f64,
    aug: f64,
    b_weight: f64,
    eta: f64,
    /// `1{Z=z, D=d_z} / (p pi) * r_{z'}(M) / r_z(M)`.
    own: f64,
    /// `1{Z=z', D=d_z'} / (p pi)`.
    cross: f64,
    mu_m: f64,
    y: f64,
}

fn pieces(c: &Cell, target: &TargetIndex, levels: usize) -> Pieces {
    let w = c.work;
    let s = target.stratum;
    let (zs, ds) = s.companion();
    let k = s.k();
    let ind = |a: bool| if a { 1.0 } else { 0.0 };
    let (z, dz) = (target.z, target.d_z());
    let (zp, dzp) = (target.z_prime, target.d_z_prime());

    let score = w.p(zs, ds) - k * w.p(0, 1);
    let mut aug = ind(c.z == zs) * (ind(c.d == ds) - w.p(zs, ds)) / w.pi(zs);
    aug -= k * ind(c.z == 0) * (c.d as f64 - w.p(0, 1)) / w.pi(0);
    let b_weight = ind(c.z == zs && c.d == ds) / w.pi(zs) - k * ind(c.z == 0) * c.d as f64 / w.pi(0);
    let eta: f64 = (0..levels).map(|m| w.mu(z, dz, m) * w.r(zp, dzp, m)).sum();
    let own = if c.z == z && c.d == dz {
        w.r(zp, dzp, c.m) / w.r(z, dz, c.m) / (w.p(z, dz) * w.pi(z))
    } else {
        0.0
    };
    let cross = if c.z == zp && c.d == dzp {
        1.0 / (w.p(zp, dzp) * w.pi(zp))
    } else {
        0.0
    };
    Pieces {
        score,
        aug,
        b_weight,
        eta,
        own,
        cross,
        mu_m: w.mu(z, dz, c.m),
        y: c.truth.mu(c.z, c.d, c.m),
    }
}

/// Population `(E[psi], E[delta])` under working tables.
fn eif_expectations(dgp: &DiscreteDgp, working: &DiscreteDgp, target: &TargetIndex) -> Result<(f64, f64)> {
    let (mut psi, mut delta) = (0.0, 0.0);
    for_each_cell(dgp, working, |c| {
        let t = pieces(c, target, dgp.mediator_levels);
        let v = t.aug * t.eta + t.score * t.own * (t.y - t.mu_m) + t.score * t.cross * (t.mu_m - t.eta) + t.score * t.eta;
        psi += c.prob * v;
        delta += c.prob * (t.aug + t.score);
    })?;
    Ok((psi, delta))
}

/// Population value of a moment form's numerator over the doubly robust proportion.
pub fn oracle_moment_expectation_with(
    dgp: &DiscreteDgp,
    working: &DiscreteDgp,
    target: &TargetIndex,
    form: MomentForm,
) -> Result<f64> {
    dgp.validate()?;
    check_target(dgp, target)?;
    let (mut num, mut den) = (0.0, 0.0);
    for_each_cell(dgp, working, |c| {
        let t = pieces(c, target, dgp.mediator_levels);
        num += c.prob
            * match form {
                MomentForm::A => t.score * t.own * t.y,
                MomentForm::B => t.b_weight * t.eta,
                MomentForm::C => t.score * t.cross * t.mu_m,
                MomentForm::D => t.score * t.eta,
            };
        den += c.prob * (t.aug + t.score);
    })?;
    Ok(num / den)
}

pub fn oracle_moment_expectation(dgp: &DiscreteDgp, target: &TargetIndex, form: MomentForm) -> Result<f64> {
    oracle_moment_expectation_with(dgp, dgp, target, form)
}

/// `E[psi - theta delta] / e` under working tables.
pub fn oracle_eif_mean_with(dgp: &DiscreteDgp, working: &DiscreteDgp, target: &TargetIndex, theta_input: f64) -> Result<f64> {
    dgp.validate()?;
    check_target(dgp, target)?;
    let (psi, delta) = eif_expectations(dgp, working, target)?;
    Ok((psi - theta_input * delta) / dgp.proportion(target.stratum))
}

pub fn oracle_eif_mean(dgp: &DiscreteDgp, target: &TargetIndex, theta_input: f64) -> Result<f64> {
    oracle_eif_mean_with(dgp, dgp, target, theta_input)
}

/// `E[delta]` under working tables.
pub fn oracle_delta_mean_with(dgp: &DiscreteDgp, working: &DiscreteDgp, target: &TargetIndex) -> Result<f64> {
    dgp.validate()?;
    check_target(dgp, target)?;
    Ok(eif_expectations(dgp, working, target)?.1)
}

/// Population value `E[psi] / E[delta]` of the multiply robust estimator.
pub fn oracle_mr_with(dgp: &DiscreteDgp, working: &DiscreteDgp, target: &TargetIndex) -> Result<f64> {
    dgp.validate()?;
    check_target(dgp, target)?;
    let (psi, delta) = eif_expectations(dgp, working, target)?;
    Ok(psi / delta)
}

/// Population value of the doubly robust estimator of `P(D = d | Z = z)`.
pub fn oracle_p_dr_with(dgp: &DiscreteDgp, working: &DiscreteDgp, z: u8, d: u8) -> Result<f64> {
    dgp.validate()?;
    let mut v = 0.0;
    for (truth, work) in dgp.points.iter().zip(&working.points) {
        // E[1{Z=z} (1{D=d} - p~) / pi~ + p~ | x] in closed form
        let p_w = work.p(z, d);
        v += truth.prob * (p_w + truth.pi(z) * (truth.p(z, d) - p_w) / work.pi(z));
    }
    Ok(v)
}

/// True `P(D = d | Z = z)` averaged over covariates.
pub fn oracle_p_marginal(dgp: &DiscreteDgp, z: u8, d: u8) -> f64 {
    dgp.points.iter().map(|pt| pt.prob * pt.p(z, d)).sum()
}

/// Potential-value tables with a built-in departure from principal ignorability.
///
/// Strata are indexed `0 = 10`, `1 = 11`, `2 = 00`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiPoint {
    pub x: Vec<f64>,
    pub prob: f64,
    pub pi1: f64,
    /// Stratum probabilities given `x`.
    pub e: [f64; 3],
    /// `f[z][u][m]`, the pmf of `M_z` in stratum `u`.
    pub f: [[Vec<f64>; 3]; 2],
    /// `nu[z][u][m] = E[Y_{zm} | U = u, x]`.
    pub nu: [[Vec<f64>; 3]; 2],
}

const U_STRATA: [Stratum; 3] = [Stratum::COMPLIER, Stratum::ALWAYS, Stratum::NEVER];

fn u_index(s: Stratum) -> usize {
    U_STRATA.iter().position(|u| *u == s).expect("known stratum")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiViolationDgp {
    pub monotonicity: Monotonicity,
    pub mediator_levels: usize,
    pub spec: XiSpec,
    pub points: Vec<XiPoint>,
}

impl XiViolationDgp {
    /// Builds complier tables from the other strata so the confounding functions equal `spec`.
    ///
    /// Complier entries of `f` and `nu` in `points` are overwritten.
    pub fn build(monotonicity: Monotonicity, mediator_levels: usize, spec: XiSpec, mut points: Vec<XiPoint>) -> Result<Self> {
        let spec = match monotonicity {
            Monotonicity::Standard => spec,
            Monotonicity::Strong => XiSpec::strong(spec.lambda_m0, spec.lambda_y0),
        };
        for (i, pt) in points.iter_mut().enumerate() {
            if monotonicity == Monotonicity::Strong && pt.e[1] != 0.0 {
                return Err(invalid(format!("point {i}: strong monotonicity has no always-takers")));
            }
            for (z, base, lambda_m, lambda_y) in [(1, 1, spec.lambda_m1, spec.lambda_y1), (0, 2, spec.lambda_m0, spec.lambda_y0)] {
                let mut f: Vec<f64> = pt.f[z][base].iter().map(|v| lambda_m * v).collect();
                f[0] = 1.0 - f[1..].iter().sum::<f64>();
                if !(f[0] > 0.0) {
                    return Err(invalid(format!("point {i}: complier mediator pmf is negative at level 0")));
                }
                pt.f[z][0] = f;
                pt.nu[z][0] = pt.nu[z][base].iter().map(|v| lambda_y * v).collect();
            }
        }
        Ok(XiViolationDgp {
            monotonicity,
            mediator_levels,
            spec,
            points,
        })
    }

    /// The observed-data law implied by the potential-value tables.
    pub fn observed(&self) -> Result<DiscreteDgp> {
        let levels = self.mediator_levels;
        let mut points = Vec::with_capacity(self.points.len());
        for pt in &self.points {
            let [e10, e11, e00] = pt.e;
            let mix = |z: usize, a: usize, b: usize, ea: f64, eb: f64| -> (Vec<f64>, Vec<f64>) {
                let mut r = vec![0.0; levels];
                let mut mu = vec![0.0; levels];
                for m in 0..levels {
                    let (wa, wb) = (ea * pt.f[z][a][m], eb * pt.f[z][b][m]);
                    r[m] = (wa + wb) / (ea + eb);
                    mu[m] = (wa * pt.nu[z][a][m] + wb * pt.nu[z][b][m]) / (wa + wb);
                }
                (r, mu)
            };
            let (r11, mu11) = mix(1, 0, 1, e10, e11);
            let (r00, mu00) = mix(0, 0, 2, e10, e00);
            let (r01, mu01) = if e11 > 0.0 {
                (pt.f[0][1].clone(), pt.nu[0][1].clone())
            } else {
                (r00.clone(), vec![0.0; levels])
            };
            points.push(DgpPoint {
                x: pt.x.clone(),
                prob: pt.prob,
                pi1: pt.pi1,
                p1: [e11, e10 + e11],
                r: [[r00, r01], [pt.f[1][2].clone(), r11]],
                mu: [[mu00, mu01], [pt.nu[1][2].clone(), mu11]],
            });
        }
        let dgp = DiscreteDgp {
            name: "xi-violation".into(),
            version: 1,
            monotonicity: self.monotonicity,
            mediator_levels: levels,
            points,
            golden: vec![],
        };
        dgp.validate()?;
        Ok(dgp)
    }

    /// `E[Y_{z M_z'} | U = s]` from the potential-value tables.
    pub fn truth(&self, target: &TargetIndex) -> Result<f64> {
        if target.z == 0 && target.z_prime == 1 {
            return Err(Error::UnsupportedTarget { z: 0, z_prime: 1 });
        }
        if !target.stratum.admissible(self.monotonicity) {
            return Err(Error::InadmissibleStratum(target.stratum.label()));
        }
        let u = u_index(target.stratum);
        let (z, zp) = (target.z as usize, target.z_prime as usize);
        let (mut num, mut den) = (0.0, 0.0);
        for pt in &self.points {
            let inner: f64 = (0..self.mediator_levels).map(|m| pt.nu[z][u][m] * pt.f[zp][u][m]).sum();
            num += pt.prob * pt.e[u] * inner;
            den += pt.prob * pt.e[u];
        }
        Ok(num / den)
    }

    /// A two-point, three-level reference built around `spec`.
    pub fn reference(monotonicity: Monotonicity, spec: XiSpec) -> Result<Self> {
        let strong = monotonicity == Monotonicity::Strong;
        let e = |a: f64, b: f64| if strong { [a + b, 0.0, 1.0 - a - b] } else { [a, b, 1.0 - a - b] };
        let pmf = |a: f64, b: f64| vec![1.0 - a - b, a, b];
        let points = vec![
            XiPoint {
                x: vec![0.0],
                prob: 0.45,
                pi1: 0.5,
                e: e(0.4, 0.25),
                f: [
                    [pmf(0.2, 0.1), pmf(0.3, 0.2), pmf(0.25, 0.15)],
                    [pmf(0.3, 0.2), pmf(0.35, 0.3), pmf(0.2, 0.25)],
                ],
                nu: [
                    [vec![1.0, 1.4, 1.9], vec![1.5, 1.7, 2.3], vec![0.6, 0.9, 1.3]],
                    [vec![2.0, 2.6, 3.1], vec![2.4, 3.0, 3.8], vec![1.1, 1.6, 2.2]],
                ],
            },
            XiPoint {
                x: vec![1.0],
                prob: 0.55,
                pi1: 0.6,
                e: e(0.5, 0.15),
                f: [
                    [pmf(0.2, 0.2), pmf(0.25, 0.35), pmf(0.15, 0.1)],
                    [pmf(0.3, 0.3), pmf(0.3, 0.4), pmf(0.25, 0.2)],
                ],
                nu: [
                    [vec![0.8, 1.2, 1.5], vec![1.3, 1.8, 2.0], vec![0.5, 0.7, 1.2]],
                    [vec![1.7, 2.4, 2.9], vec![2.1, 2.9, 3.3], vec![0.9, 1.5, 2.0]],
                ],
            },
        ];
        Self::build(monotonicity, 3, spec, points)
    }
}

/// Potential-value tables with a built-in departure from mediator ignorability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TPoint {
    pub x: Vec<f64>,
    pub prob: f64,
    pub pi1: f64,
    /// Stratum probabilities, indexed as in [`XiPoint`].
    pub e: [f64; 3],
    /// `g[z][d][m]`, the pmf of `M_z` among units with `D_z = d`.
    pub g: [[Vec<f64>; 2]; 2],
    /// `nu1[d1][m] = E[Y_{1m} | U, x]`, which depends on the stratum through `d1` only.
    pub nu1: [Vec<f64>; 2],
    /// Observed `E[Y | Z = 0, D = d, M = m, x]`.
    pub mu0: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TViolationDgp {
    pub monotonicity: Monotonicity,
    pub mediator_levels: usize,
    pub spec: TSpec,
    pub points: Vec<TPoint>,
}

impl TViolationDgp {
    fn t(&self, m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.spec.zeta
        }
    }

    /// `sum_l t(l) g_z(l | d)`.
    fn tilt(&self, pt: &TPoint, z: usize, d: usize) -> f64 {
        (0..self.mediator_levels).map(|l| self.t(l) * pt.g[z][d][l]).sum()
    }

    pub fn observed(&self) -> Result<DiscreteDgp> {
        let levels = self.mediator_levels;
        let points = self
            .points
            .iter()
            .map(|pt| {
                let mu1 = |d: usize| -> Vec<f64> {
                    let tz = self.tilt(pt, 1, d);
                    (0..levels).map(|m| self.t(m) * pt.nu1[d][m] / tz).collect()
                };
                DgpPoint {
                    x: pt.x.clone(),
                    prob: pt.prob,
                    pi1: pt.pi1,
                    p1: [pt.e[1], pt.e[0] + pt.e[1]],
                    r: pt.g.clone(),
                    mu: [pt.mu0.clone(), [mu1(0), mu1(1)]],
                }
            })
            .collect();
        let dgp = DiscreteDgp {
            name: "t-violation".into(),
            version: 1,
            monotonicity: self.monotonicity,
            mediator_levels: levels,
            points,
            golden: vec![],
        };
        dgp.validate()?;
        Ok(dgp)
    }

    /// `E[Y_{1 M_0} | U = s]` from the potential-value tables.
    pub fn truth(&self, stratum: Stratum) -> Result<f64> {
        if !stratum.admissible(self.monotonicity) {
            return Err(Error::InadmissibleStratum(stratum.label()));
        }
        let u = u_index(stratum);
        let (d1, d0) = (stratum.d1 as usize, stratum.d0 as usize);
        let (mut num, mut den) = (0.0, 0.0);
        for pt in &self.points {
            let t0 = self.tilt(pt, 0, d0);
            let inner: f64 = (0..self.mediator_levels)
                .map(|m| self.t(m) * pt.nu1[d1][m] / t0 * pt.g[0][d0][m])
                .sum();
            num += pt.prob * pt.e[u] * inner;
            den += pt.prob * pt.e[u];
        }
        Ok(num / den)
    }

    pub fn reference(monotonicity: Monotonicity, spec: TSpec) -> Result<Self> {
        let strong = monotonicity == Monotonicity::Strong;
        let e = |a: f64, b: f64| if strong { [a + b, 0.0, 1.0 - a - b] } else { [a, b, 1.0 - a - b] };
        let pmf = |a: f64, b: f64| vec![1.0 - a - b, a, b];
        let points = vec![
            TPoint {
                x: vec![-0.5, 2.0],
                prob: 0.3,
                pi1: 0.45,
                e: e(0.45, 0.2),
                g: [[pmf(0.3, 0.15), pmf(0.25, 0.25)], [pmf(0.2, 0.3), pmf(0.3, 0.45)]],
                nu1: [vec![1.0, 1.3, 1.7], vec![1.6, 2.2, 2.9]],
                mu0: [vec![0.7, 0.9, 1.4], vec![1.2, 1.5, 1.9]],
            },
            TPoint {
                x: vec![0.5, 1.0],
                prob: 0.7,
                pi1: 0.55,
                e: e(0.35, 0.3),
                g: [[pmf(0.2, 0.2), pmf(0.3, 0.2)], [pmf(0.35, 0.15), pmf(0.25, 0.5)]],
                nu1: [vec![0.9, 1.1, 1.8], vec![1.4, 2.0, 2.6]],
                mu0: [vec![0.6, 1.0, 1.1], vec![1.0, 1.3, 1.8]],
            },
        ];
        Ok(TViolationDgp {
            monotonicity,
            mediator_levels: 3,
            spec,
            points,
        })
    }
}

/// A DGP built with a known violation of one identifying assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationDgp {
    Xi(XiViolationDgp),
    T(TViolationDgp),
}

/// Exact stratum-level truth of `target` from the potential-value tables.
pub fn oracle_sensitivity_truth(dgp: &ViolationDgp, target: &TargetIndex) -> Result<f64> {
    match dgp {
        ViolationDgp::Xi(v) => v.truth(target),
        ViolationDgp::T(v) => {
            if (target.z, target.z_prime) != (1, 0) {
                return Err(Error::UnsupportedTarget {
                    z: target.z,
                    z_prime: target.z_prime,
                });
            }
            v.truth(target.stratum)
        }
    }
}

/// One certified identity: largest absolute discrepancy against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub max_abs: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub fixture: String,
    pub checks: Vec<Check>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{status} {} max_abs={:.3e} tol={:.0e}", c.name, c.max_abs, c.tolerance));
            if let Some(e) = &c.error {
                s.push_str(&format!(" error={e}"));
            }
            s.push('\n');
        }
        s
    }
}

struct Tracker {
    checks: Vec<Check>,
}

impl Tracker {
    fn record(&mut self, name: &str, tolerance: f64, f: impl FnOnce() -> Result<Vec<f64>>) {
        let (max_abs, error) = match f() {
            Ok(diffs) => (diffs.iter().fold(0.0f64, |a, d| if d.is_nan() { f64::NAN } else { a.max(d.abs()) }), None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        self.checks.push(Check {
            name: name.to_string(),
            max_abs,
            tolerance,
            passed: error.is_none() && max_abs <= tolerance,
            error,
        });
    }
}

fn all_targets(mode: Monotonicity) -> Vec<TargetIndex> {
    strata_for_mode(mode).into_iter().flat_map(TargetIndex::effect_targets).collect()
}

/// Runs every exact identity on `dgp` and returns one check per identity.
pub fn certify(dgp: &DiscreteDgp) -> Result<CertificationReport> {
    dgp.validate()?;
    let data = dgp.lattice()?;
    let truth_nuis = dgp.nuisance();
    let pos = Positivity {
        clip_floor: 0.0,
        ..Positivity::default()
    };
    let targets = all_targets(dgp.monotonicity);
    let mut t = Tracker { checks: vec![] };

    t.record("golden values", 1e-12, || {
        if dgp.golden.is_empty() {
            return Err(invalid("fixture has no golden values"));
        }
        dgp.golden
            .iter()
            .map(|g| match g.quantity {
                GoldenQuantity::Theta => {
                    let (z, zp) = g.z.zip(g.z_prime).ok_or_else(|| invalid("theta golden value needs z and z_prime"))?;
                    Ok(oracle_theta(dgp, &TargetIndex::new(z, zp, g.stratum)?)? - g.value)
                }
                GoldenQuantity::Proportion => Ok(oracle_proportion(dgp, g.stratum)? - g.value),
            })
            .collect()
    });

    t.record("moment forms agree with the truth", 1e-10, || {
        let mut out = vec![];
        for target in &targets {
            let truth = oracle_theta(dgp, target)?;
            for form in MomentForm::ALL {
                out.push(oracle_moment_expectation(dgp, target, form)? - truth);
                out.push(theta_moment(&data, &truth_nuis, target, form, &pos)? - truth);
            }
        }
        Ok(out)
    });

    t.record("influence function has mean zero at the truth", 1e-10, || {
        let mut out = vec![];
        for target in &targets {
            let truth = oracle_theta(dgp, target)?;
            out.push(oracle_eif_mean(dgp, target, truth)?);
            let c = eif_components(&data, &truth_nuis, target, &pos)?;
            let v: Vec<f64> = c.psi.iter().zip(&c.delta).map(|(p, d)| p - truth * d).collect();
            out.push(data.mean(&v));
        }
        Ok(out)
    });

    t.record("stratum augmentation has mean e", 1e-12, || {
        let mut out = vec![];
        for target in &targets {
            let e = oracle_proportion(dgp, target.stratum)?;
            out.push(oracle_delta_mean_with(dgp, dgp, target)? - e);
            let c = eif_components(&data, &truth_nuis, target, &pos)?;
            out.push(data.mean(&c.delta) - e);
        }
        Ok(out)
    });

    t.record("cell probability is doubly robust", 1e-10, || {
        let mut out = vec![];
        for wrong in [Perturbation::PI, Perturbation::P] {
            let work = dgp.perturbed(wrong);
            let wn = work.nuisance();
            for (z, d) in [(1, 1), (1, 0), (0, 1), (0, 0)] {
                let truth = oracle_p_marginal(dgp, z, d);
                out.push(oracle_p_dr_with(dgp, &work, z, d)? - truth);
                out.push(p_marginal_dr(&data, &wn, z, d, &pos)? - truth);
            }
        }
        Ok(out)
    });

    t.record("multiply robust estimator survives any single wrong model", 1e-10, || {
        let mut out = vec![];
        for wrong in [Perturbation::MU, Perturbation::P, Perturbation::R, Perturbation::PI] {
            let work = dgp.perturbed(wrong);
            let wn = work.nuisance();
            for target in &targets {
                let truth = oracle_theta(dgp, target)?;
                out.push(oracle_mr_with(dgp, &work, target)? - truth);
                out.push(theta_mr(&data, &wn, target, &pos)? - truth);
            }
        }
        Ok(out)
    });

    t.record("moment forms survive their licensed wrong model", 1e-10, || {
        let mut out = vec![];
        for form in MomentForm::ALL {
            let work = dgp.perturbed(licensed_perturbation(form));
            let wn = work.nuisance();
            for target in &targets {
                let truth = oracle_theta(dgp, target)?;
                out.push(oracle_moment_expectation_with(dgp, &work, target, form)? - truth);
                out.push(theta_moment(&data, &wn, target, form, &pos)? - truth);
            }
        }
        Ok(out)
    });

    if dgp.mediator_kind().is_discrete() {
        t.record("sensitivity estimators reduce at identity", 1e-12, || {
            let mut out = vec![];
            for target in &targets {
                let base = theta_mr(&data, &truth_nuis, target, &pos)?;
                out.push(theta_mr_xi(&data, &truth_nuis, &XiSpec::IDENTITY, target, &pos)? - base);
                if (target.z, target.z_prime) == (1, 0) {
                    out.push(theta_mr_t(&data, &truth_nuis, &TSpec { zeta: 1.0 }, target.stratum, &pos)? - base);
                }
            }
            Ok(out)
        });
    }

    t.record("principal ignorability violation is recovered", 1e-10, || {
        certify_xi_recovery(dgp.monotonicity, &pos)
    });
    t.record("mediator ignorability violation is recovered", 1e-10, || {
        certify_t_recovery(dgp.monotonicity, &pos)
    });

    Ok(CertificationReport {
        fixture: dgp.name.clone(),
        checks: t.checks,
    })
}

fn certify_xi_recovery(mode: Monotonicity, pos: &Positivity) -> Result<Vec<f64>> {
    let spec = XiSpec {
        lambda_m1: 1.3,
        lambda_m0: 0.8,
        lambda_y1: 1.15,
        lambda_y0: 0.9,
    };
    let v = XiViolationDgp::reference(mode, spec)?;
    let obs = v.observed()?;
    let data = obs.lattice()?;
    let mut out = vec![];
    for wrong in [Perturbation::NONE, Perturbation::MU, Perturbation::PI] {
        let nuis = obs.perturbed(wrong).nuisance();
        for target in all_targets(mode) {
            out.push(theta_mr_xi(&data, &nuis, &v.spec, &target, pos)? - v.truth(&target)?);
        }
    }
    Ok(out)
}

fn certify_t_recovery(mode: Monotonicity, pos: &Positivity) -> Result<Vec<f64>> {
    let v = TViolationDgp::reference(mode, TSpec { zeta: 1.6 })?;
    let obs = v.observed()?;
    let data = obs.lattice()?;
    let mut out = vec![];
    for wrong in [Perturbation::NONE, Perturbation::MU, Perturbation::PI, Perturbation::P] {
        let nuis = obs.perturbed(wrong).nuisance();
        for s in strata_for_mode(mode) {
            out.push(theta_mr_t(&data, &nuis, &v.spec, s, pos)? - v.truth(s)?);
        }
    }
    Ok(out)
}

/// The shipped two-point binary-mediator fixture.
pub fn reference_fixture() -> DiscreteDgp {
    DiscreteDgp::from_json(include_str!("../fixtures/reference_dgp.json")).expect("shipped fixture is valid")
}

/// The shipped strong-monotonicity fixture with a three-level mediator.
pub fn reference_strong_fixture() -> DiscreteDgp {
    DiscreteDgp::from_json(include_str!("../fixtures/reference_strong_dgp.json")).expect("shipped fixture is valid")
}
