//! Moment-type, multiply robust and influence-function based estimators of
//! `theta_{d1d0}^{(zz')}` and the mediation effects assembled from them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{strata_for_mode, Dataset, Monotonicity, Stratum, TargetIndex};
use crate::nuisance::{eta_at, score_at, Nuisance, Positivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentForm {
    A,
    B,
    C,
    D,
}

impl MomentForm {
    pub const ALL: [MomentForm; 4] = [MomentForm::A, MomentForm::B, MomentForm::C, MomentForm::D];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    A,
    B,
    C,
    D,
    Mr,
    Np,
}

impl Method {
    pub fn moment_form(&self) -> Option<MomentForm> {
        match self {
            Method::A => Some(MomentForm::A),
            Method::B => Some(MomentForm::B),
            Method::C => Some(MomentForm::C),
            Method::D => Some(MomentForm::D),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::A => "a",
            Method::B => "b",
            Method::C => "c",
            Method::D => "d",
            Method::Mr => "mr",
            Method::Np => "np",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Ok(match s {
            "a" => Method::A,
            "b" => Method::B,
            "c" => Method::C,
            "d" => Method::D,
            "mr" => Method::Mr,
            "np" => Method::Np,
            _ => return Err(Error::Config(format!("unknown method `{s}`"))),
        })
    }
}

/// Per-level mediator weights applied inside the estimating equation.
pub(crate) trait LevelWeights: Sync {
    fn fill(&self, nuis: &dyn Nuisance, target: &TargetIndex, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Pieces of the estimating equation for one unit.
#[derive(Debug, Clone, Copy, Default)]
struct UnitTerms {
    /// Stratum augmentation `A`; `delta = A + e`.
    aug: f64,
    /// Principal score.
    score: f64,
    eta: f64,
    /// Indicator over `p pi` times the mediator density ratio (and weight).
    res_w: f64,
    /// `Y - mu_{z d_z}(M)`.
    resid: f64,
    /// Indicator for the `(z', d_z')` cell over `p pi`.
    cross_w: f64,
    /// Weighted `mu_{z d_z}(M)` for the cross-world term.
    cross_mu: f64,
    /// Inverse-probability stratum weight of the second moment form.
    b_weight: f64,
}

impl UnitTerms {
    #[inline]
    fn psi(&self) -> f64 {
        self.aug * self.eta
            + self.score * self.res_w * self.resid
            + self.score * self.cross_w * (self.cross_mu - self.eta)
            + self.score * self.eta
    }

    #[inline]
    fn delta(&self) -> f64 {
        self.aug + self.score
    }
}

/// Counters of numerical adjustments made during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Adjustments {
    pub clipped: usize,
    pub clamped_scores: usize,
}

impl std::ops::AddAssign for Adjustments {
    fn add_assign(&mut self, o: Adjustments) {
        self.clipped += o.clipped;
        self.clamped_scores += o.clamped_scores;
    }
}

struct Engine<'a> {
    data: &'a Dataset,
    nuis: &'a dyn Nuisance,
    pos: &'a Positivity,
    weights: Option<&'a dyn LevelWeights>,
}

impl Engine<'_> {
    fn check_target(&self, target: &TargetIndex) -> Result<()> {
        if target.z == 0 && target.z_prime == 1 {
            return Err(Error::UnsupportedTarget { z: 0, z_prime: 1 });
        }
        if !target.stratum.admissible(self.data.monotonicity()) {
            return Err(Error::InadmissibleStratum(target.stratum.label()));
        }
        if self.weights.is_some() && !self.data.mediator_kind().is_discrete() {
            return Err(Error::UnsupportedMediator(
                "sensitivity weights need a discrete mediator".into(),
            ));
        }
        Ok(())
    }

    fn unit(&self, target: &TargetIndex, i: usize, adj: &mut Adjustments, wbuf: &mut [f64]) -> Result<UnitTerms> {
        let nuis = self.nuis;
        let pos = self.pos;
        let x = self.data.x_row(i);
        let zi = self.data.z()[i];
        let di = self.data.d()[i];
        let mi = self.data.m()[i];
        let yi = self.data.y()[i];
        let s = target.stratum;
        let (zs, ds) = s.companion();
        let k = s.k();
        let mut clips = 0usize;

        let score = score_at(nuis, s, x, i, &mut adj.clamped_scores)?;

        let mut aug = 0.0;
        let mut b_weight = 0.0;
        if zi == zs {
            let pi = pos.floor(nuis.pi(zs, x), i, &mut clips)?;
            let ind = if di == ds { 1.0 } else { 0.0 };
            aug += (ind - nuis.p(zs, ds, x)) / pi;
            b_weight += ind / pi;
        }
        if k != 0.0 && zi == 0 {
            let pi0 = pos.floor(nuis.pi(0, x), i, &mut clips)?;
            let dd = di as f64;
            aug -= k * (dd - nuis.p(0, 1, x)) / pi0;
            b_weight -= k * dd / pi0;
        }

        let (z, dz) = (target.z, target.d_z());
        let (zp, dzp) = (target.z_prime, target.d_z_prime());

        let weighted = match self.weights {
            Some(w) => {
                w.fill(nuis, target, x, wbuf).map_err(|e| match e {
                    Error::ImpliedNegativePmf { .. } => Error::ImpliedNegativePmf { unit: i },
                    other => other,
                })?;
                true
            }
            None => false,
        };
        let w_at = |m: f64| if weighted { wbuf[m as usize] } else { 1.0 };

        let eta = if weighted {
            let levels = wbuf.len();
            let mut pmf = vec![0.0; levels];
            nuis.r_pmf(zp, dzp, x, &mut pmf);
            (0..levels)
                .map(|m| wbuf[m] * nuis.mu(z, dz, m as f64, x) * pmf[m])
                .sum()
        } else {
            eta_at(nuis, target, x, i)?
        };

        let mut t = UnitTerms {
            aug,
            score,
            eta,
            b_weight,
            ..UnitTerms::default()
        };

        let in_own = zi == z && di == dz;
        let in_cross = zi == zp && di == dzp;
        if in_own || in_cross {
            let mu_m = nuis.mu(z, dz, mi, x);
            if in_own {
                let pi = pos.floor(nuis.pi(z, x), i, &mut clips)?;
                let p = pos.floor(nuis.p(z, dz, x), i, &mut clips)?;
                let ratio = if z == zp {
                    1.0
                } else {
                    let r_own = pos.floor(nuis.r(z, dz, mi, x), i, &mut clips)?;
                    nuis.r(zp, dzp, mi, x) / r_own
                };
                if !(ratio <= pos.ratio_limit) {
                    return Err(Error::DensityRatioOverflow { unit: i, ratio });
                }
                t.res_w = ratio * w_at(mi) / (p * pi);
                t.resid = yi - mu_m;
            }
            if in_cross {
                let pi = pos.floor(nuis.pi(zp, x), i, &mut clips)?;
                let p = pos.floor(nuis.p(zp, dzp, x), i, &mut clips)?;
                t.cross_w = 1.0 / (p * pi);
                t.cross_mu = w_at(mi) * mu_m;
            }
        }
        adj.clipped += clips;
        Ok(t)
    }

    fn collect<T>(&self, target: &TargetIndex, mut f: impl FnMut(&UnitTerms, usize) -> T) -> Result<(Vec<T>, Adjustments)> {
        self.check_target(target)?;
        let mut adj = Adjustments::default();
        let levels = self.data.mediator_kind().levels().unwrap_or(0);
        let mut wbuf = vec![1.0; levels];
        let mut out = Vec::with_capacity(self.data.n());
        for i in 0..self.data.n() {
            let t = self.unit(target, i, &mut adj, &mut wbuf)?;
            out.push(f(&t, i));
        }
        Ok((out, adj))
    }
}

/// Per-unit `psi` and `delta` for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct EifComponents {
    pub target: TargetIndex,
    pub psi: Vec<f64>,
    pub delta: Vec<f64>,
    pub adjustments: Adjustments,
}

impl EifComponents {
    /// `P_n[psi] / P_n[delta]` under the dataset's weighting.
    pub fn ratio(&self, data: &Dataset) -> Result<f64> {
        let e = data.mean(&self.delta);
        check_proportion(self.target.stratum, e)?;
        Ok(data.mean(&self.psi) / e)
    }
}

fn check_proportion(stratum: Stratum, e: f64) -> Result<()> {
    if !(e > 0.0) {
        return Err(Error::EmptyStratumEstimate {
            stratum: stratum.label(),
            value: e,
        });
    }
    Ok(())
}

pub(crate) fn eif_weighted(
    data: &Dataset,
    nuis: &dyn Nuisance,
    target: &TargetIndex,
    pos: &Positivity,
    weights: Option<&dyn LevelWeights>,
) -> Result<EifComponents> {
    let engine = Engine {
        data,
        nuis,
        pos,
        weights,
    };
    let (pairs, adjustments) = engine.collect(target, |t, _| (t.psi(), t.delta()))?;
    let (psi, delta) = pairs.into_iter().unzip();
    Ok(EifComponents {
        target: *target,
        psi,
        delta,
        adjustments,
    })
}

/// Efficient influence function pieces `psi` and `delta` per unit.
pub fn eif_components(data: &Dataset, nuis: &dyn Nuisance, target: &TargetIndex, pos: &Positivity) -> Result<EifComponents> {
    eif_weighted(data, nuis, target, pos, None)
}

/// Multiply robust estimate `P_n[psi] / P_n[delta]`.
pub fn theta_mr(data: &Dataset, nuis: &dyn Nuisance, target: &TargetIndex, pos: &Positivity) -> Result<f64> {
    eif_components(data, nuis, target, pos)?.ratio(data)
}

/// Moment-type estimate; every form divides by the doubly robust stratum proportion.
pub fn theta_moment(
    data: &Dataset,
    nuis: &dyn Nuisance,
    target: &TargetIndex,
    form: MomentForm,
    pos: &Positivity,
) -> Result<f64> {
    let engine = Engine {
        data,
        nuis,
        pos,
        weights: None,
    };
    let y = data.y();
    let (pairs, _) = engine.collect(target, |t, i| {
        let num = match form {
            MomentForm::A => t.score * t.res_w * y[i],
            MomentForm::B => t.b_weight * t.eta,
            MomentForm::C => t.score * t.cross_w * t.cross_mu,
            MomentForm::D => t.score * t.eta,
        };
        (num, t.delta())
    })?;
    let (num, delta): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let e = data.mean(&delta);
    check_proportion(target.stratum, e)?;
    Ok(data.mean(&num) / e)
}

/// Point estimates of every `theta` needed for effects, plus stratum proportions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaTable {
    pub mode: Monotonicity,
    pub theta: BTreeMap<TargetIndex, f64>,
    pub proportion: BTreeMap<Stratum, f64>,
}

impl ThetaTable {
    pub fn get(&self, z: u8, z_prime: u8, stratum: Stratum) -> Result<f64> {
        let t = TargetIndex::new(z, z_prime, stratum)?;
        self.theta
            .get(&t)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing {}", t.label())))
    }

    pub fn strata(&self) -> Vec<Stratum> {
        strata_for_mode(self.mode)
    }
}

fn all_targets(mode: Monotonicity) -> Vec<TargetIndex> {
    strata_for_mode(mode)
        .into_iter()
        .flat_map(TargetIndex::effect_targets)
        .collect()
}

/// All per-target EIF vectors for one dataset and bundle.
#[derive(Debug, Clone)]
pub struct EifTable {
    pub mode: Monotonicity,
    pub components: BTreeMap<TargetIndex, EifComponents>,
    pub adjustments: Adjustments,
}

impl EifTable {
    pub fn compute(data: &Dataset, nuis: &dyn Nuisance, pos: &Positivity) -> Result<EifTable> {
        Self::compute_with(data, nuis, pos, |t| eif_components(data, nuis, t, pos))
    }

    pub(crate) fn compute_with(
        data: &Dataset,
        _nuis: &dyn Nuisance,
        _pos: &Positivity,
        mut f: impl FnMut(&TargetIndex) -> Result<EifComponents>,
    ) -> Result<EifTable> {
        let mode = data.monotonicity();
        let mut components = BTreeMap::new();
        let mut adjustments = Adjustments::default();
        for t in all_targets(mode) {
            let c = f(&t)?;
            adjustments += c.adjustments;
            components.insert(t, c);
        }
        Ok(EifTable {
            mode,
            components,
            adjustments,
        })
    }

    /// Builds the table from per-unit pieces that are already assembled.
    pub fn from_components(mode: Monotonicity, comps: Vec<EifComponents>) -> EifTable {
        let mut adjustments = Adjustments::default();
        let mut components = BTreeMap::new();
        for c in comps {
            adjustments += c.adjustments;
            components.insert(c.target, c);
        }
        EifTable {
            mode,
            components,
            adjustments,
        }
    }

    fn comp(&self, z: u8, zp: u8, s: Stratum) -> Result<&EifComponents> {
        let t = TargetIndex::new(z, zp, s)?;
        self.components
            .get(&t)
            .ok_or_else(|| Error::InvalidArgument(format!("missing {}", t.label())))
    }

    pub fn thetas(&self, data: &Dataset) -> Result<ThetaTable> {
        let mut theta = BTreeMap::new();
        let mut proportion = BTreeMap::new();
        for (t, c) in &self.components {
            theta.insert(*t, c.ratio(data)?);
            proportion.entry(t.stratum).or_insert_with(|| data.mean(&c.delta));
        }
        Ok(ThetaTable {
            mode: self.mode,
            theta,
            proportion,
        })
    }

    /// Point estimate and per-unit influence function of every estimand.
    pub fn influence(&self, data: &Dataset, scale: Scale) -> Result<Vec<(EffectKey, f64, Vec<f64>)>> {
        let n = data.n();
        let table = self.thetas(data)?;
        let effects = assemble_effects(&table, scale)?;
        let mut out = Vec::new();

        // theta IF: (psi - theta delta) / e
        let mut theta_if: BTreeMap<TargetIndex, Vec<f64>> = BTreeMap::new();
        for (t, c) in &self.components {
            let th = table.theta[t];
            let e = table.proportion[&t.stratum];
            let v: Vec<f64> = (0..n).map(|i| (c.psi[i] - th * c.delta[i]) / e).collect();
            out.push((EffectKey::theta(*t), th, v.clone()));
            theta_if.insert(*t, v);
        }
        let get = |z, zp, s| theta_if[&TargetIndex::new(z, zp, s).unwrap()].as_slice();

        for s in table.strata() {
            let (t11, t10, t00) = (get(1, 1, s), get(1, 0, s), get(0, 0, s));
            let (a, b, c) = (table.get(1, 1, s)?, table.get(1, 0, s)?, table.get(0, 0, s)?);
            let (nie, nde): (Vec<f64>, Vec<f64>) = match scale {
                Scale::Difference => (
                    (0..n).map(|i| t11[i] - t10[i]).collect(),
                    (0..n).map(|i| t10[i] - t00[i]).collect(),
                ),
                Scale::RiskRatio => (
                    (0..n).map(|i| t11[i] / a - t10[i] / b).collect(),
                    (0..n).map(|i| t10[i] / b - t00[i] / c).collect(),
                ),
            };
            let pce: Vec<f64> = nie.iter().zip(&nde).map(|(u, v)| u + v).collect();
            for (est, v) in [(Estimand::Pnie, nie), (Estimand::Pnde, nde), (Estimand::Pce, pce)] {
                let key = EffectKey {
                    estimand: est,
                    stratum: Some(s),
                };
                out.push((key, effects.get(&key)?, v));
            }
        }

        // Population sums S_{zz'} = P_n sum_s psi^{(zz')}_s.
        let strata = table.strata();
        let summed = |z, zp| -> Result<(Vec<f64>, f64)> {
            let mut v = vec![0.0; n];
            for &s in &strata {
                let c = self.comp(z, zp, s)?;
                for (acc, x) in v.iter_mut().zip(&c.psi) {
                    *acc += x;
                }
            }
            let m = data.mean(&v);
            Ok((v, m))
        };
        let (p11, s11) = summed(1, 1)?;
        let (p10, s10) = summed(1, 0)?;
        let (p00, s00) = summed(0, 0)?;
        let (nie, nde): (Vec<f64>, Vec<f64>) = match scale {
            Scale::Difference => (
                (0..n).map(|i| (p11[i] - p10[i]) - (s11 - s10)).collect(),
                (0..n).map(|i| (p10[i] - p00[i]) - (s10 - s00)).collect(),
            ),
            Scale::RiskRatio => (
                (0..n).map(|i| (p11[i] - s11) / s11 - (p10[i] - s10) / s10).collect(),
                (0..n).map(|i| (p10[i] - s10) / s10 - (p00[i] - s00) / s00).collect(),
            ),
        };
        let itt: Vec<f64> = nie.iter().zip(&nde).map(|(u, v)| u + v).collect();
        for (est, v) in [(Estimand::IttNie, nie), (Estimand::IttNde, nde), (Estimand::Itt, itt)] {
            let key = EffectKey {
                estimand: est,
                stratum: None,
            };
            out.push((key, effects.get(&key)?, v));
        }
        Ok(out)
    }
}

/// Estimates every `theta` with the chosen parametric method on one bundle.
pub fn estimate_thetas(data: &Dataset, nuis: &dyn Nuisance, method: Method, pos: &Positivity) -> Result<ThetaTable> {
    match method.moment_form() {
        None => EifTable::compute(data, nuis, pos)?.thetas(data),
        Some(form) => {
            let mode = data.monotonicity();
            let mut theta = BTreeMap::new();
            let mut proportion = BTreeMap::new();
            for t in all_targets(mode) {
                theta.insert(t, theta_moment(data, nuis, &t, form, pos)?);
                if let std::collections::btree_map::Entry::Vacant(v) = proportion.entry(t.stratum) {
                    v.insert(crate::nuisance::stratum_proportion_dr(data, nuis, t.stratum, pos)?);
                }
            }
            Ok(ThetaTable {
                mode,
                theta,
                proportion,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Difference,
    #[serde(rename = "ratio")]
    RiskRatio,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Difference => "difference",
            Scale::RiskRatio => "ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimand {
    Theta { z: u8, z_prime: u8 },
    Pnie,
    Pnde,
    Pce,
    IttNie,
    IttNde,
    Itt,
}

impl Estimand {
    pub fn name(&self) -> String {
        match self {
            Estimand::Theta { z, z_prime } => format!("theta{z}{z_prime}"),
            Estimand::Pnie => "pnie".into(),
            Estimand::Pnde => "pnde".into(),
            Estimand::Pce => "pce".into(),
            Estimand::IttNie => "itt_nie".into(),
            Estimand::IttNde => "itt_nde".into(),
            Estimand::Itt => "itt".into(),
        }
    }

    pub fn is_population(&self) -> bool {
        matches!(self, Estimand::IttNie | Estimand::IttNde | Estimand::Itt)
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Estimand> {
        Ok(match s {
            "theta11" => Estimand::Theta { z: 1, z_prime: 1 },
            "theta10" => Estimand::Theta { z: 1, z_prime: 0 },
            "theta00" => Estimand::Theta { z: 0, z_prime: 0 },
            "pnie" => Estimand::Pnie,
            "pnde" => Estimand::Pnde,
            "pce" => Estimand::Pce,
            "itt_nie" => Estimand::IttNie,
            "itt_nde" => Estimand::IttNde,
            "itt" => Estimand::Itt,
            _ => return Err(Error::Config(format!("unknown estimand `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EffectKey {
    pub estimand: Estimand,
    /// `None` for population-level effects.
    pub stratum: Option<Stratum>,
}

impl EffectKey {
    /// Parses an estimand name with an optional stratum label; population effects take none.
    pub fn parse(estimand: &str, stratum: Option<&str>) -> Result<EffectKey> {
        let estimand: Estimand = estimand.parse()?;
        let stratum = match (estimand.is_population(), stratum) {
            (true, None) => None,
            (false, Some(s)) => Some(s.parse::<Stratum>().map_err(|_| Error::Config(format!("unknown stratum `{s}`")))?),
            (true, Some(_)) => return Err(Error::Config(format!("{} is a population effect", estimand.name()))),
            (false, None) => return Err(Error::Config(format!("{} needs a stratum", estimand.name()))),
        };
        Ok(EffectKey { estimand, stratum })
    }

    pub fn theta(t: TargetIndex) -> EffectKey {
        EffectKey {
            estimand: Estimand::Theta {
                z: t.z,
                z_prime: t.z_prime,
            },
            stratum: Some(t.stratum),
        }
    }

    pub fn stratum_label(&self) -> String {
        self.stratum.map(|s| s.label()).unwrap_or_else(|| "all".into())
    }
}

/// Effects on one scale, in a fixed order: per stratum (pnie, pnde, pce), then the ITT triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSet {
    pub scale: Scale,
    pub values: Vec<(EffectKey, f64)>,
}

impl EffectSet {
    pub fn get(&self, key: &EffectKey) -> Result<f64> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidArgument(format!("effect {} not present", key.estimand.name())))
    }

    pub fn stratum(&self, estimand: Estimand, s: Stratum) -> Result<f64> {
        self.get(&EffectKey {
            estimand,
            stratum: Some(s),
        })
    }

    pub fn population(&self, estimand: Estimand) -> Result<f64> {
        self.get(&EffectKey {
            estimand,
            stratum: None,
        })
    }
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::DivisionByZero(format!("{what} = {v} on the ratio scale")))
    }
}

/// Stratum and ITT effects from a complete theta table.
pub fn assemble_effects(thetas: &ThetaTable, scale: Scale) -> Result<EffectSet> {
    let mut values = Vec::new();
    let (mut s11, mut s10, mut s00) = (0.0, 0.0, 0.0);
    let (mut nie_sum, mut nde_sum) = (0.0, 0.0);
    for s in thetas.strata() {
        let (a, b, c) = (thetas.get(1, 1, s)?, thetas.get(1, 0, s)?, thetas.get(0, 0, s)?);
        let e = *thetas
            .proportion
            .get(&s)
            .ok_or_else(|| Error::InvalidArgument(format!("missing proportion for {s}")))?;
        let (nie, nde, pce) = match scale {
            Scale::Difference => {
                let (nie, nde) = (a - b, b - c);
                (nie, nde, nie + nde)
            }
            Scale::RiskRatio => {
                let label = s.label();
                let nie = positive(a, &format!("theta_{label}^(11)"))? / positive(b, &format!("theta_{label}^(10)"))?;
                let nde = b / positive(c, &format!("theta_{label}^(00)"))?;
                (nie, nde, nie * nde)
            }
        };
        for (est, v) in [(Estimand::Pnie, nie), (Estimand::Pnde, nde), (Estimand::Pce, pce)] {
            values.push((
                EffectKey {
                    estimand: est,
                    stratum: Some(s),
                },
                v,
            ));
        }
        s11 += e * a;
        s10 += e * b;
        s00 += e * c;
        nie_sum += e * (a - b);
        nde_sum += e * (b - c);
    }
    let (nie, nde, itt) = match scale {
        Scale::Difference => (nie_sum, nde_sum, nie_sum + nde_sum),
        Scale::RiskRatio => {
            let nie = s11 / positive(s10, "ITT mean under (1,0)")?;
            let nde = s10 / positive(s00, "ITT mean under (0,0)")?;
            (nie, nde, nie * nde)
        }
    };
    for (est, v) in [(Estimand::IttNie, nie), (Estimand::IttNde, nde), (Estimand::Itt, itt)] {
        values.push((
            EffectKey {
                estimand: est,
                stratum: None,
            },
            v,
        ));
    }
    Ok(EffectSet { scale, values })
}

/// Thetas followed by effects, as `(key, value)` pairs in a stable order.
pub fn flatten(thetas: &ThetaTable, effects: &EffectSet) -> Vec<(EffectKey, f64)> {
    let mut out: Vec<(EffectKey, f64)> = thetas.theta.iter().map(|(t, v)| (EffectKey::theta(*t), *v)).collect();
    out.extend(effects.values.iter().copied());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vals: [(Stratum, f64, f64, f64, f64); 3]) -> ThetaTable {
        let mut theta = BTreeMap::new();
        let mut proportion = BTreeMap::new();
        for (s, e, a, b, c) in vals {
            let [t11, t10, t00] = TargetIndex::effect_targets(s);
            theta.insert(t11, a);
            theta.insert(t10, b);
            theta.insert(t00, c);
            proportion.insert(s, e);
        }
        ThetaTable {
            mode: Monotonicity::Standard,
            theta,
            proportion,
        }
    }

    #[test]
    fn null_effects() {
        let t = table([
            (Stratum::COMPLIER, 0.5, 2.0, 2.0, 2.0),
            (Stratum::ALWAYS, 0.2, 3.0, 3.0, 3.0),
            (Stratum::NEVER, 0.3, 1.0, 1.0, 1.0),
        ]);
        let d = assemble_effects(&t, Scale::Difference).unwrap();
        assert!(d.values.iter().all(|(_, v)| *v == 0.0));
        let r = assemble_effects(&t, Scale::RiskRatio).unwrap();
        assert!(r.values.iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn decomposition_is_exact() {
        let t = table([
            (Stratum::COMPLIER, 0.45, 2.7, 1.9, 1.3),
            (Stratum::ALWAYS, 0.25, 3.1, 2.2, 2.05),
            (Stratum::NEVER, 0.3, 0.7, 0.9, 1.6),
        ]);
        let d = assemble_effects(&t, Scale::Difference).unwrap();
        for s in [Stratum::COMPLIER, Stratum::ALWAYS, Stratum::NEVER] {
            let nie = d.stratum(Estimand::Pnie, s).unwrap();
            let nde = d.stratum(Estimand::Pnde, s).unwrap();
            assert_eq!(d.stratum(Estimand::Pce, s).unwrap(), nie + nde);
        }
        let itt = d.population(Estimand::Itt).unwrap();
        assert_eq!(itt, d.population(Estimand::IttNie).unwrap() + d.population(Estimand::IttNde).unwrap());
        let r = assemble_effects(&t, Scale::RiskRatio).unwrap();
        let s = Stratum::COMPLIER;
        let lhs = r.stratum(Estimand::Pce, s).unwrap().ln();
        let rhs = r.stratum(Estimand::Pnie, s).unwrap().ln() + r.stratum(Estimand::Pnde, s).unwrap().ln();
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn ratio_rejects_zero() {
        let t = table([
            (Stratum::COMPLIER, 0.45, 2.7, 0.0, 1.3),
            (Stratum::ALWAYS, 0.25, 3.1, 2.2, 2.05),
            (Stratum::NEVER, 0.3, 0.7, 0.9, 1.6),
        ]);
        assert!(matches!(assemble_effects(&t, Scale::RiskRatio), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn method_round_trip() {
        for m in ["a", "b", "c", "d", "mr", "np"] {
            assert_eq!(m.parse::<Method>().unwrap().as_str(), m);
        }
        assert!("e".parse::<Method>().is_err());
    }
}
