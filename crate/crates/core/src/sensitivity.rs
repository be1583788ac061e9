//! Bias-corrected multiply robust estimators under departures from principal
//! ignorability (`xi` confounding functions) and from mediator ignorability
//! (`t` confounding function).

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    assemble_effects, eif_weighted, flatten, EffectKey, EifComponents, EifTable, LevelWeights, Method, Scale, ThetaTable,
};
use crate::inference::{bootstrap_multi, bootstrap_row, EstimateResult, InferenceKind};
use crate::model::{strata_for_mode, Dataset, Monotonicity, Stratum, TargetIndex};
use crate::nuisance::{fit_parametric_bundle, ModelSpec, Nuisance, Positivity};

/// Constant confounding functions for principal ignorability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSpec {
    /// Complier over always-taker mediator pmf ratio at levels `m >= 1`.
    pub lambda_m1: f64,
    /// Complier over never-taker mediator pmf ratio at levels `m >= 1`.
    pub lambda_m0: f64,
    /// Complier over always-taker outcome mean ratio under treatment.
    pub lambda_y1: f64,
    /// Complier over never-taker outcome mean ratio under control.
    pub lambda_y0: f64,
}

impl XiSpec {
    pub const IDENTITY: XiSpec = XiSpec {
        lambda_m1: 1.0,
        lambda_m0: 1.0,
        lambda_y1: 1.0,
        lambda_y0: 1.0,
    };

    /// Strong monotonicity has no always-takers, so only the control-arm parameters act.
    pub fn strong(lambda_m0: f64, lambda_y0: f64) -> XiSpec {
        XiSpec {
            lambda_m0,
            lambda_y0,
            ..XiSpec::IDENTITY
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_m1", self.lambda_m1),
            ("lambda_m0", self.lambda_m0),
            ("lambda_y1", self.lambda_y1),
            ("lambda_y0", self.lambda_y0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn for_mode(&self, mode: Monotonicity) -> XiSpec {
        match mode {
            Monotonicity::Standard => *self,
            Monotonicity::Strong => XiSpec::strong(self.lambda_m0, self.lambda_y0),
        }
    }
}

/// Constant confounding function for mediator ignorability: `t(m) = zeta` for `m >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TSpec {
    pub zeta: f64,
}

impl TSpec {
    fn check(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidArgument(format!("zeta must be positive, got {}", self.zeta)));
        }
        Ok(())
    }

    #[inline]
    fn t(&self, m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.zeta
        }
    }
}

fn discrete_levels(nuis: &dyn Nuisance) -> Result<usize> {
    nuis.mediator_kind().levels().ok_or_else(|| {
        Error::UnsupportedMediator("sensitivity analysis needs a finite-support mediator".into())
    })
}

/// Observed quantities entering the weight tables at one covariate row.
struct Cell {
    p11: f64,
    p01: f64,
    p10: f64,
    p00: f64,
    delta: f64,
    r11: Vec<f64>,
    r00: Vec<f64>,
}

impl Cell {
    fn at(nuis: &dyn Nuisance, x: &[f64], levels: usize) -> Cell {
        let p11 = nuis.p(1, 1, x);
        let p01 = nuis.p(0, 1, x);
        let mut r11 = vec![0.0; levels];
        let mut r00 = vec![0.0; levels];
        nuis.r_pmf(1, 1, x, &mut r11);
        nuis.r_pmf(0, 0, x, &mut r00);
        Cell {
            p11,
            p01,
            p10: 1.0 - p11,
            p00: 1.0 - p01,
            delta: p11 - p01,
            r11,
            r00,
        }
    }

    /// Mixture denominators `xi Delta + p01` (treated arm) and `xi Delta + p10` (control arm).
    fn den1(&self, xi: f64) -> f64 {
        xi * self.delta + self.p01
    }

    fn den0(&self, xi: f64) -> f64 {
        xi * self.delta + self.p10
    }
}

/// Numerators and denominators of the two zero-level ratios.
struct ZeroLevel {
    num1: f64,
    den1: f64,
    num0: f64,
    den0: f64,
}

impl ZeroLevel {
    fn compute(spec: &XiSpec, c: &Cell) -> Result<ZeroLevel> {
        let (mut s_num1, mut s_den1, mut s_num0, mut s_den0) = (0.0, 0.0, 0.0, 0.0);
        let (l1, l0) = (spec.lambda_m1, spec.lambda_m0);
        for j in 1..c.r11.len() {
            let d1 = c.den1(l1);
            let d0 = c.den0(l0);
            if !(d1 > 0.0) || !(d0 > 0.0) {
                return Err(Error::ImpliedNegativePmf { unit: 0 });
            }
            s_num1 += l1 * c.p11 / d1 * c.r11[j];
            s_den1 += c.p11 / d1 * c.r11[j];
            s_num0 += l0 * c.p00 / d0 * c.r00[j];
            s_den0 += c.p00 / d0 * c.r00[j];
        }
        let z = ZeroLevel {
            num1: 1.0 - s_num1,
            den1: 1.0 - s_den1,
            num0: 1.0 - s_num0,
            den0: 1.0 - s_den0,
        };
        if [z.num1, z.den1, z.num0, z.den0].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::ImpliedNegativePmf { unit: 0 });
        }
        Ok(z)
    }
}

/// `(xi_M^(1)(0, x), xi_M^(0)(0, x))` implied by the level-`m >= 1` ratios.
pub fn xi_zero_level(spec: &XiSpec, nuis: &dyn Nuisance, x: &[f64]) -> Result<(f64, f64)> {
    spec.check()?;
    let levels = discrete_levels(nuis)?;
    let spec = spec.for_mode(nuis.monotonicity());
    let c = Cell::at(nuis, x, levels);
    let z = ZeroLevel::compute(&spec, &c)?;
    Ok((z.num1 / z.den1, z.num0 / z.den0))
}

/// Fills `out[m] = w_{d1d0}^{(zz')}(m, x)` for every level.
fn xi_weights(spec: &XiSpec, nuis: &dyn Nuisance, target: &TargetIndex, x: &[f64], out: &mut [f64]) -> Result<()> {
    let levels = out.len();
    let spec = spec.for_mode(nuis.monotonicity());
    let c = Cell::at(nuis, x, levels);
    let zl = ZeroLevel::compute(&spec, &c)?;
    let s = target.stratum;
    let xi_m1 = |m: usize| if m == 0 { zl.num1 / zl.den1 } else { spec.lambda_m1 };
    let xi_m0 = |m: usize| if m == 0 { zl.num0 / zl.den0 } else { spec.lambda_m0 };

    // Ratio of the stratum-specific mediator pmf to the observed pmf it replaces.
    let mfactor = |m: usize| -> Result<f64> {
        match (s, target.z_prime) {
            (Stratum::COMPLIER, 1) => Ok(if m == 0 {
                zl.num1 / c.r11[0]
            } else {
                spec.lambda_m1 * c.p11 / c.den1(spec.lambda_m1)
            }),
            (Stratum::COMPLIER, 0) => Ok(if m == 0 {
                zl.num0 / c.r00[0]
            } else {
                spec.lambda_m0 * c.p00 / c.den0(spec.lambda_m0)
            }),
            (Stratum::NEVER, 0) => Ok(if m == 0 {
                zl.den0 / c.r00[0]
            } else {
                c.p00 / c.den0(spec.lambda_m0)
            }),
            (Stratum::ALWAYS, 1) => Ok(if m == 0 {
                zl.den1 / c.r11[0]
            } else {
                c.p11 / c.den1(spec.lambda_m1)
            }),
            _ => Ok(1.0),
        }
    };
    // Ratio of the stratum-specific outcome mean to the observed mean it replaces.
    let yfactor = |m: usize| -> f64 {
        match (s, target.z) {
            (Stratum::COMPLIER, 1) => {
                let a = xi_m1(m) * c.delta;
                (a + c.p01) / (c.p01 / spec.lambda_y1 + a)
            }
            (Stratum::COMPLIER, 0) => {
                let a = xi_m0(m) * c.delta;
                (a + c.p10) / (c.p10 / spec.lambda_y0 + a)
            }
            (Stratum::NEVER, 0) => {
                let a = xi_m0(m) * c.delta;
                (a + c.p10) / (c.p10 + spec.lambda_y0 * a)
            }
            (Stratum::ALWAYS, 1) => {
                let a = xi_m1(m) * c.delta;
                (a + c.p01) / (c.p01 + spec.lambda_y1 * a)
            }
            _ => 1.0,
        }
    };
    for (m, o) in out.iter_mut().enumerate() {
        let w = mfactor(m)? * yfactor(m);
        if !w.is_finite() {
            return Err(Error::DivisionByZero(format!("sensitivity weight at level {m}")));
        }
        *o = w;
    }
    Ok(())
}

/// The sensitivity weight `w_{d1d0}^{(zz')}(m, x)`.
pub fn sensitivity_weight_pi(spec: &XiSpec, nuis: &dyn Nuisance, target: &TargetIndex, m: usize, x: &[f64]) -> Result<f64> {
    spec.check()?;
    let levels = discrete_levels(nuis)?;
    if m >= levels {
        return Err(Error::InvalidArgument(format!("level {m} outside 0..{levels}")));
    }
    if !target.stratum.admissible(nuis.monotonicity()) {
        return Err(Error::InadmissibleStratum(target.stratum.label()));
    }
    let mut out = vec![0.0; levels];
    xi_weights(spec, nuis, target, x, &mut out)?;
    Ok(out[m])
}

struct XiWeights(XiSpec);

impl LevelWeights for XiWeights {
    fn fill(&self, nuis: &dyn Nuisance, target: &TargetIndex, x: &[f64], out: &mut [f64]) -> Result<()> {
        xi_weights(&self.0, nuis, target, x, out)
    }
}

/// Per-unit estimating-equation pieces of the `xi`-corrected estimator.
pub fn eif_components_xi(
    data: &Dataset,
    nuis: &dyn Nuisance,
    spec: &XiSpec,
    target: &TargetIndex,
    pos: &Positivity,
) -> Result<EifComponents> {
    spec.check()?;
    discrete_levels(nuis)?;
    eif_weighted(data, nuis, target, pos, Some(&XiWeights(*spec)))
}

/// Multiply robust estimate corrected for a known departure from principal ignorability.
pub fn theta_mr_xi(data: &Dataset, nuis: &dyn Nuisance, spec: &XiSpec, target: &TargetIndex, pos: &Positivity) -> Result<f64> {
    eif_components_xi(data, nuis, spec, target, pos)?.ratio(data)
}

fn rho_at(spec: &TSpec, nuis: &dyn Nuisance, stratum: Stratum, x: &[f64], levels: usize) -> Result<f64> {
    let mut r1 = vec![0.0; levels];
    let mut r0 = vec![0.0; levels];
    nuis.r_pmf(1, stratum.d1, x, &mut r1);
    nuis.r_pmf(0, stratum.d0, x, &mut r0);
    let num: f64 = (0..levels).map(|j| spec.t(j) * r1[j]).sum();
    let den: f64 = (0..levels).map(|j| spec.t(j) * r0[j]).sum();
    if !(den > 0.0) {
        return Err(Error::DivisionByZero("mediator sensitivity weight".into()));
    }
    Ok(num / den)
}

/// The weight `rho_{d1d0}^{(10)}(m, x)`; with `t` shared across arms it is constant in `m`.
pub fn rho_weight(spec: &TSpec, nuis: &dyn Nuisance, stratum: Stratum, m: usize, x: &[f64]) -> Result<f64> {
    spec.check()?;
    let levels = discrete_levels(nuis)?;
    if m >= levels {
        return Err(Error::InvalidArgument(format!("level {m} outside 0..{levels}")));
    }
    rho_at(spec, nuis, stratum, x, levels)
}

struct RhoWeights(TSpec);

impl LevelWeights for RhoWeights {
    fn fill(&self, nuis: &dyn Nuisance, target: &TargetIndex, x: &[f64], out: &mut [f64]) -> Result<()> {
        let rho = rho_at(&self.0, nuis, target.stratum, x, out.len())?;
        out.iter_mut().for_each(|o| *o = rho);
        Ok(())
    }
}

/// Per-unit pieces of the `t`-corrected estimator for target `(1, 0)`.
pub fn eif_components_t(data: &Dataset, nuis: &dyn Nuisance, spec: &TSpec, stratum: Stratum, pos: &Positivity) -> Result<EifComponents> {
    spec.check()?;
    discrete_levels(nuis)?;
    let target = TargetIndex::new(1, 0, stratum)?;
    eif_weighted(data, nuis, &target, pos, Some(&RhoWeights(*spec)))
}

/// Multiply robust estimate of `theta^{(10)}` corrected for mediator-outcome confounding.
pub fn theta_mr_t(data: &Dataset, nuis: &dyn Nuisance, spec: &TSpec, stratum: Stratum, pos: &Positivity) -> Result<f64> {
    eif_components_t(data, nuis, spec, stratum, pos)?.ratio(data)
}

/// One point of a sensitivity grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensitivityPoint {
    Xi(XiSpec),
    T(TSpec),
}

impl SensitivityPoint {
    /// Per-unit pieces for `target`; `t` departures only touch `(1, 0)`.
    pub fn components(
        &self,
        data: &Dataset,
        nuis: &dyn Nuisance,
        target: &TargetIndex,
        pos: &Positivity,
    ) -> Result<EifComponents> {
        match self {
            SensitivityPoint::Xi(spec) => eif_components_xi(data, nuis, spec, target, pos),
            SensitivityPoint::T(spec) => {
                if target.z == 1 && target.z_prime == 0 {
                    eif_components_t(data, nuis, spec, target.stratum, pos)
                } else {
                    crate::estimators::eif_components(data, nuis, target, pos)
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SensitivityPoint::Xi(s) => format!(
                "lambda_m1={} lambda_m0={} lambda_y1={} lambda_y0={}",
                s.lambda_m1, s.lambda_m0, s.lambda_y1, s.lambda_y0
            ),
            SensitivityPoint::T(s) => format!("zeta={}", s.zeta),
        }
    }
}

/// Settings of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub effect: EffectKey,
    pub scale: Scale,
    pub model: ModelSpec,
    pub positivity: Positivity,
    /// Bootstrap replicates; 0 reports point estimates only.
    pub bootstrap: usize,
    pub interval: InferenceKind,
    pub level: f64,
    pub seed: u64,
}

/// One grid point's outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub point: SensitivityPoint,
    pub label: String,
    pub result: Option<EstimateResult>,
    pub error: Option<String>,
    /// First row whose conclusion about the null differs from the row before it.
    pub tipping: bool,
}

/// Every `theta` under one grid point, sharing the bundle.
pub fn thetas_at(data: &Dataset, nuis: &dyn Nuisance, point: &SensitivityPoint, pos: &Positivity) -> Result<ThetaTable> {
    let comps = strata_for_mode(data.monotonicity())
        .into_iter()
        .flat_map(TargetIndex::effect_targets)
        .map(|t| point.components(data, nuis, &t, pos))
        .collect::<Result<Vec<_>>>()?;
    EifTable::from_components(data.monotonicity(), comps).thetas(data)
}

/// The requested effect under one grid point.
pub fn effect_at(data: &Dataset, nuis: &dyn Nuisance, point: &SensitivityPoint, key: &EffectKey, scale: Scale, pos: &Positivity) -> Result<f64> {
    let thetas = thetas_at(data, nuis, point, pos)?;
    let effects = assemble_effects(&thetas, scale)?;
    flatten(&thetas, &effects)
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::InvalidArgument(format!("effect {} not available", key.estimand.name())))
}

fn grid_values(data: &Dataset, grid: &[SensitivityPoint], opts: &GridOptions) -> Result<Vec<Result<f64>>> {
    let bundle = fit_parametric_bundle(data, &opts.model)?;
    Ok(grid
        .par_iter()
        .map(|p| effect_at(data, &bundle, p, &opts.effect, opts.scale, &opts.positivity))
        .collect())
}

/// Position of the interval (or the point, without one) relative to the null value.
fn conclusion(r: &EstimateResult, null: f64) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    if r.ci_low.is_nan() {
        return r.point.partial_cmp(&null).unwrap_or(Ordering::Equal);
    }
    if r.ci_low > null {
        Ordering::Greater
    } else if r.ci_high < null {
        Ordering::Less
    } else {
        Ordering::Equal
    }
}

/// Bias-corrected multiply robust estimates of one effect over a grid of departures.
pub fn sensitivity_grid(data: &Dataset, grid: &[SensitivityPoint], opts: &GridOptions) -> Result<Vec<GridRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sensitivity grid is empty".into()));
    }
    if !data.mediator_kind().is_discrete() {
        return Err(Error::UnsupportedMediator("sensitivity analysis needs a finite-support mediator".into()));
    }
    let points = grid_values(data, grid, opts)?;
    let boots = if opts.bootstrap > 0 {
        let ok: Vec<bool> = points.iter().map(|p| p.is_ok()).collect();
        Some(bootstrap_multi(
            data,
            |d| {
                let vals = grid_values(d, grid, opts)?;
                Ok(vals
                    .into_iter()
                    .zip(&ok)
                    .map(|(v, ok)| if *ok { v.unwrap_or(f64::NAN) } else { 0.0 })
                    .collect())
            },
            grid.len(),
            opts.bootstrap,
            opts.seed,
            opts.level,
        )?)
    } else {
        None
    };
    let null = match opts.scale {
        Scale::Difference => 0.0,
        Scale::RiskRatio => 1.0,
    };
    let mut rows = Vec::with_capacity(grid.len());
    let mut previous: Option<std::cmp::Ordering> = None;
    for (k, (p, v)) in grid.iter().zip(points).enumerate() {
        let mut row = GridRow {
            point: *p,
            label: p.label(),
            result: None,
            error: None,
            tipping: false,
        };
        let outcome = v.and_then(|point| match &boots {
            Some(b) => {
                let boot = b[k].clone()?;
                Ok(bootstrap_row(&opts.effect, opts.scale, Method::Mr, point, &boot, opts.interval, opts.level, opts.seed))
            }
            None => Ok(EstimateResult {
                estimand: opts.effect.estimand.name(),
                stratum: opts.effect.stratum_label(),
                scale: opts.scale.as_str().to_string(),
                method: Method::Mr,
                point,
                se: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                inference: opts.interval,
                b_or_v: 0,
                seed: opts.seed,
            }),
        });
        match outcome {
            Ok(r) => {
                let state = conclusion(&r, null);
                if let Some(prev) = previous {
                    row.tipping = prev != state && !rows.iter().any(|r: &GridRow| r.tipping);
                }
                previous = Some(state);
                row.result = Some(r);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MediatorKind;

    struct Fixed {
        mode: Monotonicity,
        p11: f64,
        p01: f64,
        r: [[f64; 2]; 2],
    }

    impl Nuisance for Fixed {
        fn mediator_kind(&self) -> MediatorKind {
            MediatorKind::Binary
        }
        fn monotonicity(&self) -> Monotonicity {
            self.mode
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
        fn r(&self, z: u8, d: u8, m: f64, _x: &[f64]) -> f64 {
            let key = if z == 1 && d == 1 { self.r[1][1] } else if z == 0 && d == 0 { self.r[0][0] } else { 0.4 };
            if m == 1.0 {
                key
            } else {
                1.0 - key
            }
        }
        fn mu(&self, _z: u8, _d: u8, m: f64, _x: &[f64]) -> f64 {
            1.0 + m
        }
    }

    fn fixed() -> Fixed {
        Fixed {
            mode: Monotonicity::Standard,
            p11: 0.7,
            p01: 0.2,
            r: [[0.3, 0.0], [0.0, 0.55]],
        }
    }

    #[test]
    fn identity_weights_are_one() {
        let f = fixed();
        for s in [Stratum::COMPLIER, Stratum::ALWAYS, Stratum::NEVER] {
            for t in TargetIndex::effect_targets(s) {
                for m in 0..2 {
                    let w = sensitivity_weight_pi(&XiSpec::IDENTITY, &f, &t, m, &[0.0]).unwrap();
                    assert!((w - 1.0).abs() < 1e-12, "{} m={m}: {w}", t.label());
                }
            }
        }
        let (a, b) = xi_zero_level(&XiSpec::IDENTITY, &f, &[0.0]).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_level_binary_closed_form() {
        let f = fixed();
        let spec = XiSpec {
            lambda_m1: 2.0,
            ..XiSpec::IDENTITY
        };
        let (a, _) = xi_zero_level(&spec, &f, &[0.0]).unwrap();
        // (1 - l p11 r / (l D + p01)) / (1 - p11 r / (l D + p01)), D = 0.5, r = 0.55
        let den = 2.0 * 0.5 + 0.2;
        let want = (1.0 - 2.0 * 0.7 * 0.55 / den) / (1.0 - 0.7 * 0.55 / den);
        assert!((a - want).abs() < 1e-14);
    }

    #[test]
    fn zero_level_decreases_in_lambda_m0() {
        let f = fixed();
        let mut last = f64::INFINITY;
        for l in [0.5, 0.8, 1.0, 1.2, 1.5, 1.9] {
            let (_, b) = xi_zero_level(&XiSpec::strong(l, 1.0), &f, &[0.0]).unwrap();
            assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn infeasible_lambda_is_reported() {
        let f = Fixed {
            r: [[0.7, 0.0], [0.0, 0.55]],
            ..fixed()
        };
        let spec = XiSpec {
            lambda_m0: 50.0,
            ..XiSpec::IDENTITY
        };
        assert!(matches!(xi_zero_level(&spec, &f, &[0.0]), Err(Error::ImpliedNegativePmf { .. })));
    }

    #[test]
    fn fixed_tables_of_ones() {
        let f = fixed();
        let spec = XiSpec {
            lambda_m1: 1.7,
            lambda_m0: 0.6,
            lambda_y1: 1.3,
            lambda_y0: 0.8,
        };
        for (s, z, zp) in [(Stratum::ALWAYS, 0, 0), (Stratum::NEVER, 1, 1)] {
            let t = TargetIndex::new(z, zp, s).unwrap();
            for m in 0..2 {
                assert_eq!(sensitivity_weight_pi(&spec, &f, &t, m, &[0.0]).unwrap(), 1.0);
            }
        }
        let strong = Fixed {
            mode: Monotonicity::Strong,
            p01: 0.0,
            ..fixed()
        };
        let t = TargetIndex::new(1, 1, Stratum::COMPLIER).unwrap();
        for m in 0..2 {
            let w = sensitivity_weight_pi(&spec, &strong, &t, m, &[0.0]).unwrap();
            assert!((w - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_closed_form() {
        let f = fixed();
        let spec = TSpec { zeta: 1.8 };
        let rho = rho_weight(&spec, &f, Stratum::COMPLIER, 0, &[0.0]).unwrap();
        let t1 = 0.45 + 1.8 * 0.55;
        let t0 = 0.7 + 1.8 * 0.3;
        assert!((rho - t1 / t0).abs() < 1e-15);
        assert_eq!(rho_weight(&TSpec { zeta: 1.0 }, &f, Stratum::COMPLIER, 1, &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn implied_stratum_pmfs_sum_to_one() {
        for (p11, p01, r11, r00) in [(0.7, 0.2, 0.55, 0.3), (0.9, 0.5, 0.2, 0.6), (0.4, 0.1, 0.8, 0.45)] {
            let f = Fixed {
                mode: Monotonicity::Standard,
                p11,
                p01,
                r: [[r00, 0.0], [0.0, r11]],
            };
            for (l1, l0) in [(0.8, 1.1), (1.2, 0.9), (1.0, 1.3)] {
                let spec = XiSpec {
                    lambda_m1: l1,
                    lambda_m0: l0,
                    ..XiSpec::IDENTITY
                };
                let (x1, x0) = xi_zero_level(&spec, &f, &[0.0]).unwrap();
                let delta = p11 - p01;
                let always: f64 = [(x1, 1.0 - r11), (l1, r11)].iter().map(|(xi, r)| r * p11 / (xi * delta + p01)).sum();
                let never: f64 = [(x0, 1.0 - r00), (l0, r00)].iter().map(|(xi, r)| r * (1.0 - p01) / (xi * delta + 1.0 - p11)).sum();
                let complier1: f64 = [(x1, 1.0 - r11), (l1, r11)].iter().map(|(xi, r)| xi * r * p11 / (xi * delta + p01)).sum();
                for v in [always, never, complier1] {
                    assert!((v - 1.0).abs() < 1e-10, "{v}");
                }
            }
        }
    }
}
