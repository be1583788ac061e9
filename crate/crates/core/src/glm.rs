//! Logistic regression by IRLS and Gaussian linear regression by least squares.
//!
//! Designs never contain the intercept column; it is added internally and
//! reported as the first coefficient.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{expit, normal_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Logistic,
    GaussianLinear,
}

/// Row-major `n x q` matrix of regressors (intercept excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    q: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(n: usize, q: usize, data: Vec<f64>) -> Result<Design> {
        if data.len() != n * q {
            return Err(Error::DimensionMismatch {
                expected: n * q,
                got: data.len(),
            });
        }
        Ok(Design { n, q, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Design> {
        let n = rows.len();
        let q = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * q);
        for r in rows {
            if r.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Design { n, q, data })
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Design {
        Design {
            n,
            q: 0,
            data: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }
}

/// Numerical controls for IRLS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrlsOptions {
    /// Bound on the largest component of the mean score.
    pub tolerance: f64,
    pub max_iter: usize,
    pub ridge: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            tolerance: 1e-8,
            max_iter: 100,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit {
    pub family: Family,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    /// `RSS / (n - p)` for Gaussian fits, zero for logistic fits.
    pub residual_variance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when fitted probabilities pin at 0 or 1 and coefficients diverge.
    pub separation: bool,
}

impl GlmFit {
    /// Number of regressors excluding the intercept.
    pub fn dim(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Linear predictor with the `j`-th regressor supplied by `feature(j)`.
    #[inline]
    pub fn linear_predictor_with(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let c = &self.coefficients;
        c[1..].iter().enumerate().fold(c[0], |s, (j, b)| s + b * feature(j))
    }

    #[inline]
    pub fn mean_with(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let eta = self.linear_predictor_with(feature);
        match self.family {
            Family::Logistic => expit(eta),
            Family::GaussianLinear => eta,
        }
    }

    pub fn sd(&self) -> Result<f64> {
        if self.family != Family::GaussianLinear || !(self.residual_variance > 0.0) {
            return Err(Error::DegenerateVariance);
        }
        Ok(self.residual_variance.sqrt())
    }

    pub fn is_degenerate(&self) -> bool {
        self.family == Family::GaussianLinear && !(self.residual_variance > 0.0)
    }
}

fn check_dim(fit: &GlmFit, x_row: &[f64]) -> Result<()> {
    if x_row.len() != fit.dim() {
        return Err(Error::DimensionMismatch {
            expected: fit.dim(),
            got: x_row.len(),
        });
    }
    Ok(())
}

/// `expit(eta)` for logistic fits, `eta` for Gaussian fits.
pub fn predict_mean(fit: &GlmFit, x_row: &[f64]) -> Result<f64> {
    check_dim(fit, x_row)?;
    Ok(fit.mean_with(|j| x_row[j]))
}

/// Normal density of `m` under a Gaussian linear fit.
pub fn gaussian_density(fit: &GlmFit, m: f64, x_row: &[f64]) -> Result<f64> {
    check_dim(fit, x_row)?;
    let sd = fit.sd()?;
    Ok(normal_pdf(m, fit.linear_predictor_with(|j| x_row[j]), sd))
}

/// Fills `buf` with `[1, row...]`.
#[inline]
fn augmented(design: &Design, i: usize, buf: &mut [f64]) {
    buf[0] = 1.0;
    buf[1..].copy_from_slice(design.row(i));
}

fn check_finite(design: &Design) -> Result<()> {
    if design.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design contains non-finite values".into()));
    }
    Ok(())
}

/// Rejects designs whose column-scaled Gram matrix is numerically singular.
fn check_rank(design: &Design) -> Result<()> {
    let k = design.q + 1;
    if design.n < k {
        return Err(Error::RankDeficient);
    }
    let mut g = DMatrix::<f64>::zeros(k, k);
    let mut buf = vec![0.0; k];
    for i in 0..design.n {
        augmented(design, i, &mut buf);
        for a in 0..k {
            for b in a..k {
                g[(a, b)] += buf[a] * buf[b];
            }
        }
    }
    for a in 0..k {
        if !(g[(a, a)] > 0.0) {
            return Err(Error::RankDeficient);
        }
    }
    let scale: Vec<f64> = (0..k).map(|a| g[(a, a)].sqrt()).collect();
    for a in 0..k {
        for b in a..k {
            let v = g[(a, b)] / (scale[a] * scale[b]);
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(g);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-10) {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Solves `h x = g`, adding ridge jitter when `h` is not numerically positive definite.
fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Some(ch.solve(g));
    }
    let k = h.nrows();
    let mut jitter = ridge;
    for _ in 0..12 {
        let hj = h + DMatrix::<f64>::identity(k, k) * jitter;
        if let Some(ch) = Cholesky::new(hj) {
            return Some(ch.solve(g));
        }
        jitter *= 10.0;
    }
    None
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

struct LogisticState {
    loglik: f64,
    score: DVector<f64>,
    hessian: DMatrix<f64>,
}

fn logistic_state(design: &Design, y: &[f64], offset: Option<&[f64]>, beta: &DVector<f64>) -> LogisticState {
    let k = beta.len();
    let n = design.n as f64;
    let mut loglik = 0.0;
    let mut score = DVector::<f64>::zeros(k);
    let mut hessian = DMatrix::<f64>::zeros(k, k);
    let mut buf = vec![0.0; k];
    for i in 0..design.n {
        augmented(design, i, &mut buf);
        let mut eta = offset.map_or(0.0, |o| o[i]);
        for a in 0..k {
            eta += beta[a] * buf[a];
        }
        let p = expit(eta);
        loglik += y[i] * eta - softplus(eta);
        let r = y[i] - p;
        let w = p * (1.0 - p);
        for a in 0..k {
            score[a] += r * buf[a];
            let wa = w * buf[a];
            for b in a..k {
                hessian[(a, b)] += wa * buf[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = hessian[(a, b)] / n;
            hessian[(a, b)] = v;
            hessian[(b, a)] = v;
        }
    }
    LogisticState {
        loglik: loglik / n,
        score: score / n,
        hessian,
    }
}

/// Maximum-likelihood logistic regression.
pub fn fit_logistic(design: &Design, y: &[f64], offset: Option<&[f64]>) -> Result<GlmFit> {
    fit_logistic_with(design, y, offset, &IrlsOptions::default())
}

pub fn fit_logistic_with(
    design: &Design,
    y: &[f64],
    offset: Option<&[f64]>,
    opts: &IrlsOptions,
) -> Result<GlmFit> {
    if y.len() != design.n {
        return Err(Error::DimensionMismatch {
            expected: design.n,
            got: y.len(),
        });
    }
    if let Some(o) = offset {
        if o.len() != design.n {
            return Err(Error::DimensionMismatch {
                expected: design.n,
                got: o.len(),
            });
        }
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidArgument("logistic response must be 0/1".into()));
    }
    check_finite(design)?;
    check_rank(design)?;

    let k = design.q + 1;
    let mut beta = DVector::<f64>::zeros(k);
    if offset.is_none() {
        let ybar = (y.iter().sum::<f64>() / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut state = logistic_state(design, y, offset, &beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        if state.score.amax() < opts.tolerance {
            converged = true;
            iterations = it;
            break;
        }
        iterations = it + 1;
        let Some(step) = solve_spd(&state.hessian, &state.score, opts.ridge) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let s = logistic_state(design, y, offset, &cand);
            if s.loglik.is_finite() && s.loglik >= state.loglik - 1e-15 * state.loglik.abs().max(1.0) {
                accepted = Some((cand, s));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((b, s)) => {
                beta = b;
                state = s;
            }
            None => break,
        }
    }
    if !converged && state.score.amax() < opts.tolerance {
        converged = true;
    }
    // All rows of one class pinned at their label means the MLE does not exist.
    let mut pinned = [true, true];
    let mut present = [false, false];
    for i in 0..design.n {
        let eta = offset.map_or(0.0, |o| o[i])
            + beta[0]
            + design.row(i).iter().zip(beta.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>();
        let p = expit(eta);
        let c = y[i] as usize;
        present[c] = true;
        if (p - y[i]).abs() > 1e-6 {
            pinned[c] = false;
        }
    }
    let separation = (present[0] && pinned[0]) || (present[1] && pinned[1]);
    if separation {
        converged = false;
    }
    Ok(GlmFit {
        family: Family::Logistic,
        coefficients: beta.iter().cloned().collect(),
        residual_variance: 0.0,
        converged,
        iterations,
        separation,
    })
}

/// Ordinary least squares with `sigma^2 = RSS / (n - p)`.
pub fn fit_linear(design: &Design, y: &[f64]) -> Result<GlmFit> {
    if y.len() != design.n {
        return Err(Error::DimensionMismatch {
            expected: design.n,
            got: y.len(),
        });
    }
    check_finite(design)?;
    check_rank(design)?;
    let k = design.q + 1;
    if design.n <= k {
        return Err(Error::RankDeficient);
    }
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut buf = vec![0.0; k];
    for (i, yi) in y.iter().enumerate() {
        augmented(design, i, &mut buf);
        for a in 0..k {
            xty[a] += buf[a] * yi;
            for b in a..k {
                xtx[(a, b)] += buf[a] * buf[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let beta = Cholesky::new(xtx).ok_or(Error::RankDeficient)?.solve(&xty);
    let mut rss = 0.0;
    for (i, yi) in y.iter().enumerate() {
        augmented(design, i, &mut buf);
        let fitted: f64 = buf.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        rss += (yi - fitted).powi(2);
    }
    let mut residual_variance = rss / (design.n - k) as f64;
    let scale = y.iter().map(|v| v * v).sum::<f64>() / design.n as f64;
    if residual_variance <= 1e-24 * scale.max(1.0) {
        residual_variance = 0.0;
    }
    Ok(GlmFit {
        family: Family::GaussianLinear,
        coefficients: beta.iter().cloned().collect(),
        residual_variance,
        converged: true,
        iterations: 1,
        separation: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gauss_legendre;

    #[test]
    fn intercept_only_logistic() {
        let d = Design::intercept_only(4);
        let fit = fit_logistic(&d, &[0.0, 1.0, 0.0, 1.0], None).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        let fit = fit_logistic(&d, &[1.0, 1.0, 0.0, 1.0], None).unwrap();
        assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-8);
        assert!(fit.converged);
    }

    #[test]
    fn predictions() {
        let f = GlmFit {
            family: Family::Logistic,
            coefficients: vec![0.0],
            residual_variance: 0.0,
            converged: true,
            iterations: 0,
            separation: false,
        };
        assert_eq!(predict_mean(&f, &[]).unwrap(), 0.5);
        let g = GlmFit {
            family: Family::GaussianLinear,
            coefficients: vec![1.0, 2.0],
            residual_variance: 1.0,
            ..f.clone()
        };
        assert_eq!(predict_mean(&g, &[3.0]).unwrap(), 7.0);
        let h = GlmFit {
            coefficients: vec![-1.0, 2.0],
            ..f
        };
        assert!((predict_mean(&h, &[1.0]).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(matches!(
            predict_mean(&h, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exact_linear_fit_is_degenerate() {
        let d = Design::intercept_only(5);
        let fit = fit_linear(&d, &[2.0; 5]).unwrap();
        assert_eq!(fit.coefficients, vec![2.0]);
        assert_eq!(fit.residual_variance, 0.0);
        assert_eq!(gaussian_density(&fit, 2.0, &[]), Err(Error::DegenerateVariance));
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let d = Design::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 + 1.0).collect();
        assert_eq!(fit_linear(&d, &y), Err(Error::RankDeficient));
    }

    #[test]
    fn density_values() {
        let fit = GlmFit {
            family: Family::GaussianLinear,
            coefficients: vec![0.0],
            residual_variance: 1.0,
            converged: true,
            iterations: 1,
            separation: false,
        };
        let at0 = gaussian_density(&fit, 0.0, &[]).unwrap();
        assert!((at0 - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(
            gaussian_density(&fit, 1.0, &[]).unwrap(),
            gaussian_density(&fit, -1.0, &[]).unwrap()
        );
    }

    #[test]
    fn density_integrates_to_one() {
        let fit = GlmFit {
            family: Family::GaussianLinear,
            coefficients: vec![0.7, -1.2],
            residual_variance: 2.3,
            converged: true,
            iterations: 1,
            separation: false,
        };
        let x = [0.4];
        let mean = predict_mean(&fit, &x).unwrap();
        let half = 12.0 * fit.residual_variance.sqrt();
        let rule = gauss_legendre(64);
        let total: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(t, w)| w * half * gaussian_density(&fit, mean + half * t, &x).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn separation_is_reported() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let d = Design::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let fit = fit_logistic(&d, &y, None).unwrap();
        assert!(!fit.converged);
        assert!(fit.separation);
        assert!(fit.coefficients.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn offset_shifts_intercept() {
        let d = Design::intercept_only(4);
        let y = [1.0, 1.0, 0.0, 1.0];
        let fit = fit_logistic(&d, &y, Some(&[0.5; 4])).unwrap();
        assert!((fit.coefficients[0] - (3f64.ln() - 0.5)).abs() < 1e-8);
    }
}
