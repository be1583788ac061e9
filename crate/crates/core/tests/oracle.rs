use psmed::estimators::{theta_mr, MomentForm};
use psmed::model::{Monotonicity, Stratum, TargetIndex};
use psmed::nuisance::Positivity;
use psmed::oracle::*;
use psmed::sensitivity::{theta_mr_t, theta_mr_xi, TSpec, XiSpec};
use psmed::Error;

fn exact() -> Positivity {
    Positivity {
        clip_floor: 0.0,
        ..Positivity::default()
    }
}

fn targets(mode: Monotonicity) -> Vec<TargetIndex> {
    psmed::model::strata_for_mode(mode)
        .into_iter()
        .flat_map(TargetIndex::effect_targets)
        .collect()
}

#[test]
fn report_lists_every_identity() {
    let report = certify(&reference_fixture()).unwrap();
    println!("{}", report.summary());
    assert!(report.passed());
    assert_eq!(report.checks.len(), 10);
}

#[test]
fn hand_enumerated_complier_value() {
    // 0.4 * 0.5 * (2.5 * 0.7 + 4.0 * 0.3) + 0.6 * 0.5 * (2.0 * 0.6 + 3.5 * 0.4), over e = 0.5
    let dgp = reference_fixture();
    let t = TargetIndex::new(1, 0, Stratum::COMPLIER).unwrap();
    assert!((oracle_theta(&dgp, &t).unwrap() - 2.74).abs() < 1e-14);
}

#[test]
fn constant_outcome_gives_constant_theta() {
    let mut dgp = reference_strong_fixture();
    for pt in &mut dgp.points {
        for row in pt.mu.iter_mut().flatten() {
            row.iter_mut().for_each(|v| *v = 3.25);
        }
    }
    for t in targets(Monotonicity::Strong) {
        assert!((oracle_theta(&dgp, &t).unwrap() - 3.25).abs() < 1e-14);
    }
}

#[test]
fn no_mediator_shift_means_no_indirect_effect() {
    let mut dgp = reference_fixture();
    for pt in &mut dgp.points {
        let common = pt.r[1][1].clone();
        for row in pt.r.iter_mut().flatten() {
            *row = common.clone();
        }
    }
    for s in [Stratum::COMPLIER, Stratum::ALWAYS, Stratum::NEVER] {
        let a = oracle_theta(&dgp, &TargetIndex::new(1, 1, s).unwrap()).unwrap();
        let b = oracle_theta(&dgp, &TargetIndex::new(1, 0, s).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-14, "{s}");
    }
}

#[test]
fn eif_mean_is_linear_in_theta() {
    let dgp = reference_fixture();
    for t in targets(Monotonicity::Standard) {
        let truth = oracle_theta(&dgp, &t).unwrap();
        assert!((oracle_eif_mean(&dgp, &t, truth + 1.0).unwrap() + 1.0).abs() < 1e-12);
    }
}

#[test]
fn perturbations_actually_bias_unlicensed_forms() {
    // Each form must be off under some single perturbation it does not tolerate,
    // otherwise the robustness checks would hold vacuously.
    let dgp = reference_fixture();
    let t = TargetIndex::new(1, 0, Stratum::COMPLIER).unwrap();
    let truth = oracle_theta(&dgp, &t).unwrap();
    for form in MomentForm::ALL {
        let worst = [Perturbation::PI, Perturbation::P, Perturbation::R, Perturbation::MU]
            .into_iter()
            .filter(|w| *w != licensed_perturbation(form))
            .map(|w| (oracle_moment_expectation_with(&dgp, &dgp.perturbed(w), &t, form).unwrap() - truth).abs())
            .fold(0.0, f64::max);
        assert!(worst > 1e-3, "{form:?}");
    }
    let two_wrong = Perturbation {
        mu: true,
        r: true,
        ..Perturbation::NONE
    };
    let v = oracle_mr_with(&dgp, &dgp.perturbed(two_wrong), &t).unwrap();
    assert!((v - truth).abs() > 1e-3);
}

#[test]
fn identity_violation_equals_plain_truth() {
    for mode in [Monotonicity::Standard, Monotonicity::Strong] {
        let v = XiViolationDgp::reference(mode, XiSpec::IDENTITY).unwrap();
        let obs = v.observed().unwrap();
        for t in targets(mode) {
            let a = oracle_sensitivity_truth(&ViolationDgp::Xi(v.clone()), &t).unwrap();
            assert!((a - oracle_theta(&obs, &t).unwrap()).abs() < 1e-12);
        }
        let tv = TViolationDgp::reference(mode, TSpec { zeta: 1.0 }).unwrap();
        let obs = tv.observed().unwrap();
        for s in psmed::model::strata_for_mode(mode) {
            let t = TargetIndex::new(1, 0, s).unwrap();
            let a = oracle_sensitivity_truth(&ViolationDgp::T(tv.clone()), &t).unwrap();
            assert!((a - oracle_theta(&obs, &t).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_spec_leaves_a_gap() {
    let spec = XiSpec {
        lambda_m1: 1.3,
        lambda_m0: 0.8,
        lambda_y1: 1.15,
        lambda_y0: 0.9,
    };
    let v = XiViolationDgp::reference(Monotonicity::Standard, spec).unwrap();
    let obs = v.observed().unwrap();
    let data = obs.lattice().unwrap();
    let nuis = obs.nuisance();
    let t = TargetIndex::new(1, 0, Stratum::COMPLIER).unwrap();
    let truth = v.truth(&t).unwrap();
    let matched = theta_mr_xi(&data, &nuis, &spec, &t, &exact()).unwrap();
    let naive = theta_mr(&data, &nuis, &t, &exact()).unwrap();
    let wrong = theta_mr_xi(&data, &nuis, &XiSpec { lambda_y1: 1.0, ..spec }, &t, &exact()).unwrap();
    assert!((matched - truth).abs() < 1e-10);
    println!("xi gap: ignoring {:.4}, wrong lambda_y1 {:.4}", naive - truth, wrong - truth);
    assert!((naive - truth).abs() > 1e-3);
    assert!((wrong - truth).abs() > 1e-3);

    let tv = TViolationDgp::reference(Monotonicity::Standard, TSpec { zeta: 1.6 }).unwrap();
    let obs = tv.observed().unwrap();
    let data = obs.lattice().unwrap();
    let nuis = obs.nuisance();
    let truth = tv.truth(Stratum::COMPLIER).unwrap();
    let naive = theta_mr(&data, &nuis, &t, &exact()).unwrap();
    let off = theta_mr_t(&data, &nuis, &TSpec { zeta: 1.2 }, Stratum::COMPLIER, &exact()).unwrap();
    println!("t gap: ignoring {:.4}, zeta 1.2 {:.4}", naive - truth, off - truth);
    assert!((naive - truth).abs() > 1e-3);
    assert!((off - truth).abs() > 1e-3);
}

#[test]
fn t_violation_is_triply_robust() {
    let tv = TViolationDgp::reference(Monotonicity::Standard, TSpec { zeta: 0.7 }).unwrap();
    let obs = tv.observed().unwrap();
    let data = obs.lattice().unwrap();
    for wrong in [Perturbation::MU, Perturbation::PI, Perturbation::P] {
        let nuis = obs.perturbed(wrong).nuisance();
        for s in [Stratum::COMPLIER, Stratum::ALWAYS, Stratum::NEVER] {
            let v = theta_mr_t(&data, &nuis, &tv.spec, s, &exact()).unwrap();
            assert!((v - tv.truth(s).unwrap()).abs() < 1e-10, "{} {s}", wrong.label());
        }
    }
}

#[test]
fn fixture_round_trips_through_json() {
    let dgp = reference_strong_fixture();
    let back = DiscreteDgp::from_json(&dgp.to_json()).unwrap();
    assert_eq!(dgp, back);
}

#[test]
fn invalid_dgps_are_rejected() {
    let base = reference_strong_fixture();
    let mut d = base.clone();
    d.points[0].p1[0] = 0.1;
    assert!(matches!(d.validate(), Err(Error::InvalidDgp(_))));
    let mut d = base.clone();
    d.points[1].prob = 0.3;
    assert!(matches!(d.validate(), Err(Error::InvalidDgp(_))));
    let mut d = base;
    d.points[2].pi1 = 1.0;
    assert!(matches!(d.validate(), Err(Error::InvalidDgp(_))));
    assert!(matches!(DiscreteDgp::from_json("{\"name\": 3}"), Err(Error::InvalidDgp(_))));
}
