use nalgebra::dvector;
use poco_core::descent::{run_predictive_ogd, DescentConfig, DescentMode};
use poco_core::domains::ConstraintSet;
use poco_core::experiments::{
    activation_round, rep_seed, run_experiment, CurveResult, ExperimentId, ExperimentSpec,
    ForecasterKind, Gamma,
};
use poco_core::objectives::ObjectiveFamily;
use poco_core::predictors::Predictor;
use poco_core::regret::Optima;
use poco_core::scenarios::{switching_path, SwitchingProcessSpec};

fn small(id: ExperimentId, reps: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::defaults(id);
    spec.experiment.reps = reps;
    spec
}

#[test]
fn same_seed_same_curve() {
    for id in [ExperimentId::Exp1, ExperimentId::Exp2] {
        let spec = small(id, 4);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.curve, b.curve);
        let mut other = spec.clone();
        other.experiment.seed += 1;
        assert_ne!(run_experiment(&other).unwrap().curve, a.curve);
    }
}

#[test]
fn curve_has_one_entry_per_round_and_starts_at_zero() {
    let out = run_experiment(&small(ExperimentId::Exp1, 3)).unwrap();
    assert_eq!(out.curve.len(), 200);
    assert_eq!(out.curve.reps, 3);
    // Forecasts are only used once the predictor has warmed up.
    assert!(out.curve.mean[..10].iter().all(|&v| v == 0.0));
}

#[test]
fn repetition_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| rep_seed(42, r)).collect();
    assert_eq!(seeds.len(), 1000);
}

#[test]
fn curve_statistics_by_hand() {
    let c = CurveResult::from_runs(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
    assert_eq!(c.mean, vec![2.0, 4.0]);
    assert!((c.std[0] - 2f64.sqrt()).abs() < 1e-12);
    assert!(CurveResult::from_runs(&[]).is_err());
    assert!(CurveResult::from_runs(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}

#[test]
fn activation_schedule() {
    assert_eq!(activation_round(10, 10, 0), 11);
    assert_eq!(activation_round(10, 10, 4), 51);
    assert_eq!(activation_round(0, 0, 3), 1);
}

#[test]
fn noiseless_switching_is_learned_by_the_var_forecaster() {
    let f = ObjectiveFamily::quadratic_tracking(dvector![100.0, 1.0]).unwrap();
    let set = ConstraintSet::origin_ball(2, 50.0).unwrap();
    let scenario = switching_path(
        &SwitchingProcessSpec::standard((4, 4), 0.0, 0).unwrap(),
        200,
    )
    .unwrap();
    let optima = Optima::compute(&f, &set, &scenario).unwrap();
    let x1 = dvector![0.0, 40.0];
    let per_step = |mode, p: &mut Predictor| -> Vec<f64> {
        let cfg = DescentConfig::new(1.0 / 200.0, 1, mode).unwrap();
        let traj = run_predictive_ogd(&f, &set, p, &scenario, &[], &cfg, &x1).unwrap();
        traj.losses
            .iter()
            .zip(&optima.values)
            .map(|(l, o)| l - o)
            .collect()
    };
    let ogd = per_step(DescentMode::Standard, &mut Predictor::persistence());
    let var = per_step(
        DescentMode::Predictive,
        &mut Predictor::var(4)
            .unwrap()
            .with_min_history(10)
            .with_coordinates(vec![0, 1]),
    );
    let switches: Vec<usize> = (40..200).filter(|t| t % 4 == 0).collect();
    let ogd_at: f64 = switches.iter().map(|&t| ogd[t]).sum();
    let var_at: f64 = switches.iter().map(|&t| var[t]).sum();
    assert!(var_at < 0.01 * ogd_at, "{var_at} vs {ogd_at}");
}

#[test]
fn exact_oracle_experts_never_trail_after_activation() {
    let mut spec = small(ExperimentId::Exp2, 10);
    spec.predictors.kind = ForecasterKind::Oracle;
    spec.predictors.oracle_noise = 0.0;
    let out = run_experiment(&spec).unwrap();
    assert!(out.curve.mean[..10].iter().all(|&v| v == 0.0));
    assert!(out.curve.mean[10..].iter().all(|&v| v <= 0.0));
}

#[test]
fn all_experts_from_the_start_satisfy_both_bounds() {
    let mut spec = small(ExperimentId::Exp2, 5);
    spec.smad.first_activation = 0;
    spec.smad.activation_every = 0;
    spec.smad.gamma = Gamma::Auto;
    let out = run_experiment(&spec).unwrap();
    let names: Vec<&str> = out.bounds.iter().map(|b| b.name.as_str()).collect();
    assert!(
        names.contains(&"smad regret bound") && names.contains(&"exponential-weights inequality")
    );
    assert!(out.bounds.iter().all(|b| b.all_hold()), "{:?}", out.bounds);
}

#[test]
fn constant_client_risk_leaves_less_to_predict() {
    let mut switching = small(ExperimentId::Exp3, 4);
    switching.experiment.horizon = 60;
    let mut constant = switching.clone();
    constant.risk.stay_probability = 1.0;
    constant.risk.noise_variance = 0.0;
    let a = run_experiment(&switching)
        .unwrap()
        .curve
        .final_mean()
        .unwrap();
    let b = run_experiment(&constant)
        .unwrap()
        .curve
        .final_mean()
        .unwrap();
    assert!(a < 0.0 && b <= 0.0);
    assert!(b.abs() < a.abs(), "constant {b} vs switching {a}");
}
