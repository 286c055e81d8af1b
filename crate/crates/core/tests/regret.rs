use nalgebra::{dvector, DMatrix, DVector};
use poco_core::descent::{run_predictive_ogd, DescentConfig, DescentMode};
use poco_core::domains::{project_simplex_exact, ConstraintSet, SimplexProjection};
use poco_core::objectives::{
    derive_constants, markowitz, Objective, ObjectiveConstants, ObjectiveFamily, ParamBox,
};
use poco_core::predictors::Predictor;
use poco_core::regret::{
    check_predictive_bound, dynamic_regret, expert_learning_bound, minimizer_oracle, path_length,
    predictive_ogd_bound, proof_chain, simplex_qp, Optima, RegretLedger,
};
use poco_core::scenarios::{switching_path, SwitchingProcessSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tracking() -> ObjectiveFamily {
    ObjectiveFamily::quadratic_tracking(dvector![100.0, 1.0]).unwrap()
}

fn disc() -> ConstraintSet {
    ConstraintSet::origin_ball(2, 50.0).unwrap()
}

/// Minimizer of `Σ wᵢ(xᵢ − cᵢ)²` on the origin ball of radius `r` from the
/// multiplier equation `Σ (wᵢcᵢ/(wᵢ+μ))² = r²`, solved by bisection.
fn ball_tracking_minimizer(w: &[f64], c: &[f64], r: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        w.iter()
            .zip(c)
            .map(|(wi, ci)| wi * ci / (wi + mu))
            .collect()
    };
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm(c) <= r {
        return c.to_vec();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while norm(&at(hi)) > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&at(mid)) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

#[test]
fn disc_minimizer_matches_multiplier_equation() {
    let x = minimizer_oracle(&tracking(), &disc(), &dvector![100.0, 20.0, -50.0]).unwrap();
    let expected = ball_tracking_minimizer(&[100.0, 1.0], &[100.0, 20.0], 50.0);
    assert!(
        (x[0] - expected[0]).abs() < 1e-6 && (x[1] - expected[1]).abs() < 1e-6,
        "{x}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let a = rng.gen_range(-130.0..130.0);
        let b = rng.gen_range(-50.0..50.0);
        let x = minimizer_oracle(&tracking(), &disc(), &dvector![a, b, 0.0]).unwrap();
        let e = ball_tracking_minimizer(&[100.0, 1.0], &[a, b], 50.0);
        assert!((x[0] - e[0]).abs() < 1e-6 && (x[1] - e[1]).abs() < 1e-6);
    }
}

#[test]
fn interior_targets_are_their_own_minimizers() {
    let x = minimizer_oracle(&tracking(), &disc(), &dvector![-10.0, 5.0, 3.0]).unwrap();
    assert!((x - dvector![-10.0, 5.0]).amax() < 1e-12);
}

fn simplex_grid(steps: usize) -> Vec<DVector<f64>> {
    let h = 1.0 / steps as f64;
    let mut out = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps - i {
            let (a, b) = (i as f64 * h, j as f64 * h);
            out.push(dvector![a, b, (1.0 - a - b).max(0.0)]);
        }
    }
    out
}

#[test]
fn markowitz_vertex_example() {
    let f = ObjectiveFamily::markowitz(2, 0.5).unwrap();
    let theta = markowitz::pack(&dvector![10.0, 0.0], &DMatrix::identity(2, 2), 1.0);
    let set = ConstraintSet::simplex(2, SimplexProjection::Exact).unwrap();
    let x = minimizer_oracle(&f, &set, &theta).unwrap();
    assert!((x - dvector![1.0, 0.0]).amax() < 1e-12);
}

#[test]
fn simplex_qp_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let grid = simplex_grid(300);
    for _ in 0..20 {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let q = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
        let c = DVector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0));
        let obj = |x: &DVector<f64>| 0.5 * x.dot(&(&q * x)) + c.dot(x);
        let x = simplex_qp(&q, &c).unwrap();
        assert!((x.sum() - 1.0).abs() < 1e-12 && x.iter().all(|&v| v >= 0.0));
        let best = grid.iter().map(&obj).fold(f64::INFINITY, f64::min);
        assert!(obj(&x) <= best + 1e-12);
    }
}

#[test]
fn simplex_qp_matches_projected_gradient_in_ten_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..20 {
        let a = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
        let q = &a * a.transpose() + DMatrix::identity(10, 10) * 0.05;
        let c = DVector::from_fn(10, |_, _| rng.gen_range(-3.0..3.0));
        let step = 1.0 / q.symmetric_eigenvalues().max();
        let mut x = DVector::from_element(10, 0.1);
        for _ in 0..200_000 {
            let next = project_simplex_exact(&(&x - (&q * &x + &c) * step));
            let moved = (&next - &x).norm();
            x = next;
            if moved < 1e-14 {
                break;
            }
        }
        let qp = simplex_qp(&q, &c).unwrap();
        assert!((&qp - &x).amax() < 1e-6, "{qp} vs {x}");
    }
}

#[test]
fn regret_and_path_length_examples() {
    assert_eq!(dynamic_regret(&[3.0, 5.0], &[1.0, 1.0]).unwrap(), 6.0);
    assert!(dynamic_regret(&[1.0], &[1.0, 2.0]).is_err());
    assert_eq!(
        path_length(&[dvector![0.0, 0.0], dvector![3.0, 4.0], dvector![3.0, 4.0]]),
        5.0
    );
    assert_eq!(path_length(&[dvector![1.0]]), 0.0);
}

fn tracking_run(
    seed: u64,
    k: usize,
    predictor: &mut Predictor,
) -> (Vec<DVector<f64>>, RegretLedger, Optima, Vec<DVector<f64>>) {
    let spec = SwitchingProcessSpec::standard((4, 4), 10.0, seed).unwrap();
    let scenario = switching_path(&spec, 200).unwrap();
    let optima = Optima::compute(&tracking(), &disc(), &scenario).unwrap();
    let config = DescentConfig::new(1.0 / 200.0, k, DescentMode::Predictive).unwrap();
    let traj = run_predictive_ogd(
        &tracking(),
        &disc(),
        predictor,
        &scenario,
        &[],
        &config,
        &dvector![0.0, 40.0],
    )
    .unwrap();
    let ledger = RegretLedger::new(
        &tracking(),
        &optima,
        &traj.thetas,
        &traj.points,
        &traj.references,
    )
    .unwrap();
    (scenario, ledger, optima, traj.points)
}

fn tracking_constants() -> ObjectiveConstants {
    let theta_box =
        ParamBox::new(dvector![-130.0, -50.0, -80.0], dvector![130.0, 50.0, 60.0]).unwrap();
    derive_constants(&tracking(), &disc(), &theta_box).unwrap()
}

#[test]
fn ledger_resums_per_round_losses() {
    let (scenario, ledger, optima, points) = tracking_run(1, 1, &mut Predictor::var(4).unwrap());
    let direct: f64 = points
        .iter()
        .zip(&scenario)
        .zip(&optima.values)
        .map(|((x, th), o)| tracking().value(x, th).unwrap() - o)
        .sum();
    assert!((ledger.regret - direct).abs() <= 1e-9 * direct.abs());
    assert!(ledger.per_step_regret().iter().all(|&r| r >= -1e-9));
    assert_eq!(*ledger.cumulative_regret().last().unwrap(), ledger.regret);
}

#[test]
fn offset_does_not_change_regret() {
    let spec = SwitchingProcessSpec::standard((4, 4), 10.0, 2).unwrap();
    let scenario = switching_path(&spec, 100).unwrap();
    let shifted: Vec<DVector<f64>> = scenario
        .iter()
        .map(|t| dvector![t[0], t[1], t[2] + 1e4])
        .collect();
    let config = DescentConfig::new(1.0 / 200.0, 1, DescentMode::Standard).unwrap();
    let regret = |s: &[DVector<f64>]| {
        let traj = run_predictive_ogd(
            &tracking(),
            &disc(),
            &mut Predictor::persistence(),
            s,
            &[],
            &config,
            &dvector![0.0, 40.0],
        )
        .unwrap();
        let optima = Optima::compute(&tracking(), &disc(), s).unwrap();
        RegretLedger::new(
            &tracking(),
            &optima,
            &traj.thetas,
            &traj.points,
            &traj.references,
        )
        .unwrap()
        .regret
    };
    let (a, b) = (regret(&scenario), regret(&shifted));
    assert!((a - b).abs() <= 1e-9 * a.abs());
}

#[test]
fn bounds_and_their_derivation_hold_on_tracking_runs() {
    let c = tracking_constants();
    for seed in 0..5 {
        for k in 1..=3 {
            let (_, ledger, optima, points) =
                tracking_run(seed, k, &mut Predictor::var(4).unwrap());
            let (_, check) = check_predictive_bound(&ledger, &c, 1.0 / 200.0, k).unwrap();
            assert!(
                check.holds,
                "seed {seed} k {k}: {} > {}",
                check.measured, check.bound
            );
            let chain = proof_chain(&ledger, &points, &optima, &c, 1.0 / 200.0, k).unwrap();
            assert!(chain.holds(), "seed {seed} k {k}: {chain:?}");
        }
    }
}

#[test]
fn bound_terms_in_limiting_cases() {
    let c = tracking_constants();
    let eta = 1.0 / 200.0;
    let base = predictive_ogd_bound(&c, eta, 1, 10.0, 100.0, 50.0).unwrap();
    // Without movement or prediction error only the initial term remains.
    let still = predictive_ogd_bound(&c, eta, 1, 10.0, 0.0, 0.0).unwrap();
    assert_eq!(still.path, 0.0);
    assert_eq!(still.prediction, 0.0);
    assert_eq!(still.initial, base.initial);
    // More inner steps shrink the initial and path terms.
    let three = predictive_ogd_bound(&c, eta, 3, 10.0, 100.0, 50.0).unwrap();
    assert!(three.initial < base.initial && three.path < base.path);
    assert_eq!(three.prediction, base.prediction);
    // Hand evaluation of the three terms.
    let cc = (1.0f64 - 2.0 * 2.0 * eta / (1.0 + 2.0 * eta)).sqrt();
    let expected = c.g * 10.0 / (1.0 - cc)
        + c.g * cc * 100.0 / (1.0 - cc)
        + c.g * eta * c.c_theta * 50.0 / (1.0 - cc);
    assert!((base.total() - expected).abs() <= 1e-9 * expected);

    let with_experts = expert_learning_bound(&c, eta, 1, 10.0, 100.0, 50.0, c.d, 200, 5).unwrap();
    let extra = c.d * 400f64.sqrt() / 4.0 * (1.0 + 5f64.ln());
    assert!((with_experts - base.total() - extra).abs() <= 1e-9 * with_experts);
    assert!(predictive_ogd_bound(&c, 1.0, 1, 0.0, 0.0, 0.0).is_err());
}

#[test]
fn markowitz_oracle_agrees_with_grid_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let f = ObjectiveFamily::markowitz(3, 0.01).unwrap();
    let set = ConstraintSet::simplex(3, SimplexProjection::Exact).unwrap();
    let grid = simplex_grid(200);
    for _ in 0..20 {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(3, 3) * 0.01;
        let mu = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let theta = markowitz::pack(&mu, &sigma, rng.gen_range(0.0..4.0));
        let x = minimizer_oracle(&f, &set, &theta).unwrap();
        let fx = f.value(&x, &theta).unwrap();
        let best = grid
            .iter()
            .map(|g| f.value(g, &theta).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(fx <= best + 1e-12);
    }
}
