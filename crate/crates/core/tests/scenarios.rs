use std::io::Write;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use poco_core::scenarios::{
    estimate_moments, gen_risk_daily, gen_risk_path, gen_switching, load_market_csv,
    switching_path, synthetic_market, MarketData, RiskProcessSpec, SwitchingProcessSpec,
    COVARIANCE_RIDGE,
};
use poco_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn risk_spec() -> RiskProcessSpec {
    RiskProcessSpec {
        warmup_days: 240,
        base_level: 4.0,
        stay_probability: 0.9,
        jump_range: (1, 20),
        noise_variance: 0.64,
        cadence_days: 30,
    }
}

#[test]
fn redrawn_levels_are_uniform() {
    let spec = RiskProcessSpec {
        stay_probability: 0.0,
        ..risk_spec()
    };
    let draws = 100_000;
    let daily = gen_risk_daily(&spec, spec.warmup_days + 1 + draws, 1).unwrap();
    let mut counts = [0usize; 20];
    for (level, redrawn) in daily.level.iter().zip(&daily.redrawn) {
        if *redrawn {
            counts[*level as usize - 1] += 1;
        }
    }
    assert_eq!(counts.iter().sum::<usize>(), draws);
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99th percentile of χ² with 19 degrees of freedom.
    assert!(chi2 < 36.19, "chi2 = {chi2}");
}

#[test]
fn level_changes_about_one_day_in_ten() {
    let spec = risk_spec();
    let days = 10_000;
    let daily = gen_risk_daily(&spec, spec.warmup_days + 1 + days, 2).unwrap();
    let redraws = daily.redrawn.iter().filter(|&&r| r).count();
    let rate = redraws as f64 / days as f64;
    assert!((rate - 0.1).abs() <= 0.01, "rate {rate}");
    assert!(daily.redrawn[..=spec.warmup_days].iter().all(|&r| !r));
    assert!(daily.level[..=spec.warmup_days].iter().all(|&l| l == 4.0));
}

#[test]
fn risk_is_nonnegative_and_sampled_monthly() {
    let spec = RiskProcessSpec {
        base_level: 0.0,
        ..risk_spec()
    };
    let daily = gen_risk_daily(&spec, 2000, 3).unwrap();
    assert!(daily.risk.iter().all(|&r| r >= 0.0));
    assert!(daily.risk[..240].contains(&0.0));
    let monthly = gen_risk_path(&spec, 2000, 3).unwrap();
    assert_eq!(monthly.len(), 2000 / 30);
    assert_eq!(monthly[0], daily.risk[29]);
    assert_eq!(monthly[1], daily.risk[59]);
    assert!(gen_risk_path(&spec, 100, 3).is_err());
}

#[test]
fn invalid_risk_specs() {
    for bad in [
        RiskProcessSpec {
            stay_probability: 1.5,
            ..risk_spec()
        },
        RiskProcessSpec {
            jump_range: (5, 1),
            ..risk_spec()
        },
        RiskProcessSpec {
            cadence_days: 0,
            ..risk_spec()
        },
    ] {
        assert!(gen_risk_daily(&bad, 10, 0).is_err());
    }
}

#[test]
fn switching_process_examples() {
    let spec = SwitchingProcessSpec::standard((4, 6), 0.0, 0).unwrap();
    let path = switching_path(&spec, 21).unwrap();
    let a = dvector![-100.0, 0.0, 30.0];
    let b = dvector![100.0, 20.0, -50.0];
    for t in 1..=21 {
        let expected = if (t - 1) % 10 < 4 { &a } else { &b };
        assert_eq!(&path[t - 1], expected, "t = {t}");
    }
    assert!(gen_switching(&spec, 0).is_err());
}

#[test]
fn switching_noise_matches_its_covariance() {
    let cov = dmatrix![4.0, 1.0, 0.0; 1.0, 2.0, 0.0; 0.0, 0.0, 0.5];
    let spec =
        SwitchingProcessSpec::new(DVector::zeros(3), DVector::zeros(3), (1, 1), cov.clone(), 9)
            .unwrap();
    let path = switching_path(&spec, 50_000).unwrap();
    let n = path.len() as f64;
    let sample = path
        .iter()
        .fold(DMatrix::zeros(3, 3), |acc, v| acc + v * v.transpose())
        / n;
    assert!((&sample - &cov).amax() < 0.1, "{sample}");
    // Each step has its own stream, so values do not depend on call order.
    assert_eq!(gen_switching(&spec, 777).unwrap(), path[776]);
    let other = spec.with_seed(10);
    assert_ne!(gen_switching(&other, 777).unwrap(), path[776]);
}

#[test]
fn moments_recover_the_generating_distribution() {
    let mu = dvector![0.05, 0.03];
    let cov = dmatrix![1e-4, 5e-5; 5e-5, 1e-4];
    let factor = cov.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let days = 6000;
    let mut relatives = DMatrix::zeros(days, 2);
    for d in 0..days {
        let z = DVector::from_fn(2, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let r = &mu + &factor * z;
        for i in 0..2 {
            relatives[(d, i)] = 1.0 + r[i];
        }
    }
    let data = MarketData::new(relatives, vec!["a".into(), "b".into()]).unwrap();
    let (m, s) = estimate_moments(&data, days, 5000).unwrap();
    for i in 0..2 {
        assert!((m[i] - mu[i]).abs() <= 0.05 * mu[i]);
        for j in 0..2 {
            let ridge = if i == j { COVARIANCE_RIDGE } else { 0.0 };
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!(
                (s[(i, j)] - ridge - cov[(i, j)]).abs() <= 0.05 * scale,
                "({i},{j})"
            );
        }
    }
    assert!(estimate_moments(&data, days, 1).is_err());
    assert!(estimate_moments(&data, 10, 20).is_err());
    assert!(estimate_moments(&data, days + 1, 20).is_err());
}

#[test]
fn risk_free_column_and_synthetic_market() {
    let data = synthetic_market(4, 300, 7).unwrap();
    assert_eq!((data.days(), data.assets()), (300, 4));
    assert_eq!(data, synthetic_market(4, 300, 7).unwrap());
    let with = data.with_risk_free();
    assert_eq!(with.assets(), 5);
    let daily = 1.01f64.powf(1.0 / 360.0);
    assert!(with.relatives.column(4).iter().all(|&v| v == daily));
    assert_eq!(with.names.last().unwrap(), "risk_free");
}

fn csv_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn loads_market_files() {
    let f = csv_file("AAA,BBB\n1.0,1.01\n0.99,1.02\n");
    let data = load_market_csv(f.path()).unwrap();
    assert_eq!(data.names, vec!["AAA", "BBB"]);
    assert_eq!(data.relatives, dmatrix![1.0, 1.01; 0.99, 1.02]);

    let f = csv_file("1,1\n1,1\n");
    let data = load_market_csv(f.path()).unwrap();
    assert_eq!(data.names, vec!["asset1", "asset2"]);
    let (mean, cov) = estimate_moments(&data, 2, 2).unwrap();
    assert_eq!(mean, DVector::zeros(2));
    assert_eq!(cov, DMatrix::identity(2, 2) * COVARIANCE_RIDGE);
}

#[test]
fn market_file_errors_name_the_cell() {
    let cases = [
        ("a,b\n1.0,1.0\n1.0,\n", "row 3, column 2"),
        ("a,b\n1.0,1.0\n1.0,x\n", "row 3, column 2"),
        ("1.0,1.0\n-0.5,1.0\n", "row 2, column 1"),
        ("1.0,1.0\n1.0,0\n", "row 2, column 2"),
        ("1.0,1.0\n1.0\n", "row 2"),
        ("a,b\n", "no data"),
    ];
    for (text, needle) in cases {
        let f = csv_file(text);
        let err = load_market_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{text:?}: {err:?}");
        assert!(err.to_string().contains(needle), "{text:?}: {err}");
    }
    assert!(load_market_csv(std::path::Path::new("/nonexistent/prices.csv")).is_err());
}
