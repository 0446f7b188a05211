use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trp::linalg::SquareMatrix;
use trp::mvn::{
    mvn_probability, mvn_probability_dense, prioritize, MvnIntegrator, MvnProblem, QmcParams,
};

/// `A Aᵀ + 0.2 I` with standard normal `A`, plus a random box around zero.
fn random_problem(k: usize, seed: u64) -> MvnProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..k * k).map(|_| rng.sample(StandardNormal)).collect();
    let cov = SquareMatrix::from_fn(k, |i, j| {
        let dot: f64 = (0..k).map(|m| a[i * k + m] * a[j * k + m]).sum();
        dot + if i == j { 0.2 } else { 0.0 }
    });
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..k)
        .map(|i| {
            let sd = cov[(i, i)].sqrt();
            let l = -rng.random_range(0.2..2.0) * sd;
            let h = rng.random_range(0.2..2.0) * sd;
            (l, h)
        })
        .unzip();
    MvnProblem::new(lo, hi, cov).unwrap()
}

#[test]
fn qmc_agrees_with_dense_on_random_spd_problems() {
    let qmc = QmcParams::default();
    for seed in 0..20u64 {
        let k = 2 + (seed % 3) as usize;
        let problem = random_problem(k, 1000 + seed);
        let dense = mvn_probability_dense(&problem).unwrap();
        let est = mvn_probability(&problem, &qmc.with_seed(seed)).unwrap();
        let gap = (est.p - dense).abs();
        assert!(
            gap <= (3.0 * est.err).max(1e-3),
            "seed {seed} k {k}: qmc {} ± {} dense {dense}",
            est.p,
            est.err
        );
    }
}

#[test]
fn qmc_agrees_with_plain_monte_carlo() {
    let problem = random_problem(4, 77);
    let est = mvn_probability(&problem, &QmcParams::default()).unwrap();
    let cov = problem.covariance();
    let l = trp::linalg::cholesky(cov).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400_000;
    let mut hits = 0usize;
    for _ in 0..n {
        let z: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let inside = (0..4).all(|i| {
            let x: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            problem.lower()[i] <= x && x <= problem.upper()[i]
        });
        hits += inside as usize;
    }
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!(
        (p - est.p).abs() <= 4.0 * se + est.err,
        "mc {p} qmc {}",
        est.p
    );
}

#[test]
fn error_estimate_covers_the_truth() {
    let problem = random_problem(3, 4242);
    let dense = mvn_probability_dense(&problem).unwrap();
    let qmc = QmcParams {
        n_points: 200,
        ..QmcParams::default()
    };
    let covered = (0..100u64)
        .filter(|&seed| {
            let est = mvn_probability(&problem, &qmc.with_seed(seed)).unwrap();
            (est.p - dense).abs() <= est.err
        })
        .count();
    assert!(covered >= 95, "coverage {covered}/100");
}

#[test]
fn dense_oracle_matches_closed_form_in_two_dimensions() {
    // Independent coordinates factorize.
    let cov = SquareMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
    let problem = MvnProblem::new(vec![-1.0, -1.0], vec![0.5, 2.0], cov).unwrap();
    let cdf = trp::normal::cdf;
    let expect = (cdf(0.5) - cdf(-1.0)) * (cdf(1.0) - cdf(-0.5));
    assert!((mvn_probability_dense(&problem).unwrap() - expect).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn widening_the_box_never_lowers_the_estimate(seed in 0u64..10_000, grow in 0.0f64..1.5) {
        let problem = random_problem(4, seed);
        let order = prioritize(problem.lower(), problem.upper(), problem.covariance());
        let qmc = QmcParams { n_points: 300, n_shifts: 4, ..QmcParams::default() };
        let integrator = MvnIntegrator::new(problem.covariance(), order, &qmc).unwrap();
        let base = integrator.probability(problem.lower(), problem.upper());
        let lo: Vec<f64> = problem.lower().iter().map(|l| l - grow).collect();
        let hi: Vec<f64> = problem.upper().iter().map(|h| h + grow).collect();
        let wide = integrator.probability(&lo, &hi);
        prop_assert!(wide.p >= base.p - 1e-12, "{} < {}", wide.p, base.p);
        prop_assert!((0.0..=1.0).contains(&wide.p));
    }
}
