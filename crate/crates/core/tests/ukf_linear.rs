use jetstack_core::kalman::{kf_predict, kf_update};
use jetstack_core::parallel::{map_indexed, ExecPolicy};
use jetstack_core::stats::mean_chi_square_interval;
use jetstack_core::ukf::{nees, ukf_predict, ukf_update, GaussianBelief, SigmaParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct LinearSystem {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p0: DMatrix<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = gaussian(rng, n, n);
    (&a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1) * scale
}

fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearSystem {
    let mut f = gaussian(rng, n, n);
    let radius = f.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    f *= rng.random_range(0.5..0.97) / radius;
    LinearSystem {
        f,
        h: gaussian(rng, m, n),
        q: random_pd(rng, n, 0.05),
        r: random_pd(rng, m, 0.1),
        p0: random_pd(rng, n, 1.0),
    }
}

fn sample(rng: &mut ChaCha8Rng, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().unwrap().l();
    let w = DVector::from_fn(cov.nrows(), |_, _| StandardNormal.sample(rng));
    l * w
}

#[test]
fn ukf_matches_kalman_filter_on_linear_systems() {
    let params = SigmaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for system in 0..20 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=4);
        let sys = random_system(&mut rng, n, m);
        let mut truth = sample(&mut rng, &sys.p0);
        let prior = GaussianBelief::new(DVector::zeros(n), sys.p0.clone()).unwrap();
        let mut ukf = prior.clone();
        let mut kf = prior;
        for step in 0..100 {
            truth = &sys.f * truth + sample(&mut rng, &sys.q);
            let z = &sys.h * &truth + sample(&mut rng, &sys.r);

            ukf = ukf_predict(&ukf, |x, _| &sys.f * x, &sys.q, 0.01, &params).unwrap();
            ukf = ukf_update(&ukf, &z, |x| &sys.h * x, &sys.r, &params).unwrap().belief;
            kf = kf_predict(&kf, &sys.f, &sys.q);
            kf = kf_update(&kf, &z, &sys.h, &sys.r).unwrap().0;

            let dm = (&ukf.mean - &kf.mean).norm();
            let dp = (&ukf.covariance - &kf.covariance).norm();
            assert!(dm <= 1e-6 && dp <= 1e-6, "system {system} (n={n}, m={m}) step {step}: mean {dm:e} cov {dp:e}");
        }
    }
}

#[test]
fn linear_predict_and_update_match_closed_form() {
    let params = SigmaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sys = random_system(&mut rng, 4, 2);
    let b = GaussianBelief::new(DVector::from_row_slice(&[0.1, -0.3, 0.7, 1.0]), sys.p0.clone()).unwrap();
    let u = ukf_predict(&b, |x, _| &sys.f * x, &sys.q, 0.1, &params).unwrap();
    let k = kf_predict(&b, &sys.f, &sys.q);
    assert!((&u.mean - &k.mean).amax() < 1e-8);
    assert!((&u.covariance - &k.covariance).amax() < 1e-8);

    let z = DVector::from_row_slice(&[0.4, -0.2]);
    let u = ukf_update(&b, &z, |x| &sys.h * x, &sys.r, &params).unwrap();
    let (k, innovation) = kf_update(&b, &z, &sys.h, &sys.r).unwrap();
    assert!((&u.belief.mean - &k.mean).amax() < 1e-8);
    assert!((&u.belief.covariance - &k.covariance).amax() < 1e-8);
    assert!((&u.innovation - innovation).amax() < 1e-8);
}

#[test]
fn identity_measurement_never_grows_trace() {
    let params = SigmaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let (sp, sr) = (rng.random_range(0.01..10.0), rng.random_range(0.01..10.0));
        let p = random_pd(&mut rng, n, sp);
        let r = random_pd(&mut rng, n, sr);
        let b = GaussianBelief::new(DVector::zeros(n), p.clone()).unwrap();
        let z = sample(&mut rng, &p);
        let post = ukf_update(&b, &z, |x| x.clone(), &r, &params).unwrap().belief;
        assert!(post.covariance.trace() <= p.trace() + 1e-12);
        assert_eq!(post.covariance, post.covariance.transpose());
    }
}

/// Final-time NEES of one run of a fixed linear-Gaussian system.
fn nees_run(sys: &LinearSystem, seed: u64) -> f64 {
    let params = SigmaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.f.nrows();
    let mut truth = sample(&mut rng, &sys.p0);
    let mut b = GaussianBelief::new(DVector::zeros(n), sys.p0.clone()).unwrap();
    for _ in 0..100 {
        truth = &sys.f * truth + sample(&mut rng, &sys.q);
        let z = &sys.h * &truth + sample(&mut rng, &sys.r);
        b = ukf_predict(&b, |x, _| &sys.f * x, &sys.q, 0.01, &params).unwrap();
        b = ukf_update(&b, &z, |x| &sys.h * x, &sys.r, &params).unwrap().belief;
    }
    nees(&b, &truth).unwrap()
}

#[test]
fn average_nees_inside_chi_square_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sys = random_system(&mut rng, 4, 2);
    let runs = 50;
    let values = map_indexed(runs, ExecPolicy::default(), |i| nees_run(&sys, 1000 + i as u64));
    let avg = values.iter().sum::<f64>() / runs as f64;
    let (lo, hi) = mean_chi_square_interval(4, runs, 0.95);
    assert!(avg > lo && avg < hi, "average NEES {avg} outside [{lo}, {hi}]");
}
