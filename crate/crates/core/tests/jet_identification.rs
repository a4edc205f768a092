use jetstack_core::jet::{
    generate_bench_data, identify_coefficients, jet_step, JetCoefficients, JetState, ThrottleProfile,
};

fn staircase() -> ThrottleProfile {
    ThrottleProfile::staircase(&[0.0, 30.0, 60.0, 90.0, 45.0, 75.0, 15.0], 4.0)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn noiseless_recovery_within_one_percent() {
    let truth = JetCoefficients::reference();
    let data = generate_bench_data(&truth, &staircase(), 0.0, 1).unwrap();
    let fit = identify_coefficients(&data).unwrap();
    let c = fit.coeffs;
    for (name, got, want) in [
        ("a1", c.a1, truth.a1),
        ("a2", c.a2, truth.a2),
        ("b1", c.b1, truth.b1),
        ("b2", c.b2, truth.b2),
        ("c", c.c, truth.c),
    ] {
        assert!(rel(got, want) < 0.01, "{name}: {got} vs {want}");
    }
}

#[test]
fn basic_staircase_round_trip() {
    let truth = JetCoefficients::reference();
    let profile = ThrottleProfile::staircase(&[0.0, 30.0, 60.0, 90.0], 5.0);
    let data = generate_bench_data(&truth, &profile, 0.0, 2).unwrap();
    let c = identify_coefficients(&data).unwrap().coeffs;
    for (got, want) in [(c.a1, truth.a1), (c.a2, truth.a2), (c.b1, truth.b1), (c.b2, truth.b2), (c.c, truth.c)] {
        assert!(rel(got, want) < 0.01, "{got} vs {want}");
    }
}

#[test]
fn resimulation_reproduces_trace() {
    let truth = JetCoefficients::reference();
    let profile = staircase();
    let data = generate_bench_data(&truth, &profile, 0.0, 3).unwrap();
    let fit = identify_coefficients(&data).unwrap();
    let mut s = JetState::new(truth.idle_thrust, 0.0);
    let (mut err2, mut ref2) = (0.0, 0.0);
    for sample in &data {
        err2 += (s.thrust - sample.thrust).powi(2);
        ref2 += sample.thrust.powi(2);
        for _ in 0..10 {
            s = jet_step(s, sample.u, &fit.coeffs, 0.001).unwrap();
        }
    }
    let rel_rms = (err2 / ref2).sqrt();
    assert!(rel_rms < 0.01, "relative RMS {rel_rms}");
}

#[test]
fn noisy_data_residual_within_two_newtons() {
    let truth = JetCoefficients::reference();
    let profile = staircase();
    for seed in 0..20 {
        let data = generate_bench_data(&truth, &profile, 1.0, 100 + seed).unwrap();
        let fit = identify_coefficients(&data).unwrap();
        assert!(fit.residual_rms <= 2.0, "seed {seed}: residual {} coeffs {:?}", fit.residual_rms, fit.coeffs);
    }
}
