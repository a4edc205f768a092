//! Second-order turbine thrust model.
//!
//! Thrust `T` follows `T'' = a1*T + a2*T' + b1*u + b2*u^2 + c` where `u` is
//! the throttle in percent. The same structure is used by the simulator, the
//! thrust estimator's process model and the controller's prediction model.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, numeric, Error, Result};

/// Peak thrust of one turbine, N.
pub const T_MAX: f64 = 250.0;
pub const THROTTLE_MAX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JetState {
    /// N
    pub thrust: f64,
    /// N/s
    pub thrust_rate: f64,
}

impl JetState {
    pub fn new(thrust: f64, thrust_rate: f64) -> Self {
        Self { thrust, thrust_rate }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.thrust_rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JetCoefficients {
    /// 1/s^2
    pub a1: f64,
    /// 1/s
    pub a2: f64,
    /// N/s^2 per throttle percent
    pub b1: f64,
    /// N/s^2 per throttle percent squared
    pub b2: f64,
    /// N/s^2
    pub c: f64,
    /// N
    pub idle_thrust: f64,
}

impl JetCoefficients {
    /// Reference turbine: idle 8 N, 220 N at full throttle, critically damped
    /// poles at -1.6 rad/s (about 2.5 s from idle to 200 N).
    pub fn reference() -> Self {
        let pole = 1.6_f64;
        let a1 = -pole * pole;
        let idle = 8.0;
        let c = -a1 * idle;
        // b1*100 + b2*100^2 = (220 - idle) * (-a1), split evenly between terms
        let span = (220.0 - idle) * -a1;
        Self { a1, a2: -2.0 * pole, b1: span / 2.0 / 100.0, b2: span / 2.0 / 1.0e4, c, idle_thrust: idle }
    }

    /// Both roots of `s^2 - a2*s - a1` have negative real part.
    pub fn is_stable(&self) -> bool {
        self.a1 < 0.0 && self.a2 < 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.b1, self.b2, self.c, self.idle_thrust];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(domain("jet coefficients must be finite"));
        }
        if !self.is_stable() {
            return Err(domain(format!(
                "jet model unstable: a1 = {}, a2 = {} (need both negative)",
                self.a1, self.a2
            )));
        }
        Ok(())
    }

    /// Thrust acceleration `T''` at the given state and throttle.
    pub fn acceleration(&self, thrust: f64, thrust_rate: f64, u: f64) -> f64 {
        self.a1 * thrust + self.a2 * thrust_rate + self.b1 * u + self.b2 * u * u + self.c
    }

    /// Steady-state thrust for a constant throttle (unclamped).
    pub fn equilibrium_thrust(&self, u: f64) -> f64 {
        -(self.b1 * u + self.b2 * u * u + self.c) / self.a1
    }

    /// Throttle whose equilibrium thrust is `thrust`, clamped to `[0, 100]`.
    pub fn throttle_for_thrust(&self, thrust: f64) -> f64 {
        // b2*u^2 + b1*u + (c + a1*T) = 0
        let k = self.c + self.a1 * thrust;
        let u = if self.b2.abs() < 1e-12 {
            -k / self.b1
        } else {
            let disc = (self.b1 * self.b1 - 4.0 * self.b2 * k).max(0.0);
            (-self.b1 + disc.sqrt()) / (2.0 * self.b2)
        };
        u.clamp(0.0, THROTTLE_MAX)
    }
}

impl Default for JetCoefficients {
    fn default() -> Self {
        Self::reference()
    }
}

fn check_throttle(u: f64) -> Result<()> {
    if !(0.0..=THROTTLE_MAX).contains(&u) {
        return Err(domain(format!("throttle {u} outside [0, 100]")));
    }
    Ok(())
}

/// Advances one turbine by `dt` with semi-implicit Euler; thrust is clamped
/// to `[0, T_MAX]` and the rate is zeroed when the clamp engages.
pub fn jet_step(state: JetState, u: f64, coeffs: &JetCoefficients, dt: f64) -> Result<JetState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(domain(format!("jet step dt {dt} outside (0, 0.1]")));
    }
    check_throttle(u)?;
    if !state.is_finite() {
        return Err(numeric("non-finite jet state"));
    }
    let rate = state.thrust_rate + dt * coeffs.acceleration(state.thrust, state.thrust_rate, u);
    let thrust = state.thrust + dt * rate;
    let next = if thrust <= 0.0 {
        JetState::new(0.0, 0.0)
    } else if thrust >= T_MAX {
        JetState::new(T_MAX, 0.0)
    } else {
        JetState::new(thrust, rate)
    };
    if !next.is_finite() {
        return Err(numeric("jet step produced a non-finite state"));
    }
    Ok(next)
}

/// Linearization of the thrust ODE at `(state, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetLinearization {
    /// d(T', T'')/d(T, T')
    pub state_matrix: Matrix2<f64>,
    /// d(T', T'')/du
    pub input_matrix: Vector2<f64>,
    /// `f(x0, u0) - A*x0 - B*u0`
    pub affine: Vector2<f64>,
}

pub fn jet_linearize(state: JetState, u: f64, coeffs: &JetCoefficients) -> Result<JetLinearization> {
    check_throttle(u)?;
    if !state.is_finite() {
        return Err(numeric("non-finite jet state"));
    }
    let state_matrix = Matrix2::new(0.0, 1.0, coeffs.a1, coeffs.a2);
    let input_matrix = Vector2::new(0.0, coeffs.b1 + 2.0 * coeffs.b2 * u);
    let x0 = Vector2::new(state.thrust, state.thrust_rate);
    let f0 = Vector2::new(state.thrust_rate, coeffs.acceleration(state.thrust, state.thrust_rate, u));
    let affine = f0 - state_matrix * x0 - input_matrix * u;
    Ok(JetLinearization { state_matrix, input_matrix, affine })
}

/// One row of a test-bench recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    /// s
    pub t: f64,
    /// throttle, percent
    pub u: f64,
    /// measured thrust, N
    pub thrust: f64,
}

/// Piecewise-constant throttle program.
#[derive(Debug, Clone, PartialEq)]
pub struct ThrottleProfile {
    /// `(start time s, throttle percent)`, sorted by start time.
    pub segments: Vec<(f64, f64)>,
    /// s
    pub duration: f64,
}

impl ThrottleProfile {
    pub fn constant(u: f64, duration: f64) -> Self {
        Self { segments: vec![(0.0, u)], duration }
    }

    /// Holds each level for `hold` seconds in turn.
    pub fn staircase(levels: &[f64], hold: f64) -> Self {
        let segments = levels.iter().enumerate().map(|(i, &u)| (i as f64 * hold, u)).collect();
        Self { segments, duration: levels.len() as f64 * hold }
    }

    pub fn throttle_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .take_while(|(start, _)| *start <= t + 1e-12)
            .last()
            .map(|s| s.1)
            .unwrap_or(0.0)
    }
}

/// Options of the synthetic test bench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    /// Recording period, s.
    pub sample_dt: f64,
    /// Integration steps per recorded sample.
    pub substeps: usize,
    pub initial: Option<JetState>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { sample_dt: 0.01, substeps: 10, initial: None }
    }
}

/// Synthetic test-bench recording: the turbine is integrated with
/// [`jet_step`] and Gaussian noise is added to the recorded thrust.
pub fn generate_bench_data(
    coeffs: &JetCoefficients,
    profile: &ThrottleProfile,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<BenchSample>> {
    generate_bench_data_with(coeffs, profile, noise_std, seed, BenchOptions::default())
}

pub fn generate_bench_data_with(
    coeffs: &JetCoefficients,
    profile: &ThrottleProfile,
    noise_std: f64,
    seed: u64,
    opts: BenchOptions,
) -> Result<Vec<BenchSample>> {
    if profile.segments.iter().any(|&(_, u)| !(0.0..=THROTTLE_MAX).contains(&u)) {
        return Err(domain("throttle profile outside [0, 100]"));
    }
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(domain("noise std must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| domain(e.to_string()))?;
    let n = (profile.duration / opts.sample_dt).round() as usize;
    let h = opts.sample_dt / opts.substeps as f64;
    let mut state = opts.initial.unwrap_or(JetState::new(coeffs.idle_thrust, 0.0));
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * opts.sample_dt;
        let u = profile.throttle_at(t);
        out.push(BenchSample { t, u, thrust: state.thrust + noise.sample(&mut rng) });
        for _ in 0..opts.substeps {
            state = jet_step(state, u, coeffs, h)?;
        }
    }
    Ok(out)
}

pub const PARAMETER_NAMES: [&str; 5] = ["a1", "a2", "b1", "b2", "c"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    /// Passes of the 5-point moving average applied to every signal.
    pub smoothing_passes: usize,
    /// Half-width, in samples, of the central differences.
    pub diff_stride: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { smoothing_passes: 16, diff_stride: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identification {
    pub coeffs: JetCoefficients,
    /// RMS of measured minus re-simulated thrust, N.
    pub residual_rms: f64,
}

/// Least-squares fit of the thrust model to a bench recording.
pub fn identify_coefficients(dataset: &[BenchSample]) -> Result<Identification> {
    identify_coefficients_with(dataset, IdentifyOptions::default())
}

pub fn identify_coefficients_with(dataset: &[BenchSample], opts: IdentifyOptions) -> Result<Identification> {
    if dataset.len() < 500 {
        return Err(domain(format!("identification needs at least 500 samples, got {}", dataset.len())));
    }
    let dt = dataset[1].t - dataset[0].t;
    if !(dt > 0.0) || dataset.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-6 * dt.max(1.0)) {
        return Err(domain("identification needs uniformly sampled data"));
    }
    if dataset.iter().any(|s| !(s.t.is_finite() && s.u.is_finite() && s.thrust.is_finite())) {
        return Err(numeric("non-finite sample in dataset"));
    }

    // Smoothing is linear and time-invariant, so filtering every signal with
    // the same kernel keeps the model equation exact.
    let mut thrust: Vec<f64> = dataset.iter().map(|s| s.thrust).collect();
    let mut u: Vec<f64> = dataset.iter().map(|s| s.u).collect();
    let mut u2: Vec<f64> = dataset.iter().map(|s| s.u * s.u).collect();
    for _ in 0..opts.smoothing_passes {
        thrust = moving_average_5(&thrust);
        u = moving_average_5(&u);
        u2 = moving_average_5(&u2);
    }

    let s = opts.diff_stride.max(1);
    let h = s as f64 * dt;
    let margin = 2 * opts.smoothing_passes + s;
    let n = dataset.len();
    if n <= 2 * margin + 10 {
        return Err(domain("dataset too short for the requested smoothing"));
    }
    let rows: Vec<usize> = (margin..n - margin).collect();
    let mut reg = DMatrix::<f64>::zeros(rows.len(), 5);
    let mut rhs = DVector::<f64>::zeros(rows.len());
    // The second difference is the triangle-weighted mean of T'' over
    // [t - h, t + h]; the held throttle samples get the same weights.
    let tri: Vec<f64> = (0..s).map(|m| (1.0 - (2 * m + 1) as f64 / (2 * s) as f64) / s as f64).collect();
    let held = |x: &[f64], k: usize| -> f64 {
        (0..s).map(|m| tri[m] * (x[k + m] + x[k - 1 - m])).sum()
    };
    for (r, &k) in rows.iter().enumerate() {
        let rate = (thrust[k + s] - thrust[k - s]) / (2.0 * h);
        let acc = (thrust[k + s] - 2.0 * thrust[k] + thrust[k - s]) / (h * h);
        reg[(r, 0)] = thrust[k];
        reg[(r, 1)] = rate;
        reg[(r, 2)] = held(&u, k);
        reg[(r, 3)] = held(&u2, k);
        reg[(r, 4)] = 1.0;
        rhs[r] = acc;
    }

    let scales: Vec<f64> = (0..5).map(|j| reg.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    for (j, sc) in scales.iter().enumerate() {
        reg.column_mut(j).scale_mut(1.0 / sc);
    }
    let svd = reg.svd(true, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| numeric("SVD failed"))?;
    let s_max = svd.singular_values.max();
    let mut directions = Vec::new();
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv <= 1e-9 * s_max {
            let v = v_t.row(i);
            let names: Vec<&str> = (0..5).filter(|&j| v[j].abs() > 0.05).map(|j| PARAMETER_NAMES[j]).collect();
            directions.push(format!("{{{}}}", names.join(", ")));
        }
    }
    if !directions.is_empty() {
        return Err(Error::Identifiability { directions });
    }
    let theta = svd.solve(&rhs, 0.0).map_err(|e| numeric(e.to_string()))?;
    let p: Vec<f64> = (0..5).map(|j| theta[j] / scales[j]).collect();
    let (a1, a2, b1, b2, c) = (p[0], p[1], p[2], p[3], p[4]);
    let idle_thrust = if a1.abs() > 1e-12 { -c / a1 } else { f64::NAN };
    let coeffs = JetCoefficients { a1, a2, b1, b2, c, idle_thrust };

    let residual_rms = resimulation_rms(&coeffs, dataset, &thrust, dt);
    Ok(Identification { coeffs, residual_rms })
}

fn moving_average_5(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(2);
            let hi = (k + 2).min(n - 1);
            // shrink symmetrically at the edges
            let w = (k - lo).min(hi - k);
            let slice = &x[k - w..=k + w];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

fn resimulation_rms(coeffs: &JetCoefficients, dataset: &[BenchSample], smoothed: &[f64], dt: f64) -> f64 {
    let substeps = 10;
    let h = dt / substeps as f64;
    let rate0 = (smoothed[2] - smoothed[0]) / (2.0 * dt);
    let mut state = JetState::new(smoothed[1].clamp(0.0, T_MAX), rate0);
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (k, sample) in dataset.iter().enumerate().skip(1) {
        sum_sq += (state.thrust - sample.thrust).powi(2);
        count += 1;
        let u = sample.u;
        for _ in 0..substeps {
            state = match jet_step(state, u.clamp(0.0, THROTTLE_MAX), coeffs, h) {
                Ok(s) => s,
                Err(_) => return f64::INFINITY,
            };
        }
        if k + 1 == dataset.len() {
            break;
        }
    }
    (sum_sq / count.max(1) as f64).sqrt()
}

pub const BENCH_CSV_HEADER: [&str; 3] = ["t", "u", "thrust"];

/// Writes a bench recording as CSV with header `t,u,thrust`.
pub fn write_bench_csv<W: Write>(writer: W, data: &[BenchSample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(BENCH_CSV_HEADER).map_err(|e| Error::Config(e.to_string()))?;
    for s in data {
        w.write_record([s.t.to_string(), s.u.to_string(), s.thrust.to_string()])
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

pub fn read_bench_csv<R: Read>(reader: R) -> Result<Vec<BenchSample>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != BENCH_CSV_HEADER {
        return Err(Error::Config(format!("bench CSV header must be t,u,thrust, got {:?}", headers)));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Config(e.to_string())))
        .collect()
}

pub fn load_bench_csv(path: &Path) -> Result<Vec<BenchSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    read_bench_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Classic RK4 on the unclamped ODE; independent of `jet_step`.
    fn rk4_reference(coeffs: &JetCoefficients, x0: [f64; 2], u: f64, dt: f64, steps: usize) -> Vec<f64> {
        let f = |x: [f64; 2]| [x[1], coeffs.a1 * x[0] + coeffs.a2 * x[1] + coeffs.b1 * u + coeffs.b2 * u * u + coeffs.c];
        let mut x = x0;
        let mut out = vec![x[0]];
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f([x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
            let k3 = f([x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
            let k4 = f([x[0] + dt * k3[0], x[1] + dt * k3[1]]);
            for i in 0..2 {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            out.push(x[0]);
        }
        out
    }

    fn max_error_vs_rk4(dt: f64) -> f64 {
        let c = JetCoefficients::reference();
        let reference = rk4_reference(&c, [c.idle_thrust, 0.0], 50.0, 1e-5, 500_000);
        let mut s = JetState::new(c.idle_thrust, 0.0);
        let steps = (5.0 / dt).round() as usize;
        let stride = (dt / 1e-5).round() as usize;
        let mut err: f64 = 0.0;
        for k in 1..=steps {
            s = jet_step(s, 50.0, &c, dt).unwrap();
            err = err.max((s.thrust - reference[k * stride]).abs());
        }
        err
    }

    #[test]
    fn reference_coefficients_hit_plausibility_targets() {
        let c = JetCoefficients::reference();
        assert!(c.is_stable());
        assert_relative_eq!(c.equilibrium_thrust(0.0), 8.0, epsilon = 1e-12);
        assert_relative_eq!(c.equilibrium_thrust(100.0), 220.0, epsilon = 1e-9);
        // 0 -> 200 N rise at full throttle
        let mut s = JetState::new(c.idle_thrust, 0.0);
        let mut t = 0.0;
        while s.thrust < 200.0 {
            s = jet_step(s, 100.0, &c, 0.001).unwrap();
            t += 0.001;
        }
        assert!((2.2..2.8).contains(&t), "rise time {t}");
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let c = JetCoefficients::reference();
        for u in [0.0, 10.0, 55.0, 100.0] {
            let s = JetState::new(c.equilibrium_thrust(u), 0.0);
            let next = jet_step(s, u, &c, 0.01).unwrap();
            assert!((next.thrust - s.thrust).abs() < 1e-9);
            assert!(next.thrust_rate.abs() < 1e-9);
        }
    }

    #[test]
    fn idle_stays_idle() {
        let c = JetCoefficients::reference();
        let mut s = JetState::new(c.idle_thrust, 0.0);
        for _ in 0..1000 {
            s = jet_step(s, 0.0, &c, 0.01).unwrap();
        }
        assert_relative_eq!(s.thrust, c.idle_thrust, epsilon = 1e-9);
    }

    #[test]
    fn step_response_matches_rk4_reference() {
        assert!(max_error_vs_rk4(0.001) < 0.5);
        assert!(max_error_vs_rk4(0.01) < 0.5);
    }

    #[test]
    fn halving_dt_shrinks_error() {
        let coarse = max_error_vs_rk4(0.02);
        let fine = max_error_vs_rk4(0.01);
        assert!(coarse / fine >= 1.8, "ratio {}", coarse / fine);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let c = JetCoefficients::reference();
        let s = JetState::new(10.0, 0.0);
        assert!(matches!(jet_step(s, 101.0, &c, 0.01), Err(Error::Domain(_))));
        assert!(matches!(jet_step(s, 50.0, &c, 0.0), Err(Error::Domain(_))));
        assert!(matches!(jet_step(s, 50.0, &c, 0.2), Err(Error::Domain(_))));
        assert!(matches!(jet_step(JetState::new(f64::NAN, 0.0), 50.0, &c, 0.01), Err(Error::Numeric(_))));
    }

    #[test]
    fn clamps_at_peak_thrust() {
        let c = JetCoefficients { c: 5000.0, ..JetCoefficients::reference() };
        let mut s = JetState::new(240.0, 50.0);
        s = jet_step(s, 100.0, &c, 0.1).unwrap();
        assert_eq!(s, JetState::new(T_MAX, 0.0));
        let s = jet_step(JetState::new(1.0, -100.0), 0.0, &JetCoefficients::reference(), 0.1).unwrap();
        assert_eq!(s, JetState::new(0.0, 0.0));
    }

    #[test]
    fn linearization_structure() {
        let c = JetCoefficients { b2: 0.0, ..JetCoefficients::reference() };
        for (t, r, u) in [(10.0, 0.0, 0.0), (100.0, 30.0, 60.0)] {
            let lin = jet_linearize(JetState::new(t, r), u, &c).unwrap();
            assert_eq!(lin.input_matrix, Vector2::new(0.0, c.b1));
            assert_eq!(lin.state_matrix, Matrix2::new(0.0, 1.0, c.a1, c.a2));
        }
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let c = JetCoefficients::reference();
        let f = |x: Vector2<f64>, u: f64| Vector2::new(x[1], c.acceleration(x[0], x[1], u));
        let x0 = Vector2::new(120.0, -15.0);
        let u0 = 63.0;
        let lin = jet_linearize(JetState::new(x0[0], x0[1]), u0, &c).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut dx = Vector2::zeros();
            dx[j] = h;
            let fd = (f(x0 + dx, u0) - f(x0 - dx, u0)) / (2.0 * h);
            let an = lin.state_matrix.column(j).into_owned();
            assert!((fd - an).norm() <= 1e-6 * an.norm().max(1.0));
        }
        let fd = (f(x0, u0 + h) - f(x0, u0 - h)) / (2.0 * h);
        assert!((fd - lin.input_matrix).norm() <= 1e-6 * lin.input_matrix.norm());
        // affine term reproduces f at the linearization point
        let recon = lin.state_matrix * x0 + lin.input_matrix * u0 + lin.affine;
        assert_relative_eq!(recon, f(x0, u0), epsilon = 1e-9);
    }

    #[test]
    fn bench_data_is_deterministic() {
        let c = JetCoefficients::reference();
        let p = ThrottleProfile::staircase(&[0.0, 40.0, 80.0], 2.0);
        let a = generate_bench_data(&c, &p, 1.0, 7).unwrap();
        let b = generate_bench_data(&c, &p, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 600);
    }

    #[test]
    fn noiseless_bench_at_equilibrium_is_constant() {
        let c = JetCoefficients::reference();
        let u = 42.0;
        let opts = BenchOptions { initial: Some(JetState::new(c.equilibrium_thrust(u), 0.0)), ..Default::default() };
        let data = generate_bench_data_with(&c, &ThrottleProfile::constant(u, 3.0), 0.0, 1, opts).unwrap();
        for s in &data {
            assert!((s.thrust - c.equilibrium_thrust(u)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_throttle_is_not_identifiable() {
        let c = JetCoefficients::reference();
        let data = generate_bench_data(&c, &ThrottleProfile::constant(50.0, 10.0), 0.0, 3).unwrap();
        match identify_coefficients(&data) {
            Err(Error::Identifiability { directions }) => {
                let joined = directions.join(" ");
                assert!(joined.contains("b1") && joined.contains("b2"), "{joined}");
            }
            other => panic!("expected identifiability error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let c = JetCoefficients::reference();
        let data = generate_bench_data(&c, &ThrottleProfile::staircase(&[0.0, 50.0, 90.0], 1.0), 0.0, 3).unwrap();
        assert!(matches!(identify_coefficients(&data), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_roundtrip_keeps_header_and_values() {
        let c = JetCoefficients::reference();
        let data = generate_bench_data(&c, &ThrottleProfile::staircase(&[0.0, 50.0], 0.5), 0.3, 9).unwrap();
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u,thrust\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_bench_csv(buf.as_slice()).unwrap(), data);
    }
}
