use jetstack_core::qp::{kkt_residuals, qp_solve, read_qp_text, write_qp_text, QpProblem, QpSettings, QpSolver, QpStatus};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gauss(rng))
}

/// Random feasible problem around a known feasible point. `rank` below `n`
/// makes H singular.
fn random_problem(rng: &mut ChaCha8Rng, n: usize, rank: usize, p: usize, m: usize, boxed: bool) -> QpProblem {
    let g = gauss_mat(rng, rank, n);
    let h = g.transpose() * &g;
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(n, |_, _| gauss(rng) * 3.0);
    let x0 = DVector::from_fn(n, |_, _| gauss(rng));
    let a_eq = gauss_mat(rng, p, n);
    let b_eq = &a_eq * &x0;
    let a_in = gauss_mat(rng, m, n);
    let b_in = &a_in * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    if boxed || rank < n {
        for j in 0..n {
            lb[j] = x0[j] - rng.random_range(0.0..2.0);
            ub[j] = x0[j] + rng.random_range(0.0..2.0);
        }
    }
    QpProblem { h, f, a_eq, b_eq, a_in, b_in, lb, ub }
}

#[test]
fn kkt_residuals_small_on_random_feasible_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = QpSettings::default();
    let mut iters = Vec::new();
    for case in 0..500 {
        let n = rng.random_range(2..=30);
        let rank = if case % 4 == 0 { rng.random_range(1..=n) } else { n };
        let p = rng.random_range(0..=n / 3);
        let m = rng.random_range(0..=2 * n);
        let prob = random_problem(&mut rng, n, rank, p, m, case % 2 == 0);
        let sol = qp_solve(&prob, None, &s).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case} n={n} rank={rank} p={p} m={m}");
        let r = kkt_residuals(&prob, &sol.x, &sol.duals);
        assert!(r.max() <= 1e-6, "case {case}: {r:?}");
        iters.push(sol.iterations);
    }
    iters.sort();
    assert!(iters[iters.len() - 1] < s.max_iter);
}

/// Exhaustive active-set search for small strictly convex problems.
fn enumerate(prob: &QpProblem) -> f64 {
    let n = prob.n();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..prob.a_in.nrows() {
        rows.push((prob.a_in.row(i).transpose(), prob.b_in[i]));
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        rows.push((e.clone(), prob.ub[j]));
        rows.push((-e, -prob.lb[j]));
    }
    let p = prob.a_eq.nrows();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << rows.len()) {
        let k = mask.count_ones() as usize;
        if p + k > n {
            continue;
        }
        let act: Vec<usize> = (0..rows.len()).filter(|i| mask & (1 << i) != 0).collect();
        let dim = n + p + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&prob.h);
        rhs.rows_mut(0, n).copy_from(&(-&prob.f));
        for i in 0..p {
            for j in 0..n {
                kkt[(n + i, j)] = prob.a_eq[(i, j)];
                kkt[(j, n + i)] = prob.a_eq[(i, j)];
            }
            rhs[n + i] = prob.b_eq[i];
        }
        for (a, &r) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + p + a, j)] = rows[r].0[j];
                kkt[(j, n + p + a)] = rows[r].0[j];
            }
            rhs[n + p + a] = rows[r].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let feasible = rows.iter().all(|(a, b)| a.dot(&x) <= b + 1e-9) && (&prob.a_eq * &x - &prob.b_eq).amax() < 1e-9;
        let duals_ok = (0..k).all(|a| sol[n + p + a] >= -1e-9);
        if feasible && duals_ok {
            best = best.min(prob.objective(&x));
        }
    }
    best
}

#[test]
fn matches_enumeration_oracle_for_small_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let n = rng.random_range(1..=4);
        let p = rng.random_range(0..=1.min(n - 1));
        let m = rng.random_range(0..=4);
        let prob = random_problem(&mut rng, n, n, p, m, true);
        let oracle = enumerate(&prob);
        let sol = qp_solve(&prob, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.objective - oracle).abs() <= 1e-5, "case {case}: {} vs {oracle}", sol.objective);
    }
}

#[test]
fn row_permutation_does_not_change_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(3..=20);
        let prob = random_problem(&mut rng, n, n, n / 4, 2 * n, true);
        let mut perm: Vec<usize> = (0..prob.a_in.nrows()).collect();
        perm.reverse();
        perm.rotate_left(prob.a_in.nrows() / 3);
        let mut q = prob.clone();
        for (dst, &src) in perm.iter().enumerate() {
            q.a_in.row_mut(dst).copy_from(&prob.a_in.row(src));
            q.b_in[dst] = prob.b_in[src];
        }
        let s = QpSettings::default();
        let a = qp_solve(&prob, None, &s).unwrap();
        let b = qp_solve(&q, None, &s).unwrap();
        assert!((a.x - b.x).amax() <= 1e-8);
    }
}

#[test]
fn cost_scaling_does_not_move_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let prob = random_problem(&mut rng, n, n, n / 4, n, true);
        let mut big = prob.clone();
        big.h *= 1e3;
        big.f *= 1e3;
        let s = QpSettings::default();
        let a = qp_solve(&prob, None, &s).unwrap();
        let b = qp_solve(&big, None, &s).unwrap();
        assert_eq!(b.status, QpStatus::Optimal);
        assert!((a.x - b.x).amax() <= 1e-6);
    }
}

#[test]
fn warm_start_does_not_slow_repeated_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = random_problem(&mut rng, 40, 40, 0, 80, true);
    let mut warm = QpSolver::new(QpSettings::default());
    let (mut cold_it, mut warm_it) = (Vec::new(), Vec::new());
    for k in 0..100 {
        let mut prob = base.clone();
        let shift = 0.3 * (k as f64 * 0.1).sin();
        prob.f.add_scalar_mut(shift);
        cold_it.push(qp_solve(&prob, None, &QpSettings::default()).unwrap().iterations);
        let w = warm.solve(&prob).unwrap();
        assert_eq!(w.status, QpStatus::Optimal);
        warm_it.push(w.iterations);
    }
    cold_it.sort();
    warm_it.sort();
    assert!(warm_it[50] as f64 <= 1.1 * cold_it[50] as f64, "warm {} cold {}", warm_it[50], cold_it[50]);
}

#[test]
fn infeasible_problems_are_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let mut prob = random_problem(&mut rng, n, n, 0, n, false);
        // a'x <= b together with -a'x <= -(b + 1)
        let a = prob.a_in.row(0).into_owned();
        let b = prob.b_in[0];
        let m = prob.a_in.nrows();
        prob.a_in = prob.a_in.insert_row(m, 0.0);
        prob.a_in.row_mut(m).copy_from(&(-a));
        prob.b_in = prob.b_in.push(-(b + 1.0));
        let sol = qp_solve(&prob, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }
}

#[test]
fn text_dump_round_trips_infinite_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut prob = random_problem(&mut rng, 6, 6, 1, 4, false);
    prob.lb[2] = -1.5;
    let mut buf = Vec::new();
    write_qp_text(&prob, &mut buf).unwrap();
    assert_eq!(read_qp_text(buf.as_slice()).unwrap(), prob);
}
