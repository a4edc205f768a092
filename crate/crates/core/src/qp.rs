//! Dense convex QP solver.
//!
//! minimize `0.5 x'Hx + f'x` subject to `A_eq x = b_eq`, `A_in x <= b_in`,
//! `lb <= x <= ub`.
//!
//! Operator splitting (ADMM) on the stacked form `l <= Cx <= u`, with Ruiz
//! equilibration, adaptive rho, and a polish step that solves the KKT
//! system of the detected active set exactly. A solution is reported
//! Optimal only once its KKT residuals are within tolerance.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, numeric, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// No constraints and infinite bounds.
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dims_ok = self.h.nrows() == n
            && self.h.ncols() == n
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_in.ncols() == n
            && self.a_in.nrows() == self.b_in.len()
            && self.lb.len() == n
            && self.ub.len() == n;
        if !dims_ok {
            return Err(domain("QP dimensions are inconsistent"));
        }
        if self.a_eq.nrows() > n {
            return Err(domain("more equality rows than variables"));
        }
        let finite = self.h.iter().chain(self.f.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter());
        if finite.chain(self.a_in.iter()).any(|v| !v.is_finite()) || self.b_in.iter().any(|v| v.is_nan()) {
            return Err(domain("QP data must be finite"));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * self.h.amax().max(1.0) {
            return Err(domain(format!("H is not symmetric (max asymmetry {asym:e})")));
        }
        if self.lb.iter().zip(self.ub.iter()).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(domain("bounds must satisfy lb <= ub"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    /// Primal infeasible, or unbounded below (iterates diverged).
    Infeasible,
}

/// Multipliers with the convention
/// `Hx + f + A_eq' eq + A_in' ineq + bounds = 0`, `ineq >= 0`, and
/// `bounds[j]` positive at the upper bound, negative at the lower.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDuals {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub bounds: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub duals: QpDuals,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub scaling_iters: usize,
    pub adapt_interval: usize,
    pub polish_interval: usize,
    /// Tolerance of the primal infeasibility certificate.
    pub infeasibility_tol: f64,
    /// Iterate norm growth treated as divergence.
    pub divergence_growth: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            scaling_iters: 10,
            adapt_interval: 25,
            polish_interval: 10,
            infeasibility_tol: 1e-5,
            divergence_growth: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    /// Multipliers with the wrong sign, or on an infinite bound.
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

fn pos(v: f64) -> f64 {
    v.max(0.0)
}

/// KKT residuals (infinity norms) of a primal-dual pair.
pub fn kkt_residuals(p: &QpProblem, x: &DVector<f64>, d: &QpDuals) -> KktResiduals {
    let grad = &p.h * x + &p.f + p.a_eq.transpose() * &d.eq + p.a_in.transpose() * &d.ineq + &d.bounds;
    let mut r = KktResiduals { stationarity: grad.amax(), ..Default::default() };

    let eq = &p.a_eq * x - &p.b_eq;
    r.primal = eq.amax();
    let ax = &p.a_in * x;
    for i in 0..p.b_in.len() {
        let slack = p.b_in[i] - ax[i];
        r.primal = r.primal.max(pos(-slack));
        r.dual = r.dual.max(pos(-d.ineq[i]));
        if slack.is_finite() {
            r.complementarity = r.complementarity.max((pos(d.ineq[i]) * slack).abs());
        }
    }
    for j in 0..p.n() {
        let (lo, hi, mu) = (p.lb[j], p.ub[j], d.bounds[j]);
        r.primal = r.primal.max(pos(lo - x[j])).max(pos(x[j] - hi));
        if mu > 0.0 {
            if hi.is_finite() {
                r.complementarity = r.complementarity.max(mu * (hi - x[j]).abs());
            } else {
                r.dual = r.dual.max(mu);
            }
        } else if mu < 0.0 {
            if lo.is_finite() {
                r.complementarity = r.complementarity.max(-mu * (x[j] - lo).abs());
            } else {
                r.dual = r.dual.max(-mu);
            }
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Row {
    Eq(usize),
    Ineq(usize),
    Bound(usize),
}

/// `l <= Cx <= u` with the origin of every row.
struct Stacked {
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    rows: Vec<Row>,
}

impl Stacked {
    fn new(p: &QpProblem) -> Self {
        let n = p.n();
        let mut rows = Vec::new();
        rows.extend((0..p.a_eq.nrows()).map(Row::Eq));
        rows.extend((0..p.a_in.nrows()).map(Row::Ineq));
        rows.extend((0..n).filter(|&j| p.lb[j].is_finite() || p.ub[j].is_finite()).map(Row::Bound));
        let m = rows.len();
        let mut c = DMatrix::zeros(m, n);
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        for (i, r) in rows.iter().enumerate() {
            match *r {
                Row::Eq(k) => {
                    c.row_mut(i).copy_from(&p.a_eq.row(k));
                    l[i] = p.b_eq[k];
                    u[i] = p.b_eq[k];
                }
                Row::Ineq(k) => {
                    c.row_mut(i).copy_from(&p.a_in.row(k));
                    l[i] = f64::NEG_INFINITY;
                    u[i] = p.b_in[k];
                }
                Row::Bound(j) => {
                    c[(i, j)] = 1.0;
                    l[i] = p.lb[j];
                    u[i] = p.ub[j];
                }
            }
        }
        Self { c, l, u, rows }
    }

    fn duals(&self, p: &QpProblem, y: &DVector<f64>) -> QpDuals {
        let mut d = QpDuals {
            eq: DVector::zeros(p.a_eq.nrows()),
            ineq: DVector::zeros(p.a_in.nrows()),
            bounds: DVector::zeros(p.n()),
        };
        for (i, r) in self.rows.iter().enumerate() {
            match *r {
                Row::Eq(k) => d.eq[k] = y[i],
                Row::Ineq(k) => d.ineq[k] = y[i],
                Row::Bound(j) => d.bounds[j] = y[i],
            }
        }
        d
    }

    fn stacked_duals(&self, d: &QpDuals) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| match *r {
                Row::Eq(k) => d.eq[k],
                Row::Ineq(k) => d.ineq[k],
                Row::Bound(j) => d.bounds[j],
            }),
        )
    }
}

/// Ruiz equilibration of the KKT matrix plus a cost scale.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

fn clamp_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

fn equilibrate(h: &mut DMatrix<f64>, f: &mut DVector<f64>, c: &mut DMatrix<f64>, iters: usize) -> Scaling {
    let (m, n) = c.shape();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    for _ in 0..iters {
        let dj = DVector::from_fn(n, |j, _| {
            let col = h.column(j).amax().max(if m > 0 { c.column(j).amax() } else { 0.0 });
            1.0 / clamp_norm(col).sqrt()
        });
        let ei = DVector::from_fn(m, |i, _| 1.0 / clamp_norm(c.row(i).amax()).sqrt());
        for j in 0..n {
            for i in 0..n {
                h[(i, j)] *= dj[i] * dj[j];
            }
            for i in 0..m {
                c[(i, j)] *= ei[i] * dj[j];
            }
        }
        f.component_mul_assign(&dj);
        d.component_mul_assign(&dj);
        e.component_mul_assign(&ei);
    }
    let mean_col = if n > 0 { (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
    let cost = 1.0 / clamp_norm(mean_col.max(f.amax()));
    *h *= cost;
    *f *= cost;
    Scaling { d, e, cost }
}

struct Admm<'a> {
    s: &'a QpSettings,
    h: DMatrix<f64>,
    f: DVector<f64>,
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    rho: f64,
    rho_vec: DVector<f64>,
    kkt: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

impl<'a> Admm<'a> {
    fn rho_vector(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
        DVector::from_fn(l.len(), |i, _| {
            if l[i] == u[i] {
                RHO_EQ_FACTOR * rho
            } else if l[i].is_infinite() && u[i].is_infinite() {
                RHO_MIN
            } else {
                rho
            }
        })
    }

    fn factor(h: &DMatrix<f64>, c: &DMatrix<f64>, rho_vec: &DVector<f64>, sigma: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let n = h.nrows();
        let mut k = h + DMatrix::identity(n, n) * sigma;
        if c.nrows() > 0 {
            let scaled = DMatrix::from_fn(c.nrows(), n, |i, j| c[(i, j)] * rho_vec[i]);
            k += c.transpose() * scaled;
        }
        k.cholesky().ok_or_else(|| numeric("ADMM system matrix is not positive definite"))
    }
}

/// Solves the equality-constrained problem of an active set on the
/// unscaled data. Returns primal and stacked duals.
fn polish(
    p: &QpProblem,
    st: &Stacked,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.n();
    let mut active = Vec::new();
    for i in 0..st.rows.len() {
        if st.l[i] == st.u[i] {
            active.push((i, st.l[i]));
        } else if st.l[i].is_finite() && z[i] - st.l[i] < -y[i] {
            active.push((i, st.l[i]));
        } else if st.u[i].is_finite() && st.u[i] - z[i] < y[i] {
            active.push((i, st.u[i]));
        }
    }
    let na = active.len();
    let dim = n + na;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&p.h);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.f));
    for (a, &(i, b)) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + a, j)] = st.c[(i, j)];
            k[(j, n + a)] = st.c[(i, j)];
        }
        rhs[n + a] = b;
    }
    let delta = 1e-9 * p.h.amax().max(1.0);
    let mut reg = k.clone();
    for i in 0..dim {
        reg[(i, i)] += if i < n { delta } else { -delta };
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let r = &rhs - &k * &sol;
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut ys = DVector::zeros(st.rows.len());
    for (a, &(i, _)) in active.iter().enumerate() {
        ys[i] = sol[n + a];
    }
    Some((x, ys))
}

fn finish(p: &QpProblem, st: &Stacked, x: DVector<f64>, y: &DVector<f64>, status: QpStatus, iterations: usize, polished: bool) -> QpSolution {
    let duals = st.duals(p, y);
    let r = kkt_residuals(p, &x, &duals);
    QpSolution {
        objective: p.objective(&x),
        primal_residual: r.primal,
        dual_residual: r.stationarity,
        x,
        duals,
        status,
        iterations,
        polished,
    }
}

/// Solves `p`, optionally warm-started from a primal guess.
pub fn qp_solve(p: &QpProblem, warm_start: Option<&DVector<f64>>, settings: &QpSettings) -> Result<QpSolution> {
    solve_warm(p, warm_start, None, settings)
}

fn solve_warm(p: &QpProblem, x0: Option<&DVector<f64>>, d0: Option<&QpDuals>, s: &QpSettings) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n();
    let st = Stacked::new(p);
    let m = st.rows.len();

    let mut h = p.h.clone();
    let mut f = p.f.clone();
    let mut c = st.c.clone();
    let sc = equilibrate(&mut h, &mut f, &mut c, s.scaling_iters);
    let l = st.l.component_mul(&sc.e);
    let u = st.u.component_mul(&sc.e);

    // Iterates live in the scaled space.
    let mut x = match x0 {
        Some(w) if w.len() == n => w.component_div(&sc.d),
        _ => DVector::zeros(n),
    };
    let mut y = match d0 {
        Some(d) => st.stacked_duals(d).component_div(&sc.e) * sc.cost,
        None => DVector::zeros(m),
    };
    let mut z = DVector::from_fn(m, |i, _| (c.row(i) * &x)[0].clamp(l[i], u[i]));

    let unscale = |x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>| {
        (x.component_mul(&sc.d), y.component_mul(&sc.e) / sc.cost, z.component_div(&sc.e))
    };
    let accept = |x: &DVector<f64>, ys: &DVector<f64>| kkt_residuals(p, x, &st.duals(p, ys)).max() <= s.tol;

    let try_polish = |x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>| {
        let (_, yu, zu) = unscale(x, y, z);
        polish(p, &st, &zu, &yu).filter(|(xp, yp)| accept(xp, yp))
    };

    if x0.is_some() || d0.is_some() || m == 0 {
        if let Some((xp, yp)) = try_polish(&x, &y, &z) {
            return Ok(finish(p, &st, xp, &yp, QpStatus::Optimal, 0, true));
        }
    }

    let mut admm = Admm {
        s,
        rho_vec: Admm::rho_vector(&l, &u, s.rho),
        rho: s.rho,
        kkt: Admm::factor(&h, &c, &Admm::rho_vector(&l, &u, s.rho), s.sigma)?,
        h,
        f,
        c,
        l,
        u,
    };
    let alpha = admm.s.relaxation;
    let mut growth_ref: Option<(f64, f64)> = None;

    for k in 1..=s.max_iter {
        let rhs = &x * s.sigma - &admm.f + admm.c.transpose() * (admm.rho_vec.component_mul(&z) - &y);
        let xt = admm.kkt.solve(&rhs);
        let zt = &admm.c * &xt;
        let x_new = &xt * alpha + &x * (1.0 - alpha);
        let zr = &zt * alpha + &z * (1.0 - alpha);
        let z_new = DVector::from_fn(m, |i, _| (zr[i] + y[i] / admm.rho_vec[i]).clamp(admm.l[i], admm.u[i]));
        let y_new = &y + admm.rho_vec.component_mul(&(&zr - &z_new));
        let dy = &y_new - &y;
        let dx = &x_new - &x;
        x = x_new;
        z = z_new;
        y = y_new;

        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(numeric("ADMM iterates became non-finite"));
        }

        if k % s.polish_interval == 0 {
            if (m > 0 && primal_infeasible(&st, &dy.component_mul(&sc.e), s.infeasibility_tol))
                || unbounded(p, &st, &dx.component_mul(&sc.d), s.infeasibility_tol)
            {
                let (xu, yu, _) = unscale(&x, &y, &z);
                return Ok(finish(p, &st, xu, &yu, QpStatus::Infeasible, k, false));
            }
        }
        // Divergence guard on iterate growth, referenced after a burn-in.
        if k == 50 {
            growth_ref = Some((x.amax().max(1.0), y.amax().max(1.0)));
        } else if let Some((rx, ry)) = growth_ref {
            if x.amax() > s.divergence_growth * rx || y.amax() > s.divergence_growth * ry {
                let (xu, yu, _) = unscale(&x, &y, &z);
                return Ok(finish(p, &st, xu, &yu, QpStatus::Infeasible, k, false));
            }
        }

        if k % s.polish_interval == 0 {
            if let Some((xp, yp)) = try_polish(&x, &y, &z) {
                return Ok(finish(p, &st, xp, &yp, QpStatus::Optimal, k, true));
            }
            let (xu, yu, _) = unscale(&x, &y, &z);
            if accept(&xu, &yu) {
                return Ok(finish(p, &st, xu, &yu, QpStatus::Optimal, k, false));
            }
        }

        if m > 0 && k % s.adapt_interval == 0 {
            let cx = &admm.c * &x;
            let prim = (&cx - &z).amax() / cx.amax().max(z.amax()).max(1e-10);
            let hx = &admm.h * &x;
            let cty = admm.c.transpose() * &y;
            let dual = (&hx + &admm.f + &cty).amax() / hx.amax().max(cty.amax()).max(admm.f.amax()).max(1e-10);
            let ratio = (prim / dual.max(1e-12)).sqrt();
            let rho_new = (admm.rho * ratio).clamp(RHO_MIN, RHO_MAX);
            if rho_new > 5.0 * admm.rho || rho_new < 0.2 * admm.rho {
                admm.rho = rho_new;
                admm.rho_vec = Admm::rho_vector(&admm.l, &admm.u, rho_new);
                admm.kkt = Admm::factor(&admm.h, &admm.c, &admm.rho_vec, s.sigma)?;
            }
        }
    }
    let (xu, yu, _) = unscale(&x, &y, &z);
    Ok(finish(p, &st, xu, &yu, QpStatus::MaxIter, s.max_iter, false))
}

/// `C'dy ~ 0` and `u'dy+ + l'dy- < 0`: a Farkas certificate.
fn primal_infeasible(st: &Stacked, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = dy.amax();
    if norm < 1e-12 {
        return false;
    }
    if (st.c.transpose() * dy).amax() > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if st.u[i].is_infinite() {
                if dy[i] > eps * norm {
                    return false;
                }
                continue;
            }
            support += st.u[i] * dy[i];
        } else if dy[i] < 0.0 {
            if st.l[i].is_infinite() {
                if -dy[i] > eps * norm {
                    return false;
                }
                continue;
            }
            support += st.l[i] * dy[i];
        }
    }
    support < -eps * norm
}

/// `H dx ~ 0`, `f'dx < 0` and `C dx` inside the recession cone.
fn unbounded(p: &QpProblem, st: &Stacked, dx: &DVector<f64>, eps: f64) -> bool {
    let norm = dx.amax();
    if norm < 1e-12 || (&p.h * dx).amax() > eps * norm || p.f.dot(dx) >= -eps * norm {
        return false;
    }
    let cdx = &st.c * dx;
    (0..cdx.len()).all(|i| {
        (st.u[i].is_infinite() || cdx[i] <= eps * norm) && (st.l[i].is_infinite() || cdx[i] >= -eps * norm)
    })
}

/// Solver instance that warm-starts each solve from the previous solution
/// when the dimensions match.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    last: Option<(DVector<f64>, QpDuals)>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, last: None }
    }

    pub fn reset(&mut self) {
        self.last = None;
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution> {
        let warm = self.last.as_ref().filter(|(x, d)| {
            x.len() == p.n() && d.eq.len() == p.a_eq.nrows() && d.ineq.len() == p.a_in.nrows()
        });
        let sol = solve_warm(p, warm.map(|w| &w.0), warm.map(|w| &w.1), &self.settings)?;
        if sol.status == QpStatus::Optimal {
            self.last = Some((sol.x.clone(), sol.duals.clone()));
        } else {
            self.last = None;
        }
        Ok(sol)
    }
}

/// Text dump: a dimensions line `n p m`, then `H` (n rows), `f`, `A_eq`
/// (p rows), `b_eq`, `A_in` (m rows), `b_in`, `lb`, `ub`, one row per line,
/// entries separated by spaces, infinities written as `inf`/`-inf`.
pub fn write_qp_text<W: Write>(p: &QpProblem, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{} {} {}", p.n(), p.a_eq.nrows(), p.a_in.nrows())?;
    let mut row = |vals: Vec<f64>| -> std::io::Result<()> {
        let s: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", s.join(" "))
    };
    for i in 0..p.n() {
        row(p.h.row(i).iter().copied().collect())?;
    }
    row(p.f.iter().copied().collect())?;
    for i in 0..p.a_eq.nrows() {
        row(p.a_eq.row(i).iter().copied().collect())?;
    }
    row(p.b_eq.iter().copied().collect())?;
    for i in 0..p.a_in.nrows() {
        row(p.a_in.row(i).iter().copied().collect())?;
    }
    row(p.b_in.iter().copied().collect())?;
    row(p.lb.iter().copied().collect())?;
    row(p.ub.iter().copied().collect())
}

type Lines<R> = std::io::Lines<R>;

fn text_row<R: BufRead>(lines: &mut Lines<R>, want: usize) -> Result<Vec<f64>> {
    let line = lines.next().ok_or_else(|| domain("QP text ended early"))?.map_err(|e| domain(e.to_string()))?;
    let vals = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| domain(format!("bad number {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != want {
        return Err(domain(format!("expected {want} entries, found {}", vals.len())));
    }
    Ok(vals)
}

fn text_matrix<R: BufRead>(lines: &mut Lines<R>, rows: usize, n: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, n);
    for i in 0..rows {
        m.row_mut(i).copy_from(&DVector::from_vec(text_row(lines, n)?).transpose());
    }
    Ok(m)
}

pub fn read_qp_text<R: BufRead>(r: R) -> Result<QpProblem> {
    let mut lines = r.lines();
    let dims = text_row(&mut lines, 3)?;
    let (n, pe, mi) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let ls = &mut lines;
    let h = text_matrix(ls, n, n)?;
    let f = DVector::from_vec(text_row(ls, n)?);
    let a_eq = text_matrix(ls, pe, n)?;
    let b_eq = DVector::from_vec(text_row(ls, pe)?);
    let a_in = text_matrix(ls, mi, n)?;
    let b_in = DVector::from_vec(text_row(ls, mi)?);
    let lb = DVector::from_vec(text_row(ls, n)?);
    let ub = DVector::from_vec(text_row(ls, n)?);
    let p = QpProblem { h, f, a_eq, b_eq, a_in, b_in, lb, ub };
    p.validate()?;
    Ok(p)
}
