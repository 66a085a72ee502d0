//! Dense convex QP solver for condensed MPC problems.
//!
//! ```text
//! minimize    1/2 u'Hu + f'u + c + rho * sum(s)
//! subject to  lower <= u <= upper
//!             G u <= h                      (hard rows)
//!             lo - s <= S u <= hi + s       (softened rows)
//!             s >= 0
//! ```
//!
//! Solved with a Mehrotra predictor-corrector primal-dual interior point
//! method. Each soft slack touches only its own rows, so the slack block of
//! the Newton matrix is diagonal and is eliminated before the Cholesky
//! factorization of the `p x p` input block.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HardConstraints {
    pub matrix: DMatrix<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SoftConstraints {
    pub matrix: DMatrix<f64>,
    /// May contain `-inf` for one-sided rows.
    pub lower: DVector<f64>,
    /// May contain `+inf` for one-sided rows.
    pub upper: DVector<f64>,
    /// L1 penalty per unit of violation.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub hard: Option<HardConstraints>,
    pub soft: Option<SoftConstraints>,
}

impl QpProblem {
    /// Box-constrained problem without general rows.
    pub fn boxed(hessian: DMatrix<f64>, linear: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self {
            hessian,
            linear,
            constant: 0.0,
            lower,
            upper,
            hard: None,
            soft: None,
        }
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let p = linear.len();
        Self::boxed(
            hessian,
            linear,
            DVector::from_element(p, f64::NEG_INFINITY),
            DVector::from_element(p, f64::INFINITY),
        )
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Smooth part `1/2 u'Hu + f'u + c`.
    pub fn quadratic_value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.linear.dot(u) + self.constant
    }

    /// Total objective with the optimal slacks for `u`.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        self.quadratic_value(u) + self.soft_violation(u).0
    }

    /// `(rho * total violation, max violation)` of the soft rows at `u`.
    pub fn soft_violation(&self, u: &DVector<f64>) -> (f64, f64) {
        match &self.soft {
            None => (0.0, 0.0),
            Some(s) => {
                let y = &s.matrix * u;
                let mut total = 0.0;
                let mut worst: f64 = 0.0;
                for j in 0..y.len() {
                    let v = (y[j] - s.upper[j]).max(s.lower[j] - y[j]).max(0.0);
                    total += v;
                    worst = worst.max(v);
                }
                (s.weight * total, worst)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.dim();
        let check = |what: &'static str, got: usize| {
            if got == p {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context: what,
                    expected: p,
                    actual: got,
                })
            }
        };
        check("QP Hessian rows", self.hessian.nrows())?;
        check("QP Hessian cols", self.hessian.ncols())?;
        check("QP lower bound", self.lower.len())?;
        check("QP upper bound", self.upper.len())?;
        if let Some(h) = &self.hard {
            check("QP hard rows", h.matrix.ncols())?;
            if h.upper.len() != h.matrix.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "QP hard bounds",
                    expected: h.matrix.nrows(),
                    actual: h.upper.len(),
                });
            }
        }
        if let Some(s) = &self.soft {
            check("QP soft rows", s.matrix.ncols())?;
            if s.lower.len() != s.matrix.nrows() || s.upper.len() != s.matrix.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "QP soft bounds",
                    expected: s.matrix.nrows(),
                    actual: s.lower.len().min(s.upper.len()),
                });
            }
            if !(s.weight > 0.0) {
                return Err(Error::InvalidArgument("soft-constraint weight must be positive".into()));
            }
        }
        if (0..p).any(|i| self.lower[i] > self.upper[i]) {
            return Err(Error::InvalidArgument("QP box bounds are empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub slack: DVector<f64>,
    pub objective: f64,
    pub kkt: KktResidual,
    pub iterations: usize,
    pub converged: bool,
    /// Largest soft-row violation at the solution.
    pub max_soft_violation: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

/// Inequalities `A x <= b` over `x = (u, s)`, stored by structure.
struct Rows<'a> {
    p: usize,
    k: usize,
    upper_idx: Vec<usize>,
    lower_idx: Vec<usize>,
    hard: Option<&'a HardConstraints>,
    soft: Option<&'a SoftConstraints>,
    soft_upper: Vec<usize>,
    soft_lower: Vec<usize>,
    b: DVector<f64>,
}

impl<'a> Rows<'a> {
    fn new(qp: &'a QpProblem) -> Self {
        let p = qp.dim();
        let upper_idx: Vec<usize> = (0..p).filter(|&i| qp.upper[i].is_finite()).collect();
        let lower_idx: Vec<usize> = (0..p).filter(|&i| qp.lower[i].is_finite()).collect();
        let (k, soft_upper, soft_lower) = match &qp.soft {
            Some(s) => (
                s.matrix.nrows(),
                (0..s.matrix.nrows()).filter(|&j| s.upper[j].is_finite()).collect(),
                (0..s.matrix.nrows()).filter(|&j| s.lower[j].is_finite()).collect(),
            ),
            None => (0, vec![], vec![]),
        };
        let mut b = Vec::new();
        b.extend(upper_idx.iter().map(|&i| qp.upper[i]));
        b.extend(lower_idx.iter().map(|&i| -qp.lower[i]));
        if let Some(h) = &qp.hard {
            b.extend(h.upper.iter().copied());
        }
        if let Some(s) = &qp.soft {
            b.extend(soft_upper.iter().map(|&j| s.upper[j]));
            b.extend(soft_lower.iter().map(|&j| -s.lower[j]));
        }
        b.extend(std::iter::repeat_n(0.0, k));
        Self {
            p,
            k,
            upper_idx,
            lower_idx,
            hard: qp.hard.as_ref(),
            soft: qp.soft.as_ref(),
            soft_upper,
            soft_lower,
            b: DVector::from_vec(b),
        }
    }

    fn count(&self) -> usize {
        self.b.len()
    }

    fn hard_rows(&self) -> usize {
        self.hard.map_or(0, |h| h.matrix.nrows())
    }

    /// Offsets of the row groups inside the stacked vector.
    fn offsets(&self) -> [usize; 6] {
        let o1 = self.upper_idx.len();
        let o2 = o1 + self.lower_idx.len();
        let o3 = o2 + self.hard_rows();
        let o4 = o3 + self.soft_upper.len();
        let o5 = o4 + self.soft_lower.len();
        [0, o1, o2, o3, o4, o5]
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = x.rows(0, self.p);
        let s = x.rows(self.p, self.k);
        let mut out = Vec::with_capacity(self.count());
        out.extend(self.upper_idx.iter().map(|&i| u[i]));
        out.extend(self.lower_idx.iter().map(|&i| -u[i]));
        if let Some(h) = self.hard {
            out.extend((&h.matrix * u).iter().copied());
        }
        if let Some(sc) = self.soft {
            let y = &sc.matrix * u;
            out.extend(self.soft_upper.iter().map(|&j| y[j] - s[j]));
            out.extend(self.soft_lower.iter().map(|&j| -y[j] - s[j]));
        }
        out.extend(s.iter().map(|v| -v));
        DVector::from_vec(out)
    }

    fn apply_t(&self, y: &DVector<f64>) -> DVector<f64> {
        let [_, o1, o2, o3, o4, o5] = self.offsets();
        let mut out = DVector::zeros(self.p + self.k);
        for (r, &i) in self.upper_idx.iter().enumerate() {
            out[i] += y[r];
        }
        for (r, &i) in self.lower_idx.iter().enumerate() {
            out[i] -= y[o1 + r];
        }
        if let Some(h) = self.hard {
            let g = h.matrix.tr_mul(&y.rows(o2, h.matrix.nrows()));
            out.rows_mut(0, self.p).add_assign(&g);
        }
        if let Some(sc) = self.soft {
            let mut w = DVector::zeros(self.k);
            for (r, &j) in self.soft_upper.iter().enumerate() {
                w[j] += y[o3 + r];
                out[self.p + j] -= y[o3 + r];
            }
            for (r, &j) in self.soft_lower.iter().enumerate() {
                w[j] -= y[o4 + r];
                out[self.p + j] -= y[o4 + r];
            }
            let g = sc.matrix.tr_mul(&w);
            out.rows_mut(0, self.p).add_assign(&g);
        }
        for j in 0..self.k {
            out[self.p + j] -= y[o5 + j];
        }
        out
    }
}

use std::ops::AddAssign;

/// Factorized Newton matrix `P + A' D A` with the slack block eliminated.
struct Newton {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    coupling: DVector<f64>,
    slack_diag: DVector<f64>,
}

fn factor_newton(qp: &QpProblem, rows: &Rows<'_>, d: &DVector<f64>) -> Result<Newton> {
    let [_, o1, o2, o3, o4, o5] = rows.offsets();
    let p = rows.p;
    let mut m = qp.hessian.clone();
    for (r, &i) in rows.upper_idx.iter().enumerate() {
        m[(i, i)] += d[r];
    }
    for (r, &i) in rows.lower_idx.iter().enumerate() {
        m[(i, i)] += d[o1 + r];
    }
    if let Some(h) = rows.hard {
        let mut scaled = h.matrix.clone();
        for r in 0..scaled.nrows() {
            scaled.row_mut(r).scale_mut(d[o2 + r]);
        }
        m += h.matrix.tr_mul(&scaled);
    }
    let mut coupling = DVector::zeros(rows.k);
    let mut slack_diag = DVector::zeros(rows.k);
    if let Some(sc) = rows.soft {
        let mut d_up = DVector::zeros(rows.k);
        let mut d_lo = DVector::zeros(rows.k);
        for (r, &j) in rows.soft_upper.iter().enumerate() {
            d_up[j] = d[o3 + r];
        }
        for (r, &j) in rows.soft_lower.iter().enumerate() {
            d_lo[j] = d[o4 + r];
        }
        let mut weights = DVector::zeros(rows.k);
        for j in 0..rows.k {
            slack_diag[j] = d_up[j] + d_lo[j] + d[o5 + j];
            coupling[j] = d_lo[j] - d_up[j];
            weights[j] = d_up[j] + d_lo[j] - coupling[j] * coupling[j] / slack_diag[j];
        }
        let mut scaled = sc.matrix.clone();
        for r in 0..scaled.nrows() {
            scaled.row_mut(r).scale_mut(weights[r]);
        }
        m += sc.matrix.tr_mul(&scaled);
    }
    let scale = (0..p).map(|i| m[(i, i)].abs()).fold(1.0, f64::max);
    let mut reg = 0.0;
    loop {
        let mut trial = m.clone();
        if reg > 0.0 {
            for i in 0..p {
                trial[(i, i)] += reg;
            }
        }
        if let Some(chol) = trial.cholesky() {
            return Ok(Newton {
                chol,
                coupling,
                slack_diag,
            });
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        if reg > 1e-4 * scale {
            return Err(Error::Numerical {
                context: "QP Newton factorization",
                condition: f64::INFINITY,
            });
        }
    }
}

impl Newton {
    fn solve(&self, rows: &Rows<'_>, rhs: &DVector<f64>) -> DVector<f64> {
        let p = rows.p;
        let mut ru = rhs.rows(0, p).into_owned();
        let rs = rhs.rows(p, rows.k);
        if let Some(sc) = rows.soft {
            let w = DVector::from_fn(rows.k, |j, _| self.coupling[j] * rs[j] / self.slack_diag[j]);
            ru -= sc.matrix.tr_mul(&w);
        }
        let du = self.chol.solve(&ru);
        let mut out = DVector::zeros(p + rows.k);
        out.rows_mut(0, p).copy_from(&du);
        if let Some(sc) = rows.soft {
            let su = &sc.matrix * &du;
            for j in 0..rows.k {
                out[p + j] = (rs[j] - self.coupling[j] * su[j]) / self.slack_diag[j];
            }
        }
        out
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

pub fn solve_qp(qp: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(qp, &QpOptions::default())
}

pub fn solve_qp_with(original: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    original.validate()?;
    // Residuals and tolerances refer to the problem scaled so that its
    // largest quadratic or linear coefficient is 1.
    let scale = original.hessian.amax().max(original.linear.amax()).max(1.0);
    let mut scaled = original.clone();
    scaled.hessian /= scale;
    scaled.linear /= scale;
    scaled.constant /= scale;
    if let Some(s) = scaled.soft.as_mut() {
        s.weight /= scale;
    }
    let qp = &scaled;
    let rows = Rows::new(qp);
    let (p, k) = (rows.p, rows.k);
    let mc = rows.count();

    // objective over x = (u, s)
    let mut q = DVector::zeros(p + k);
    q.rows_mut(0, p).copy_from(&qp.linear);
    if let Some(sc) = &qp.soft {
        q.rows_mut(p, k).fill(sc.weight);
    }
    let hess_x = |x: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(p + k);
        out.rows_mut(0, p).copy_from(&(&qp.hessian * x.rows(0, p)));
        out
    };

    if mc == 0 {
        let chol = qp.hessian.clone().cholesky().ok_or(Error::Numerical {
            context: "unconstrained QP with singular Hessian",
            condition: f64::INFINITY,
        })?;
        let u = chol.solve(&(-&qp.linear));
        let stationarity = (&qp.hessian * &u + &qp.linear).amax();
        return Ok(QpSolution {
            objective: original.quadratic_value(&u),
            slack: DVector::zeros(0),
            u,
            kkt: KktResidual {
                stationarity,
                primal: 0.0,
                complementarity: 0.0,
            },
            iterations: 0,
            converged: true,
            max_soft_violation: 0.0,
        });
    }

    // starting point
    let mut x = DVector::zeros(p + k);
    for i in 0..p {
        let (lo, hi) = (qp.lower[i], qp.upper[i]);
        x[i] = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo.max(0.0) + 1.0,
            (false, true) => hi.min(0.0) - 1.0,
            (false, false) => 0.0,
        };
    }
    if let Some(sc) = &qp.soft {
        let y = &sc.matrix * x.rows(0, p);
        for j in 0..k {
            let v = (y[j] - sc.upper[j]).max(sc.lower[j] - y[j]).max(0.0);
            x[p + j] = v + 1.0;
        }
    }
    let ax = rows.apply(&x);
    let mut t = DVector::from_fn(mc, |i, _| (rows.b[i] - ax[i]).max(1.0));
    let mut lam = DVector::from_element(mc, 1.0);
    if let Some(sc) = &qp.soft {
        // slack rows start near their dual optimum when the row is inactive
        lam.rows_mut(mc - k, k).fill(sc.weight.max(1.0));
    }

    let b_scale = rows.b.amax();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..=opts.max_iterations {
        iterations = iter;
        let ax = rows.apply(&x);
        let r_d = hess_x(&x) + &q + rows.apply_t(&lam);
        let r_p = &ax + &t - &rows.b;
        let mu = t.dot(&lam) / mc as f64;
        if r_d.amax() <= opts.tolerance * (1.0 + q.amax())
            && r_p.amax() <= opts.tolerance * (1.0 + b_scale)
            && mu <= opts.tolerance
        {
            converged = true;
            break;
        }
        if iter == opts.max_iterations {
            break;
        }
        let d = lam.component_div(&t);
        let newton = factor_newton(qp, &rows, &d)?;

        let direction = |r_c: &DVector<f64>| {
            let inner = d.component_mul(&r_p) + r_c.component_div(&t);
            let rhs = -&r_d - rows.apply_t(&inner);
            let dx = newton.solve(&rows, &rhs);
            let dlam = d.component_mul(&(rows.apply(&dx) + &r_p)) + r_c.component_div(&t);
            let dt = (r_c - t.component_mul(&dlam)).component_div(&lam);
            (dx, dlam, dt)
        };

        let r_aff = -t.component_mul(&lam);
        let (_, dlam_a, dt_a) = direction(&r_aff);
        let alpha_aff = max_step(&t, &dt_a).min(max_step(&lam, &dlam_a));
        let mu_aff = (&t + &dt_a * alpha_aff).dot(&(&lam + &dlam_a * alpha_aff)) / mc as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        let r_c = &r_aff - dt_a.component_mul(&dlam_a) + DVector::from_element(mc, sigma * mu);
        let (dx, dlam, dt) = direction(&r_c);
        let alpha = (0.99 * max_step(&t, &dt).min(max_step(&lam, &dlam))).min(1.0);
        x += &dx * alpha;
        t += &dt * alpha;
        lam += &dlam * alpha;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "QP interior point iterate",
                condition: f64::INFINITY,
            });
        }
    }

    let mut u = x.rows(0, p).into_owned();
    for i in 0..p {
        u[i] = u[i].clamp(qp.lower[i], qp.upper[i]);
    }
    let slack = x.rows(p, k).into_owned();
    let mut x_final = x.clone();
    x_final.rows_mut(0, p).copy_from(&u);
    let ax = rows.apply(&x_final);
    let stationarity = (hess_x(&x_final) + &q + rows.apply_t(&lam)).amax();
    let gap = &rows.b - &ax;
    let primal = gap.iter().fold(0.0f64, |m, g| m.max(-g));
    let complementarity = gap
        .iter()
        .zip(lam.iter())
        .fold(0.0f64, |m, (g, l)| m.max((g.max(0.0) * l).abs()));
    let (_, max_soft_violation) = qp.soft_violation(&u);
    Ok(QpSolution {
        objective: original.objective(&u),
        u,
        slack,
        kkt: KktResidual {
            stationarity,
            primal,
            complementarity,
        },
        iterations,
        converged,
        max_soft_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_matches_closed_form() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let sol = solve_qp(&QpProblem::unconstrained(h.clone(), f.clone())).unwrap();
        let exact = -h.cholesky().unwrap().solve(&f);
        assert!((sol.u - exact).amax() < 1e-12);
    }

    #[test]
    fn active_upper_bound() {
        // (u - 2)^2 = 1/2 * 2 u^2 - 4 u + 4
        let mut qp = QpProblem::boxed(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -4.0),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, 1.0),
        );
        qp.constant = 4.0;
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.u[0] - 1.0).abs() < 1e-8);
        assert!((sol.objective - 1.0).abs() < 1e-8);
        assert!(sol.kkt.max() <= 1e-6);
    }

    #[test]
    fn hard_rows_are_respected() {
        // min (u1-1)^2 + (u2-1)^2 s.t. u1 + u2 <= 1
        let mut qp = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, -2.0]));
        qp.hard = Some(HardConstraints {
            matrix: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            upper: DVector::from_element(1, 1.0),
        });
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.u[0] - 0.5).abs() < 1e-8 && (sol.u[1] - 0.5).abs() < 1e-8);
        assert!(sol.kkt.max() <= 1e-6);
    }

    #[test]
    fn soft_rows_behave_like_exact_penalty() {
        // min (u-2)^2 s.t. u <= 1 softened with large weight: solution stays at 1
        let mut qp = QpProblem::unconstrained(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, -4.0));
        qp.soft = Some(SoftConstraints {
            matrix: DMatrix::from_element(1, 1, 1.0),
            lower: DVector::from_element(1, f64::NEG_INFINITY),
            upper: DVector::from_element(1, 1.0),
            weight: 1e6,
        });
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.u[0] - 1.0).abs() < 1e-7);
        assert!(sol.max_soft_violation < 1e-7);
        // small weight lets the row be violated: optimum where 2(u-2) + w = 0
        qp.soft.as_mut().unwrap().weight = 1.0;
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.u[0] - 1.5).abs() < 1e-7);
        assert!((sol.max_soft_violation - 0.5).abs() < 1e-7);
    }

    #[test]
    fn infeasible_soft_rows_still_solve() {
        // u in [0, 1] but soft row asks u >= 3
        let mut qp = QpProblem::boxed(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
        );
        qp.soft = Some(SoftConstraints {
            matrix: DMatrix::from_element(1, 1, 1.0),
            lower: DVector::from_element(1, 3.0),
            upper: DVector::from_element(1, f64::INFINITY),
            weight: 10.0,
        });
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.u[0] - 1.0).abs() < 1e-8);
        assert!((sol.max_soft_violation - 2.0).abs() < 1e-7);
    }

    #[test]
    fn validation_errors() {
        let qp = QpProblem::boxed(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
            DVector::zeros(2),
        );
        assert!(solve_qp(&qp).is_err());
        let qp = QpProblem::unconstrained(DMatrix::identity(3, 3), DVector::zeros(2));
        assert!(matches!(solve_qp(&qp), Err(Error::DimensionMismatch { .. })));
    }
}
