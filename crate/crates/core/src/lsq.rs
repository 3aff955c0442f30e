//! Small dense nonlinear least-squares solvers.
//!
//! Problems are tiny (≤ 9 parameters, a few hundred residuals), so normal
//! equations are solved with an SVD and no attempt is made at sparsity.

use nalgebra::{DMatrix, DVector};

/// Residual vector and Jacobian of `½‖r(x)‖²`.
pub trait LeastSquaresProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Converged when the accepted step norm falls below this.
    pub step_tolerance: f64,
    /// Converged when `(f_old − f_new) / f_old` falls below this.
    pub relative_decrease_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            relative_decrease_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    SmallStep,
    SmallDecrease,
    ZeroResidual,
    /// No step along the search direction reduces the objective.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DVector<f64>,
    /// `Σ rᵢ²` at `x`.
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }

    pub fn residual_rms(&self, n: usize) -> f64 {
        (self.objective / n.max(1) as f64).sqrt()
    }
}

fn objective(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

fn solve_normal(jtj: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = jtj.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    svd.solve(rhs, max_sv * 1e-14)
        .unwrap_or_else(|_| DVector::zeros(rhs.len()))
}

/// Gauss–Newton with backtracking (step halving) on the objective.
pub fn damped_gauss_newton<P: LeastSquaresProblem>(
    problem: &P,
    x0: DVector<f64>,
    opts: &SolverOptions,
) -> SolveReport {
    let mut x = x0;
    let mut r = problem.residuals(&x);
    let mut f = objective(&r);
    for it in 1..=opts.max_iterations {
        if f == 0.0 {
            return SolveReport { x, objective: f, iterations: it - 1, termination: Termination::ZeroResidual };
        }
        let j = problem.jacobian(&x);
        let jt = j.transpose();
        let step = solve_normal(&(&jt * &j), &(-(&jt * &r)));

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + &step * alpha;
            let rt = problem.residuals(&trial);
            let ft = objective(&rt);
            if ft.is_finite() && ft < f {
                accepted = Some((trial, rt, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, rn, fnew)) = accepted else {
            return SolveReport { x, objective: f, iterations: it, termination: Termination::Stalled };
        };
        let step_norm = (&xn - &x).norm();
        let rel = (f - fnew) / f;
        x = xn;
        r = rn;
        f = fnew;
        if step_norm < opts.step_tolerance {
            return SolveReport { x, objective: f, iterations: it, termination: Termination::SmallStep };
        }
        if rel < opts.relative_decrease_tolerance {
            return SolveReport { x, objective: f, iterations: it, termination: Termination::SmallDecrease };
        }
    }
    SolveReport {
        x,
        objective: f,
        iterations: opts.max_iterations,
        termination: Termination::MaxIterations,
    }
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and Nielsen's damping update.
pub fn levenberg_marquardt<P: LeastSquaresProblem>(
    problem: &P,
    x0: DVector<f64>,
    opts: &SolverOptions,
) -> SolveReport {
    let mut x = x0;
    let mut r = problem.residuals(&x);
    let mut f = objective(&r);
    let mut j = problem.jacobian(&x);
    let mut jtj = j.transpose() * &j;
    let mut grad = j.transpose() * &r;
    let mut lambda = 1e-3 * jtj.diagonal().max().max(1e-300);
    let mut nu = 2.0;

    for it in 1..=opts.max_iterations {
        if f == 0.0 {
            return SolveReport { x, objective: f, iterations: it - 1, termination: Termination::ZeroResidual };
        }
        let mut damped = jtj.clone();
        for i in 0..damped.nrows() {
            let d = jtj[(i, i)].max(1e-300);
            damped[(i, i)] += lambda * d;
        }
        let step = solve_normal(&damped, &(-&grad));
        let trial = &x + &step;
        let rt = problem.residuals(&trial);
        let ft = objective(&rt);
        // predicted reduction of the quadratic model
        let predicted = -(2.0 * step.dot(&grad) + step.dot(&(&jtj * &step)));
        let rho = if predicted > 0.0 { (f - ft) / predicted } else { -1.0 };

        if ft.is_finite() && ft < f && rho > 0.0 {
            let step_norm = step.norm();
            let rel = (f - ft) / f;
            x = trial;
            r = rt;
            f = ft;
            j = problem.jacobian(&x);
            jtj = j.transpose() * &j;
            grad = j.transpose() * &r;
            lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if step_norm < opts.step_tolerance {
                return SolveReport { x, objective: f, iterations: it, termination: Termination::SmallStep };
            }
            if rel < opts.relative_decrease_tolerance {
                return SolveReport { x, objective: f, iterations: it, termination: Termination::SmallDecrease };
            }
        } else {
            if step.norm() < opts.step_tolerance * 1e-3 || lambda > 1e30 {
                return SolveReport { x, objective: f, iterations: it, termination: Termination::Stalled };
            }
            lambda *= nu;
            nu *= 2.0;
        }
    }
    SolveReport {
        x,
        objective: f,
        iterations: opts.max_iterations,
        termination: Termination::MaxIterations,
    }
}
