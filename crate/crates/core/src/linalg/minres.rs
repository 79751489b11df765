//! Preconditioned MINRES for symmetric, possibly indefinite, operators.
//!
//! The preconditioner `S` must be SPD. Residuals are measured in the norm
//! `<r, S r>^{1/2}`, which MINRES minimizes over the Krylov space, so the
//! recorded sequence is nonincreasing by construction.

use super::{axpy, dot, LinearOperator};
use crate::error::{Error, Result};

/// Relative size of a Lanczos coefficient below which the Krylov space is
/// treated as invariant.
pub const BREAKDOWN_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinresStop {
    /// Take exactly this many steps, unless the iteration breaks down first.
    ExactSteps(usize),
    Tolerance { rel_tol: f64, max_steps: usize },
}

#[derive(Debug, Clone)]
pub struct MinresReport {
    pub steps: usize,
    /// `residuals[j]` is the preconditioned residual norm after `j` steps;
    /// `residuals[0]` is the norm of the right-hand side.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// The Krylov space became invariant; the iterate is exact up to rounding.
    pub breakdown: bool,
}

impl MinresReport {
    pub fn initial_residual(&self) -> f64 {
        self.residuals[0]
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap()
    }

    pub fn relative_residual(&self) -> f64 {
        let r0 = self.initial_residual();
        if r0 == 0.0 {
            0.0
        } else {
            self.final_residual() / r0
        }
    }
}

/// Runs preconditioned MINRES from the zero initial guess.
pub fn pminres(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    rhs: &[f64],
    stop: MinresStop,
) -> Result<(Vec<f64>, MinresReport)> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    if precond.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: precond.dim(),
        });
    }
    let (max_steps, rel_tol) = match stop {
        MinresStop::ExactSteps(k) => (k, None),
        MinresStop::Tolerance { rel_tol, max_steps } => (max_steps, Some(rel_tol)),
    };

    let mut x = vec![0.0; n];
    let mut r1 = rhs.to_vec();
    let mut r2 = rhs.to_vec();
    let mut y = precond.apply_vec(rhs);
    let rsr = dot(rhs, &y);
    if rsr < 0.0 {
        return Err(Error::IndefinitePreconditioner(rsr));
    }
    let beta1 = rsr.sqrt();
    let mut report = MinresReport {
        steps: 0,
        residuals: vec![beta1],
        converged: false,
        breakdown: false,
    };
    if beta1 == 0.0 {
        report.converged = true;
        return Ok((x, report));
    }
    if let Some(tol) = rel_tol {
        if tol >= 1.0 {
            report.converged = true;
            return Ok((x, report));
        }
    }

    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;

    for step in 1..=max_steps {
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        op.apply(&v, &mut y);
        if step >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond.apply(&r2, &mut y);
        oldb = beta;
        let rsr = dot(&r2, &y);
        if rsr < 0.0 && rsr.abs() > BREAKDOWN_TOL * beta1 * beta1 {
            return Err(Error::IndefinitePreconditioner(rsr));
        }
        beta = rsr.max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
        }
        axpy(phi, &w, &mut x);

        report.steps = step;
        report.residuals.push(phibar.abs());

        if beta < BREAKDOWN_TOL * beta1 {
            report.breakdown = true;
            report.converged = true;
            return Ok((x, report));
        }
        if let Some(tol) = rel_tol {
            if phibar.abs() <= tol * beta1 {
                report.converged = true;
                return Ok((x, report));
            }
        }
    }

    if let Some(_tol) = rel_tol {
        return Err(Error::NotConverged {
            steps: report.steps,
            relative_residual: report.relative_residual(),
            history: report.residuals,
        });
    }
    report.converged = true;
    Ok((x, report))
}

/// Runs `steps` steps of preconditioned MINRES from zero on `cols` right-hand
/// sides at once (column-major, `dim × cols`). Every column follows its own
/// recurrence; only the operator and preconditioner applications are shared,
/// through [`LinearOperator::apply_multi`]. A column whose Krylov space
/// becomes invariant is frozen.
pub fn pminres_multi(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    rhs: &[f64],
    cols: usize,
    steps: usize,
) -> Result<(Vec<f64>, Vec<MinresReport>)> {
    let n = op.dim();
    if rhs.len() != n * cols {
        return Err(Error::DimensionMismatch {
            expected: n * cols,
            got: rhs.len(),
        });
    }
    if precond.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: precond.dim(),
        });
    }
    let col = |j: usize| j * n..(j + 1) * n;

    let mut x = vec![0.0; n * cols];
    let mut r1 = rhs.to_vec();
    let mut r2 = rhs.to_vec();
    let mut y = vec![0.0; n * cols];
    precond.apply_multi(rhs, cols, &mut y);

    let mut reports = Vec::with_capacity(cols);
    let mut beta1 = vec![0.0; cols];
    let mut active = vec![true; cols];
    for j in 0..cols {
        let rsr = dot(&rhs[col(j)], &y[col(j)]);
        if rsr < 0.0 {
            return Err(Error::IndefinitePreconditioner(rsr));
        }
        beta1[j] = rsr.sqrt();
        active[j] = beta1[j] > 0.0;
        reports.push(MinresReport {
            steps: 0,
            residuals: vec![beta1[j]],
            converged: !active[j],
            breakdown: false,
        });
    }

    let mut v = vec![0.0; n * cols];
    let mut w = vec![0.0; n * cols];
    let mut w2 = vec![0.0; n * cols];
    let mut oldb = vec![0.0; cols];
    let mut beta = beta1.clone();
    let mut dbar = vec![0.0; cols];
    let mut epsln = vec![0.0; cols];
    let mut phibar = beta1.clone();
    let mut cs = vec![-1.0; cols];
    let mut sn = vec![0.0; cols];
    let mut alfa = vec![0.0; cols];

    for step in 1..=steps {
        if !active.iter().any(|&a| a) {
            break;
        }
        for j in 0..cols {
            let r = col(j);
            if active[j] {
                let s = 1.0 / beta[j];
                for i in r {
                    v[i] = s * y[i];
                }
            } else {
                v[r].iter_mut().for_each(|e| *e = 0.0);
            }
        }
        op.apply_multi(&v, cols, &mut y);
        for j in (0..cols).filter(|&j| active[j]) {
            let r = col(j);
            if step >= 2 {
                axpy(-beta[j] / oldb[j], &r1[r.clone()], &mut y[r.clone()]);
            }
            alfa[j] = dot(&v[r.clone()], &y[r.clone()]);
            axpy(-alfa[j] / beta[j], &r2[r.clone()], &mut y[r]);
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        for j in (0..cols).filter(|&j| !active[j]) {
            r2[col(j)].iter_mut().for_each(|e| *e = 0.0);
        }
        precond.apply_multi(&r2, cols, &mut y);
        for j in 0..cols {
            if !active[j] {
                continue;
            }
            let r = col(j);
            oldb[j] = beta[j];
            let rsr = dot(&r2[r.clone()], &y[r.clone()]);
            if rsr < 0.0 && rsr.abs() > BREAKDOWN_TOL * beta1[j] * beta1[j] {
                return Err(Error::IndefinitePreconditioner(rsr));
            }
            beta[j] = rsr.max(0.0).sqrt();

            let oldeps = epsln[j];
            let delta = cs[j] * dbar[j] + sn[j] * alfa[j];
            let gbar = sn[j] * dbar[j] - cs[j] * alfa[j];
            epsln[j] = sn[j] * beta[j];
            dbar[j] = -cs[j] * beta[j];
            let gamma = gbar.hypot(beta[j]).max(f64::EPSILON);
            cs[j] = gbar / gamma;
            sn[j] = beta[j] / gamma;
            let phi = cs[j] * phibar[j];
            phibar[j] *= sn[j];

            for i in r.clone() {
                let wn = (v[i] - oldeps * w2[i] - delta * w[i]) / gamma;
                w2[i] = w[i];
                w[i] = wn;
            }
            axpy(phi, &w[r.clone()], &mut x[r]);

            let rep = &mut reports[j];
            rep.steps = step;
            rep.residuals.push(phibar[j].abs());
            if beta[j] < BREAKDOWN_TOL * beta1[j] {
                rep.breakdown = true;
                active[j] = false;
            }
        }
    }
    for rep in &mut reports {
        rep.converged = true;
    }
    Ok((x, reports))
}
