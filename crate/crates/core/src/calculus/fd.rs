//! Central finite-difference oracle.
//!
//! Everything here differentiates numerically through [`evaluate`] alone, so
//! the oracle stays independent of the closed-form derivative code it is
//! used to check. The one exception is [`FdTarget::GradL`], which
//! differentiates the analytic gradient to produce a Hessian reference — the
//! gradient itself is validated against the loss first.
//!
//! Second-order objects get Richardson extrapolation over two step sizes at
//! ratio 2.

use nalgebra::{DMatrix, DVector};

use crate::calculus::grad_total;
use crate::error::{Error, Result};
use crate::kernel::{evaluate, ProblemInstance};

/// Default step for first derivatives.
pub const DEFAULT_FIRST_ORDER_STEP: f64 = 1e-5;
/// Default base step for second derivatives (Richardson halves it once).
pub const DEFAULT_SECOND_ORDER_STEP: f64 = 1e-4;

const STEP_RANGE: (f64, f64) = (1e-8, 1e-3);

/// What to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdTarget {
    F,
    LogF,
    H,
    LEnt,
    LExp,
    L,
    GradL,
}

/// Result of a finite-difference run: a d-vector gradient for scalar
/// targets, an n×d Jacobian for vector targets, and a d×d Hessian for
/// [`FdTarget::GradL`].
#[derive(Debug, Clone, PartialEq)]
pub enum FdOutput {
    Gradient(DVector<f64>),
    Jacobian(DMatrix<f64>),
    Hessian(DMatrix<f64>),
}

fn check_step(step: f64) -> Result<()> {
    if !(STEP_RANGE.0..=STEP_RANGE.1).contains(&step) {
        return Err(Error::config(format!(
            "finite-difference step {step} outside [{}, {}]",
            STEP_RANGE.0, STEP_RANGE.1
        )));
    }
    Ok(())
}

/// Central-difference derivative of the named target at `x`.
pub fn finite_difference_oracle(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    target: FdTarget,
    step: f64,
) -> Result<FdOutput> {
    check_step(step)?;
    match target {
        FdTarget::LEnt => Ok(FdOutput::Gradient(fd_gradient(
            problem,
            x,
            step,
            |e| e.l_ent,
        )?)),
        FdTarget::LExp => Ok(FdOutput::Gradient(fd_gradient(
            problem,
            x,
            step,
            |e| e.l_exp,
        )?)),
        FdTarget::L => Ok(FdOutput::Gradient(fd_gradient(
            problem,
            x,
            step,
            |e| e.l_total,
        )?)),
        FdTarget::F => Ok(FdOutput::Jacobian(fd_jacobian(problem, x, step, |e| {
            e.f.clone()
        })?)),
        FdTarget::LogF => Ok(FdOutput::Jacobian(fd_jacobian(problem, x, step, |e| {
            e.f.map(f64::ln)
        })?)),
        FdTarget::H => Ok(FdOutput::Jacobian(fd_jacobian(problem, x, step, |e| {
            e.h.clone()
        })?)),
        FdTarget::GradL => Ok(FdOutput::Hessian(fd_hessian_of_loss(problem, x, step)?)),
    }
}

/// Central differences of a scalar functional of the evaluation.
pub fn fd_gradient(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    step: f64,
    scalar: impl Fn(&crate::kernel::Evaluation) -> f64,
) -> Result<DVector<f64>> {
    check_step(step)?;
    let d = x.len();
    let mut g = DVector::zeros(d);
    for i in 0..d {
        let mut xp = x.clone();
        xp[i] += step;
        let mut xm = x.clone();
        xm[i] -= step;
        g[i] = (scalar(&evaluate(problem, &xp)?) - scalar(&evaluate(problem, &xm)?)) / (2.0 * step);
    }
    Ok(g)
}

/// Central differences of a vector functional; column i is the derivative
/// along eᵢ.
pub fn fd_jacobian(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    step: f64,
    vector: impl Fn(&crate::kernel::Evaluation) -> DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_step(step)?;
    let d = x.len();
    let n = problem.n();
    let mut jac = DMatrix::zeros(n, d);
    for i in 0..d {
        let mut xp = x.clone();
        xp[i] += step;
        let mut xm = x.clone();
        xm[i] -= step;
        let diff = (vector(&evaluate(problem, &xp)?) - vector(&evaluate(problem, &xm)?))
            / (2.0 * step);
        jac.set_column(i, &diff);
    }
    Ok(jac)
}

fn fd_grad_matrix(problem: &ProblemInstance, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut xp = x.clone();
        xp[i] += step;
        let mut xm = x.clone();
        xm[i] -= step;
        let gp = grad_total(problem, &evaluate(problem, &xp)?)?.g_total;
        let gm = grad_total(problem, &evaluate(problem, &xm)?)?.g_total;
        h.set_column(i, &((gp - gm) / (2.0 * step)));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Hessian of the loss by differencing the analytic gradient, with one
/// Richardson step: (4·H(h/2) − H(h)) / 3.
pub fn fd_hessian_of_loss(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    check_step(step)?;
    let coarse = fd_grad_matrix(problem, x, step)?;
    let fine = fd_grad_matrix(problem, x, step * 0.5)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Second mixed derivative of a scalar functional by the 4-point stencil,
/// with one Richardson step.
pub fn fd_second_scalar(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    i: usize,
    j: usize,
    step: f64,
    scalar: impl Fn(&crate::kernel::Evaluation) -> f64 + Copy,
) -> Result<f64> {
    check_step(step)?;
    let stencil = |h: f64| -> Result<f64> {
        let mut xpp = x.clone();
        xpp[i] += h;
        xpp[j] += h;
        let mut xpm = x.clone();
        xpm[i] += h;
        xpm[j] -= h;
        let mut xmp = x.clone();
        xmp[i] -= h;
        xmp[j] += h;
        let mut xmm = x.clone();
        xmm[i] -= h;
        xmm[j] -= h;
        Ok((scalar(&evaluate(problem, &xpp)?) - scalar(&evaluate(problem, &xpm)?)
            - scalar(&evaluate(problem, &xmp)?)
            + scalar(&evaluate(problem, &xmm)?))
            / (4.0 * h * h))
    };
    let coarse = stencil(step)?;
    let fine = stencil(step * 0.5)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Componentwise second mixed derivative of ln f; the closed form says the
/// result is a constant vector, so both the value and the spread across
/// components are of interest.
pub fn fd_log_f_mixed_second(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    i: usize,
    j: usize,
    step: f64,
) -> Result<DVector<f64>> {
    check_step(step)?;
    let log_f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(evaluate(problem, x)?.f.map(f64::ln))
    };
    let stencil = |h: f64| -> Result<DVector<f64>> {
        let mut xpp = x.clone();
        xpp[i] += h;
        xpp[j] += h;
        let mut xpm = x.clone();
        xpm[i] += h;
        xpm[j] -= h;
        let mut xmp = x.clone();
        xmp[i] -= h;
        xmp[j] += h;
        let mut xmm = x.clone();
        xmm[i] -= h;
        xmm[j] -= h;
        Ok((log_f(&xpp)? - log_f(&xpm)? - log_f(&xmp)? + log_f(&xmm)?) / (4.0 * h * h))
    };
    let coarse = stencil(step)?;
    let fine = stencil(step * 0.5)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}
