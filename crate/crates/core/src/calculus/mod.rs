//! First and second derivatives of the loss.
//!
//! The gradient splits into the three loss blocks; the Hessian of the full
//! loss factors as H = Aᵀ D A with D = (1 − γ)·B₁ − γ·B₂ + W², where B₁ and
//! B₂ are the n×n kernels of the fit and entropy Hessians. Both kernels are
//! assembled from closed forms and gated by the finite-difference oracle in
//! [`fd`] before anything downstream relies on them.

pub mod fd;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{Evaluation, ProblemInstance};

/// Relative asymmetry beyond which Hessian assembly refuses to symmetrize.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Gradient of the loss, split by block.
///
/// `g_ent` stores ∇L_ent itself; the minus sign from the −γ·L_ent term is
/// applied at combination time, so
/// `g_total = (1 − γ)·g_exp − γ·g_ent + g_reg`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub g_exp: DVector<f64>,
    pub g_ent: DVector<f64>,
    pub g_reg: DVector<f64>,
    pub g_total: DVector<f64>,
}

/// The Hessian decomposition at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianParts {
    /// Fit-block kernel with d²L_exp/dx² = AᵀB₁A.
    pub b1: DMatrix<f64>,
    /// Entropy-block kernel with d²L_ent/dx² = AᵀB₂A.
    pub b2: DMatrix<f64>,
    /// Low-rank part of B₂.
    pub b2_rank: DMatrix<f64>,
    /// Diagonal part of B₂ (its diagonal entries).
    pub b2_diag: DVector<f64>,
    /// D = (1 − γ)·B₁ − γ·B₂ + W².
    pub d: DMatrix<f64>,
    /// H = Aᵀ D A, symmetrized as (H + Hᵀ)/2.
    pub h: DMatrix<f64>,
    /// Relative asymmetry of H before symmetrization.
    pub asymmetry: f64,
}

/// Rank and diagonal split of the entropy kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct B2Parts {
    pub rank: DMatrix<f64>,
    /// Diagonal entries of the diagonal part, −((L_ent + 1)·f + h).
    pub diag: DVector<f64>,
    pub full: DMatrix<f64>,
}

fn check_column(eval: &Evaluation, col: &DVector<f64>, name: &str) -> Result<()> {
    if col.len() != eval.f.len() {
        return Err(Error::shape(format!(
            "{name} has length {}, expected {}",
            col.len(),
            eval.f.len()
        )));
    }
    Ok(())
}

/// df/dxᵢ = f ∘ aᵢ − ⟨f, aᵢ⟩·f for a column aᵢ of A.
pub fn jacobian_f_column(eval: &Evaluation, a_col: &DVector<f64>) -> Result<DVector<f64>> {
    check_column(eval, a_col, "A column")?;
    let dot = eval.f.dot(a_col);
    Ok(eval.f.component_mul(a_col) - &eval.f * dot)
}

/// d(ln f)/dxᵢ = aᵢ − ⟨f, aᵢ⟩·1ₙ.
pub fn grad_log_f_column(eval: &Evaluation, a_col: &DVector<f64>) -> Result<DVector<f64>> {
    check_column(eval, a_col, "A column")?;
    let dot = eval.f.dot(a_col);
    Ok(a_col - DVector::from_element(a_col.len(), dot))
}

/// dh/dxᵢ = −⟨f, aᵢ⟩·(f + h) + aᵢ ∘ (f + h).
pub fn grad_h_column(eval: &Evaluation, a_col: &DVector<f64>) -> Result<DVector<f64>> {
    check_column(eval, a_col, "A column")?;
    let fh = &eval.f + &eval.h;
    let dot = eval.f.dot(a_col);
    Ok(a_col.component_mul(&fh) - fh * dot)
}

/// ∇L_ent = −Aᵀ(f·L_ent + h); entry i is −⟨f, aᵢ⟩·L_ent − ⟨h, aᵢ⟩.
pub fn grad_l_ent(eval: &Evaluation, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a.nrows() != eval.f.len() {
        return Err(Error::shape(format!(
            "A has {} rows, expected {}",
            a.nrows(),
            eval.f.len()
        )));
    }
    let inner = &eval.f * eval.l_ent + &eval.h;
    Ok(-(a.transpose() * inner))
}

/// The full gradient, block by block.
pub fn grad_total(problem: &ProblemInstance, eval: &Evaluation) -> Result<GradientBundle> {
    if eval.f.len() != problem.n() || eval.x.len() != problem.d() {
        return Err(Error::shape("evaluation does not match problem".to_string()));
    }
    let a = problem.a();
    let f = &eval.f;
    let c = &eval.c;
    // d(½‖f−b‖²)/dxᵢ = ⟨c, df/dxᵢ⟩ = ⟨f∘c − ⟨c,f⟩f, aᵢ⟩.
    let g_exp = a.transpose() * (f.component_mul(c) - f * c.dot(f));
    let g_ent = grad_l_ent(eval, a)?;
    let z = a * &eval.x;
    let g_reg = a.transpose() * problem.w_squared().component_mul(&z);
    let gamma = problem.gamma();
    let g_total = &g_exp * (1.0 - gamma) - &g_ent * gamma + &g_reg;
    if g_total.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("gradient"));
    }
    Ok(GradientBundle {
        g_exp,
        g_ent,
        g_reg,
        g_total,
    })
}

/// The shared scalar s in d²(ln f)/dxᵢdxⱼ = s·1ₙ:
/// s = ⟨f, aᵢ⟩·⟨f, aⱼ⟩ − ⟨f, aᵢ ∘ aⱼ⟩.
pub fn hess_log_f_entry(
    eval: &Evaluation,
    a_col_i: &DVector<f64>,
    a_col_j: &DVector<f64>,
) -> Result<f64> {
    check_column(eval, a_col_i, "A column i")?;
    check_column(eval, a_col_j, "A column j")?;
    Ok(eval.f.dot(a_col_i) * eval.f.dot(a_col_j) - eval.f.dot(&a_col_i.component_mul(a_col_j)))
}

fn b2_with_hf_sign(eval: &Evaluation, hf_sign: f64) -> Result<B2Parts> {
    let f = &eval.f;
    let h = &eval.h;
    let l_ent = eval.l_ent;
    let mut rank = f * f.transpose() * (2.0 * l_ent + 1.0);
    rank += f * h.transpose();
    rank += (h * f.transpose()) * hf_sign;
    let diag = -(f * (l_ent + 1.0) + h);
    let full = &rank + DMatrix::from_diagonal(&diag);
    if full.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("B2"));
    }
    Ok(B2Parts { rank, diag, full })
}

/// Entropy kernel B₂ = (2L_ent + 1)·ffᵀ + fhᵀ + hfᵀ − diag((L_ent + 1)·f + h),
/// split into its rank and diagonal parts.
pub fn build_b2(eval: &Evaluation) -> Result<B2Parts> {
    b2_with_hf_sign(eval, 1.0)
}

/// Negative control for the derivative oracle battery: B₂ with the sign of
/// the hfᵀ term flipped. Must fail the finite-difference check.
pub fn build_b2_corrupted(eval: &Evaluation) -> Result<B2Parts> {
    b2_with_hf_sign(eval, -1.0)
}

/// Fit kernel B₁ with d²L_exp/dx² = AᵀB₁A:
///
/// ```text
/// B₁ = ⟨3f − 2b, f⟩·ffᵀ − pfᵀ − fpᵀ + diag(p) − ⟨f − b, f⟩·diag(f),
/// p = (2f − b) ∘ f
/// ```
///
/// written below through c = f − b (so 2f − b = f + c and 3f − 2b = f + 2c).
pub fn build_b1(eval: &Evaluation) -> Result<DMatrix<f64>> {
    let f = &eval.f;
    let c = &eval.c;
    let p = (f + c).component_mul(f);
    let cf = c.dot(f);
    let lead = (f + c * 2.0).dot(f);
    let mut b1 = f * f.transpose() * lead;
    b1 -= &p * f.transpose();
    b1 -= f * p.transpose();
    b1 += DMatrix::from_diagonal(&p);
    b1 -= DMatrix::from_diagonal(&(f * cf));
    if b1.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("B1"));
    }
    Ok(b1)
}

/// Assembles D = (1 − γ)·B₁ − γ·B₂ + W² and H = AᵀDA, symmetrizing H and
/// recording the pre-symmetrization asymmetry.
pub fn build_hessian(problem: &ProblemInstance, eval: &Evaluation) -> Result<HessianParts> {
    build_hessian_inner(problem, eval, false)
}

/// Same as [`build_hessian`] but routed through the corrupted B₂; used only
/// by the mutation mode of the verification battery.
pub fn build_hessian_corrupted(
    problem: &ProblemInstance,
    eval: &Evaluation,
) -> Result<HessianParts> {
    build_hessian_inner(problem, eval, true)
}

fn build_hessian_inner(
    problem: &ProblemInstance,
    eval: &Evaluation,
    corrupt_b2: bool,
) -> Result<HessianParts> {
    if eval.f.len() != problem.n() {
        return Err(Error::shape("evaluation does not match problem".to_string()));
    }
    let b1 = build_b1(eval)?;
    let b2_parts = if corrupt_b2 {
        build_b2_corrupted(eval)?
    } else {
        build_b2(eval)?
    };
    let gamma = problem.gamma();
    let mut d = &b1 * (1.0 - gamma);
    d -= &b2_parts.full * gamma;
    d += DMatrix::from_diagonal(&problem.w_squared());
    let a = problem.a();
    let h_raw = a.transpose() * &d * a;
    if h_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("hessian"));
    }
    let asymmetry = crate::linalg::relative_asymmetry(&h_raw);
    // The negative control skips the symmetry gate: its corruption is
    // antisymmetric and must survive to the derivative oracle.
    if asymmetry > SYMMETRY_TOLERANCE && !corrupt_b2 {
        return Err(Error::Symmetry {
            asymmetry,
            tolerance: SYMMETRY_TOLERANCE,
        });
    }
    let h = (&h_raw + h_raw.transpose()) * 0.5;
    Ok(HessianParts {
        b1,
        b2: b2_parts.full,
        b2_rank: b2_parts.rank,
        b2_diag: b2_parts.diag,
        d,
        h,
        asymmetry,
    })
}
