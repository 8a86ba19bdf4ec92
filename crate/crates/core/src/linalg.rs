//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix size above which spectral norms fall back to power iteration
/// instead of a full decomposition.
const POWER_ITERATION_THRESHOLD: usize = 2000;

/// All eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    DVector::from_vec(ev)
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = symmetric_eigenvalues(m);
    (ev[0], ev[ev.len() - 1])
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    symmetric_eigen_range(m).0
}

/// Spectral norm. Symmetric inputs go through the symmetric eigensolver,
/// everything else through singular values; very large matrices use power
/// iteration on the Gram operator.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows().max(m.ncols()) > POWER_ITERATION_THRESHOLD {
        return power_iteration_norm(m);
    }
    if m.is_square() && is_symmetric(m, 0.0) {
        let (lo, hi) = symmetric_eigen_range(m);
        return lo.abs().max(hi.abs());
    }
    m.singular_values().max()
}

/// Relative asymmetry ‖M − Mᵀ‖_F / ‖M‖_F (0 for the zero matrix).
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

fn power_iteration_norm(m: &DMatrix<f64>) -> f64 {
    // ‖M‖ = sqrt(λ_max(MᵀM)) via power iteration with a fixed start so the
    // result is deterministic.
    let n = m.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut prev = 0.0;
    for _ in 0..500 {
        let w = m.transpose() * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let est = norm.sqrt();
        if (est - prev).abs() <= 1e-12 * est.max(1.0) {
            return est;
        }
        prev = est;
    }
    prev
}

/// Solve the SPD system `M x = rhs` by Cholesky, without forming an inverse.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>, iteration: usize) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or(Error::IndefiniteHessian { iteration })?;
    Ok(chol.solve(rhs))
}

/// Eigenvalue range of `M^{-1/2} N M^{-1/2}` for SPD `M` and symmetric `N`,
/// computed through the Cholesky factor of `M`.
pub fn whitened_eigen_range(m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<(f64, f64)> {
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or_else(|| Error::Rank {
        context: "whitening matrix is not positive definite".into(),
    })?;
    let l = chol.l();
    // K = L^{-1} N L^{-T}
    let mut k = n.clone();
    if !l.solve_lower_triangular_mut(&mut k) {
        return Err(Error::Rank {
            context: "singular cholesky factor".into(),
        });
    }
    let mut kt = k.transpose();
    if !l.solve_lower_triangular_mut(&mut kt) {
        return Err(Error::Rank {
            context: "singular cholesky factor".into(),
        });
    }
    let k = (&kt + kt.transpose()) * 0.5;
    Ok(symmetric_eigen_range(&k))
}

/// Uniform draw from the closed euclidean ball of given radius.
pub fn sample_in_ball<R: rand::Rng>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let norm = v.norm();
    if norm == 0.0 {
        return DVector::zeros(dim);
    }
    let u: f64 = rng.random();
    v * (radius * u.powf(1.0 / dim as f64) / norm)
}
