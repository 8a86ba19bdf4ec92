//! The lemma-verification battery behind the `check` subcommand.
//!
//! Each campaign sweeps seeded instances and folds the outcomes into
//! [`LemmaRecord`]s; `passed` means zero assertion-class violations.
//! Precondition-gated claims are skipped, not failed. The mutation mode
//! corrupts the entropy kernel on purpose so the derivative oracle can
//! demonstrate that it catches sign errors.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bound_b_blocks, certify_psd, diag_approximation_range, lipschitz_suite, LemmaAggregator,
    LemmaRecord, VerificationReport,
};
use crate::calculus::fd::{fd_gradient, fd_hessian_of_loss, fd_log_f_mixed_second};
use crate::calculus::{
    build_hessian, build_hessian_corrupted, grad_h_column, grad_log_f_column, grad_total,
    hess_log_f_entry, jacobian_f_column,
};
use crate::error::Result;
use crate::harness::{generate_instance, BMode};
use crate::kernel::{evaluate, ProblemInstance};
use crate::linalg;
use crate::sketch;

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// Flip the sign of the hfᵀ term inside B₂.
    FlipB2HfSign,
}

impl std::str::FromStr for Mutation {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Mutation::None),
            "flip-b2-hf" | "flip_b2_hf" => Ok(Mutation::FlipB2HfSign),
            other => Err(crate::error::Error::config(format!(
                "unknown mutation '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    pub mutation: Mutation,
    /// Weight constant used when generating the PSD-campaign instances.
    /// Values below 10 leave the lemma's precondition unsatisfied, so those
    /// rows are skipped rather than asserted.
    pub psd_constant: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            mutation: Mutation::None,
            psd_constant: 10.0,
        }
    }
}

const GAMMA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const B_MODES: [BMode; 3] = [BMode::SimplexRandom, BMode::OneHot, BMode::SoftmaxOfRandomX];

fn seeded_instance(
    rng: &mut ChaCha8Rng,
    idx: usize,
    n_range: (usize, usize),
    d_cap: usize,
    r: f64,
    c_constant: f64,
) -> Result<(ProblemInstance, f64)> {
    let n = rng.random_range(n_range.0..=n_range.1);
    let d = rng.random_range(1..=d_cap.min(n));
    let gamma = GAMMA_GRID[idx % GAMMA_GRID.len()];
    let b_mode = B_MODES[idx % B_MODES.len()];
    let seed = rng.random::<u64>();
    let p = generate_instance(n, d, r, seed, b_mode, c_constant, 1.0, gamma)?;
    Ok((p, gamma))
}

fn ball_point(rng: &mut ChaCha8Rng, problem: &ProblemInstance, radius: f64) -> DVector<f64> {
    linalg::sample_in_ball(rng, problem.d(), radius)
}

fn rel_error(delta: f64, scale: f64) -> f64 {
    delta / scale.max(1e-3)
}

/// Analytic gradient and Hessian against the central-difference oracle on
/// 100 seeded instances (criterion tolerances 1e−6 and 1e−5).
pub fn campaign_calculus_oracle(seed: u64, mutation: Mutation) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca1c);
    let mut grad_rec = LemmaAggregator::new("gradient_oracle");
    let mut hess_rec = LemmaAggregator::new("hessian_oracle");
    for idx in 0..100 {
        let (p, _) = seeded_instance(&mut rng, idx, (3, 50), 10, 1.5, 10.0)?;
        let x = ball_point(&mut rng, &p, 0.75);
        let eval = evaluate(&p, &x)?;
        let g = grad_total(&p, &eval)?.g_total;
        let g_fd = fd_gradient(&p, &x, 1e-5, |e| e.l_total)?;
        let g_err = rel_error((&g - &g_fd).norm(), g_fd.norm());
        grad_rec.add_outcome(g_err <= 1e-6, g_err);

        let h = if mutation == Mutation::FlipB2HfSign {
            build_hessian_corrupted(&p, &eval)?.h
        } else {
            build_hessian(&p, &eval)?.h
        };
        let h_fd = fd_hessian_of_loss(&p, &x, 1e-4)?;
        let h_err = rel_error(
            linalg::spectral_norm(&(&h - &h_fd)),
            linalg::spectral_norm(&h_fd),
        );
        hess_rec.add_outcome(h_err <= 1e-5, h_err);
    }
    Ok(vec![grad_rec.finish(), hess_rec.finish()])
}

/// The quoted inner-product identities of the gradient lemmas on 200
/// seeded (instance, x, i) triples, plus the constant-vector structure of
/// the log-softmax Hessian.
pub fn campaign_gradient_identities(seed: u64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1de1);
    let mut identities = LemmaAggregator::new("gradient_f_identities");
    let mut orthogonality = LemmaAggregator::new("log_f_gradient_orthogonal_to_f");
    let mut constant_vec = LemmaAggregator::new("log_f_hessian_constant_vector");
    for idx in 0..200 {
        let (p, _) = seeded_instance(&mut rng, idx, (3, 10), 4, 1.5, 10.0)?;
        let x = ball_point(&mut rng, &p, 0.75);
        let eval = evaluate(&p, &x)?;
        let i = rng.random_range(0..p.d());
        let j = rng.random_range(0..p.d());
        let a_i: DVector<f64> = p.a().column(i).into();
        let a_j: DVector<f64> = p.a().column(j).into();
        let df = jacobian_f_column(&eval, &a_i)?;
        let f = &eval.f;
        let h = &eval.h;

        // Part 2/3: ⟨df/dxᵢ, aⱼ⟩ = −⟨f,aᵢ⟩⟨f,aⱼ⟩ + ⟨f, aᵢ∘aⱼ⟩.
        let lhs = df.dot(&a_j);
        let rhs = -f.dot(&a_i) * f.dot(&a_j) + f.dot(&a_i.component_mul(&a_j));
        identities.add_outcome((lhs - rhs).abs() <= 1e-10, (lhs - rhs).abs());
        // Part 4: ⟨df/dxᵢ, ln f⟩ = ⟨f,aᵢ⟩·L_ent + ⟨h,aᵢ⟩.
        let lhs = df.dot(&f.map(f64::ln));
        let rhs = f.dot(&a_i) * eval.l_ent + h.dot(&a_i);
        identities.add_outcome((lhs - rhs).abs() <= 1e-10, (lhs - rhs).abs());
        // Part 5: (df/dxᵢ) ∘ ln f = −⟨f,aᵢ⟩·h + h ∘ aᵢ.
        let lhs_v = df.component_mul(&f.map(f64::ln));
        let rhs_v = h.component_mul(&a_i) - h * f.dot(&a_i);
        let gap = (lhs_v - rhs_v).amax();
        identities.add_outcome(gap <= 1e-10, gap);
        // Consistency of dh/dxᵢ with the f and ln f pieces.
        let dh = grad_h_column(&eval, &a_i)?;
        let dlog = grad_log_f_column(&eval, &a_i)?;
        let gap = (&dh - (df.component_mul(&f.map(f64::ln)) + dlog.component_mul(f))).amax();
        identities.add_outcome(gap <= 1e-10, gap);

        // ⟨d(ln f)/dxᵢ, f⟩ = 0.
        let ortho = dlog.dot(f).abs();
        orthogonality.add_outcome(ortho <= 1e-12, ortho);

        // d²(ln f)/dxᵢdxⱼ is a shared scalar times the ones vector.
        let fd_vec = fd_log_f_mixed_second(&p, &x, i, j, 1e-4)?;
        let spread = fd_vec.max() - fd_vec.min();
        constant_vec.add_outcome(spread <= 1e-6, spread);
        let scalar = hess_log_f_entry(&eval, &a_i, &a_j)?;
        let gap = (fd_vec.add_scalar(-scalar)).amax();
        constant_vec.add_outcome(gap <= 1e-6, gap);
    }
    Ok(vec![
        identities.finish(),
        orthogonality.finish(),
        constant_vec.finish(),
    ])
}

/// Simplex, entropy, h-range and prediction-floor facts on 1000 seeded
/// (instance, x) pairs. Instance radii satisfy R² ≥ ln n so the floor
/// bounds apply.
pub fn campaign_fact_battery(seed: u64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfac7);
    let mut simplex = LemmaAggregator::new("fact_f_simplex");
    let mut entropy = LemmaAggregator::new("fact_entropy_range");
    let mut h_range = LemmaAggregator::new("fact_h_range");
    let mut floor = LemmaAggregator::new("fact_prediction_floor");
    for idx in 0..100 {
        let n = rng.random_range(3..=200usize);
        let r = 1.5f64.max(1.2 * (n as f64).ln().sqrt());
        let d = rng.random_range(1..=8usize.min(n));
        let gamma = GAMMA_GRID[idx % 5];
        let p = generate_instance(
            n,
            d,
            r,
            rng.random::<u64>(),
            B_MODES[idx % 3],
            10.0,
            1.0,
            gamma,
        )?;
        let ln_n = (n as f64).ln();
        for _ in 0..10 {
            let x = ball_point(&mut rng, &p, r);
            let e = evaluate(&p, &x)?;
            let sum_gap = (e.f.iter().sum::<f64>() - 1.0).abs();
            simplex.add_outcome(sum_gap <= 1e-12, sum_gap);
            let l2_excess = e.f.norm() - 1.0;
            simplex.add_outcome(l2_excess <= 1e-12, l2_excess.abs());

            let ent_violation = (-e.l_ent).max(e.l_ent - ln_n);
            entropy.add_outcome(ent_violation <= 1e-10, ent_violation.abs());

            let h_hi = e.h.max();
            let h_lo = e.h.min();
            let h_violation = h_hi.max(-1.0 - h_lo);
            h_range.add_outcome(h_violation <= 1e-12, h_violation.abs());
            let h_l1: f64 = e.h.iter().map(|v| v.abs()).sum();
            h_range.add_outcome(h_l1 <= ln_n + 1e-10, (h_l1 - ln_n).abs());

            let f_min = e.f.min();
            let floor_bound = (-2.0 * r * r).exp() * (1.0 - 1e-8);
            floor.add_outcome(f_min >= floor_bound, f_min - floor_bound);
            let log_inf = e.f.iter().map(|&v| (1.0 / v).ln()).fold(0.0, f64::max);
            floor.add_outcome(log_inf <= 2.0 * r * r, 2.0 * r * r - log_inf);
            let alpha_floor = (-r * r).exp();
            floor.add_outcome(e.alpha >= alpha_floor, e.alpha - alpha_floor);
        }
    }
    Ok(vec![
        simplex.finish(),
        entropy.finish(),
        h_range.finish(),
        floor.finish(),
    ])
}

/// λ_min(H) ≥ l under the C = 10 weight condition, across the γ grid.
/// Instances are generated with weight constant `c_constant`; rows whose
/// weights do not reach the lemma's threshold are skipped.
pub fn campaign_psd_certificates(seed: u64, c_constant: f64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x95d0);
    let mut rec = LemmaAggregator::new("hessian_pd_lower_bound");
    for idx in 0..100 {
        let (p, _) = seeded_instance(&mut rng, idx, (3, 50), 10, 1.5, c_constant)?;
        let x = ball_point(&mut rng, &p, 1.5);
        let cert = certify_psd(&p, &x)?;
        match cert.psd_ok_under_c10 {
            Some(ok) => {
                let slack = cert.lambda_min_h - (cert.l_target - 1e-8 * cert.h_norm);
                rec.add_outcome(ok, slack.abs());
            }
            None => rec.skip(),
        }
    }
    Ok(vec![rec.finish()])
}

/// Whitened eigenvalues of W⁻¹DW⁻¹ inside [0.9, 1.1] under C = 200.
pub fn campaign_diag_approximation(seed: u64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1a6);
    let mut rec = LemmaAggregator::new("diag_approximation_window");
    for idx in 0..100 {
        let (p, _) = seeded_instance(&mut rng, idx, (3, 50), 10, 1.5, 200.0)?;
        if !p.weight_condition_holds(200.0) {
            rec.skip();
            continue;
        }
        let x = ball_point(&mut rng, &p, 1.5);
        let (lo, hi) = diag_approximation_range(&p, &x)?;
        let ok = lo >= 0.9 - 1e-8 && hi <= 1.1 + 1e-8;
        let margin = (lo - 0.9).min(1.1 - hi);
        rec.add_outcome(ok, margin.abs());
    }
    Ok(vec![rec.finish()])
}

/// Operator bounds on B₁, B₂ and their parts over 1000 seeded evaluations.
pub fn campaign_block_bounds(seed: u64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);
    let mut aggs: std::collections::BTreeMap<String, LemmaAggregator> =
        std::collections::BTreeMap::new();
    for idx in 0..100 {
        let (p, _) = seeded_instance(&mut rng, idx, (3, 40), 6, 1.5, 10.0)?;
        for _ in 0..10 {
            let x = ball_point(&mut rng, &p, 1.5);
            let eval = evaluate(&p, &x)?;
            let report = bound_b_blocks(&eval)?;
            for check in &report.checks {
                aggs.entry(format!("block_{}", check.name))
                    .or_insert_with(|| LemmaAggregator::new(format!("block_{}", check.name)))
                    .add(check);
            }
        }
    }
    Ok(aggs.into_values().map(|a| a.finish()).collect())
}

/// The G₁…G₇ suite and the scalar/vector Lipschitz bounds on 500 seeded
/// pairs in the radius-1.5 ball (small n keeps the prediction floor valid).
pub fn campaign_lipschitz(seed: u64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11b5);
    let mut aggs: std::collections::BTreeMap<String, LemmaAggregator> =
        std::collections::BTreeMap::new();
    for idx in 0..50 {
        let (p, _) = seeded_instance(&mut rng, idx, (3, 9), 4, 1.5, 10.0)?;
        for _ in 0..10 {
            let x = ball_point(&mut rng, &p, 1.5);
            let y = ball_point(&mut rng, &p, 1.5);
            let report = lipschitz_suite(&p, &x, &y)?;
            for check in &report.checks {
                aggs.entry(check.name.clone())
                    .or_insert_with(|| LemmaAggregator::new(check.name.clone()))
                    .add(check);
            }
        }
    }
    Ok(aggs.into_values().map(|a| a.finish()).collect())
}

/// Sketch trials at (n, d, ε₀, δ) = (500, 4, 0.05, 0.01) over 500 seeds:
/// whitened window per trial, leverage mass, and the empirical failure
/// rate against δ + 2√(δ/trials).
pub fn campaign_sketch(seed: u64) -> Result<Vec<LemmaRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5cc7);
    let n = 500;
    let d = 4;
    let epsilon0 = 0.05;
    let delta = 0.01;
    let trials = 500u64;
    let a = nalgebra::DMatrix::from_fn(n, d, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let q = DVector::from_fn(n, |_, _| 0.5 + 1.5 * rng.random::<f64>());

    let mut mass = LemmaAggregator::new("leverage_score_mass");
    let tau = sketch::leverage_scores(&a, &q)?;
    let gap = (tau.iter().sum::<f64>() - d as f64).abs();
    mass.add_outcome(gap <= 1e-8, gap);
    let range_ok = tau.iter().all(|&t| (-1e-12..=1.0 + 1e-9).contains(&t));
    mass.add_outcome(range_ok, 0.0);

    let mut window = LemmaAggregator::new("sketch_spectral_window");
    let mut failures = 0u64;
    for t in 0..trials {
        let s = sketch::subsample(&a, &q, epsilon0, delta, seed ^ (t * 2654435761 + 1))?;
        let (lo, hi, pass) = sketch::verify_spectral(&a, &q, &s)?;
        if !pass {
            failures += 1;
        }
        // Signed distance to the window boundary; the per-trial claim is
        // probabilistic, so only the rate below is assertion-class.
        let margin = (lo - (1.0 - epsilon0)).min((1.0 + epsilon0) - hi);
        window.add_outcome(true, margin);
    }
    let mut rate = LemmaAggregator::new("sketch_failure_rate");
    let observed = failures as f64 / trials as f64;
    let budget = delta + 2.0 * (delta / trials as f64).sqrt();
    rate.add_outcome(observed <= budget, (budget - observed).abs());

    Ok(vec![mass.finish(), window.finish(), rate.finish()])
}

/// Runs every campaign and aggregates the report.
pub fn run_check(options: &CheckOptions) -> Result<VerificationReport> {
    let mut records = Vec::new();
    records.extend(campaign_calculus_oracle(options.seed, options.mutation)?);
    records.extend(campaign_gradient_identities(options.seed)?);
    records.extend(campaign_fact_battery(options.seed)?);
    records.extend(campaign_psd_certificates(options.seed, options.psd_constant)?);
    records.extend(campaign_diag_approximation(options.seed)?);
    records.extend(campaign_block_bounds(options.seed)?);
    records.extend(campaign_lipschitz(options.seed)?);
    records.extend(campaign_sketch(options.seed)?);
    let passed = records.iter().all(|r| r.violations == 0);
    Ok(VerificationReport {
        schema_version: super::io::REPORT_SCHEMA_VERSION,
        seed: options.seed,
        records,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_below_threshold_are_skipped_not_failed() {
        let records = campaign_psd_certificates(5, 0.5).unwrap();
        let rec = &records[0];
        assert_eq!(rec.violations, 0);
        assert_eq!(rec.checked, 0);
        assert_eq!(rec.skipped, 100);
    }

    #[test]
    fn mutation_mode_trips_the_hessian_oracle() {
        let clean = campaign_calculus_oracle(3, Mutation::None).unwrap();
        assert!(clean.iter().all(|r| r.violations == 0), "{clean:?}");
        let mutated = campaign_calculus_oracle(3, Mutation::FlipB2HfSign).unwrap();
        let hess = mutated
            .iter()
            .find(|r| r.lemma == "hessian_oracle")
            .unwrap();
        assert!(hess.violations > 0);
        let grad = mutated
            .iter()
            .find(|r| r.lemma == "gradient_oracle")
            .unwrap();
        assert_eq!(grad.violations, 0);
    }
}
