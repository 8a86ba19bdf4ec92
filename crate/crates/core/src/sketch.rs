//! Leverage-score row sampling of a positive diagonal.
//!
//! [`subsample`] builds a sparse positive diagonal Q̃ such that AᵀQ̃A
//! spectrally approximates AᵀQA within ε₀. Leverage scores are computed
//! exactly from an orthonormal basis of √Q·A; the sample budget is
//! m = ⌈c₀·d·ln(n/δ)/ε₀²⌉. Rows whose expected draw count reaches 1 are
//! included deterministically with their exact weight (capped inclusion
//! probability p = min(1, m·raw/Σraw)); the remaining budget is drawn i.i.d.
//! from the renormalized distribution, with repeats accumulating weight
//! q_i/(m_rem·p_i). When every row saturates the result is Q̃ = Q exactly.
//!
//! Randomness comes from ChaCha8 seeded with the caller's 64-bit seed, so a
//! given (A, q, ε₀, δ, seed) tuple reproduces bitwise on any platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg;

/// Oversampling constant c₀ in the sample budget. Empirically comfortable
/// for the δ failure budget at desk scale; tunable.
pub const OVERSAMPLING_CONSTANT: f64 = 8.0;

/// Sparse positive diagonal with its sampling provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDiagonal {
    /// Strictly increasing row indices with nonzero weight.
    pub indices: Vec<usize>,
    /// Positive weights aligned with `indices`.
    pub values: Vec<f64>,
    pub epsilon0: f64,
    pub delta: f64,
    pub seed: u64,
    /// The budget m; the number of distinct indices never exceeds it.
    pub sample_count: usize,
}

impl SampledDiagonal {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Dense n-vector of the diagonal.
    pub fn to_dense(&self, n: usize) -> DVector<f64> {
        let mut q = DVector::zeros(n);
        for (&i, &v) in self.indices.iter().zip(self.values.iter()) {
            q[i] = v;
        }
        q
    }
}

/// Exact leverage scores of √Q·A: τᵢ = ‖Uᵢ‖² for an orthonormal column
/// basis U. Requires strictly positive q and full column rank; Σᵢτᵢ = d.
pub fn leverage_scores(a: &DMatrix<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, d) = a.shape();
    if q.len() != n {
        return Err(Error::shape(format!(
            "q has length {}, expected {n}",
            q.len()
        )));
    }
    for (i, &qi) in q.iter().enumerate() {
        if !(qi > 0.0 && qi.is_finite()) {
            return Err(Error::DegenerateWeight {
                index: i,
                value: qi,
                context: "leverage scores need a strictly positive diagonal".into(),
            });
        }
    }
    if n < d {
        return Err(Error::Rank {
            context: format!("A is {n}x{d}; need n >= d for full column rank"),
        });
    }
    let mut scaled = a.clone();
    for i in 0..n {
        let s = q[i].sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    let svd = scaled.svd(true, false);
    let sv = &svd.singular_values;
    if sv.min() <= sv.max() * 1e-12 {
        return Err(Error::Rank {
            context: format!(
                "rank-deficient design: sigma_min/sigma_max = {:.3e}",
                sv.min() / sv.max()
            ),
        });
    }
    let u = svd.u.expect("u requested");
    Ok(DVector::from_fn(n, |i, _| u.row(i).norm_squared()))
}

/// Sample budget ⌈c₀·d·ln(n/δ)/ε₀²⌉.
pub fn sample_budget(n: usize, d: usize, epsilon0: f64, delta: f64) -> usize {
    (OVERSAMPLING_CONSTANT * d as f64 * (n as f64 / delta).ln() / (epsilon0 * epsilon0)).ceil()
        as usize
}

fn check_sampling_params(epsilon0: f64, delta: f64) -> Result<()> {
    if !(epsilon0 > 0.0 && epsilon0 <= 0.1) {
        return Err(Error::config(format!(
            "epsilon0 must lie in (0, 0.1], got {epsilon0}"
        )));
    }
    if !(delta > 0.0 && delta < 0.1) {
        return Err(Error::config(format!(
            "delta must lie in (0, 0.1), got {delta}"
        )));
    }
    Ok(())
}

/// Leverage-score subsampling of the diagonal `q`.
pub fn subsample(
    a: &DMatrix<f64>,
    q: &DVector<f64>,
    epsilon0: f64,
    delta: f64,
    seed: u64,
) -> Result<SampledDiagonal> {
    check_sampling_params(epsilon0, delta)?;
    let (n, _) = a.shape();
    let m = sample_budget(n, a.ncols(), epsilon0, delta);
    if (m as f64) > n as f64 * (n as f64).ln() {
        log::warn!(
            "sample budget m = {m} exceeds n ln n = {:.0}; sampling is pointless at this scale",
            n as f64 * (n as f64).ln()
        );
    }
    subsample_with_budget(a, q, m, epsilon0, delta, seed)
}

/// Subsampling with an explicit budget; [`subsample`] derives the budget
/// from (ε₀, δ). Exposed so statistical tests can force genuinely random
/// regimes.
pub fn subsample_with_budget(
    a: &DMatrix<f64>,
    q: &DVector<f64>,
    m: usize,
    epsilon0: f64,
    delta: f64,
    seed: u64,
) -> Result<SampledDiagonal> {
    check_sampling_params(epsilon0, delta)?;
    if m == 0 {
        return Err(Error::config("sample budget must be positive".to_string()));
    }
    let tau = leverage_scores(a, q)?;
    let (n, d) = a.shape();
    let floor = d as f64 / n as f64;
    let raw: Vec<f64> = tau.iter().map(|&t| t.max(floor)).collect();

    // Saturation fixpoint: rows with capped inclusion probability 1 enter
    // deterministically and release one unit of budget each.
    let mut saturated = vec![false; n];
    let mut m_rem = m;
    loop {
        let z: f64 = raw
            .iter()
            .zip(&saturated)
            .filter(|(_, &s)| !s)
            .map(|(r, _)| r)
            .sum();
        if z == 0.0 || m_rem == 0 {
            break;
        }
        let mut newly = 0usize;
        for i in 0..n {
            if !saturated[i] && (m_rem as f64) * raw[i] >= z {
                saturated[i] = true;
                newly += 1;
            }
        }
        if newly == 0 {
            break;
        }
        m_rem = m_rem.saturating_sub(newly);
    }

    let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..n {
        if saturated[i] {
            weights.insert(i, q[i]);
        }
    }

    let live: Vec<usize> = (0..n).filter(|&i| !saturated[i]).collect();
    if !live.is_empty() && m_rem > 0 {
        let z: f64 = live.iter().map(|&i| raw[i]).sum();
        let mut cumulative = Vec::with_capacity(live.len());
        let mut acc = 0.0;
        for &i in &live {
            acc += raw[i];
            cumulative.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..m_rem {
            let u: f64 = rng.random::<f64>() * z;
            let k = cumulative.partition_point(|&c| c <= u).min(live.len() - 1);
            *counts.entry(live[k]).or_insert(0) += 1;
        }
        for (i, count) in counts {
            let p = raw[i] / z;
            let value = count as f64 * q[i] / (m_rem as f64 * p);
            *weights.entry(i).or_insert(0.0) += value;
        }
    }

    let (indices, values): (Vec<usize>, Vec<f64>) = weights.into_iter().unzip();
    Ok(SampledDiagonal {
        indices,
        values,
        epsilon0,
        delta,
        seed,
        sample_count: m,
    })
}

/// Whitened eigenvalue range of AᵀQ̃A against AᵀQA and the pass verdict
/// for the [1 − ε₀, 1 + ε₀] window.
pub fn verify_spectral(
    a: &DMatrix<f64>,
    q: &DVector<f64>,
    sampled: &SampledDiagonal,
) -> Result<(f64, f64, bool)> {
    let gram = weighted_gram(a, q.iter().copied().enumerate());
    let gram_tilde = weighted_gram(
        a,
        sampled
            .indices
            .iter()
            .copied()
            .zip(sampled.values.iter().copied()),
    );
    let (lo, hi) = linalg::whitened_eigen_range(&gram, &gram_tilde)?;
    let eps = sampled.epsilon0;
    let slack = 1e-9;
    let pass = lo >= (1.0 - eps) * (1.0 - slack) && hi <= (1.0 + eps) * (1.0 + slack);
    Ok((lo, hi, pass))
}

fn weighted_gram(
    a: &DMatrix<f64>,
    weights: impl Iterator<Item = (usize, f64)>,
) -> DMatrix<f64> {
    let d = a.ncols();
    let mut out = DMatrix::zeros(d, d);
    for (i, wi) in weights {
        let row = a.row(i);
        for p in 0..d {
            for r in 0..d {
                out[(p, r)] += wi * row[p] * row[r];
            }
        }
    }
    out
}
