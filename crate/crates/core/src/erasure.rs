//! Single-step erasure updates: the inverse-Fisher update and the
//! comparison updates (influence function, gradient ascent, diagonal scrub).
//!
//! All updates are pure: they return a new parameter vector and leave `θ⋆`
//! untouched.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fisher::{apply_inverse, InverseFisher};
use crate::models::{gradient_sum, hessian_dense, Dataset, LossConfig, ModelParams};
use crate::scalar::Scalar;

/// Which per-sample gradients drive the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientSource {
    /// `Σ_{i∈S} ∇ℓ_i(θ⋆)`.
    #[default]
    Removed,
    /// `-Σ_{i∉S} ∇ℓ_i(θ⋆)`, equal to the above at an exact optimum.
    Remaining,
}

/// Which dataset the influence-function Hessian is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianSource {
    Full,
    LeaveOut,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ErasureMethod<T> {
    Ssse,
    Influence(HessianSource),
    GradientAscent { lr: T },
    DiagScrub { noise_sigma: T, noise_seed: u64 },
}

/// The removal set `S` and the scale `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasureRequest<T> {
    pub removed_ids: Vec<u64>,
    pub epsilon: T,
    pub gradient_source: GradientSource,
}

impl<T: Scalar> ErasureRequest<T> {
    pub fn new(removed_ids: Vec<u64>, epsilon: T) -> Self {
        Self {
            removed_ids,
            epsilon,
            gradient_source: GradientSource::Removed,
        }
    }
}

/// Rows of `S` in `ds`, checking `1 ≤ k < n` and uniqueness.
fn removal_rows<T: Scalar>(ds: &Dataset<T>, removed_ids: &[u64]) -> Result<Vec<usize>> {
    if removed_ids.is_empty() {
        return Err(Error::invalid("removal set is empty"));
    }
    let mut seen = HashSet::with_capacity(removed_ids.len());
    if let Some(dup) = removed_ids.iter().find(|id| !seen.insert(**id)) {
        return Err(Error::invalid(format!("sample id {dup} listed twice")));
    }
    if removed_ids.len() >= ds.len() {
        return Err(Error::invalid(format!(
            "cannot remove k = {} of n = {} samples (need k < n)",
            removed_ids.len(),
            ds.len()
        )));
    }
    ds.rows_for_ids(removed_ids)
}

fn removal_gradient<T: Scalar>(
    theta: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    rows: &[usize],
    source: GradientSource,
) -> Result<Vec<T>> {
    match source {
        GradientSource::Removed => gradient_sum(theta, ds, rows, cfg),
        GradientSource::Remaining => {
            let drop: HashSet<usize> = rows.iter().copied().collect();
            let rest: Vec<usize> = (0..ds.len()).filter(|r| !drop.contains(r)).collect();
            let mut g = gradient_sum(theta, ds, &rest, cfg)?;
            g.iter_mut().for_each(|v| *v = -*v);
            Ok(g)
        }
    }
}

/// `θ + scale · direction`, returning `θ` bit-for-bit when `scale == 0`.
fn step<T: Scalar>(theta: &ModelParams<T>, scale: T, direction: &[T]) -> Result<ModelParams<T>> {
    if scale == T::zero() {
        return Ok(theta.clone());
    }
    let values = theta
        .values()
        .iter()
        .zip(direction)
        .map(|(&t, &v)| t + scale * v)
        .collect();
    theta.with_values(values)
}

/// `θ̂_ε = θ⋆ + ε/(n-k) · F̂⁻¹ Σ_{i∈S} ∇ℓ_i(θ⋆)`.
pub fn ssse_update<T: Scalar>(
    theta_star: &ModelParams<T>,
    finv: &InverseFisher<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    req: &ErasureRequest<T>,
) -> Result<ModelParams<T>> {
    let digest = theta_star.digest();
    if finv.params_digest() != digest {
        return Err(Error::StaleFisher {
            expected: finv.params_digest().to_string(),
            actual: digest.to_string(),
        });
    }
    if !req.epsilon.is_finite() || req.epsilon < T::zero() {
        return Err(Error::invalid(format!(
            "epsilon must be finite and >= 0, got {}",
            req.epsilon
        )));
    }
    let rows = removal_rows(ds, &req.removed_ids)?;
    let g = removal_gradient(theta_star, ds, cfg, &rows, req.gradient_source)?;
    let direction = apply_inverse(finv, &g)?;
    let scale = req.epsilon / T::of_usize(ds.len() - rows.len());
    step(theta_star, scale, &direction)
}

/// `θ⋆ + 1/(n-k) · H⁻¹ Σ_{i∈S} ∇ℓ_i(θ⋆)` with `H` the dense Hessian of the
/// objective on `D` or on `D \ S`.
pub fn influence_update<T: Scalar>(
    theta_star: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    removed_ids: &[u64],
    source: HessianSource,
) -> Result<ModelParams<T>> {
    let rows = removal_rows(ds, removed_ids)?;
    let g = gradient_sum(theta_star, ds, &rows, cfg)?;
    let h = match source {
        HessianSource::Full => hessian_dense(theta_star, ds, cfg)?,
        HessianSource::LeaveOut => hessian_dense(theta_star, &ds.without_ids(removed_ids)?, cfg)?,
    };
    let chol = h.cholesky().map_err(|e| {
        Error::numeric(
            format!("Hessian is not positive definite ({e}); use l2_coeff > 0"),
            None,
        )
    })?;
    let direction = chol.solve(&g)?;
    step(
        theta_star,
        T::one() / T::of_usize(ds.len() - rows.len()),
        &direction,
    )
}

/// One ascent step on the removed samples: `θ⋆ + lr/k · Σ_{i∈S} ∇ℓ_i(θ⋆)`.
pub fn gradient_ascent_step<T: Scalar>(
    theta_star: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    removed_ids: &[u64],
    lr: T,
) -> Result<ModelParams<T>> {
    if !(lr >= T::zero()) || !lr.is_finite() {
        return Err(Error::invalid(format!("lr must be finite and >= 0, got {lr}")));
    }
    let rows = removal_rows(ds, removed_ids)?;
    let g = gradient_sum(theta_star, ds, &rows, cfg)?;
    step(theta_star, lr / T::of_usize(rows.len()), &g)
}

/// Diagonal-Fisher scrub: `θ⋆ + ε/(n-k) · diag ⊙ Σ_{i∈S} ∇ℓ_i(θ⋆)` plus
/// Gaussian noise with per-coordinate standard deviation
/// `noise_sigma · √diag_j` drawn from `noise_seed`.
pub fn diag_scrub_update<T: Scalar>(
    theta_star: &ModelParams<T>,
    diag_finv: &[T],
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    req: &ErasureRequest<T>,
    noise_sigma: T,
    noise_seed: u64,
) -> Result<ModelParams<T>> {
    if diag_finv.len() != theta_star.len() {
        return Err(Error::invalid(format!(
            "diagonal of length {} for {} parameters",
            diag_finv.len(),
            theta_star.len()
        )));
    }
    if !(noise_sigma >= T::zero()) || !noise_sigma.is_finite() {
        return Err(Error::invalid("noise_sigma must be finite and >= 0"));
    }
    if !req.epsilon.is_finite() || req.epsilon < T::zero() {
        return Err(Error::invalid("epsilon must be finite and >= 0"));
    }
    let rows = removal_rows(ds, &req.removed_ids)?;
    let g = removal_gradient(theta_star, ds, cfg, &rows, req.gradient_source)?;
    let scale = req.epsilon / T::of_usize(ds.len() - rows.len());
    let direction: Vec<T> = diag_finv.iter().zip(&g).map(|(&d, &v)| d * v).collect();
    let out = step(theta_star, scale, &direction)?;
    if noise_sigma == T::zero() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let values = out
        .values()
        .iter()
        .zip(diag_finv)
        .map(|(&t, &d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            t + noise_sigma * d.sqrt() * T::of_f64(z)
        })
        .collect();
    out.with_values(values)
}

/// Curvature inputs needed by [`erase`]; only the one the method uses must
/// be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct Curvature<'a, T> {
    pub inverse_fisher: Option<&'a InverseFisher<T>>,
    pub diagonal: Option<&'a [T]>,
}

/// Dispatch on `method`.
pub fn erase<T: Scalar>(
    theta_star: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    req: &ErasureRequest<T>,
    method: &ErasureMethod<T>,
    curvature: Curvature<'_, T>,
) -> Result<ModelParams<T>> {
    match method {
        ErasureMethod::Ssse => {
            let finv = curvature
                .inverse_fisher
                .ok_or_else(|| Error::invalid("SSSE needs an inverse Fisher"))?;
            ssse_update(theta_star, finv, ds, cfg, req)
        }
        ErasureMethod::Influence(src) => {
            influence_update(theta_star, ds, cfg, &req.removed_ids, *src)
        }
        ErasureMethod::GradientAscent { lr } => {
            gradient_ascent_step(theta_star, ds, cfg, &req.removed_ids, *lr)
        }
        ErasureMethod::DiagScrub {
            noise_sigma,
            noise_seed,
        } => {
            let diag = curvature
                .diagonal
                .ok_or_else(|| Error::invalid("diagonal scrub needs a diagonal inverse Fisher"))?;
            diag_scrub_update(theta_star, diag, ds, cfg, req, *noise_sigma, *noise_seed)
        }
    }
}
