//! Deterministic mini-batch SGD with heavy-ball momentum, and
//! retrain-from-scratch on a reduced dataset.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{
    add_sample_gradient, loss_and_gradient, Dataset, LabelRef, LossConfig, ModelParams,
    Shape,
};
use crate::scalar::{norm2, Scalar};

/// Default early-stopping threshold on the full-gradient norm.
pub const DEFAULT_GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule<T> {
    Fixed,
    /// Multiply the rate by `factor` from `epoch` on (epochs strictly increasing).
    StepDecay(Vec<(usize, T)>),
}

impl<T: Scalar> LrSchedule<T> {
    pub fn rate_at(&self, base: T, epoch: usize) -> T {
        match self {
            LrSchedule::Fixed => base,
            LrSchedule::StepDecay(steps) => steps
                .iter()
                .take_while(|(e, _)| *e <= epoch)
                .fold(base, |lr, (_, f)| lr * *f),
        }
    }
}

/// Optimizer settings.
///
/// Full-batch runs (`batch_size >= n`) with momentum `μ` are stable for
/// `lr < 2(1 + μ) / L`, where `L` bounds the Hessian's largest eigenvalue;
/// for the linear models `L ≤ max‖x‖² / 4 + l2` (binary) or
/// `max‖x‖² / 2 + l2` (softmax).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub lr: T,
    pub momentum: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_tol: T,
    pub schedule: LrSchedule<T>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > T::zero()) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.grad_tol >= T::zero()) {
            return Err(Error::invalid("grad_tol must be >= 0"));
        }
        if let LrSchedule::StepDecay(steps) = &self.schedule {
            if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::invalid(
                    "step-decay epochs must be strictly increasing",
                ));
            }
            if steps.iter().any(|(_, f)| !(*f > T::zero())) {
                return Err(Error::invalid("step-decay factors must be > 0"));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::of_f64(0.1),
            momentum: T::of_f64(0.9),
            epochs: 100,
            batch_size: 32,
            seed: 0,
            grad_tol: T::of_f64(DEFAULT_GRAD_TOL),
            schedule: LrSchedule::Fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub final_loss: T,
    pub grad_norm: T,
    pub epochs_run: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub params: ModelParams<T>,
    pub report: TrainReport<T>,
}

/// Per-entry `uniform(-1/√fan_in, 1/√fan_in)` from a ChaCha stream.
pub fn init_params<T: Scalar>(shape: Shape, seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..shape.num_params())
        .map(|j| {
            let bound = 1.0 / (shape.fan_in(j) as f64).sqrt();
            T::of_f64(rng.random_range(-bound..bound))
        })
        .collect();
    ModelParams::new(values, shape, seed).expect("initial parameters are finite")
}

/// Train from the seeded initialization.
///
/// Each epoch visits a Fisher-Yates permutation of the rows in mini-batches,
/// applying `v ← μ v + ∇L_batch`, `θ ← θ - lr·v`. Training stops once the
/// full-gradient norm drops below `grad_tol`; it is checked after every epoch,
/// or before every step when a batch covers the whole dataset (no shuffling
/// then).
pub fn train<T: Scalar>(
    ds: &Dataset<T>,
    shape: Shape,
    loss_cfg: &LossConfig<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    shape.check_dataset(ds)?;
    let mut params = init_params::<T>(shape, cfg.seed);
    let mut velocity = vec![T::zero(); params.len()];
    let mut grad = vec![T::zero(); params.len()];
    // the shuffle stream is separate from the init stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = ds.rows_in_id_order();
    let mut report = TrainReport {
        final_loss: T::nan(),
        grad_norm: T::nan(),
        epochs_run: 0,
        converged: false,
    };
    let full_batch = cfg.batch_size >= ds.len();
    let plain = LossConfig::unregularized();
    let mut converged_early = false;
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate_at(cfg.lr, epoch);
        if full_batch {
            // the step gradient is the full gradient: check it before stepping
            let (l, g) = loss_and_gradient(&params, ds, loss_cfg)?;
            report = checked_report(&params, l, norm2(&g), epoch, cfg.grad_tol)?;
            if report.converged {
                converged_early = true;
                break;
            }
            heavy_ball(params.values_mut(), &mut velocity, &g, lr, cfg.momentum);
            continue;
        }
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            for &r in batch {
                add_sample_gradient(&params, ds.x(r), ds.label(r), &plain, &mut grad);
            }
            let scale = T::one() / T::of_usize(batch.len());
            for (g, &t) in grad.iter_mut().zip(params.values()) {
                *g = *g * scale + loss_cfg.l2_coeff * t;
            }
            heavy_ball(params.values_mut(), &mut velocity, &grad, lr, cfg.momentum);
        }
        let (l, g) = loss_and_gradient(&params, ds, loss_cfg)?;
        report = checked_report(&params, l, norm2(&g), epoch + 1, cfg.grad_tol)?;
        log::debug!("epoch {epoch}: loss {l}, grad norm {}", report.grad_norm);
        if report.converged {
            converged_early = true;
            break;
        }
    }
    if full_batch && !converged_early {
        let (l, g) = loss_and_gradient(&params, ds, loss_cfg)?;
        report = checked_report(&params, l, norm2(&g), cfg.epochs, cfg.grad_tol)?;
    }
    Ok(TrainedModel { params, report })
}

/// `v ← μ v + g`, `θ ← θ - lr·v`.
fn heavy_ball<T: Scalar>(theta: &mut [T], velocity: &mut [T], g: &[T], lr: T, momentum: T) {
    for ((t, v), &gj) in theta.iter_mut().zip(velocity.iter_mut()).zip(g) {
        *v = momentum * *v + gj;
        *t -= lr * *v;
    }
}

fn checked_report<T: Scalar>(
    params: &ModelParams<T>,
    loss: T,
    grad_norm: T,
    epochs_run: usize,
    grad_tol: T,
) -> Result<TrainReport<T>> {
    if !loss.is_finite() || params.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            epoch: epochs_run,
            loss: loss.as_f64(),
        });
    }
    Ok(TrainReport {
        final_loss: loss,
        grad_norm,
        epochs_run,
        converged: grad_norm < grad_tol,
    })
}

/// Train on the dataset with `removed_ids` left out, from the same seed.
pub fn retrain_scratch<T: Scalar>(
    ds: &Dataset<T>,
    removed_ids: &[u64],
    shape: Shape,
    loss_cfg: &LossConfig<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainedModel<T>> {
    let reduced = ds.without_ids(removed_ids)?;
    for empty in empty_targets(&reduced) {
        log::warn!("retraining without any positive samples for output {empty}");
    }
    train(&reduced, shape, loss_cfg, cfg)
}

/// Classes (or attributes) with no positive sample.
fn empty_targets<T: Scalar>(ds: &Dataset<T>) -> Vec<usize> {
    let k = ds.labels().outputs();
    let mut seen = vec![false; k];
    for i in 0..ds.len() {
        match ds.label(i) {
            LabelRef::Class(c) => seen[c] = true,
            LabelRef::Binary(ys) => {
                for (a, &y) in ys.iter().enumerate() {
                    seen[a] |= y == 1;
                }
            }
        }
    }
    (0..k).filter(|&c| !seen[c]).collect()
}
