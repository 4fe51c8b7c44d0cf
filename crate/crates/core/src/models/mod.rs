//! Classifier families, their regularized negative log-likelihoods and the
//! exact first- and second-order quantities used by the erasure updates.
//!
//! Every model is bias-free. Per-sample losses are
//! `ℓ_i(θ) = -log p(y_i | x_i; θ) + (l2/2)‖θ‖²`, so the mean objective is
//! `L(θ) = mean_i[-log p] + (l2/2)‖θ‖²` and each per-sample gradient carries
//! the full `l2·θ` term.

mod dataset;
mod mlp;

use std::fmt;
use std::ops::Range;

use sha2::{Digest, Sha256};

pub use dataset::{Dataset, LabelRef, Labels, TaskKind};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, sigmoid, softmax_into, Scalar};

/// Largest parameter count for which [`hessian_dense`] will materialize `H`.
pub const DENSE_HESSIAN_CAP: usize = 4096;

/// Parameter layout of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    /// One sigmoid head of `features` weights per attribute.
    MultiAttrLinear { attributes: usize, features: usize },
    /// Softmax over `classes` rows of `features` weights.
    MultinomialLinear { classes: usize, features: usize },
    /// `inputs → hidden (tanh) → classes (softmax)`.
    Mlp {
        inputs: usize,
        hidden: usize,
        classes: usize,
    },
}

impl Shape {
    pub fn num_params(&self) -> usize {
        match *self {
            Shape::MultiAttrLinear {
                attributes,
                features,
            } => attributes * features,
            Shape::MultinomialLinear { classes, features } => classes * features,
            Shape::Mlp {
                inputs,
                hidden,
                classes,
            } => inputs * hidden + hidden * classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Shape::MultiAttrLinear { features, .. } | Shape::MultinomialLinear { features, .. } => {
                features
            }
            Shape::Mlp { inputs, .. } => inputs,
        }
    }

    /// Attributes (binary heads) or classes.
    pub fn outputs(&self) -> usize {
        match *self {
            Shape::MultiAttrLinear { attributes, .. } => attributes,
            Shape::MultinomialLinear { classes, .. } | Shape::Mlp { classes, .. } => classes,
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match self {
            Shape::MultiAttrLinear { .. } => TaskKind::MultiAttribute,
            _ => TaskKind::Multinomial,
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, Shape::Mlp { .. })
    }

    /// Natural contiguous parameter groups in layout order: one per
    /// attribute row, one per class row, or one per MLP layer.
    pub fn param_groups(&self) -> Vec<Range<usize>> {
        match *self {
            Shape::MultiAttrLinear {
                attributes: rows,
                features,
            }
            | Shape::MultinomialLinear {
                classes: rows,
                features,
            } => (0..rows).map(|r| r * features..(r + 1) * features).collect(),
            Shape::Mlp {
                inputs,
                hidden,
                classes,
            } => {
                let split = inputs * hidden;
                vec![0..split, split..split + hidden * classes]
            }
        }
    }

    /// Fan-in of the layer that parameter `index` belongs to.
    pub fn fan_in(&self, index: usize) -> usize {
        match *self {
            Shape::Mlp { inputs, hidden, .. } => {
                if index < inputs * hidden {
                    inputs
                } else {
                    hidden
                }
            }
            _ => self.input_dim(),
        }
    }

    /// Check that `ds` has matching feature width and label type.
    pub fn check_dataset<T: Scalar>(&self, ds: &Dataset<T>) -> Result<()> {
        if ds.num_features() != self.input_dim() {
            return Err(Error::invalid(format!(
                "dataset has {} features, model expects {}",
                ds.num_features(),
                self.input_dim()
            )));
        }
        if ds.task_kind() != self.task_kind() || ds.labels().outputs() != self.outputs() {
            return Err(Error::invalid(format!(
                "dataset labels ({:?}, {} outputs) do not match model {:?}",
                ds.task_kind(),
                ds.labels().outputs(),
                self
            )));
        }
        Ok(())
    }

    fn mlp_dims(&self) -> Option<mlp::Dims> {
        match *self {
            Shape::Mlp {
                inputs,
                hidden,
                classes,
            } => Some(mlp::Dims {
                inputs,
                hidden,
                classes,
            }),
            _ => None,
        }
    }
}

/// SHA-256 digest of a parameter vector and its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamsDigest(pub [u8; 32]);

impl fmt::Display for ParamsDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Flat parameter vector plus the shape it is laid out in.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    values: Vec<T>,
    shape: Shape,
    seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(values: Vec<T>, shape: Shape, seed: u64) -> Result<Self> {
        if values.len() != shape.num_params() {
            return Err(Error::invalid(format!(
                "{} parameter values for shape {shape:?} (needs {})",
                values.len(),
                shape.num_params()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("parameter {j} is not finite"), None));
        }
        Ok(Self {
            values,
            shape,
            seed,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            values: vec![T::zero(); shape.num_params()],
            shape,
            seed: 0,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same shape and seed, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(values, self.shape, self.seed)
    }

    pub fn digest(&self) -> ParamsDigest {
        let mut h = Sha256::new();
        let (tag, a, b, c) = shape_code(&self.shape);
        h.update([tag]);
        for dim in [a, b, c] {
            h.update((dim as u64).to_le_bytes());
        }
        for v in &self.values {
            h.update(v.as_f64().to_le_bytes());
        }
        ParamsDigest(h.finalize().into())
    }
}

/// `(tag, dim0, dim1, dim2)` encoding shared by the digest and file formats.
pub(crate) fn shape_code(shape: &Shape) -> (u8, usize, usize, usize) {
    match *shape {
        Shape::MultiAttrLinear {
            attributes,
            features,
        } => (1, attributes, features, 0),
        Shape::MultinomialLinear { classes, features } => (2, classes, features, 0),
        Shape::Mlp {
            inputs,
            hidden,
            classes,
        } => (3, inputs, hidden, classes),
    }
}

pub(crate) fn shape_from_code(tag: u8, a: usize, b: usize, c: usize) -> Option<Shape> {
    match tag {
        1 => Some(Shape::MultiAttrLinear {
            attributes: a,
            features: b,
        }),
        2 => Some(Shape::MultinomialLinear {
            classes: a,
            features: b,
        }),
        3 => Some(Shape::Mlp {
            inputs: a,
            hidden: b,
            classes: c,
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub l2_coeff: T,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(l2_coeff: T) -> Result<Self> {
        if !(l2_coeff >= T::zero()) || !l2_coeff.is_finite() {
            return Err(Error::invalid(format!(
                "l2_coeff must be finite and >= 0, got {l2_coeff}"
            )));
        }
        Ok(Self { l2_coeff })
    }

    pub fn unregularized() -> Self {
        Self { l2_coeff: T::zero() }
    }
}

fn check_width<T: Scalar>(params: &ModelParams<T>, width: usize) -> Result<()> {
    if width != params.shape.input_dim() {
        return Err(Error::invalid(format!(
            "feature width {width} does not match model input dimension {}",
            params.shape.input_dim()
        )));
    }
    Ok(())
}

/// Output probabilities for one input: per-attribute sigmoids or a softmax row.
pub fn sample_proba<T: Scalar>(params: &ModelParams<T>, x: &[T]) -> Vec<T> {
    let v = &params.values;
    match params.shape {
        Shape::MultiAttrLinear {
            attributes,
            features,
        } => (0..attributes)
            .map(|a| sigmoid(dot(&v[a * features..(a + 1) * features], x)))
            .collect(),
        Shape::MultinomialLinear { classes, features } => {
            let logits: Vec<T> = (0..classes)
                .map(|c| dot(&v[c * features..(c + 1) * features], x))
                .collect();
            let mut p = vec![T::zero(); classes];
            softmax_into(&logits, &mut p);
            p
        }
        Shape::Mlp { .. } => {
            let dims = params.shape.mlp_dims().expect("mlp");
            mlp::forward(&dims, v, x).1
        }
    }
}

/// Row-wise class (or attribute) probabilities for a feature matrix.
pub fn predict_proba<T: Scalar>(params: &ModelParams<T>, features: &Matrix<T>) -> Result<Matrix<T>> {
    check_width(params, features.cols())?;
    let k = params.shape.outputs();
    let mut out = Vec::with_capacity(features.rows() * k);
    for i in 0..features.rows() {
        out.extend(sample_proba(params, features.row(i)));
    }
    Ok(Matrix::from_vec(features.rows(), k, out)?)
}

/// `-log p(y | x; θ)` with probabilities clamped away from 0 and 1.
pub fn sample_nll<T: Scalar>(params: &ModelParams<T>, x: &[T], label: LabelRef<'_>) -> T {
    let p = sample_proba(params, x);
    match label {
        LabelRef::Binary(ys) => ys
            .iter()
            .zip(&p)
            .map(|(&y, &pa)| {
                let pa = pa.clamp_prob();
                if y == 1 {
                    -pa.ln()
                } else {
                    -(T::one() - pa).ln()
                }
            })
            .sum(),
        LabelRef::Class(y) => -p[y].clamp_prob().ln(),
    }
}

fn half_sq_norm<T: Scalar>(v: &[T]) -> T {
    T::of_f64(0.5) * dot(v, v)
}

/// Mean regularized loss `mean_i[-log p] + (l2/2)‖θ‖²`.
pub fn loss<T: Scalar>(params: &ModelParams<T>, ds: &Dataset<T>, cfg: &LossConfig<T>) -> Result<T> {
    params.shape.check_dataset(ds)?;
    let n = T::of_usize(ds.len());
    let data: T = (0..ds.len())
        .map(|i| sample_nll(params, ds.x(i), ds.label(i)))
        .sum();
    Ok(data / n + cfg.l2_coeff * half_sq_norm(&params.values))
}

/// Adds `∇ℓ(θ; x, y)` (including `l2·θ`) to `out`.
pub fn add_sample_gradient<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    label: LabelRef<'_>,
    cfg: &LossConfig<T>,
    out: &mut [T],
) {
    let v = &params.values;
    match (params.shape, label) {
        (Shape::MultiAttrLinear { features, .. }, LabelRef::Binary(ys)) => {
            for (a, &y) in ys.iter().enumerate() {
                let row = a * features..(a + 1) * features;
                let resid = sigmoid(dot(&v[row.clone()], x)) - T::of_f64(y as f64);
                for (g, &xj) in out[row].iter_mut().zip(x) {
                    *g += resid * xj;
                }
            }
        }
        (Shape::MultinomialLinear { classes, features }, LabelRef::Class(y)) => {
            let logits: Vec<T> = (0..classes)
                .map(|c| dot(&v[c * features..(c + 1) * features], x))
                .collect();
            let mut p = vec![T::zero(); classes];
            softmax_into(&logits, &mut p);
            p[y] -= T::one();
            for (c, &r) in p.iter().enumerate() {
                for (g, &xj) in out[c * features..(c + 1) * features].iter_mut().zip(x) {
                    *g += r * xj;
                }
            }
        }
        (Shape::Mlp { .. }, LabelRef::Class(y)) => {
            let dims = params.shape.mlp_dims().expect("mlp");
            mlp::backward_into(&dims, v, x, y, out);
        }
        (shape, label) => panic!("label {label:?} incompatible with shape {shape:?}"),
    }
    if cfg.l2_coeff != T::zero() {
        for (g, &t) in out.iter_mut().zip(v) {
            *g += cfg.l2_coeff * t;
        }
    }
}

/// Per-sample gradient `∇ℓ_i(θ)` of the sample at row `row`.
pub fn grad<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    row: usize,
    cfg: &LossConfig<T>,
) -> Result<Vec<T>> {
    params.shape.check_dataset(ds)?;
    if row >= ds.len() {
        return Err(Error::invalid(format!(
            "row {row} out of range for {} samples",
            ds.len()
        )));
    }
    Ok(sample_grad_unchecked(params, ds.x(row), ds.label(row), cfg))
}

pub(crate) fn sample_grad_unchecked<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    label: LabelRef<'_>,
    cfg: &LossConfig<T>,
) -> Vec<T> {
    let mut g = vec![T::zero(); params.len()];
    add_sample_gradient(params, x, label, cfg, &mut g);
    g
}

/// `Σ_{r ∈ rows} ∇ℓ_r(θ)`.
pub fn gradient_sum<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    rows: &[usize],
    cfg: &LossConfig<T>,
) -> Result<Vec<T>> {
    params.shape.check_dataset(ds)?;
    let mut g = vec![T::zero(); params.len()];
    for &r in rows {
        add_sample_gradient(params, ds.x(r), ds.label(r), cfg, &mut g);
    }
    Ok(g)
}

/// Gradient of the mean objective `L(θ)` over the whole dataset.
pub fn full_gradient<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
) -> Result<Vec<T>> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let mut g = gradient_sum(params, ds, &rows, cfg)?;
    let inv_n = T::one() / T::of_usize(ds.len());
    g.iter_mut().for_each(|x| *x *= inv_n);
    Ok(g)
}

/// `L(θ)` and `∇L(θ)` over the whole dataset in one pass.
pub fn loss_and_gradient<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
) -> Result<(T, Vec<T>)> {
    params.shape.check_dataset(ds)?;
    let plain = LossConfig::unregularized();
    let mut g = vec![T::zero(); params.len()];
    let mut nll = T::zero();
    for i in 0..ds.len() {
        nll += sample_nll(params, ds.x(i), ds.label(i));
        add_sample_gradient(params, ds.x(i), ds.label(i), &plain, &mut g);
    }
    let inv_n = T::one() / T::of_usize(ds.len());
    for (gj, &t) in g.iter_mut().zip(&params.values) {
        *gj = *gj * inv_n + cfg.l2_coeff * t;
    }
    Ok((nll * inv_n + cfg.l2_coeff * half_sq_norm(&params.values), g))
}

/// Dense Hessian of `L(θ)` for linear shapes, with the default size cap.
pub fn hessian_dense<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
) -> Result<Matrix<T>> {
    hessian_dense_capped(params, ds, cfg, DENSE_HESSIAN_CAP)
}

/// Dense Hessian `mean_i H_i + l2·I`, where for a multinomial sample
/// `H_i = (diag(p) - p pᵀ) ⊗ x xᵀ` and for each binary attribute
/// `H_i = p(1-p) x xᵀ` on that attribute's diagonal block.
pub fn hessian_dense_capped<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    cap: usize,
) -> Result<Matrix<T>> {
    params.shape.check_dataset(ds)?;
    let d = params.len();
    if !params.shape.is_linear() {
        return Err(Error::Unsupported(
            "dense Hessian is only available for linear models".into(),
        ));
    }
    if d > cap {
        return Err(Error::Unsupported(format!(
            "dense Hessian of dimension {d} exceeds cap {cap}"
        )));
    }
    let m = params.shape.input_dim();
    let mut h = Matrix::zeros(d, d);
    for i in 0..ds.len() {
        let x = ds.x(i);
        let p = sample_proba(params, x);
        let k = p.len();
        for a in 0..k {
            for b in 0..k {
                let coeff = match params.shape {
                    Shape::MultiAttrLinear { .. } => {
                        if a != b {
                            continue;
                        }
                        p[a] * (T::one() - p[a])
                    }
                    _ => {
                        let diag = if a == b { p[a] } else { T::zero() };
                        diag - p[a] * p[b]
                    }
                };
                if coeff == T::zero() {
                    continue;
                }
                for j in 0..m {
                    let cj = coeff * x[j];
                    let row = a * m + j;
                    for (kk, &xk) in x.iter().enumerate() {
                        h[(row, b * m + kk)] += cj * xk;
                    }
                }
            }
        }
    }
    h.scale(T::one() / T::of_usize(ds.len()));
    h.add_diagonal(cfg.l2_coeff);
    h.symmetrize();
    Ok(h)
}

/// Outcome of comparing the unregularized Hessian with a scaled empirical
/// Fisher on data satisfying a uniform probability margin.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioCheck<T> {
    /// Estimated margin: mean off-label probability (multinomial) or mean
    /// `|p - y|` (binary).
    pub margin: T,
    /// Largest relative departure of any sample's margin from `margin`.
    pub margin_spread: T,
    /// Scalar `s` in `H ≈ s · F̂`.
    pub predicted_scale: T,
    /// Mean of `|H_ij - s F̂_ij| / max|H|`.
    pub mean_rel_dev: T,
    /// Max of `|H_ij - s F̂_ij| / max|H|`.
    pub max_rel_dev: T,
    pub warning: Option<String>,
}

/// Tolerance on `margin_spread` before a warning is attached.
pub const MARGIN_SPREAD_TOL: f64 = 1e-6;

/// Compare `H` (no L2) with the predicted multiple of the empirical Fisher.
///
/// The multiple is `1 / (ε (c-1))` for softmax models and `(1-ε)/ε` for a
/// binary head with `|p - y| = ε`, the latter being exact:
/// `p(1-p) = ε(1-ε)` and `(p-y)² = ε²`.
pub fn fisher_hessian_ratio_check<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
) -> Result<RatioCheck<T>> {
    let scale_fn = match params.shape {
        Shape::MultiAttrLinear { .. } => binary_scale::<T>,
        Shape::MultinomialLinear { .. } => multinomial_scale::<T>,
        Shape::Mlp { .. } => {
            return Err(Error::Unsupported(
                "Hessian/Fisher ratio check needs a linear model".into(),
            ))
        }
    };
    let (margin, spread) = margin_stats(params, ds);
    let scale = scale_fn(margin, params.shape.outputs());
    ratio_check_with_scale(params, ds, margin, spread, scale)
}

/// Same comparison against an explicitly supplied scale `s`.
pub fn fisher_hessian_deviation<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    scale: T,
) -> Result<RatioCheck<T>> {
    let (margin, spread) = margin_stats(params, ds);
    ratio_check_with_scale(params, ds, margin, spread, scale)
}

fn binary_scale<T: Scalar>(margin: T, _outputs: usize) -> T {
    (T::one() - margin) / margin
}

fn multinomial_scale<T: Scalar>(margin: T, classes: usize) -> T {
    T::one() / (margin * T::of_usize(classes - 1))
}

fn margin_stats<T: Scalar>(params: &ModelParams<T>, ds: &Dataset<T>) -> (T, T) {
    let mut margins = Vec::new();
    for i in 0..ds.len() {
        let p = sample_proba(params, ds.x(i));
        match ds.label(i) {
            LabelRef::Binary(ys) => {
                for (&y, &pa) in ys.iter().zip(&p) {
                    margins.push((pa - T::of_f64(y as f64)).abs());
                }
            }
            LabelRef::Class(y) => {
                for (c, &pc) in p.iter().enumerate() {
                    if c != y {
                        margins.push(pc);
                    }
                }
            }
        }
    }
    let mean = margins.iter().copied().sum::<T>() / T::of_usize(margins.len().max(1));
    let spread = margins
        .iter()
        .fold(T::zero(), |s, &e| s.max((e - mean).abs() / mean));
    (mean, spread)
}

fn ratio_check_with_scale<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    margin: T,
    spread: T,
    scale: T,
) -> Result<RatioCheck<T>> {
    let plain = LossConfig::unregularized();
    let h = hessian_dense(params, ds, &plain)?;
    let f = crate::fisher::empirical_fisher_dense(params, ds, &plain)?;
    let norm = h.max_abs();
    if !(norm > T::zero()) {
        return Err(Error::numeric("Hessian is identically zero", None));
    }
    let mut max_dev = T::zero();
    let mut total = T::zero();
    for (&hv, &fv) in h.as_slice().iter().zip(f.as_slice()) {
        let dev = (hv - scale * fv).abs() / norm;
        max_dev = max_dev.max(dev);
        total += dev;
    }
    let warning = (spread.as_f64() > MARGIN_SPREAD_TOL).then(|| {
        format!(
            "sample margins are not uniform: relative spread {spread} around {margin}"
        )
    });
    Ok(RatioCheck {
        margin,
        margin_spread: spread,
        predicted_scale: scale,
        mean_rel_dev: total / T::of_usize(h.as_slice().len()),
        max_rel_dev: max_dev,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(shape: Shape, n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = shape.input_dim();
        let x = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.5..1.5));
        let labels = match shape.task_kind() {
            TaskKind::MultiAttribute => Labels::Binary {
                attributes: shape.outputs(),
                values: (0..n * shape.outputs())
                    .map(|_| rng.random_range(0..2u8))
                    .collect(),
            },
            TaskKind::Multinomial => Labels::Classes {
                classes: shape.outputs(),
                values: (0..n).map(|_| rng.random_range(0..shape.outputs())).collect(),
            },
        };
        Dataset::with_sequential_ids(x, labels).unwrap()
    }

    fn random_params(shape: Shape, seed: u64) -> ModelParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..shape.num_params())
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        ModelParams::new(v, shape, seed).unwrap()
    }

    const SHAPES: [Shape; 3] = [
        Shape::MultiAttrLinear {
            attributes: 3,
            features: 4,
        },
        Shape::MultinomialLinear {
            classes: 3,
            features: 4,
        },
        Shape::Mlp {
            inputs: 4,
            hidden: 5,
            classes: 3,
        },
    ];

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let x = Matrix::from_fn(5, 4, |i, j| (i * 7 + j) as f64 - 3.0);
        let multi = ModelParams::<f64>::zeros(Shape::MultinomialLinear {
            classes: 4,
            features: 4,
        });
        let p = predict_proba(&multi, &x).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.25));
        let bin = ModelParams::<f64>::zeros(Shape::MultiAttrLinear {
            attributes: 3,
            features: 4,
        });
        let p = predict_proba(&bin, &x).unwrap();
        assert_eq!(p.cols(), 3);
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let shape = Shape::MultinomialLinear {
            classes: 3,
            features: 4,
        };
        let params = random_params(shape, 3);
        let ds = random_dataset(shape, 20, 4);
        let p = predict_proba(&params, ds.features()).unwrap();
        for i in 0..p.rows() {
            // direct exponent-normalization oracle
            let logits: Vec<f64> = (0..3)
                .map(|c| {
                    (0..4)
                        .map(|j| params.values()[c * 4 + j] * ds.x(i)[j])
                        .sum::<f64>()
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..3 {
                assert!((p[(i, c)] - logits[c].exp() / z).abs() < 1e-14);
            }
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let params = ModelParams::<f64>::zeros(SHAPES[1]);
        let x = Matrix::zeros(2, 5);
        assert!(matches!(
            predict_proba(&params, &x),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_params_binary_multinomial_loss_is_ln2() {
        let shape = Shape::MultinomialLinear {
            classes: 2,
            features: 4,
        };
        let ds = random_dataset(shape, 9, 1);
        let l = loss(&ModelParams::zeros(shape), &ds, &LossConfig::unregularized()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_predictions_have_small_loss() {
        let shape = Shape::MultinomialLinear {
            classes: 2,
            features: 2,
        };
        let x = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ds = Dataset::with_sequential_ids(
            x,
            Labels::Classes {
                classes: 2,
                values: vec![0, 1],
            },
        )
        .unwrap();
        let params = ModelParams::new(vec![40.0f64, 0.0, 0.0, 40.0], shape, 0).unwrap();
        let l = loss(&params, &ds, &LossConfig::unregularized()).unwrap();
        // the probability clamp puts a floor of about 1e-12 on the loss
        assert!(l > 0.0 && l < 2e-12);
        let g = grad(&params, &ds, 0, &LossConfig::unregularized()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn loss_matches_naive_loop() {
        for shape in SHAPES {
            let params = random_params(shape, 11);
            let ds = random_dataset(shape, 13, 12);
            let cfg = LossConfig::new(0.03).unwrap();
            let mut total = 0.0;
            for i in 0..ds.len() {
                let p = sample_proba(&params, ds.x(i));
                total += match ds.label(i) {
                    LabelRef::Binary(ys) => ys
                        .iter()
                        .zip(&p)
                        .map(|(&y, &pa)| if y == 1 { -pa.ln() } else { -(1.0 - pa).ln() })
                        .sum::<f64>(),
                    LabelRef::Class(y) => -p[y].ln(),
                };
            }
            let reg: f64 = params.values().iter().map(|v| v * v).sum::<f64>() * 0.015;
            let want = total / ds.len() as f64 + reg;
            let got = loss(&params, &ds, &cfg).unwrap();
            assert!((got - want).abs() < 1e-12, "{shape:?}: {got} vs {want}");
        }
    }

    fn fd_step(t: f64) -> f64 {
        1e-6 * (1.0 + t.abs())
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (s, shape) in SHAPES.into_iter().enumerate() {
            let params = random_params(shape, 20 + s as u64);
            let ds = random_dataset(shape, 1, 30 + s as u64);
            let cfg = LossConfig::new(0.1).unwrap();
            let g = grad(&params, &ds, 0, &cfg).unwrap();
            for j in 0..params.len() {
                let h = fd_step(params.values()[j]);
                let mut plus = params.values().to_vec();
                plus[j] += h;
                let mut minus = params.values().to_vec();
                minus[j] -= h;
                let lp = loss(&params.with_values(plus).unwrap(), &ds, &cfg).unwrap();
                let lm = loss(&params.with_values(minus).unwrap(), &ds, &cfg).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (g[j] - fd).abs() / fd.abs().max(1.0);
                assert!(rel < 1e-5, "{shape:?} coord {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn two_class_softmax_matches_sigmoid_gradient() {
        // softmax over (w0·x, w1·x) equals sigmoid((w1 - w0)·x) for class 1
        let m = 3;
        let soft_shape = Shape::MultinomialLinear {
            classes: 2,
            features: m,
        };
        let params = random_params(soft_shape, 5);
        let ds = random_dataset(soft_shape, 6, 6);
        let w = params.values();
        let diff: Vec<f64> = (0..m).map(|j| w[m + j] - w[j]).collect();
        let bin_shape = Shape::MultiAttrLinear {
            attributes: 1,
            features: m,
        };
        let bin = ModelParams::new(diff, bin_shape, 0).unwrap();
        let cfg = LossConfig::unregularized();
        for i in 0..ds.len() {
            let LabelRef::Class(y) = ds.label(i) else { unreachable!() };
            let g_soft = sample_grad_unchecked(&params, ds.x(i), ds.label(i), &cfg);
            let yb = [y as u8];
            let g_bin = sample_grad_unchecked(&bin, ds.x(i), LabelRef::Binary(&yb), &cfg);
            for j in 0..m {
                // d/dw1 = g_bin, d/dw0 = -g_bin
                assert!((g_soft[m + j] - g_bin[j]).abs() < 1e-14);
                assert!((g_soft[j] + g_bin[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        for shape in &SHAPES[..2] {
            let params = random_params(*shape, 40);
            let ds = random_dataset(*shape, 8, 41);
            let cfg = LossConfig::new(0.05).unwrap();
            let h = hessian_dense(&params, &ds, &cfg).unwrap();
            for j in 0..params.len() {
                let step = fd_step(params.values()[j]);
                let mut plus = params.values().to_vec();
                plus[j] += step;
                let mut minus = params.values().to_vec();
                minus[j] -= step;
                let gp = full_gradient(&params.with_values(plus).unwrap(), &ds, &cfg).unwrap();
                let gm = full_gradient(&params.with_values(minus).unwrap(), &ds, &cfg).unwrap();
                for i in 0..params.len() {
                    let fd = (gp[i] - gm[i]) / (2.0 * step);
                    assert!((h[(i, j)] - fd).abs() < 1e-4 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn single_sample_binary_hessian_closed_form() {
        let shape = Shape::MultiAttrLinear {
            attributes: 1,
            features: 3,
        };
        let params = random_params(shape, 50);
        let ds = random_dataset(shape, 1, 51);
        let l2 = 0.2;
        let h = hessian_dense(&params, &ds, &LossConfig::new(l2).unwrap()).unwrap();
        let p = sample_proba(&params, ds.x(0))[0];
        let x = ds.x(0);
        for i in 0..3 {
            for j in 0..3 {
                let want = p * (1.0 - p) * x[i] * x[j] + if i == j { l2 } else { 0.0 };
                assert!((h[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn regularized_hessian_eigenvalues_bounded_below() {
        let shape = SHAPES[1];
        let params = random_params(shape, 60);
        let ds = random_dataset(shape, 10, 61);
        let l2 = 0.07;
        let mut h = hessian_dense(&params, &ds, &LossConfig::new(l2).unwrap()).unwrap();
        // H - (l2 - 1e-10) I must still factor
        h.add_diagonal(-(l2 - 1e-10));
        assert!(h.cholesky().is_ok());
    }

    #[test]
    fn multinomial_hessian_has_kronecker_structure() {
        let shape = Shape::MultinomialLinear {
            classes: 3,
            features: 2,
        };
        let params = random_params(shape, 70);
        // single sample with x = (1, 0): block (a, b) entry (0, 0) is A_ab
        let x = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let ds = Dataset::with_sequential_ids(
            x,
            Labels::Classes {
                classes: 3,
                values: vec![2],
            },
        )
        .unwrap();
        let h = hessian_dense(&params, &ds, &LossConfig::unregularized()).unwrap();
        let p = sample_proba(&params, &[1.0, 0.0]);
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { p[a] } else { 0.0 } - p[a] * p[b];
                assert!((h[(a * 2, b * 2)] - want).abs() < 1e-15);
                assert_eq!(h[(a * 2 + 1, b * 2 + 1)], 0.0);
            }
        }
    }

    #[test]
    fn mlp_hessian_is_unsupported() {
        let params = random_params(SHAPES[2], 1);
        let ds = random_dataset(SHAPES[2], 3, 2);
        assert!(matches!(
            hessian_dense(&params, &ds, &LossConfig::unregularized()),
            Err(Error::Unsupported(_))
        ));
        let big = Shape::MultinomialLinear {
            classes: 2,
            features: 3,
        };
        let ds = random_dataset(big, 2, 3);
        assert!(matches!(
            hessian_dense_capped(&random_params(big, 1), &ds, &LossConfig::unregularized(), 5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn single_sample_binary_ratio_is_exact_for_any_margin() {
        let shape = Shape::MultiAttrLinear {
            attributes: 1,
            features: 4,
        };
        let params = random_params(shape, 80);
        let ds = random_dataset(shape, 1, 81);
        let check = fisher_hessian_ratio_check(&params, &ds).unwrap();
        assert!(check.max_rel_dev < 1e-12, "{check:?}");
        assert!(check.warning.is_none());
    }

    #[test]
    fn nonuniform_margins_produce_warning() {
        let shape = SHAPES[1];
        let params = random_params(shape, 90);
        let ds = random_dataset(shape, 10, 91);
        let check = fisher_hessian_ratio_check(&params, &ds).unwrap();
        assert!(check.warning.is_some());
    }

    #[test]
    fn digest_depends_on_values_and_shape() {
        let a = random_params(SHAPES[0], 1);
        let b = a.with_values(a.values().iter().map(|v| v + 1e-12).collect()).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
        assert_eq!(a.digest().to_string().len(), 64);
    }
}
