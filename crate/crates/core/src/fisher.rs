//! Dampened inverse empirical Fisher built by Sherman-Morrison rank-one
//! updates, optionally block-diagonal and over mini-batch gradients.
//!
//! Starting from `λ⁻¹ I`, each (batch) gradient `g` applies
//!
//! ```text
//! M ← M - (M g)(M g)ᵀ / (n + gᵀ M g)
//! ```
//!
//! so that after all `n` steps `M = (λ I + (1/n) Σ g gᵀ)⁻¹`.
//!
//! # File format
//!
//! ```text
//! magic        8 bytes  "SSSEFIM\0"
//! version      u8       1
//! d            u64      total parameter dimension
//! blocks       u64      number of diagonal blocks
//! ranges       blocks × (start u64, len u64)
//! payload      for each block, len × len f64, row-major
//! dampening    f64      λ
//! n_samples    u64
//! batch_size   u64
//! digest       32 bytes SHA-256 of the parameters the inverse was built at
//! ```

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::linalg::Matrix;
use crate::models::{add_sample_gradient, Dataset, LossConfig, ModelParams, ParamsDigest, Shape};
use crate::scalar::Scalar;

pub const FISHER_MAGIC: &[u8; 8] = b"SSSEFIM\0";
pub const FISHER_VERSION: u8 = 1;

/// Partition of `0..d` into contiguous diagonal blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    ranges: Vec<Range<usize>>,
    max_block: usize,
}

impl BlockSpec {
    pub fn new(ranges: Vec<Range<usize>>, max_block: usize) -> Result<Self> {
        if max_block == 0 {
            return Err(Error::invalid("max_block must be positive"));
        }
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::invalid(format!(
                    "block ranges must be sorted, disjoint, non-empty and contiguous; got {r:?} after {next}"
                )));
            }
            if r.len() > max_block {
                return Err(Error::invalid(format!(
                    "block {r:?} is longer than max_block {max_block}"
                )));
            }
            next = r.end;
        }
        if ranges.is_empty() {
            return Err(Error::invalid("at least one block is required"));
        }
        Ok(Self { ranges, max_block })
    }

    /// One block spanning every parameter.
    pub fn single(d: usize) -> Self {
        Self {
            ranges: vec![0..d],
            max_block: d.max(1),
        }
    }

    /// The shape's natural parameter groups, each split into chunks of at
    /// most `max_block`.
    pub fn for_shape(shape: &Shape, max_block: usize) -> Result<Self> {
        if max_block == 0 {
            return Err(Error::invalid("max_block must be positive"));
        }
        let mut ranges = Vec::new();
        for group in shape.param_groups() {
            let mut start = group.start;
            while start < group.end {
                let end = (start + max_block).min(group.end);
                ranges.push(start..end);
                start = end;
            }
        }
        Self::new(ranges, max_block)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn max_block(&self) -> usize {
        self.max_block
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }
}

/// Block-diagonal dampened inverse empirical Fisher.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseFisher<T> {
    blocks: Vec<Matrix<T>>,
    ranges: Vec<Range<usize>>,
    dampening: T,
    n_samples: u64,
    batch_size: u64,
    params_digest: ParamsDigest,
}

impl<T: Scalar> InverseFisher<T> {
    /// Assemble from parts; checks block dimensions, symmetry and finiteness.
    pub fn from_parts(
        blocks: Vec<Matrix<T>>,
        spec: &BlockSpec,
        dampening: T,
        n_samples: u64,
        batch_size: u64,
        params_digest: ParamsDigest,
    ) -> Result<Self> {
        if blocks.len() != spec.ranges().len() {
            return Err(Error::invalid(format!(
                "{} blocks for {} ranges",
                blocks.len(),
                spec.ranges().len()
            )));
        }
        for (b, r) in blocks.iter().zip(spec.ranges()) {
            if b.rows() != r.len() || b.cols() != r.len() {
                return Err(Error::invalid(format!(
                    "block {}x{} does not match range {r:?}",
                    b.rows(),
                    b.cols()
                )));
            }
            if !b.all_finite() {
                return Err(Error::numeric("non-finite inverse Fisher block", None));
            }
        }
        if !(dampening > T::zero()) {
            return Err(Error::invalid(format!("dampening must be > 0, got {dampening}")));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(Self {
            blocks,
            ranges: spec.ranges().to_vec(),
            dampening,
            n_samples,
            batch_size,
            params_digest,
        })
    }

    /// Identity blocks; useful as a curvature-free reference.
    pub fn identity(spec: &BlockSpec, params_digest: ParamsDigest) -> Self {
        Self {
            blocks: spec.ranges().iter().map(|r| Matrix::identity(r.len())).collect(),
            ranges: spec.ranges().to_vec(),
            dampening: T::one(),
            n_samples: 0,
            batch_size: 1,
            params_digest,
        }
    }

    pub fn blocks(&self) -> &[Matrix<T>] {
        &self.blocks
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn dampening(&self) -> T {
        self.dampening
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    pub fn params_digest(&self) -> ParamsDigest {
        self.params_digest
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// Full `d × d` matrix with zeros off the block diagonal.
    pub fn to_dense(&self) -> Matrix<T> {
        let d = self.dim();
        let mut out = Matrix::zeros(d, d);
        for (b, r) in self.blocks.iter().zip(&self.ranges) {
            for i in 0..r.len() {
                for j in 0..r.len() {
                    out[(r.start + i, r.start + j)] = b[(i, j)];
                }
            }
        }
        out
    }
}

/// In-place rank-one update of `inv` to the inverse of `inv⁻¹ + g gᵀ / n`.
fn sherman_morrison_in_place<T: Scalar>(
    inv: &mut Matrix<T>,
    g: &[T],
    n: T,
    sample_id: Option<u64>,
) -> Result<()> {
    if g.iter().all(|&v| v == T::zero()) {
        return Ok(());
    }
    let u = inv.matvec(g)?;
    let denom = n + crate::scalar::dot(g, &u);
    if !denom.is_finite() || !(denom > T::zero()) {
        return Err(Error::numeric(
            format!("Sherman-Morrison denominator is {denom}"),
            sample_id,
        ));
    }
    inv.add_outer(-T::one() / denom, &u, &u);
    inv.symmetrize();
    Ok(())
}

/// One Sherman-Morrison step: returns the inverse of `inv_block⁻¹ + g gᵀ / n`.
pub fn sherman_morrison_step<T: Scalar>(inv_block: &Matrix<T>, g: &[T], n: usize) -> Result<Matrix<T>> {
    if !inv_block.is_square() || inv_block.rows() != g.len() {
        return Err(Error::invalid(format!(
            "gradient of length {} for a {}x{} block",
            g.len(),
            inv_block.rows(),
            inv_block.cols()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("sample count n must be at least 1"));
    }
    let mut out = inv_block.clone();
    sherman_morrison_in_place(&mut out, g, T::of_usize(n), None)?;
    Ok(out)
}

/// Per-batch averaged gradients in sample-id order, with the id of the
/// first sample of each batch.
fn batch_gradients<'a, T: Scalar>(
    params: &'a ModelParams<T>,
    ds: &'a Dataset<T>,
    cfg: &'a LossConfig<T>,
    batch_size: usize,
) -> impl Iterator<Item = Result<(u64, Vec<T>)>> + 'a {
    let order = ds.rows_in_id_order();
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    batches.into_iter().map(move |rows| {
        let mut g = vec![T::zero(); params.len()];
        for &r in &rows {
            add_sample_gradient(params, ds.x(r), ds.label(r), cfg, &mut g);
        }
        let first = ds.ids()[rows[0]];
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            let bad = rows
                .iter()
                .copied()
                .find(|&r| {
                    let mut one = vec![T::zero(); params.len()];
                    add_sample_gradient(params, ds.x(r), ds.label(r), cfg, &mut one);
                    !one[pos].is_finite()
                })
                .unwrap_or(rows[0]);
            return Err(Error::numeric(
                "non-finite gradient",
                Some(ds.ids()[bad]),
            ));
        }
        let inv = T::one() / T::of_usize(rows.len());
        g.iter_mut().for_each(|v| *v *= inv);
        Ok((first, g))
    })
}

/// Build the block-diagonal inverse of `λ I + (1/N) Σ ḡ ḡᵀ`, where `ḡ` runs
/// over per-batch mean gradients (batches of `batch_size` consecutive
/// samples in id order) and `N = ⌈n / batch_size⌉`.
pub fn build_inverse_fisher<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    dampening: T,
    spec: &BlockSpec,
    batch_size: usize,
) -> Result<InverseFisher<T>> {
    if !(dampening > T::zero()) || !dampening.is_finite() {
        return Err(Error::invalid(format!("dampening must be > 0, got {dampening}")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    params.shape().check_dataset(ds)?;
    if spec.dim() != params.len() {
        return Err(Error::invalid(format!(
            "block spec covers {} parameters, model has {}",
            spec.dim(),
            params.len()
        )));
    }
    let steps = ds.len().div_ceil(batch_size);
    let count = T::of_usize(steps);
    let init = T::one() / dampening;
    let mut blocks: Vec<Matrix<T>> = spec
        .ranges()
        .iter()
        .map(|r| Matrix::scaled_identity(r.len(), init))
        .collect();
    for item in batch_gradients(params, ds, cfg, batch_size) {
        let (id, g) = item?;
        blocks
            .par_iter_mut()
            .zip(spec.ranges().par_iter())
            .try_for_each(|(block, r)| {
                sherman_morrison_in_place(block, &g[r.clone()], count, Some(id))
            })?;
    }
    InverseFisher::from_parts(
        blocks,
        spec,
        dampening,
        ds.len() as u64,
        batch_size as u64,
        params.digest(),
    )
}

/// Blockwise product `F̂⁻¹ v`.
pub fn apply_inverse<T: Scalar>(finv: &InverseFisher<T>, v: &[T]) -> Result<Vec<T>> {
    if v.len() != finv.dim() {
        return Err(Error::invalid(format!(
            "vector of length {} for inverse Fisher of dimension {}",
            v.len(),
            finv.dim()
        )));
    }
    let mut out = Vec::with_capacity(v.len());
    for (block, r) in finv.blocks.iter().zip(&finv.ranges) {
        out.extend(block.matvec(&v[r.clone()])?);
    }
    Ok(out)
}

/// Entry `j` is `(λ + (1/n) Σ_i g_ij²)⁻¹`.
pub fn diagonal_inverse_fisher<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
    dampening: T,
) -> Result<Vec<T>> {
    if !(dampening > T::zero()) || !dampening.is_finite() {
        return Err(Error::invalid(format!("dampening must be > 0, got {dampening}")));
    }
    params.shape().check_dataset(ds)?;
    let mut acc = vec![T::zero(); params.len()];
    for item in batch_gradients(params, ds, cfg, 1) {
        let (_, g) = item?;
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += *v * *v;
        }
    }
    let n = T::of_usize(ds.len());
    Ok(acc.into_iter().map(|s| T::one() / (dampening + s / n)).collect())
}

/// Dense empirical Fisher `(1/n) Σ ∇ℓ_i ∇ℓ_iᵀ` (no dampening).
pub fn empirical_fisher_dense<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    cfg: &LossConfig<T>,
) -> Result<Matrix<T>> {
    params.shape().check_dataset(ds)?;
    let d = params.len();
    let mut f = Matrix::zeros(d, d);
    for item in batch_gradients(params, ds, cfg, 1) {
        let (_, g) = item?;
        f.add_outer(T::one(), &g, &g);
    }
    f.scale(T::one() / T::of_usize(ds.len()));
    Ok(f)
}

pub fn inverse_fisher_to_bytes<T: Scalar>(finv: &InverseFisher<T>) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(FISHER_MAGIC);
    w.u8(FISHER_VERSION);
    w.u64(finv.dim() as u64);
    w.u64(finv.ranges.len() as u64);
    for r in &finv.ranges {
        w.u64(r.start as u64);
        w.u64(r.len() as u64);
    }
    for b in &finv.blocks {
        for v in b.as_slice() {
            w.f64(v.as_f64());
        }
    }
    w.f64(finv.dampening.as_f64());
    w.u64(finv.n_samples);
    w.u64(finv.batch_size);
    w.bytes(&finv.params_digest.0);
    w.finish()
}

pub fn inverse_fisher_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<InverseFisher<T>> {
    let mut r = ByteReader::new(bytes, "inverse Fisher file");
    r.magic(FISHER_MAGIC, FISHER_VERSION)?;
    let d = r.usize()?;
    let nblocks = r.usize()?;
    r.expect_remaining(nblocks.saturating_mul(16))?;
    let mut ranges = Vec::with_capacity(nblocks);
    let mut max_block = 1;
    for _ in 0..nblocks {
        let start = r.usize()?;
        let len = r.usize()?;
        max_block = max_block.max(len);
        ranges.push(start..start.saturating_add(len));
    }
    let spec = BlockSpec::new(ranges, max_block).map_err(|e| r.error(e.to_string()))?;
    if spec.dim() != d {
        return Err(r.error(format!("blocks cover {} of {d} dimensions", spec.dim())));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for range in spec.ranges() {
        let len = range.len();
        r.expect_remaining(len.saturating_mul(len).saturating_mul(8))?;
        let data = (0..len * len)
            .map(|_| r.f64().map(T::of_f64))
            .collect::<Result<Vec<_>>>()?;
        blocks.push(Matrix::from_vec(len, len, data)?);
    }
    let dampening = T::of_f64(r.f64()?);
    let n_samples = r.u64()?;
    let batch_size = r.u64()?;
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    r.finish()?;
    InverseFisher::from_parts(
        blocks,
        &spec,
        dampening,
        n_samples,
        batch_size,
        ParamsDigest(digest),
    )
    .map_err(|e| r.error(e.to_string()))
}

pub fn save_inverse_fisher<T: Scalar>(finv: &InverseFisher<T>, path: &Path) -> Result<()> {
    write_atomic(path, &inverse_fisher_to_bytes(finv))
}

pub fn load_inverse_fisher<T: Scalar>(path: &Path) -> Result<InverseFisher<T>> {
    inverse_fisher_from_bytes(&read_file(path)?)
}
