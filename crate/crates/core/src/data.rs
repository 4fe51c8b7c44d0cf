//! Synthetic generators, CSV ingestion and removal-split construction.
//!
//! # CSV conventions
//!
//! Feature files hold one sample per row, comma separated, `.` decimal
//! point, with an optional single header row (detected when any cell of the
//! first row is not a number). Label files are either one `0`/`1` column per
//! attribute (multi-attribute tasks) or a single column of zero-based class
//! indices (multinomial tasks), again with an optional header row. Sample
//! ids are assigned sequentially from a caller-supplied starting id.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::eval::SplitSet;
use crate::linalg::Matrix;
use crate::models::{Dataset, LabelRef, Labels, ModelParams, Shape};
use crate::scalar::Scalar;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian clusters in the plane, `n_per_class` points around each center.
/// Rows are grouped by class; ids are `0..n`.
pub fn make_blobs<T: Scalar>(
    seed: u64,
    n_per_class: usize,
    centers: &[[T; 2]],
    spread: T,
) -> Result<Dataset<T>> {
    if centers.is_empty() || n_per_class == 0 {
        return Err(Error::invalid("need at least one center and one point per class"));
    }
    if !(spread >= T::zero()) {
        return Err(Error::invalid("spread must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(centers.len() * n_per_class * 2);
    let mut labels = Vec::with_capacity(centers.len() * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &coord in center {
                data.push(coord + spread * T::of_f64(normal(&mut rng)));
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::with_sequential_ids(
        Matrix::from_vec(n, 2, data)?,
        Labels::Classes {
            classes: centers.len(),
            values: labels,
        },
    )
}

/// `classes` isotropic Gaussian clusters in `features` dimensions. Class
/// means are drawn once from `N(0, separation²)` per coordinate using
/// `means_seed`, so train and test sets that share it share the means.
pub fn make_gaussian_classes<T: Scalar>(
    means_seed: u64,
    sample_seed: u64,
    classes: usize,
    features: usize,
    n_per_class: usize,
    separation: f64,
    spread: f64,
) -> Result<Dataset<T>> {
    if classes < 2 || features == 0 || n_per_class == 0 {
        return Err(Error::invalid(
            "need at least two classes, one feature and one sample per class",
        ));
    }
    let mut mrng = ChaCha8Rng::seed_from_u64(means_seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| separation * normal(&mut mrng)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for mu in &means[c] {
            data.push(T::of_f64(mu + spread * normal(&mut rng)));
        }
        labels.push(c);
    }
    Dataset::with_sequential_ids(
        Matrix::from_vec(n, features, data)?,
        Labels::Classes {
            classes,
            values: labels,
        },
    )
}

/// Multi-attribute binary task. Attribute `a` is present with probability
/// `rates[a]`; each sample's features are
/// `Σ_a (2 y_a - 1) · signal · u_a + noise · N(0, I)` with unit directions
/// `u_a` drawn from `directions_seed`.
pub fn make_multi_attribute<T: Scalar>(
    directions_seed: u64,
    sample_seed: u64,
    n: usize,
    features: usize,
    rates: &[f64],
    signal: f64,
    noise: f64,
) -> Result<Dataset<T>> {
    if n == 0 || features == 0 || rates.is_empty() {
        return Err(Error::invalid("need samples, features and attributes"));
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid("attribute rates must lie in [0, 1]"));
    }
    let mut drng = ChaCha8Rng::seed_from_u64(directions_seed);
    let dirs: Vec<Vec<f64>> = rates
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..features).map(|_| normal(&mut drng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let k = rates.len();
    let mut data = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n * k);
    for _ in 0..n {
        let ys: Vec<u8> = rates.iter().map(|&r| u8::from(rng.random::<f64>() < r)).collect();
        let mut x: Vec<f64> = (0..features).map(|_| noise * normal(&mut rng)).collect();
        for (dir, &y) in dirs.iter().zip(&ys) {
            let sign = if y == 1 { signal } else { -signal };
            for (xj, dj) in x.iter_mut().zip(dir) {
                *xj += sign * dj;
            }
        }
        data.extend(x.into_iter().map(T::of_f64));
        labels.extend(ys);
    }
    Dataset::with_sequential_ids(
        Matrix::from_vec(n, features, data)?,
        Labels::Binary {
            attributes: k,
            values: labels,
        },
    )
}

/// Random `m × m` orthogonal matrix (Gram-Schmidt on Gaussian columns).
fn random_orthogonal(m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    while cols.len() < m {
        let mut v: Vec<f64> = (0..m).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    cols
}

/// Multinomial data on which a rank-`c` linear model outputs exactly
/// `p_y = 1 - (c-1)ε`, `p_j = ε` for every sample.
///
/// With a random orthogonal basis `q_1..q_m`, the model has rows
/// `Δ q_a` (`Δ = ln((1-(c-1)ε)/ε)`) and class-`y` samples are
/// `q_y + Σ_{k>c} r_k q_k`, i.e. each class lies on an `(m-c)`-dimensional
/// affine subspace the model maps to logits `Δ e_y`.
pub fn make_separable_subspace<T: Scalar>(
    classes: usize,
    features: usize,
    eps_margin: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<(Dataset<T>, ModelParams<T>)> {
    if classes < 2 || features <= classes {
        return Err(Error::invalid(format!(
            "need at least two classes and features > classes (got c={classes}, m={features})"
        )));
    }
    let top = 1.0 - (classes as f64 - 1.0) * eps_margin;
    if !(eps_margin > 0.0) || !(top > 0.0) {
        return Err(Error::invalid(format!(
            "margin {eps_margin} infeasible for {classes} classes"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    let delta = (top / eps_margin).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(features, &mut rng);
    let mut theta = Vec::with_capacity(classes * features);
    for qa in q.iter().take(classes) {
        theta.extend(qa.iter().map(|&v| T::of_f64(delta * v)));
    }
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let mut x = q[y].clone();
        for qk in &q[classes..] {
            let r = normal(&mut rng);
            x.iter_mut().zip(qk).for_each(|(xj, v)| *xj += r * v);
        }
        data.extend(x.into_iter().map(T::of_f64));
        labels.push(y);
    }
    let ds = Dataset::with_sequential_ids(
        Matrix::from_vec(n, features, data)?,
        Labels::Classes {
            classes,
            values: labels,
        },
    )?;
    let params = ModelParams::new(
        theta,
        Shape::MultinomialLinear { classes, features },
        seed,
    )?;
    Ok((ds, params))
}

/// Single-attribute binary data lying on the two hyperplanes `w·x = ±Δ`,
/// `Δ = ln((1-ε)/ε)`, so that `|p - y| = ε` for every sample.
pub fn make_separable_binary<T: Scalar>(
    features: usize,
    eps_margin: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<(Dataset<T>, ModelParams<T>)> {
    if features < 2 || n_per_class == 0 {
        return Err(Error::invalid("need at least two features and one sample per class"));
    }
    if !(eps_margin > 0.0 && eps_margin < 0.5) {
        return Err(Error::invalid(format!(
            "binary margin must lie in (0, 0.5), got {eps_margin}"
        )));
    }
    let delta = ((1.0 - eps_margin) / eps_margin).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(features, &mut rng);
    let w: Vec<T> = q[0].iter().map(|&v| T::of_f64(delta * v)).collect();
    let n = 2 * n_per_class;
    let mut data = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let mut x: Vec<f64> = q[0].iter().map(|v| sign * v).collect();
        for qk in &q[1..] {
            let r = normal(&mut rng);
            x.iter_mut().zip(qk).for_each(|(xj, v)| *xj += r * v);
        }
        data.extend(x.into_iter().map(T::of_f64));
        labels.push(y);
    }
    let ds = Dataset::with_sequential_ids(
        Matrix::from_vec(n, features, data)?,
        Labels::Binary {
            attributes: 1,
            values: labels,
        },
    )?;
    let params = ModelParams::new(
        w,
        Shape::MultiAttrLinear {
            attributes: 1,
            features,
        },
        seed,
    )?;
    Ok((ds, params))
}

/// How to interpret a label CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFormat {
    /// One 0/1 column per attribute.
    Binary,
    /// One column of zero-based class indices; the class count defaults to
    /// `max + 1`.
    Multinomial { classes: Option<usize> },
}

fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("{} row {}", path.display(), i + 1), e.to_string()))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push((i + 1, rec.iter().map(str::to_owned).collect()));
    }
    // single optional header row
    if let Some((_, first)) = rows.first() {
        if first.iter().any(|c| c.parse::<f64>().is_err()) {
            rows.remove(0);
        }
    }
    if rows.is_empty() {
        return Err(Error::parse(path.display().to_string(), "no data rows"));
    }
    Ok(rows)
}

fn parse_cell<V: std::str::FromStr>(path: &Path, row: usize, col: usize, cell: &str) -> Result<V> {
    cell.parse().map_err(|_| {
        Error::parse(
            format!("{} row {row} column {}", path.display(), col + 1),
            format!("cannot parse {cell:?}"),
        )
    })
}

/// Load features and labels from two CSV files; ids run from `first_id`.
pub fn load_csv<T: Scalar>(
    features_path: &Path,
    labels_path: &Path,
    format: LabelFormat,
    first_id: u64,
) -> Result<Dataset<T>> {
    let frows = read_rows(features_path)?;
    let lrows = read_rows(labels_path)?;
    if frows.len() != lrows.len() {
        return Err(Error::parse(
            labels_path.display().to_string(),
            format!(
                "{} label rows for {} feature rows",
                lrows.len(),
                frows.len()
            ),
        ));
    }
    let width = frows[0].1.len();
    let mut data = Vec::with_capacity(frows.len() * width);
    for (line, cells) in &frows {
        if cells.len() != width {
            return Err(Error::parse(
                format!("{} row {line}", features_path.display()),
                format!("expected {width} columns, found {}", cells.len()),
            ));
        }
        for (j, c) in cells.iter().enumerate() {
            let v: f64 = parse_cell(features_path, *line, j, c)?;
            if !v.is_finite() {
                return Err(Error::parse(
                    format!("{} row {line} column {}", features_path.display(), j + 1),
                    "non-finite value",
                ));
            }
            data.push(T::of_f64(v));
        }
    }
    let labels = match format {
        LabelFormat::Binary => {
            let k = lrows[0].1.len();
            let mut values = Vec::with_capacity(lrows.len() * k);
            for (line, cells) in &lrows {
                if cells.len() != k {
                    return Err(Error::parse(
                        format!("{} row {line}", labels_path.display()),
                        format!("expected {k} columns, found {}", cells.len()),
                    ));
                }
                for (j, c) in cells.iter().enumerate() {
                    let v: u8 = parse_cell(labels_path, *line, j, c)?;
                    if v > 1 {
                        return Err(Error::parse(
                            format!("{} row {line} column {}", labels_path.display(), j + 1),
                            format!("binary label must be 0 or 1, got {v}"),
                        ));
                    }
                    values.push(v);
                }
            }
            Labels::Binary {
                attributes: k,
                values,
            }
        }
        LabelFormat::Multinomial { classes } => {
            let mut values = Vec::with_capacity(lrows.len());
            for (line, cells) in &lrows {
                if cells.len() != 1 {
                    return Err(Error::parse(
                        format!("{} row {line}", labels_path.display()),
                        format!("expected a single class column, found {}", cells.len()),
                    ));
                }
                values.push(parse_cell::<usize>(labels_path, *line, 0, &cells[0])?);
            }
            let max = values.iter().copied().max().unwrap_or(0);
            let classes = classes.unwrap_or(max + 1);
            if max >= classes {
                return Err(Error::parse(
                    labels_path.display().to_string(),
                    format!("class {max} outside 0..{classes}"),
                ));
            }
            Labels::Classes { classes, values }
        }
    };
    let n = frows.len();
    Dataset::new(
        Matrix::from_vec(n, width, data)?,
        labels,
        (first_id..first_id + n as u64).collect(),
    )
}

/// Write a dataset in the format [`load_csv`] reads (no header rows).
pub fn save_csv<T: Scalar>(ds: &Dataset<T>, features_path: &Path, labels_path: &Path) -> Result<()> {
    let mut feats = String::new();
    for i in 0..ds.len() {
        let row: Vec<String> = ds.x(i).iter().map(|v| format!("{}", v.as_f64())).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let mut labs = String::new();
    for i in 0..ds.len() {
        match ds.label(i) {
            LabelRef::Binary(ys) => {
                let row: Vec<String> = ys.iter().map(u8::to_string).collect();
                labs.push_str(&row.join(","));
            }
            LabelRef::Class(c) => labs.push_str(&c.to_string()),
        }
        labs.push('\n');
    }
    crate::io::write_atomic(features_path, feats.as_bytes())?;
    crate::io::write_atomic(labels_path, labs.as_bytes())
}

impl<T: Scalar> Dataset<T> {
    /// Same samples with ids renumbered `start..start + n` in row order.
    pub fn reindexed(&self, start: u64) -> Result<Self> {
        Dataset::new(
            self.features().clone(),
            self.labels().clone(),
            (start..start + self.len() as u64).collect(),
        )
    }
}

/// The samples to erase: an attribute or a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalTarget {
    Attribute(usize),
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalSpec {
    pub target: RemovalTarget,
    /// Share of matching training samples to remove, in `(0, 1]`.
    pub fraction: f64,
    pub seed: u64,
}

fn matches_target(label: LabelRef<'_>, target: RemovalTarget) -> Result<bool> {
    match (label, target) {
        (LabelRef::Binary(ys), RemovalTarget::Attribute(a)) => ys
            .get(a)
            .map(|&y| y == 1)
            .ok_or_else(|| Error::invalid(format!("attribute {a} out of range"))),
        (LabelRef::Class(c), RemovalTarget::Class(y)) => Ok(c == y),
        (_, t) => Err(Error::invalid(format!(
            "removal target {t:?} does not fit the dataset's labels"
        ))),
    }
}

/// Number of samples removed for `fraction` of `count` matches (ceiling,
/// at least one).
pub fn removal_count(fraction: f64, count: usize) -> usize {
    let raw = fraction * count as f64;
    // guard against 0.1 * 30 = 3.0000000000000004
    ((raw - 1e-9).ceil() as usize).clamp(1, count)
}

/// Build the four evaluation splits for `spec`.
///
/// `S` is a seeded uniform sample without replacement of
/// `⌈fraction · |matches|⌉` matching training samples; `T_a` is every
/// matching test sample.
pub fn build_splits<T: Scalar>(
    train: &Dataset<T>,
    test: &Dataset<T>,
    spec: &RemovalSpec,
) -> Result<SplitSet> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "removal fraction must lie in (0, 1], got {}",
            spec.fraction
        )));
    }
    let train_ids: HashSet<u64> = train.ids().iter().copied().collect();
    if let Some(id) = test.ids().iter().find(|id| train_ids.contains(id)) {
        return Err(Error::invalid(format!(
            "train and test sets share sample id {id}"
        )));
    }
    let order = train.rows_in_id_order();
    let mut matching = Vec::new();
    for &r in &order {
        if matches_target(train.label(r), spec.target)? {
            matching.push(train.ids()[r]);
        }
    }
    if matching.is_empty() {
        return Err(Error::invalid(format!(
            "no training samples match {:?}",
            spec.target
        )));
    }
    let k = removal_count(spec.fraction, matching.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut removed: Vec<u64> = rand::seq::index::sample(&mut rng, matching.len(), k)
        .into_iter()
        .map(|i| matching[i])
        .collect();
    removed.sort_unstable();
    let removed_set: HashSet<u64> = removed.iter().copied().collect();
    let mut lko_train: Vec<u64> = train
        .ids()
        .iter()
        .copied()
        .filter(|id| !removed_set.contains(id))
        .collect();
    lko_train.sort_unstable();
    let mut removed_test = Vec::new();
    let mut lko_test = Vec::new();
    for r in test.rows_in_id_order() {
        if matches_target(test.label(r), spec.target)? {
            removed_test.push(test.ids()[r]);
        } else {
            lko_test.push(test.ids()[r]);
        }
    }
    SplitSet::new(lko_train, removed, lko_test, removed_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sample_proba, TaskKind};

    #[test]
    fn blobs_are_deterministic_and_exact_at_zero_spread() {
        let centers = [[1.0, 2.0], [-3.0, 0.5]];
        let a: Dataset<f64> = make_blobs(4, 5, &centers, 0.0).unwrap();
        for i in 0..a.len() {
            let LabelRef::Class(c) = a.label(i) else { unreachable!() };
            assert_eq!(a.x(i), &centers[c]);
        }
        let b: Dataset<f64> = make_blobs(4, 5, &centers, 0.7).unwrap();
        let c: Dataset<f64> = make_blobs(4, 5, &centers, 0.7).unwrap();
        assert_eq!(b, c);
        let Labels::Classes { values, .. } = b.labels() else { unreachable!() };
        assert_eq!(values.iter().filter(|&&v| v == 0).count(), 5);
        assert_eq!(values.iter().filter(|&&v| v == 1).count(), 5);
    }

    #[test]
    fn separable_subspace_meets_margin() {
        let eps = 1e-3;
        let (ds, params) = make_separable_subspace::<f64>(3, 10, eps, 8, 1).unwrap();
        for i in 0..ds.len() {
            let p = sample_proba(&params, ds.x(i));
            let LabelRef::Class(y) = ds.label(i) else { unreachable!() };
            for (c, &pc) in p.iter().enumerate() {
                let want = if c == y { 1.0 - 2.0 * eps } else { eps };
                assert!((pc - want).abs() < 1e-9, "{pc} vs {want}");
            }
        }
        // θ θᵀ = Δ² I, so θ has rank 3
        let m = 10;
        let v = params.values();
        let gram = Matrix::from_fn(3, 3, |a, b| {
            (0..m).map(|j| v[a * m + j] * v[b * m + j]).sum::<f64>()
        });
        assert!(gram.cholesky().is_ok());
        let delta2 = ((1.0 - 2.0 * eps) / eps).ln().powi(2);
        assert!((gram[(0, 0)] - delta2).abs() < 1e-9 * delta2);
        assert!(gram[(0, 1)].abs() < 1e-9 * delta2);
    }

    #[test]
    fn separable_binary_meets_margin() {
        let (ds, params) = make_separable_binary::<f64>(6, 0.01, 5, 2).unwrap();
        for i in 0..ds.len() {
            let p = sample_proba(&params, ds.x(i))[0];
            let LabelRef::Binary(ys) = ds.label(i) else { unreachable!() };
            assert!(((p - ys[0] as f64).abs() - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_margins_are_rejected() {
        assert!(make_separable_subspace::<f64>(3, 3, 1e-3, 2, 0).is_err());
        assert!(make_separable_subspace::<f64>(5, 10, 0.3, 2, 0).is_err());
        assert!(make_separable_subspace::<f64>(5, 10, 0.0, 2, 0).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.csv");
        let l = dir.path().join("y.csv");
        std::fs::write(&f, "a,b,c\n1.5,2,-3e-2\n4,5.25,6\n").unwrap();
        std::fs::write(&l, "1,0\n0,1\n").unwrap();
        let ds: Dataset<f64> = load_csv(&f, &l, LabelFormat::Binary, 100).unwrap();
        assert_eq!(ds.features().as_slice(), &[1.5, 2.0, -0.03, 4.0, 5.25, 6.0]);
        assert_eq!(ds.ids(), &[100, 101]);
        assert_eq!(ds.task_kind(), TaskKind::MultiAttribute);

        let f2 = dir.path().join("x2.csv");
        let l2 = dir.path().join("y2.csv");
        save_csv(&ds, &f2, &l2).unwrap();
        let back: Dataset<f64> = load_csv(&f2, &l2, LabelFormat::Binary, 100).unwrap();
        assert_eq!(back, ds);

        std::fs::write(&l, "1,0\n").unwrap();
        assert!(matches!(
            load_csv::<f64>(&f, &l, LabelFormat::Binary, 0),
            Err(Error::Parse { .. })
        ));
        std::fs::write(&f, "1,2\n3\n").unwrap();
        std::fs::write(&l, "0\n1\n").unwrap();
        let err = load_csv::<f64>(&f, &l, LabelFormat::Multinomial { classes: None }, 0).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        std::fs::write(&f, "1,2\n3,x\n").unwrap();
        let err = load_csv::<f64>(&f, &l, LabelFormat::Multinomial { classes: None }, 0).unwrap_err();
        assert!(err.to_string().contains("row 2 column 2"), "{err}");
    }

    #[test]
    fn removal_counts_use_ceiling() {
        assert_eq!(removal_count(1.0, 7), 7);
        assert_eq!(removal_count(0.5, 10), 5);
        assert_eq!(removal_count(0.1, 30), 3);
        assert_eq!(removal_count(0.01, 10), 1);
        assert_eq!(removal_count(0.25, 10), 3);
    }

    #[test]
    fn splits_partition_and_are_seeded() {
        let train: Dataset<f64> = make_gaussian_classes(1, 2, 3, 4, 10, 2.0, 1.0).unwrap();
        let test = make_gaussian_classes::<f64>(1, 3, 3, 4, 5, 2.0, 1.0)
            .unwrap()
            .reindexed(1000)
            .unwrap();
        let spec = RemovalSpec {
            target: RemovalTarget::Class(1),
            fraction: 0.5,
            seed: 9,
        };
        let s = build_splits(&train, &test, &spec).unwrap();
        assert_eq!(s.removed().len(), 5);
        assert_eq!(s.lko_train().len() + s.removed().len(), train.len());
        assert_eq!(s.lko_test().len() + s.removed_test().len(), test.len());
        assert_eq!(s.removed_test().len(), 5);
        assert_eq!(build_splits(&train, &test, &spec).unwrap(), s);
        let full = build_splits(
            &train,
            &test,
            &RemovalSpec {
                fraction: 1.0,
                ..spec
            },
        )
        .unwrap();
        assert_eq!(full.removed().len(), 10);
        // overlapping ids between train and test are rejected
        assert!(build_splits(&train, &train, &spec).is_err());
        let bad = RemovalSpec {
            target: RemovalTarget::Attribute(0),
            ..spec
        };
        assert!(build_splits(&train, &test, &bad).is_err());
    }
}
