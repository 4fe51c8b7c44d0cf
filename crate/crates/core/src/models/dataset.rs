use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Which kind of supervision a dataset (or model head) carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Several independent 0/1 attributes per sample.
    MultiAttribute,
    /// One class index per sample.
    Multinomial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Row-major `n × attributes` matrix of 0/1 entries.
    Binary { attributes: usize, values: Vec<u8> },
    /// Zero-based class index per sample.
    Classes { classes: usize, values: Vec<usize> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary { attributes, values } => values.len() / (*attributes).max(1),
            Labels::Classes { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_kind(&self) -> TaskKind {
        match self {
            Labels::Binary { .. } => TaskKind::MultiAttribute,
            Labels::Classes { .. } => TaskKind::Multinomial,
        }
    }

    /// Number of attributes or classes.
    pub fn outputs(&self) -> usize {
        match self {
            Labels::Binary { attributes, .. } => *attributes,
            Labels::Classes { classes, .. } => *classes,
        }
    }

    pub fn get(&self, i: usize) -> LabelRef<'_> {
        match self {
            Labels::Binary { attributes, values } => {
                LabelRef::Binary(&values[i * attributes..(i + 1) * attributes])
            }
            Labels::Classes { values, .. } => LabelRef::Class(values[i]),
        }
    }

    fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Binary { attributes, values } => {
                let mut out = Vec::with_capacity(rows.len() * attributes);
                for &r in rows {
                    out.extend_from_slice(&values[r * attributes..(r + 1) * attributes]);
                }
                Labels::Binary {
                    attributes: *attributes,
                    values: out,
                }
            }
            Labels::Classes { classes, values } => Labels::Classes {
                classes: *classes,
                values: rows.iter().map(|&r| values[r]).collect(),
            },
        }
    }
}

/// Borrowed label of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRef<'a> {
    Binary(&'a [u8]),
    Class(usize),
}

/// Feature matrix, labels and stable sample identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Matrix<T>,
    labels: Labels,
    ids: Vec<u64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Matrix<T>, labels: Labels, ids: Vec<u64>) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if features.cols() == 0 {
            return Err(Error::invalid("dataset must have at least one feature"));
        }
        if let Some(pos) = features.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / features.cols(),
                pos % features.cols()
            )));
        }
        if ids.len() != n {
            return Err(Error::invalid(format!(
                "{} ids supplied for {n} samples",
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::invalid(format!("duplicate sample id {dup}")));
        }
        match &labels {
            Labels::Binary { attributes, values } => {
                if *attributes == 0 || values.len() != n * attributes {
                    return Err(Error::invalid(format!(
                        "binary label matrix has {} entries, expected {n} x {attributes}",
                        values.len()
                    )));
                }
                if let Some(pos) = values.iter().position(|&v| v > 1) {
                    return Err(Error::invalid(format!(
                        "binary label at row {} is {}, expected 0 or 1",
                        pos / attributes,
                        values[pos]
                    )));
                }
            }
            Labels::Classes { classes, values } => {
                if *classes == 0 || values.len() != n {
                    return Err(Error::invalid(format!(
                        "class label vector has {} entries for {n} samples",
                        values.len()
                    )));
                }
                if let Some(pos) = values.iter().position(|&v| v >= *classes) {
                    return Err(Error::invalid(format!(
                        "class label {} at row {pos} outside 0..{classes}",
                        values[pos]
                    )));
                }
            }
        }
        Ok(Self {
            features,
            labels,
            ids,
        })
    }

    /// Dataset with ids `0..n`.
    pub fn with_sequential_ids(features: Matrix<T>, labels: Labels) -> Result<Self> {
        let n = features.rows() as u64;
        Self::new(features, labels, (0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn task_kind(&self) -> TaskKind {
        self.labels.task_kind()
    }

    pub fn x(&self, i: usize) -> &[T] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> LabelRef<'_> {
        self.labels.get(i)
    }

    /// Row positions sorted by sample id.
    pub fn rows_in_id_order(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rows.sort_by_key(|&r| self.ids[r]);
        rows
    }

    /// Map from sample id to row position.
    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(r, &id)| (id, r)).collect()
    }

    /// Row positions for `ids`, failing on unknown ids.
    pub fn rows_for_ids(&self, ids: &[u64]) -> Result<Vec<usize>> {
        let index = self.id_index();
        ids.iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("sample id {id} not in dataset")))
            })
            .collect()
    }

    /// Sub-dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let m = self.num_features();
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        let features = Matrix::from_vec(rows.len(), m, data)?;
        Self::new(
            features,
            self.labels.select(rows),
            rows.iter().map(|&r| self.ids[r]).collect(),
        )
    }

    pub fn select_ids(&self, ids: &[u64]) -> Result<Self> {
        let rows = self.rows_for_ids(ids)?;
        self.select_rows(&rows)
    }

    /// Dataset with the samples whose ids are in `removed` left out.
    pub fn without_ids(&self, removed: &[u64]) -> Result<Self> {
        let index = self.id_index();
        let mut drop = HashSet::with_capacity(removed.len());
        for id in removed {
            if !index.contains_key(id) {
                return Err(Error::invalid(format!("sample id {id} not in dataset")));
            }
            drop.insert(*id);
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&r| !drop.contains(&self.ids[r]))
            .collect();
        if rows.is_empty() {
            return Err(Error::invalid("removing these ids leaves an empty dataset"));
        }
        self.select_rows(&rows)
    }
}
