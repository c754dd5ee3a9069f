//! Datasets and index views over them.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A dense `N x P` feature matrix with instance ids and optional class labels.
///
/// Labels are only used for evaluation; no clustering routine reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    ids: Vec<String>,
    labels: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset with ids `"0".."N-1"`.
    pub fn new(features: Array2<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let ids = (0..features.nrows()).map(|i| i.to_string()).collect();
        Self::with_ids(features, ids, labels)
    }

    pub fn with_ids(
        features: Array2<f64>,
        ids: Vec<String>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 || p == 0 {
            return Err(Error::validation(format!(
                "dataset must have at least one row and one column, got {n}x{p}"
            )));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite feature at row {}, column {}",
                idx / p,
                idx % p
            )));
        }
        if ids.len() != n {
            return Err(Error::validation(format!("{} ids for {n} rows", ids.len())));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::validation(format!("duplicate instance id {dup:?}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::validation(format!(
                    "{} labels for {n} rows",
                    l.len()
                )));
            }
        }
        Ok(Self {
            features,
            ids,
            labels,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// A view over the selected rows. Indices must be unique and in range.
    pub fn subset(&self, indices: Vec<usize>) -> Result<NodeData<'_>> {
        NodeData::new(self, indices)
    }

    /// A view over every row, in order.
    pub fn all(&self) -> NodeData<'_> {
        NodeData {
            dataset: self,
            indices: (0..self.len()).collect(),
        }
    }

    /// Replaces the feature matrix, keeping ids and labels.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.len() {
            return Err(Error::validation("row count changed"));
        }
        Self::with_ids(features, self.ids.clone(), self.labels.clone())
    }
}

/// The instances owned by one tree node, as positions into a [`Dataset`].
#[derive(Debug, Clone)]
pub struct NodeData<'a> {
    dataset: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> NodeData<'a> {
    pub fn new(dataset: &'a Dataset, indices: Vec<usize>) -> Result<Self> {
        let n = dataset.len();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::validation(format!(
                    "index {i} out of range for {n} rows"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!("duplicate index {i}")));
            }
        }
        Ok(Self { dataset, indices })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// Feature row of the `local`-th member.
    pub fn row(&self, local: usize) -> ArrayView1<'a, f64> {
        self.dataset.row(self.indices[local])
    }

    /// Dense copy of the member rows, for kernels that want contiguous data.
    pub fn to_matrix(&self) -> Array2<f64> {
        self.dataset.features().select(Axis(0), &self.indices)
    }

    /// The sub-view selecting `locals` (positions within this node).
    pub fn restrict(&self, locals: &[usize]) -> NodeData<'a> {
        NodeData {
            dataset: self.dataset,
            indices: locals.iter().map(|&l| self.indices[l]).collect(),
        }
    }
}
