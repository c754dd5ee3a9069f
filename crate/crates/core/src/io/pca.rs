//! Standardization and principal component projection.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Per-dimension zero mean and unit variance. Constant dimensions are only
/// centered.
pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    let x = dataset.features();
    let mean = x.mean_axis(Axis(0)).expect("dataset is non-empty");
    let std = x.std_axis(Axis(0), 0.0);
    let mut out = x - &mean;
    for (mut col, &s) in out.axis_iter_mut(Axis(1)).zip(std.iter()) {
        if s > 0.0 {
            col /= s;
        }
    }
    dataset.with_features(out)
}

/// Projects onto the top `d` principal directions in descending eigenvalue
/// order. Each direction is signed so that its largest-magnitude loading is
/// positive.
pub fn pca_reduce(dataset: &Dataset, d: usize, center: bool) -> Result<Dataset> {
    let (n, p) = dataset.features().dim();
    if d == 0 || d > n.min(p) {
        return Err(Error::config(format!(
            "PCA dimension must be in 1..={}, got {d}",
            n.min(p)
        )));
    }
    let mut x = dataset.features().clone();
    if center {
        let mean = x.mean_axis(Axis(0)).expect("dataset is non-empty");
        x -= &mean;
    }
    let gram = x.t().dot(&x) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(p, p, |r, c| gram[[r, c]]));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut basis = Array2::zeros((p, d));
    for (j, &src) in order.iter().take(d).enumerate() {
        let v: Array1<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0_f64, |m, a| if a.abs() > m.abs() { a } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        basis.column_mut(j).assign(&(v * sign));
    }
    dataset.with_features(x.dot(&basis))
}
