//! Planted-hierarchy data.
//!
//! Classes are the leaves of a complete tree of the given depth and
//! branching. Tree level `l` (0 at the top) owns the informative block of
//! dimensions `[l * I, (l + 1) * I)`. Along that block a class's mean follows
//! the pattern of the branch `b` it took at level `l`:
//! `m_l * (B * [j mod B == b] - 1) / (B - 1)`, which is `+m_l` on the
//! dimensions that belong to `b` and a smaller negative value elsewhere. For
//! `B = 2` the two branches are exact mirror images. The pattern averages to
//! zero over sibling branches, so the data is centered up to noise. Noise
//! dimensions come last and have zero mean.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::ClassTree;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub depth: usize,
    pub branching: usize,
    pub per_leaf: usize,
    /// Informative dimensions owned by each level.
    pub informative_dims: usize,
    pub noise_dims: usize,
    /// Mean magnitude of each level, top level first.
    pub magnitudes: Vec<f64>,
    /// Standard deviation of the isotropic Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            depth: 2,
            branching: 2,
            per_leaf: 50,
            informative_dims: 10,
            noise_dims: 10,
            magnitudes: vec![5.0, 3.0],
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.branching < 2 || self.per_leaf == 0 || self.informative_dims == 0
        {
            return Err(Error::config(
                "synthetic data needs depth >= 1, branching >= 2, per_leaf >= 1 and informative_dims >= 1",
            ));
        }
        if self.magnitudes.len() != self.depth {
            return Err(Error::config(format!(
                "{} magnitudes given for depth {}",
                self.magnitudes.len(),
                self.depth
            )));
        }
        if self.magnitudes.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::config("magnitudes must be positive and finite"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise scale must be non-negative and finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.depth * self.informative_dims + self.noise_dims
    }

    pub fn class_count(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    /// Range of dimensions informative for tree level `level`.
    pub fn block(&self, level: usize) -> std::ops::Range<usize> {
        level * self.informative_dims..(level + 1) * self.informative_dims
    }
}

/// Branch digits of class `c`, top level first.
fn digits(c: usize, branching: usize, depth: usize) -> Vec<usize> {
    let mut out = vec![0; depth];
    let mut rest = c;
    for d in out.iter_mut().rev() {
        *d = rest % branching;
        rest /= branching;
    }
    out
}

fn class_name(path: &[usize]) -> String {
    let parts: Vec<String> = path.iter().map(|d| d.to_string()).collect();
    format!("c{}", parts.join("."))
}

/// Returns labeled data, rows grouped by class, and the true class tree.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, ClassTree)> {
    spec.validate()?;
    let b = spec.branching;
    let classes = spec.class_count();
    let n = classes * spec.per_leaf;
    let mut x = Array2::zeros((n, spec.dim()));
    let mut labels = Vec::with_capacity(n);

    for c in 0..classes {
        let path = digits(c, b, spec.depth);
        let name = class_name(&path);
        for r in 0..spec.per_leaf {
            let row = c * spec.per_leaf + r;
            for (level, &branch) in path.iter().enumerate() {
                let m = spec.magnitudes[level];
                for (offset, j) in spec.block(level).enumerate() {
                    let own = if offset % b == branch { b as f64 } else { 0.0 };
                    x[[row, j]] = m * (own - 1.0) / (b as f64 - 1.0);
                }
            }
            labels.push(name.clone());
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = seed::rng(spec.seed);
        for v in x.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    // Tree nodes in breadth-first order; the children of node v at level l
    // are contiguous at the next level.
    let mut parents = vec![None];
    let mut level_start = 0;
    let mut level_len = 1;
    for _ in 0..spec.depth {
        let next_start = parents.len();
        for v in level_start..level_start + level_len {
            for _ in 0..b {
                parents.push(Some(v));
            }
        }
        level_start = next_start;
        level_len *= b;
    }
    let leaves: BTreeMap<String, usize> = (0..classes)
        .map(|c| (class_name(&digits(c, b, spec.depth)), level_start + c))
        .collect();
    let tree = ClassTree::new(parents, leaves)?;
    Ok((Dataset::new(x, Some(labels))?, tree))
}
