//! Cluster-robust sandwich covariances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense codes for arbitrary keys, ordered by key.
pub fn dense_codes<K: Ord + Clone>(keys: &[K]) -> (Vec<u32>, usize) {
    let mut levels: Vec<K> = keys.to_vec();
    levels.sort();
    levels.dedup();
    let codes = keys
        .iter()
        .map(|k| levels.binary_search(k).expect("level present") as u32)
        .collect();
    (codes, levels.len())
}

fn symmetrize(v: &DMatrix<f64>) -> DMatrix<f64> {
    (v + v.transpose()) * 0.5
}

/// `c * B (Σ_g s_g s_g') B` with `s_g = Σ_{i in g} x_i e_i`, `B = (X'X)^-1`
/// and `c = G/(G-1) * (n-1)/(n-k)`.
pub fn one_way_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    bread: &DMatrix<f64>,
    codes: &[u32],
    n_groups: usize,
    k_dof: usize,
) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if codes.len() != n || residuals.len() != n {
        return Err(Error::invalid("cluster ids do not align with rows"));
    }
    if n_groups < 2 {
        return Err(Error::DegenerateSample(format!(
            "clustered covariance needs at least 2 groups, got {n_groups}"
        )));
    }
    if n <= k_dof {
        return Err(Error::DegenerateSample(format!("{n} observations for {k_dof} parameters")));
    }
    let mut scores = DMatrix::<f64>::zeros(n_groups, k);
    for i in 0..n {
        let g = codes[i] as usize;
        let e = residuals[i];
        for j in 0..k {
            scores[(g, j)] += x[(i, j)] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let g = n_groups as f64;
    let c = g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k_dof as f64);
    Ok(symmetrize(&(bread * meat * bread * c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCov {
    pub v: Vec<Vec<f64>>,
    pub groups_a: usize,
    pub groups_b: usize,
    pub groups_ab: usize,
    /// Smallest eigenvalue before any repair.
    pub min_eigenvalue: f64,
    /// True when negative eigenvalues were truncated to zero.
    pub repaired: bool,
}

impl ClusterCov {
    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.v.len();
        DMatrix::from_fn(k, k, |i, j| self.v[i][j])
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Inclusion-exclusion two-way clustering `V_A + V_B - V_{A∩B}`. Negative
/// eigenvalues beyond rounding are truncated and the repair flagged.
pub fn two_way_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    bread: &DMatrix<f64>,
    a: &[u32],
    b: &[u32],
    k_dof: usize,
) -> Result<ClusterCov> {
    if a.len() != b.len() {
        return Err(Error::invalid("cluster dimensions differ in length"));
    }
    let (ca, ga) = dense_codes(a);
    let (cb, gb) = dense_codes(b);
    let pairs: Vec<(u32, u32)> = a.iter().copied().zip(b.iter().copied()).collect();
    let (cab, gab) = dense_codes(&pairs);
    let va = one_way_cov(x, residuals, bread, &ca, ga, k_dof)?;
    let vb = one_way_cov(x, residuals, bread, &cb, gb, k_dof)?;
    let vab = one_way_cov(x, residuals, bread, &cab, gab, k_dof)?;
    let v = va + vb - vab;
    let eig = SymmetricEigen::new(v.clone());
    let scale = eig.eigenvalues.amax();
    let min_eigenvalue = eig.eigenvalues.min();
    let (v, repaired) = if min_eigenvalue < -1e-12 * scale {
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let q = &eig.eigenvectors;
        (symmetrize(&(q * DMatrix::from_diagonal(&clipped) * q.transpose())), true)
    } else {
        (v, false)
    };
    Ok(ClusterCov {
        v: to_rows(&v),
        groups_a: ga,
        groups_b: gb,
        groups_ab: gab,
        min_eigenvalue,
        repaired,
    })
}
