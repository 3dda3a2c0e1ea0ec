//! Least squares via Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot size below which a column counts as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(X'X)^-1`, formed as `R^-1 R^-T`.
    pub xtx_inv: DMatrix<f64>,
}

pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>, names: &[String]) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if names.len() != k {
        return Err(Error::invalid(format!("{} names for {k} columns", names.len())));
    }
    if y.len() != n {
        return Err(Error::invalid(format!("y has {} rows, X has {n}", y.len())));
    }
    if k == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if n <= k {
        return Err(Error::DegenerateSample(format!("{n} observations for {k} regressors")));
    }
    let norms: Vec<f64> = (0..k).map(|j| x.column(j).norm()).collect();
    let qr = x.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..k)
        .filter(|&j| norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOL * norms[j])
        .map(|j| names[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let residuals = y - x * &beta;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    Ok(OlsFit {
        beta,
        residuals,
        xtx_inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn exact_fit_has_zero_residuals() {
        let x = DMatrix::from_fn(40, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin());
        let beta = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let y = &x * &beta;
        let fit = ols(&y, &x, &names(3)).unwrap();
        assert!(fit.residuals.amax() <= 1e-10);
        assert!((fit.beta - beta).amax() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_named() {
        let mut x = DMatrix::from_fn(30, 3, |i, j| ((i + 7 * j) as f64).cos());
        let c0 = x.column(0).into_owned();
        x.set_column(2, &(c0 * 2.0));
        let y = DVector::from_fn(30, |i, _| i as f64);
        match ols(&y, &x, &names(3)) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["x2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let mut x = DMatrix::from_fn(10, 2, |i, _| i as f64);
        x.set_column(1, &DVector::zeros(10));
        let y = DVector::from_element(10, 1.0);
        assert!(matches!(ols(&y, &x, &names(2)), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn matches_normal_equations_on_well_conditioned_data() {
        let x = DMatrix::from_fn(200, 4, |i, j| ((i * 31 + j * 17) % 23) as f64 - 11.0 + j as f64);
        let y = DVector::from_fn(200, |i, _| ((i * 13) % 29) as f64 * 0.1);
        let fit = ols(&y, &x, &names(4)).unwrap();
        let xtx = x.transpose() * &x;
        let direct = xtx.clone().try_inverse().unwrap() * x.transpose() * &y;
        assert!((fit.beta - direct).amax() < 1e-9);
        assert!((fit.xtx_inv - xtx.try_inverse().unwrap()).amax() < 1e-9);
    }
}
