//! Revealed comparative advantage, co-specialization proximity, and
//! relatedness density over labelled count matrices.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub mod space;

/// Non-negative integer counts with unique row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    values: DMatrix<f64>,
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::invalid(format!("duplicate {what} label `{l}`")));
        }
    }
    Ok(())
}

impl CountMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != rows.len() || values.ncols() != cols.len() {
            return Err(Error::invalid(format!(
                "count matrix is {}x{} but has {} row and {} column labels",
                values.nrows(),
                values.ncols(),
                rows.len(),
                cols.len()
            )));
        }
        check_unique(&rows, "row")?;
        check_unique(&cols, "column")?;
        let mut any_positive = false;
        for v in values.iter() {
            if !v.is_finite() || *v < 0.0 || v.fract() != 0.0 {
                return Err(Error::invalid(format!("count {v} is not a non-negative integer")));
            }
            any_positive |= *v > 0.0;
        }
        if !any_positive {
            return Err(Error::invalid("count matrix has no positive entry"));
        }
        Ok(CountMatrix { rows, cols, values })
    }

    /// Builds a matrix from `(row, col, count)` triples, summing duplicates.
    /// Labels are sorted; `cols` fixes the column set and order when given.
    pub fn from_triples<I>(triples: I, cols: Option<&[String]>) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, u64)>,
    {
        let mut cells: BTreeMap<(String, String), u64> = BTreeMap::new();
        let mut row_set = BTreeSet::new();
        let mut col_set = BTreeSet::new();
        for (r, c, n) in triples {
            row_set.insert(r.clone());
            col_set.insert(c.clone());
            *cells.entry((r, c)).or_default() += n;
        }
        let cols: Vec<String> = match cols {
            Some(fixed) => {
                let known: HashSet<&String> = fixed.iter().collect();
                if let Some(extra) = col_set.iter().find(|c| !known.contains(c)) {
                    return Err(Error::LabelMismatch(format!("column `{extra}` not in the fixed column set")));
                }
                fixed.to_vec()
            }
            None => col_set.into_iter().collect(),
        };
        let rows: Vec<String> = row_set.into_iter().collect();
        let row_pos: BTreeMap<&String, usize> = rows.iter().enumerate().map(|(i, r)| (r, i)).collect();
        let col_pos: BTreeMap<&String, usize> = cols.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let mut values = DMatrix::zeros(rows.len(), cols.len());
        for ((r, c), n) in &cells {
            values[(row_pos[r], col_pos[c])] += *n as f64;
        }
        CountMatrix::new(rows, cols, values)
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// RCA values and their strict `RCA > 1` binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecializationMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub rca: DMatrix<f64>,
    pub binary: DMatrix<bool>,
}

/// `RCA[u,p] = (x[u,p] / Σ_p x[u,p]) / (Σ_u x[u,p] / Σ x)`; zero rows and
/// zero columns yield zero RCA.
pub fn rca(counts: &CountMatrix) -> SpecializationMatrix {
    let x = &counts.values;
    let (n, m) = x.shape();
    let row_sums: Vec<f64> = (0..n).map(|u| x.row(u).sum()).collect();
    let col_sums: Vec<f64> = (0..m).map(|p| x.column(p).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let rca = DMatrix::from_fn(n, m, |u, p| {
        if row_sums[u] == 0.0 || col_sums[p] == 0.0 {
            0.0
        } else {
            (x[(u, p)] / row_sums[u]) / (col_sums[p] / total)
        }
    });
    let binary = rca.map(|v| v > 1.0);
    SpecializationMatrix {
        rows: counts.rows.clone(),
        cols: counts.cols.clone(),
        rca,
        binary,
    }
}

/// Symmetric amenity-by-amenity proximity with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    pub labels: Vec<String>,
    pub phi: DMatrix<f64>,
}

impl ProximityMatrix {
    /// `phi[p,q] = min(P(p | q), P(q | p))` estimated over the rows of a binary
    /// specialization matrix; zero when either column is empty.
    pub fn from_binary(labels: Vec<String>, binary: &DMatrix<bool>) -> Result<Self> {
        let m = binary.ncols();
        if m < 2 {
            return Err(Error::invalid(format!("proximity needs at least 2 columns, got {m}")));
        }
        if labels.len() != m {
            return Err(Error::LabelMismatch(format!("{} labels for {m} columns", labels.len())));
        }
        let mut ubiquity = vec![0u64; m];
        let mut co = vec![0u64; m * m];
        let mut active = Vec::with_capacity(m);
        for r in 0..binary.nrows() {
            active.clear();
            active.extend((0..m).filter(|&p| binary[(r, p)]));
            for (k, &p) in active.iter().enumerate() {
                ubiquity[p] += 1;
                for &q in &active[k + 1..] {
                    co[p * m + q] += 1;
                }
            }
        }
        let mut phi = DMatrix::identity(m, m);
        for p in 0..m {
            for q in p + 1..m {
                let denom = ubiquity[p].max(ubiquity[q]);
                let v = if ubiquity[p] == 0 || ubiquity[q] == 0 {
                    0.0
                } else {
                    co[p * m + q] as f64 / denom as f64
                };
                phi[(p, q)] = v;
                phi[(q, p)] = v;
            }
        }
        Ok(ProximityMatrix { labels, phi })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row sums excluding the diagonal.
    pub fn strength(&self) -> Vec<f64> {
        (0..self.len())
            .map(|p| (0..self.len()).filter(|&q| q != p).map(|q| self.phi[(p, q)]).sum())
            .collect()
    }
}

pub fn proximity(spec: &SpecializationMatrix) -> Result<ProximityMatrix> {
    ProximityMatrix::from_binary(spec.cols.clone(), &spec.binary)
}

/// Relatedness density per (row, amenity), in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelatednessMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub omega: DMatrix<f64>,
}

/// `omega[i,p] = Σ_{q≠p} phi[p,q] X[i,q] / Σ_{q≠p} phi[p,q]`, zero when the
/// denominator vanishes.
pub fn relatedness_from_binary(
    rows: Vec<String>,
    cols: &[String],
    binary: &DMatrix<bool>,
    prox: &ProximityMatrix,
) -> Result<RelatednessMatrix> {
    if cols != prox.labels.as_slice() || binary.ncols() != cols.len() {
        return Err(Error::LabelMismatch(
            "specialization columns do not match proximity labels".into(),
        ));
    }
    let m = cols.len();
    let strength = prox.strength();
    let omega = DMatrix::from_fn(binary.nrows(), m, |i, p| {
        if strength[p] == 0.0 {
            return 0.0;
        }
        let num: f64 = (0..m)
            .filter(|&q| q != p && binary[(i, q)])
            .map(|q| prox.phi[(p, q)])
            .sum();
        (num / strength[p]).min(1.0)
    });
    Ok(RelatednessMatrix {
        rows,
        cols: cols.to_vec(),
        omega,
    })
}

pub fn relatedness_density(cluster_spec: &SpecializationMatrix, prox: &ProximityMatrix) -> Result<RelatednessMatrix> {
    relatedness_from_binary(cluster_spec.rows.clone(), &cluster_spec.cols, &cluster_spec.binary, prox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn counts(n: usize, m: usize, data: &[f64]) -> CountMatrix {
        CountMatrix::new(labels("r", n), labels("p", m), DMatrix::from_row_slice(n, m, data)).unwrap()
    }

    #[test]
    fn uniform_matrix_has_unit_rca() {
        let s = rca(&counts(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert!(s.rca.iter().all(|v| *v == 1.0));
        assert!(s.binary.iter().all(|b| !b));
    }

    #[test]
    fn diagonal_matrix() {
        let s = rca(&counts(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(s.rca, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn zero_rows_and_columns_give_zero() {
        let s = rca(&counts(3, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 1.0]));
        assert!(s.rca.row(1).iter().all(|v| *v == 0.0));
        assert!(s.rca.column(1).iter().all(|v| *v == 0.0));
        assert!(s.rca.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_counts() {
        let z = CountMatrix::new(labels("r", 2), labels("p", 2), DMatrix::zeros(2, 2));
        assert!(matches!(z, Err(Error::InvalidInput(_))));
        let neg = CountMatrix::new(labels("r", 1), labels("p", 2), DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert!(neg.is_err());
        let frac = CountMatrix::new(labels("r", 1), labels("p", 2), DMatrix::from_row_slice(1, 2, &[1.5, 1.0]));
        assert!(frac.is_err());
        let dup = CountMatrix::new(vec!["a".into(), "a".into()], labels("p", 1), DMatrix::from_element(2, 1, 1.0));
        assert!(dup.is_err());
    }

    #[test]
    fn triples_sum_duplicates() {
        let m = CountMatrix::from_triples(
            vec![
                ("b".into(), "x".into(), 2),
                ("a".into(), "y".into(), 1),
                ("b".into(), "x".into(), 3),
            ],
            None,
        )
        .unwrap();
        assert_eq!(m.rows(), &["a".to_string(), "b".to_string()]);
        assert_eq!(m.values()[(1, 0)], 5.0);
    }

    #[test]
    fn proximity_examples() {
        let b = |rows: &[&[bool]]| {
            DMatrix::from_row_iterator(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()))
        };
        let same = ProximityMatrix::from_binary(labels("p", 2), &b(&[&[true, true], &[false, false], &[true, true]])).unwrap();
        assert_eq!(same.phi[(0, 1)], 1.0);
        let disjoint = ProximityMatrix::from_binary(labels("p", 2), &b(&[&[true, false], &[false, true]])).unwrap();
        assert_eq!(disjoint.phi[(0, 1)], 0.0);
        // p in groups {1,2}, p' in {2,3}.
        let half = ProximityMatrix::from_binary(labels("p", 2), &b(&[&[true, false], &[true, true], &[false, true]])).unwrap();
        assert_eq!(half.phi[(0, 1)], 0.5);
        assert_eq!(half.phi[(1, 0)], 0.5);
        let empty_col = ProximityMatrix::from_binary(labels("p", 2), &b(&[&[true, false]])).unwrap();
        assert_eq!(empty_col.phi[(0, 1)], 0.0);
        assert_eq!(empty_col.phi[(1, 1)], 1.0);
        assert!(ProximityMatrix::from_binary(labels("p", 1), &b(&[&[true]])).is_err());
    }

    fn prox3() -> ProximityMatrix {
        let mut phi = DMatrix::identity(3, 3);
        phi[(0, 1)] = 0.5;
        phi[(1, 0)] = 0.5;
        phi[(0, 2)] = 0.25;
        phi[(2, 0)] = 0.25;
        ProximityMatrix { labels: labels("p", 3), phi }
    }

    #[test]
    fn relatedness_examples() {
        let prox = prox3();
        let cols = labels("p", 3);
        let all = DMatrix::from_element(1, 3, true);
        let w = relatedness_from_binary(labels("c", 1), &cols, &all, &prox).unwrap();
        // p1 and p2 are only related to p0, so each has omega 1 when p0 is present.
        assert!(w.omega.iter().all(|v| *v == 1.0));
        let none = DMatrix::from_element(1, 3, false);
        let w = relatedness_from_binary(labels("c", 1), &cols, &none, &prox).unwrap();
        assert!(w.omega.iter().all(|v| *v == 0.0));
        let only_second = DMatrix::from_row_slice(1, 3, &[false, true, false]);
        let w = relatedness_from_binary(labels("c", 1), &cols, &only_second, &prox).unwrap();
        assert!((w.omega[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let misaligned = relatedness_from_binary(labels("c", 1), &labels("q", 3), &none, &prox);
        assert!(matches!(misaligned, Err(Error::LabelMismatch(_))));
    }

    fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<u32>)> {
        (2usize..12, 2usize..10).prop_flat_map(|(n, m)| {
            (Just(n), Just(m), proptest::collection::vec(0u32..6, n * m))
        })
    }

    proptest! {
        #[test]
        fn rca_binary_is_scale_free((n, m, data) in matrix_strategy(), k in 1u32..50) {
            prop_assume!(data.iter().any(|v| *v > 0));
            let base: Vec<f64> = data.iter().map(|v| *v as f64).collect();
            let scaled: Vec<f64> = data.iter().map(|v| (*v * k) as f64).collect();
            let a = rca(&counts(n, m, &base));
            let b = rca(&counts(n, m, &scaled));
            prop_assert_eq!(a.binary, b.binary);
        }

        #[test]
        fn phi_and_omega_bounds((n, m, data) in matrix_strategy()) {
            prop_assume!(data.iter().any(|v| *v > 0));
            let values: Vec<f64> = data.iter().map(|v| *v as f64).collect();
            let s = rca(&counts(n, m, &values));
            let prox = proximity(&s).unwrap();
            for p in 0..m {
                prop_assert_eq!(prox.phi[(p, p)], 1.0);
                for q in 0..m {
                    prop_assert_eq!(prox.phi[(p, q)], prox.phi[(q, p)]);
                    prop_assert!((0.0..=1.0).contains(&prox.phi[(p, q)]));
                }
            }
            let w = relatedness_density(&s, &prox).unwrap();
            prop_assert!(w.omega.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn omega_monotone_under_added_specialization(
            (n, m, data) in matrix_strategy(),
            bits in proptest::collection::vec(any::<bool>(), 1..200),
            flip in any::<proptest::sample::Index>(),
        ) {
            prop_assume!(data.iter().any(|v| *v > 0));
            let values: Vec<f64> = data.iter().map(|v| *v as f64).collect();
            let prox = proximity(&rca(&counts(n, m, &values))).unwrap();
            let x = DMatrix::from_fn(1, m, |_, p| bits[p % bits.len()]);
            let zeros: Vec<usize> = (0..m).filter(|&p| !x[(0, p)]).collect();
            prop_assume!(!zeros.is_empty());
            let mut y = x.clone();
            y[(0, zeros[flip.index(zeros.len())])] = true;
            let cols = labels("p", m);
            let before = relatedness_from_binary(labels("c", 1), &cols, &x, &prox).unwrap();
            let after = relatedness_from_binary(labels("c", 1), &cols, &y, &prox).unwrap();
            for p in 0..m {
                prop_assert!(after.omega[(0, p)] >= before.omega[(0, p)]);
            }
        }
    }
}
