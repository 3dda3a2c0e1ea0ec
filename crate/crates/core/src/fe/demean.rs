//! Alternating-projection absorption of categorical fixed effects.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// One categorical factor with dense level codes `0..n_levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub name: String,
    pub codes: Vec<u32>,
    pub n_levels: usize,
}

impl Factor {
    /// Codes levels in ascending key order.
    pub fn from_keys<K: Ord + Clone>(name: &str, keys: &[K]) -> Factor {
        let mut levels: Vec<K> = keys.to_vec();
        levels.sort();
        levels.dedup();
        let codes = keys
            .iter()
            .map(|k| levels.binary_search(k).expect("level present") as u32)
            .collect();
        Factor {
            name: name.to_string(),
            codes,
            n_levels: levels.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Restricts to the rows flagged in `keep` and recodes densely.
    pub fn subset(&self, keep: &[bool]) -> Factor {
        let kept: Vec<u32> = self
            .codes
            .iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(*c))
            .collect();
        Factor::from_keys(&self.name, &kept)
    }

    fn counts(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.n_levels];
        for &c in &self.codes {
            n[c as usize] += 1.0;
        }
        n
    }
}

/// Iteratively flags rows that are alone in some factor level. Returns the
/// keep mask and the number of dropped rows.
pub fn drop_singletons(factors: &[Factor]) -> (Vec<bool>, usize) {
    let n = factors.first().map_or(0, Factor::len);
    let mut keep = vec![true; n];
    loop {
        let mut changed = false;
        for f in factors {
            let mut counts = vec![0usize; f.n_levels];
            for (i, &c) in f.codes.iter().enumerate() {
                if keep[i] {
                    counts[c as usize] += 1;
                }
            }
            for (i, &c) in f.codes.iter().enumerate() {
                if keep[i] && counts[c as usize] == 1 {
                    keep[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let dropped = keep.iter().filter(|k| !**k).count();
    (keep, dropped)
}

fn sweep(col: &mut [f64], f: &Factor, counts: &[f64], sums: &mut [f64]) -> f64 {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for (v, &c) in col.iter().zip(&f.codes) {
        sums[c as usize] += v;
    }
    let mut delta: f64 = 0.0;
    for (s, n) in sums.iter_mut().zip(counts) {
        *s /= n;
        delta = delta.max(s.abs());
    }
    for (v, &c) in col.iter_mut().zip(&f.codes) {
        *v -= sums[c as usize];
    }
    delta
}

/// Demeans every column by all factors in order until one full sweep moves
/// no value by more than `tol`. A single factor needs exactly one sweep.
/// Returns the largest sweep count over columns.
pub fn within_transform(columns: &mut [Vec<f64>], factors: &[Factor], tol: f64, max_iter: usize) -> Result<usize> {
    if factors.is_empty() {
        return Ok(0);
    }
    let n = factors[0].len();
    for f in factors {
        if f.len() != n {
            return Err(Error::invalid(format!("factor `{}` has {} rows, expected {n}", f.name, f.len())));
        }
        if f.n_levels == 0 {
            return Err(Error::invalid(format!("factor `{}` has no levels", f.name)));
        }
    }
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::invalid(format!("column has {} rows, expected {n}", c.len())));
    }
    let counts: Vec<Vec<f64>> = factors.iter().map(Factor::counts).collect();
    let results: Vec<Result<usize>> = columns
        .par_iter_mut()
        .map(|col| {
            let mut sums: Vec<Vec<f64>> = factors.iter().map(|f| vec![0.0; f.n_levels]).collect();
            if factors.len() == 1 {
                sweep(col, &factors[0], &counts[0], &mut sums[0]);
                return Ok(1);
            }
            let mut last = f64::INFINITY;
            for it in 1..=max_iter {
                let mut delta: f64 = 0.0;
                for (k, f) in factors.iter().enumerate() {
                    delta = delta.max(sweep(col, f, &counts[k], &mut sums[k]));
                }
                last = delta;
                if delta < tol {
                    return Ok(it);
                }
            }
            Err(Error::NoConvergence {
                iterations: max_iter,
                last_delta: last,
            })
        })
        .collect();
    let mut iterations = 0;
    for r in results {
        iterations = iterations.max(r?);
    }
    Ok(iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factor(codes: &[u32]) -> Factor {
        Factor::from_keys("f", codes)
    }

    #[test]
    fn keys_are_coded_densely_in_order() {
        let f = Factor::from_keys("f", &["b", "z", "b", "a"]);
        assert_eq!(f.codes, vec![1, 2, 1, 0]);
        assert_eq!(f.n_levels, 3);
        let s = f.subset(&[true, false, true, true]);
        assert_eq!(s.codes, vec![1, 1, 0]);
        assert_eq!(s.n_levels, 2);
    }

    #[test]
    fn single_factor_is_group_demeaning() {
        let f = factor(&[0, 0, 1, 1, 1]);
        let mut cols = vec![vec![1.0, 3.0, 2.0, 4.0, 9.0]];
        let it = within_transform(&mut cols, &[f], 1e-8, 500).unwrap();
        assert_eq!(it, 1);
        assert_eq!(cols[0], vec![-1.0, 1.0, -3.0, -1.0, 4.0]);
    }

    #[test]
    fn nested_factors_equal_finer_demeaning() {
        let fine = factor(&[0, 0, 1, 1, 2, 2, 3, 3]);
        let coarse = factor(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let data = vec![1.0, 2.0, 5.0, 9.0, -1.0, 0.5, 7.0, 7.5];
        let mut a = vec![data.clone()];
        within_transform(&mut a, &[coarse, fine.clone()], 1e-12, 500).unwrap();
        let mut b = vec![data];
        within_transform(&mut b, &[fine], 1e-12, 500).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_reports_delta() {
        // Two crossed factors on a chain need many sweeps; one sweep is not enough.
        let n = 60;
        let a: Vec<u32> = (0..n).map(|i| (i / 2) as u32).collect();
        let b: Vec<u32> = (0..n).map(|i| (((i + 1) / 2) % (n / 2)) as u32).collect();
        let mut cols = vec![(0..n).map(|i| (i as f64).sin() * 10.0).collect()];
        match within_transform(&mut cols, &[factor(&a), factor(&b)], 1e-14, 1) {
            Err(Error::NoConvergence { iterations, last_delta }) => {
                assert_eq!(iterations, 1);
                assert!(last_delta > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singletons_dropped_iteratively() {
        // Row 3 is alone in factor a; dropping it leaves row 2 alone in b.
        let a = factor(&[0, 0, 1, 2, 1]);
        let b = factor(&[0, 0, 1, 1, 2]);
        let (keep, dropped) = drop_singletons(&[a, b]);
        assert_eq!(keep, vec![true, true, false, false, false]);
        assert_eq!(dropped, 3);
    }
}
