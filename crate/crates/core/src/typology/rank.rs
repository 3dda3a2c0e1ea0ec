//! Relative amenity intensity by distance band.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::complexity::{rca, CountMatrix};
use crate::error::{Error, Result};
use crate::panel::{ClusterDistances, Interval, MappedRecord};
use crate::table::TableWriter;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRank {
    pub intervals: Vec<String>,
    pub amenities: Vec<String>,
    /// `X[d,p] = (x[d,p] / Σ_p x[d,p]) / (Σ_d x[d,p] / Σ x)`.
    pub x: DMatrix<f64>,
    /// Share of all purchases falling in each band.
    pub shares: Vec<f64>,
}

pub fn distance_rank_from_counts(counts: &CountMatrix) -> DistanceRank {
    let spec = rca(counts);
    let total: f64 = counts.values().sum();
    let shares = (0..counts.rows().len())
        .map(|d| counts.values().row(d).sum() / total)
        .collect();
    DistanceRank {
        intervals: counts.rows().to_vec(),
        amenities: counts.cols().to_vec(),
        x: spec.rca,
        shares,
    }
}

/// Bands each mapped purchase by the distance between its residence and
/// destination clusters. Only bands with purchases appear, in distance order.
pub fn distance_rank(records: &[MappedRecord], distances: &ClusterDistances, years: &[u16]) -> Result<DistanceRank> {
    let mut cells: BTreeMap<(Interval, String), u64> = BTreeMap::new();
    for r in records.iter().filter(|r| years.contains(&r.period.year)) {
        let Some(j) = r.res_cluster else { continue };
        let band = Interval::of(distances.get(r.dest_cluster, j));
        *cells.entry((band, r.amenity.clone())).or_insert(0) += r.count;
    }
    let mut bands: Vec<Interval> = cells.keys().map(|k| k.0).collect();
    bands.dedup();
    let mut amenities: Vec<String> = cells.keys().map(|k| k.1.clone()).collect();
    amenities.sort();
    amenities.dedup();
    if cells.values().all(|c| *c == 0) {
        return Err(Error::invalid("no purchases to rank"));
    }
    let values = DMatrix::from_fn(bands.len(), amenities.len(), |d, p| {
        cells.get(&(bands[d], amenities[p].clone())).copied().unwrap_or(0) as f64
    });
    let counts = CountMatrix::new(bands.iter().map(|b| b.label().to_string()).collect(), amenities, values)?;
    Ok(distance_rank_from_counts(&counts))
}

impl DistanceRank {
    /// Top `k` amenities per band by `X` descending, ties by amenity code.
    pub fn top(&self, k: usize) -> Vec<(String, Vec<(String, f64)>)> {
        self.intervals
            .iter()
            .enumerate()
            .map(|(d, band)| {
                let mut row: Vec<(String, f64)> = self
                    .amenities
                    .iter()
                    .enumerate()
                    .map(|(p, a)| (a.clone(), self.x[(d, p)]))
                    .collect();
                row.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                row.truncate(k);
                (band.clone(), row)
            })
            .collect()
    }

    pub fn write_top_csv(&self, path: &Path, k: usize) -> Result<()> {
        let mut w = TableWriter::create(path, &["interval", "rank", "amenity", "X_value"])?;
        for (band, row) in self.top(k) {
            for (r, (a, v)) in row.into_iter().enumerate() {
                w.row([band.clone(), (r + 1).to_string(), a, v.to_string()])?;
            }
        }
        w.finish()
    }

    pub fn write_matrix_csv(&self, path: &Path) -> Result<()> {
        let mut w = TableWriter::create(path, &["interval", "amenity", "X_value"])?;
        for (d, band) in self.intervals.iter().enumerate() {
            for (p, a) in self.amenities.iter().enumerate() {
                w.row([band.clone(), a.clone(), self.x[(d, p)].to_string()])?;
            }
        }
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(rows: &[&str], cols: &[&str], data: &[f64]) -> CountMatrix {
        CountMatrix::new(
            rows.iter().map(|s| s.to_string()).collect(),
            cols.iter().map(|s| s.to_string()).collect(),
            DMatrix::from_row_slice(rows.len(), cols.len(), data),
        )
        .unwrap()
    }

    #[test]
    fn uniform_counts_give_ones() {
        let r = distance_rank_from_counts(&counts(&["0", "(0,1]"], &["a", "b", "c"], &[4.0; 6]));
        assert!(r.x.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn exclusive_amenity_is_maximal() {
        // Amenity a only in band 0: X = Σx / Σ_p x[0,p] = 12 / 5.
        let c = counts(&["0", "(0,1]"], &["a", "b"], &[2.0, 3.0, 0.0, 7.0]);
        let r = distance_rank_from_counts(&c);
        assert!((r.x[(0, 0)] - 12.0 / 5.0).abs() < 1e-15);
        assert_eq!(r.x[(1, 0)], 0.0);
        let top = r.top(10);
        assert_eq!(top[0].1[0].0, "a");
    }

    #[test]
    fn ties_break_by_code() {
        let r = distance_rank_from_counts(&counts(&["0", "(0,1]"], &["z", "a", "m"], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]));
        let names: Vec<String> = r.top(2)[0].1.iter().map(|x| x.0.clone()).collect();
        assert_eq!(names, vec!["a".to_string(), "m".to_string()]);
    }
}
