//! k-means typology of clusters by population density profile.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Table, TableWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster_id: usize,
    pub floating_density: f64,
    pub working_density: f64,
    pub residential_density: f64,
}

impl ClusterProfile {
    fn features(&self) -> [f64; 3] {
        [self.floating_density, self.working_density, self.residential_density]
    }
}

const PROFILE_HEADERS: [&str; 4] = ["cluster_id", "floating_density", "working_density", "residential_density"];

pub fn read_profiles(path: &Path) -> Result<Vec<ClusterProfile>> {
    let table = Table::read(path, &PROFILE_HEADERS)?;
    let mut out = Vec::with_capacity(table.len());
    for row in table.rows() {
        let mut vals = [0.0; 3];
        for (v, col) in vals.iter_mut().zip(&PROFILE_HEADERS[1..]) {
            *v = row.float(col)?;
            if *v < 0.0 {
                return Err(row.error(col, "density must be nonnegative"));
            }
        }
        out.push(ClusterProfile {
            cluster_id: row.parse("cluster_id")?,
            floating_density: vals[0],
            working_density: vals[1],
            residential_density: vals[2],
        });
    }
    Ok(out)
}

pub fn write_profiles(path: &Path, profiles: &[ClusterProfile]) -> Result<()> {
    let mut w = TableWriter::create(path, &PROFILE_HEADERS)?;
    for p in profiles {
        w.row([
            p.cluster_id.to_string(),
            p.floating_density.to_string(),
            p.working_density.to_string(),
            p.residential_density.to_string(),
        ])?;
    }
    w.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 5,
            n_restarts: 16,
            seed: 20240601,
            max_iter: 300,
        }
    }
}

/// One Lloyd run from a k-means++ start.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub assignment: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub wcss: f64,
    /// Objective after each assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(i, d)] - c[(j, d)]).powi(2)).sum()
}

fn plus_plus(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, dim) = x.shape();
    let mut centroids = DMatrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centroids, c));
        }
    }
    centroids
}

/// Lloyd iterations from a k-means++ seeding; rows of `x` are points.
pub fn kmeans(x: &DMatrix<f64>, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Result<KMeansRun> {
    let (n, dim) = x.shape();
    if k == 0 {
        return Err(Error::param("k", k, "[1, n]"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} points for k = {k}")));
    }
    let mut centroids = plus_plus(x, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut wcss = 0.0;
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|j| (j, sq_dist(x, i, &centroids, j)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
            wcss += d;
        }
        history.push(wcss);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for d in 0..dim {
                sums[(a, d)] += x[(i, d)];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .map(|i| (i, sq_dist(x, i, &centroids, assignment[i])))
                    .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                    .0;
                centroids.row_mut(j).copy_from(&x.row(far));
            } else {
                for d in 0..dim {
                    centroids[(j, d)] = sums[(j, d)] / counts[j] as f64;
                }
            }
        }
    }
    let wcss = (0..n).map(|i| sq_dist(x, i, &centroids, assignment[i])).sum();
    Ok(KMeansRun {
        assignment,
        centroids,
        wcss,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCentroid {
    pub label: char,
    pub n_members: usize,
    /// Centroid in raw density units.
    pub raw: [f64; 3],
    /// Centroid in z-scored units.
    pub standardized: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Typology {
    pub labels: BTreeMap<usize, char>,
    pub centroids: Vec<TypeCentroid>,
    pub wcss: f64,
    pub restart_wcss: Vec<f64>,
    pub best_restart: usize,
    pub config: KMeansConfig,
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Clusters z-scored density profiles and names groups A, B, ... by
/// descending floating plus working centroid.
pub fn kmeans_typology(profiles: &[ClusterProfile], config: &KMeansConfig) -> Result<Typology> {
    let n = profiles.len();
    if config.k == 0 || config.k > 26 {
        return Err(Error::param("k", config.k, "[1, 26]"));
    }
    if config.n_restarts == 0 {
        return Err(Error::param("n_restarts", config.n_restarts, "[1, inf)"));
    }
    if n < config.k {
        return Err(Error::invalid(format!("{n} profiles for k = {}", config.k)));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in profiles {
        if !seen.insert(p.cluster_id) {
            return Err(Error::invalid(format!("duplicate profile for cluster {}", p.cluster_id)));
        }
        if p.features().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("cluster {} has a negative or non-finite density", p.cluster_id)));
        }
    }
    let raw = DMatrix::from_fn(n, 3, |i, d| profiles[i].features()[d]);
    let mut z = raw.clone();
    for d in 0..3 {
        let col = raw.column(d);
        let mean = col.mean();
        let sd = if n > 1 { col.variance() * n as f64 / (n - 1) as f64 } else { 0.0 }.sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        for i in 0..n {
            z[(i, d)] = (raw[(i, d)] - mean) / scale;
        }
    }

    let runs: Vec<Result<KMeansRun>> = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            kmeans(&z, config.k, config.max_iter, &mut rng)
        })
        .collect();
    let runs: Vec<KMeansRun> = runs.into_iter().collect::<Result<_>>()?;
    let restart_wcss: Vec<f64> = runs.iter().map(|r| r.wcss).collect();
    let best_restart = (0..runs.len())
        .fold(0, |b, r| if restart_wcss[r] < restart_wcss[b] { r } else { b });
    let best = &runs[best_restart];

    let mut order: Vec<usize> = (0..config.k).collect();
    let key = |j: usize| best.centroids[(j, 0)] + best.centroids[(j, 1)];
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut rank = vec![0; config.k];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos;
    }
    let labels: BTreeMap<usize, char> = profiles
        .iter()
        .zip(&best.assignment)
        .map(|(p, &a)| (p.cluster_id, letter(rank[a])))
        .collect();
    let centroids = order
        .iter()
        .enumerate()
        .map(|(pos, &j)| {
            let members: Vec<usize> = (0..n).filter(|&i| best.assignment[i] == j).collect();
            let mut raw_c = [0.0; 3];
            for &i in &members {
                for (d, v) in raw_c.iter_mut().enumerate() {
                    *v += raw[(i, d)];
                }
            }
            for v in &mut raw_c {
                *v /= members.len().max(1) as f64;
            }
            TypeCentroid {
                label: letter(pos),
                n_members: members.len(),
                raw: raw_c,
                standardized: [best.centroids[(j, 0)], best.centroids[(j, 1)], best.centroids[(j, 2)]],
            }
        })
        .collect();
    Ok(Typology {
        labels,
        centroids,
        wcss: best.wcss,
        restart_wcss,
        best_restart,
        config: *config,
    })
}

impl Typology {
    pub fn write_csv(&self, labels_path: &Path, centroids_path: &Path) -> Result<()> {
        let mut w = TableWriter::create(labels_path, &["cluster_id", "type"])?;
        for (c, t) in &self.labels {
            w.row([c.to_string(), t.to_string()])?;
        }
        w.finish()?;
        let mut w = TableWriter::create(
            centroids_path,
            &["type", "n_members", "floating_density", "working_density", "residential_density"],
        )?;
        for c in &self.centroids {
            w.row([
                c.label.to_string(),
                c.n_members.to_string(),
                c.raw[0].to_string(),
                c.raw[1].to_string(),
                c.raw[2].to_string(),
            ])?;
        }
        w.finish()
    }

    pub fn read_labels(path: &Path) -> Result<BTreeMap<usize, char>> {
        let table = Table::read(path, &["cluster_id", "type"])?;
        let mut out = BTreeMap::new();
        for row in table.rows() {
            let t = row.str("type")?;
            let mut chars = t.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(row.error("type", format!("expected one letter, got `{t}`")));
            };
            out.insert(row.parse("cluster_id")?, c);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: usize, f: f64, w: f64, r: f64) -> ClusterProfile {
        ClusterProfile {
            cluster_id: id,
            floating_density: f,
            working_density: w,
            residential_density: r,
        }
    }

    #[test]
    fn one_cluster_centroid_is_mean() {
        let ps = vec![profile(0, 1.0, 2.0, 3.0), profile(1, 3.0, 4.0, 5.0), profile(2, 5.0, 0.0, 1.0)];
        let t = kmeans_typology(&ps, &KMeansConfig { k: 1, ..KMeansConfig::default() }).unwrap();
        assert!(t.labels.values().all(|c| *c == 'A'));
        assert_eq!(t.centroids[0].raw, [3.0, 2.0, 3.0]);
        assert!(t.centroids[0].standardized.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn too_few_points() {
        let ps = vec![profile(0, 1.0, 2.0, 3.0)];
        assert!(matches!(kmeans_typology(&ps, &KMeansConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn duplicates_share_a_cluster_and_labels_follow_density() {
        let mut ps = Vec::new();
        let bases = [(100.0, 100.0, 1.0), (60.0, 50.0, 20.0), (10.0, 10.0, 90.0)];
        for (b, (f, w, r)) in bases.iter().enumerate() {
            for k in 0..4 {
                let e = k as f64 * 0.5;
                ps.push(profile(b * 10 + k, f + e, w - e, r + e));
            }
        }
        ps.push(profile(99, 10.0, 10.0, 90.0));
        let t = kmeans_typology(&ps, &KMeansConfig { k: 3, ..KMeansConfig::default() }).unwrap();
        assert_eq!(t.labels[&99], t.labels[&20]);
        assert_eq!(t.labels[&0], 'A');
        assert_eq!(t.labels[&10], 'B');
        assert_eq!(t.labels[&20], 'C');
    }

    #[test]
    fn objective_never_increases() {
        let x = DMatrix::from_fn(60, 3, |i, d| ((i * (d + 3)) as f64 * 0.77).sin() * (1 + i % 4) as f64);
        for s in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let run = kmeans(&x, 4, 100, &mut rng).unwrap();
            for w in run.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert!(run.wcss <= *run.history.last().unwrap() + 1e-12);
        }
    }

    #[test]
    fn best_restart_is_minimum_and_deterministic() {
        let ps: Vec<ClusterProfile> = (0..40)
            .map(|i| profile(i, (i * 7 % 13) as f64, (i * 5 % 11) as f64, (i * 3 % 17) as f64))
            .collect();
        let cfg = KMeansConfig::default();
        let a = kmeans_typology(&ps, &cfg).unwrap();
        let b = kmeans_typology(&ps, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.restart_wcss.iter().all(|w| *w >= a.wcss));
        assert_eq!(a.centroids.iter().map(|c| c.n_members).sum::<usize>(), 40);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ps = vec![profile(3, 1.5, 2.0, 0.0), profile(7, 0.0, 1e6, 3.25)];
        let p = dir.path().join("p.csv");
        write_profiles(&p, &ps).unwrap();
        assert_eq!(read_profiles(&p).unwrap(), ps);
        let t = kmeans_typology(&ps, &KMeansConfig { k: 2, ..KMeansConfig::default() }).unwrap();
        let (a, b) = (dir.path().join("t.csv"), dir.path().join("c.csv"));
        t.write_csv(&a, &b).unwrap();
        assert_eq!(Typology::read_labels(&a).unwrap(), t.labels);
    }
}
