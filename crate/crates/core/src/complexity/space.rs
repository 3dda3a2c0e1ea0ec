//! Consumption-space exports: the full proximity edge list, a maximum
//! spanning forest plus strong-edge backbone, and top/bottom pair tables.

use std::cmp::Ordering;
use std::path::Path;

use serde::Serialize;

use super::ProximityMatrix;
use crate::error::{Error, Result};
use crate::gml;
use crate::table::{Table, TableWriter};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityEdge {
    pub a: String,
    pub b: String,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStat {
    pub amenity: String,
    pub large_category: String,
    pub total_count: u64,
}

fn by_phi_desc(x: &ProximityEdge, y: &ProximityEdge) -> Ordering {
    y.phi
        .total_cmp(&x.phi)
        .then_with(|| x.a.cmp(&y.a))
        .then_with(|| x.b.cmp(&y.b))
}

/// Every unordered amenity pair, sorted by phi descending then labels.
pub fn edge_list(prox: &ProximityMatrix) -> Vec<ProximityEdge> {
    let m = prox.len();
    let mut edges = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for p in 0..m {
        for q in p + 1..m {
            let (a, b) = if prox.labels[p] <= prox.labels[q] {
                (&prox.labels[p], &prox.labels[q])
            } else {
                (&prox.labels[q], &prox.labels[p])
            };
            edges.push(ProximityEdge {
                a: a.clone(),
                b: b.clone(),
                phi: prox.phi[(p, q)],
            });
        }
    }
    edges.sort_by(by_phi_desc);
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneEdge {
    pub edge: ProximityEdge,
    pub in_spanning_tree: bool,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Maximum spanning forest over positive-weight edges, plus every edge with
/// `phi >= threshold`. Zero-weight pairs never appear.
pub fn backbone(prox: &ProximityMatrix, threshold: f64) -> Vec<BackboneEdge> {
    let labels = &prox.labels;
    let index = |l: &String| labels.iter().position(|x| x == l).unwrap();
    let mut ds = DisjointSet {
        parent: (0..labels.len()).collect(),
    };
    let mut out = Vec::new();
    for e in edge_list(prox) {
        if e.phi <= 0.0 {
            continue;
        }
        let (ra, rb) = (ds.find(index(&e.a)), ds.find(index(&e.b)));
        let in_tree = ra != rb;
        if in_tree {
            ds.parent[ra] = rb;
        }
        if in_tree || e.phi >= threshold {
            out.push(BackboneEdge {
                edge: e,
                in_spanning_tree: in_tree,
            });
        }
    }
    out
}

/// Top-k pairs by phi (descending) and bottom-k (ascending).
pub fn pair_table(prox: &ProximityMatrix, k: usize) -> (Vec<ProximityEdge>, Vec<ProximityEdge>) {
    let edges = edge_list(prox);
    let top: Vec<ProximityEdge> = edges.iter().take(k).cloned().collect();
    let mut ascending = edges;
    ascending.sort_by(|x, y| {
        x.phi
            .total_cmp(&y.phi)
            .then_with(|| x.a.cmp(&y.a))
            .then_with(|| x.b.cmp(&y.b))
    });
    ascending.truncate(k);
    (top, ascending)
}

pub fn write_edge_list(path: &Path, edges: &[ProximityEdge]) -> Result<()> {
    let mut w = TableWriter::create(path, &["amenity_p", "amenity_p_prime", "phi"])?;
    for e in edges {
        w.row([e.a.clone(), e.b.clone(), e.phi.to_string()])?;
    }
    w.finish()
}

/// Reads an edge list back into a proximity matrix with unit diagonal.
pub fn read_edge_list(path: &Path) -> Result<ProximityMatrix> {
    let table = Table::read(path, &["amenity_p", "amenity_p_prime", "phi"])?;
    let mut triples = Vec::with_capacity(table.len());
    let mut labels = std::collections::BTreeSet::new();
    for row in table.rows() {
        let a = row.str("amenity_p")?.to_string();
        let b = row.str("amenity_p_prime")?.to_string();
        let phi = row.float("phi")?;
        if !(0.0..=1.0).contains(&phi) {
            return Err(row.error("phi", format!("{phi} outside [0, 1]")));
        }
        labels.insert(a.clone());
        labels.insert(b.clone());
        triples.push((a, b, phi));
    }
    let labels: Vec<String> = labels.into_iter().collect();
    let m = labels.len();
    if m < 2 {
        return Err(Error::invalid(format!("{}: fewer than 2 amenities", path.display())));
    }
    let mut phi = nalgebra::DMatrix::identity(m, m);
    for (a, b, v) in triples {
        let p = labels.binary_search(&a).unwrap();
        let q = labels.binary_search(&b).unwrap();
        phi[(p, q)] = v;
        phi[(q, p)] = v;
    }
    Ok(ProximityMatrix { labels, phi })
}

pub fn write_pair_table(path: &Path, top: &[ProximityEdge], bottom: &[ProximityEdge]) -> Result<()> {
    let mut w = TableWriter::create(path, &["table", "rank", "amenity_p", "amenity_p_prime", "phi"])?;
    for (name, list) in [("top", top), ("bottom", bottom)] {
        for (r, e) in list.iter().enumerate() {
            w.row([name.to_string(), (r + 1).to_string(), e.a.clone(), e.b.clone(), e.phi.to_string()])?;
        }
    }
    w.finish()
}

fn node_block(prox: &ProximityMatrix, stats: &[NodeStat]) -> Vec<(usize, Vec<(String, gml::Value)>)> {
    prox.labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let stat = stats.iter().find(|s| &s.amenity == label);
            (
                i,
                vec![
                    ("label".to_string(), label.as_str().into()),
                    (
                        "large_category".to_string(),
                        stat.map_or("NA".to_string(), |s| s.large_category.clone()).into(),
                    ),
                    ("total_count".to_string(), stat.map_or(0u64, |s| s.total_count).into()),
                ],
            )
        })
        .collect()
}

/// GML for the backbone (or the full positive edge list when `backbone_only` is false).
pub fn consumption_space_gml(
    prox: &ProximityMatrix,
    stats: &[NodeStat],
    threshold: f64,
    backbone_only: bool,
) -> String {
    let idx = |l: &String| prox.labels.iter().position(|x| x == l).unwrap();
    let edges: Vec<(usize, usize, Vec<(String, gml::Value)>)> = if backbone_only {
        backbone(prox, threshold)
            .into_iter()
            .map(|b| {
                (
                    idx(&b.edge.a),
                    idx(&b.edge.b),
                    vec![
                        ("phi".to_string(), b.edge.phi.into()),
                        ("spanning_tree".to_string(), i64::from(b.in_spanning_tree).into()),
                    ],
                )
            })
            .collect()
    } else {
        edge_list(prox)
            .into_iter()
            .filter(|e| e.phi > 0.0)
            .map(|e| (idx(&e.a), idx(&e.b), vec![("phi".to_string(), e.phi.into())]))
            .collect()
    };
    gml::Graph {
        directed: false,
        attrs: vec![("threshold".to_string(), threshold.into())],
        nodes: node_block(prox, stats),
        edges,
    }
    .to_gml()
}
