//! Origin-destination purchase networks.
//!
//! Purchases whose residence and destination clusters lie within
//! `split_km` of each other add to the destination node's size; longer
//! trips add to the directed edge residence -> destination.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gml;
use crate::panel::{ClusterDistances, MappedRecord, PeriodGroup};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowNetwork {
    pub period: PeriodGroup,
    pub years: Vec<u16>,
    /// Local purchases by destination cluster; every cluster is present.
    pub node_sizes: BTreeMap<usize, u64>,
    /// Remote purchases keyed by (residence, destination).
    pub edges: BTreeMap<(usize, usize), u64>,
    pub types: BTreeMap<usize, char>,
    /// Counts of records whose residence lies outside every cluster.
    pub excluded_count: u64,
}

impl FlowNetwork {
    pub fn total(&self) -> u64 {
        self.node_sizes.values().sum::<u64>() + self.edges.values().sum::<u64>()
    }

    pub fn to_gml(&self) -> String {
        let type_of = |c: usize| self.types.get(&c).map_or("NA".to_string(), |t| t.to_string());
        gml::Graph {
            directed: true,
            attrs: vec![("period".to_string(), self.period.name().into())],
            nodes: self
                .node_sizes
                .iter()
                .map(|(&c, &size)| {
                    (
                        c,
                        vec![
                            ("label".to_string(), c.to_string().into()),
                            ("size".to_string(), size.into()),
                            ("type".to_string(), type_of(c).into()),
                        ],
                    )
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(s, t), &w)| {
                    (
                        s,
                        t,
                        vec![("weight".to_string(), w.into()), ("target_type".to_string(), type_of(t).into())],
                    )
                })
                .collect(),
        }
        .to_gml()
    }
}

pub fn build_flow_network(
    records: &[MappedRecord],
    distances: &ClusterDistances,
    types: &BTreeMap<usize, char>,
    period: PeriodGroup,
    years: &[u16],
    split_km: f64,
) -> Result<FlowNetwork> {
    if !(split_km >= 0.0) || !split_km.is_finite() {
        return Err(Error::param("distance_split_km", split_km, "[0, inf)"));
    }
    let n = distances.len();
    let mut node_sizes: BTreeMap<usize, u64> = (0..n).map(|c| (c, 0)).collect();
    let mut edges: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut excluded_count = 0;
    for r in records.iter().filter(|r| years.contains(&r.period.year)) {
        let i = r.dest_cluster;
        let Some(j) = r.res_cluster else {
            excluded_count += r.count;
            continue;
        };
        if i >= n || j >= n {
            return Err(Error::invalid(format!("cluster id outside 0..{n}")));
        }
        if distances.get(i, j) <= split_km {
            *node_sizes.get_mut(&i).unwrap() += r.count;
        } else if r.count > 0 {
            *edges.entry((j, i)).or_insert(0) += r.count;
        }
    }
    Ok(FlowNetwork {
        period,
        years: years.to_vec(),
        node_sizes,
        edges,
        types: types.clone(),
        excluded_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{CellId, GeoPoint, KM_PER_DEGREE};
    use crate::panel::Period;

    fn rec(year: u16, res: Option<usize>, dest: usize, count: u64) -> MappedRecord {
        MappedRecord {
            period: Period { year, month: 6 },
            res_cell: CellId::new("r").unwrap(),
            res_cluster: res,
            dest_cluster: dest,
            amenity: "a".into(),
            age_band: "20s".into(),
            gender: "M".into(),
            count,
        }
    }

    fn line(kms: &[f64]) -> ClusterDistances {
        let pts: Vec<GeoPoint> = kms.iter().map(|k| GeoPoint { lat: 37.5 + k / KM_PER_DEGREE, lon: 127.0 }).collect();
        ClusterDistances::from_centroids(&pts)
    }

    #[test]
    fn remote_counts_sum_into_one_edge() {
        let d = line(&[0.0, 3.0]);
        let recs = vec![rec(2019, Some(1), 0, 3), rec(2019, Some(1), 0, 4)];
        let net = build_flow_network(&recs, &d, &BTreeMap::new(), PeriodGroup::PreCovid, &[2019], 1.0).unwrap();
        assert_eq!(net.edges.len(), 1);
        assert_eq!(net.edges[&(1, 0)], 7);
        assert!(net.node_sizes.values().all(|s| *s == 0));
    }

    #[test]
    fn local_trips_give_edgeless_network() {
        let d = line(&[0.0, 0.5]);
        let recs = vec![rec(2020, Some(0), 0, 5), rec(2021, Some(1), 0, 2), rec(2020, Some(1), 1, 1)];
        let net = build_flow_network(&recs, &d, &BTreeMap::new(), PeriodGroup::Covid, &[2020, 2021], 1.0).unwrap();
        assert!(net.edges.is_empty());
        assert_eq!(net.node_sizes[&0], 7);
        assert_eq!(net.node_sizes[&1], 1);
        assert_eq!(net.total(), 8);
    }

    #[test]
    fn period_filter_and_exclusions() {
        let d = line(&[0.0, 2.0]);
        let recs = vec![rec(2019, Some(0), 1, 5), rec(2023, Some(0), 1, 9), rec(2019, None, 1, 4)];
        let net = build_flow_network(&recs, &d, &BTreeMap::new(), PeriodGroup::PreCovid, &[2019], 1.0).unwrap();
        assert_eq!(net.total(), 5);
        assert_eq!(net.excluded_count, 4);
    }

    #[test]
    fn gml_carries_types() {
        let d = line(&[0.0, 3.0]);
        let types: BTreeMap<usize, char> = [(0, 'A'), (1, 'C')].into_iter().collect();
        let recs = vec![rec(2019, Some(1), 0, 3), rec(2019, Some(1), 1, 2)];
        let net = build_flow_network(&recs, &d, &types, PeriodGroup::PreCovid, &[2019], 1.0).unwrap();
        let text = net.to_gml();
        assert!(text.contains("directed 1"));
        assert!(text.contains("target_type \"A\""));
        assert!(text.contains("size 2"));
        assert!(text.contains("type \"C\""));
    }
}
