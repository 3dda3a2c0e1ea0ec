//! Effective density and peak detection against brute-force scans.

use consumption_space::clusters::{detect_clusters, effective_density, find_peaks, ClusterParams, StorePoint};
use consumption_space::geo::{haversine_km, GeoPoint};
use proptest::prelude::*;

fn stores(points: &[(f64, f64)]) -> Vec<StorePoint> {
    points
        .iter()
        .enumerate()
        .map(|(i, (dlat, dlon))| StorePoint {
            store_id: format!("s{i:04}"),
            location: GeoPoint::new(37.5 + dlat, 127.0 + dlon).unwrap(),
            category_small: "a".into(),
            category_large: "b".into(),
        })
        .collect()
}

fn brute(stores: &[StorePoint], gamma: f64, cutoff: f64) -> Vec<f64> {
    stores
        .iter()
        .map(|a| {
            stores
                .iter()
                .map(|b| haversine_km(a.location, b.location).unwrap())
                .filter(|d| *d <= cutoff)
                .map(|d| (-gamma * d).exp())
                .sum()
        })
        .collect()
}

fn offsets() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.03f64..0.03, -0.03f64..0.03), 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn density_matches_pairwise_sum(pts in offsets(), cutoff in 0.1f64..3.0) {
        let s = stores(&pts);
        let field = effective_density(&s, 7.58, cutoff).unwrap();
        for (got, want) in field.scores.iter().zip(brute(&s, 7.58, cutoff)) {
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
            prop_assert!(*got >= 1.0);
        }
    }

    #[test]
    fn peaks_dominate_their_neighbourhood(pts in offsets()) {
        let s = stores(&pts);
        let field = effective_density(&s, 7.58, 2.0).unwrap();
        for id in find_peaks(&field, &s, 0.2).unwrap() {
            let i = s.iter().position(|x| x.store_id == id).unwrap();
            for (j, other) in s.iter().enumerate() {
                if haversine_km(s[i].location, other.location).unwrap() <= 0.2 {
                    prop_assert!(field.scores[i] >= field.scores[j]);
                }
            }
        }
    }

    #[test]
    fn members_lie_within_half_a_mile_of_their_peak(pts in offsets()) {
        let s = stores(&pts);
        let params = ClusterParams { min_peak_score: 0.0, ..ClusterParams::default() };
        let (_, partition) = detect_clusters(&s, &params).unwrap();
        let loc = |id: &str| s.iter().find(|x| x.store_id == id).unwrap().location;
        let mut seen = 0;
        for c in &partition.clusters {
            for m in &c.members {
                prop_assert!(haversine_km(loc(&c.peak_store), loc(m)).unwrap() <= params.max_assign_km);
            }
            seen += c.members.len();
        }
        prop_assert_eq!(seen + partition.unassigned.len(), s.len());
    }
}
