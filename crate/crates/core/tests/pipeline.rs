//! Synthetic data through the file formats and the analysis chain.

use consumption_space::clusters::{detect_clusters, read_stores};
use consumption_space::complexity::proximity;
use consumption_space::complexity::rca;
use consumption_space::geo::CellRegistry;
use consumption_space::panel::{
    build_panel, compute_omega, group_count_matrix, map_cells_to_clusters, read_panel, read_transactions,
    write_panel, ClusterDistances, GroupScope, PanelConfig, PeriodGroup,
};
use consumption_space::synth::{
    generate, planted_omega, GroundTruthManifest, SynthConfig, CELLS_FILE, MANIFEST_FILE, PROFILES_FILE,
    STORES_FILE, TRANSACTIONS_FILE,
};
use consumption_space::typology::{build_flow_network, read_profiles};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_peaks: 8,
        stores_per_peak: 60,
        n_amenities: 18,
        n_blocks: 3,
        n_residence_cells: 64,
        ..SynthConfig::default()
    }
}

#[test]
fn files_reproduce_the_in_memory_world() {
    let data = generate(&small(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    assert_eq!(read_stores(&dir.path().join(STORES_FILE)).unwrap(), data.world.stores);
    assert_eq!(read_transactions(&dir.path().join(TRANSACTIONS_FILE)).unwrap(), data.records);
    assert_eq!(read_profiles(&dir.path().join(PROFILES_FILE)).unwrap(), data.world.profiles);
    let cells = CellRegistry::read_csv(&dir.path().join(CELLS_FILE)).unwrap();
    assert_eq!(cells.len(), data.world.registry.len());
    assert_eq!(GroundTruthManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap(), data.manifest);
}

#[test]
fn pipeline_recovers_planted_relatedness_and_conserves_flows() {
    let config = small(9);
    let data = generate(&config).unwrap();
    let w = &data.world;
    let (_, partition) = detect_clusters(&w.stores, &config.cluster).unwrap();
    assert_eq!(partition.clusters.len(), config.n_peaks);
    let (mapped, report) = map_cells_to_clusters(&data.records, &partition, &w.stores, &w.registry).unwrap();
    assert_eq!(report.dropped_dest, 0);

    let prox = proximity(&rca(&group_count_matrix(&mapped, &[2018], GroupScope::WithShoppingArea).unwrap())).unwrap();
    let years = config.periods.all_years();
    let omega = compute_omega(&mapped, partition.clusters.len(), &prox, &years).unwrap();
    let planted = planted_omega(&data.manifest, &prox).unwrap();
    assert_eq!(data.manifest.presence_flips, 0);
    for (year, m) in &planted {
        for i in 0..m.nrows() {
            for (p, a) in prox.labels.iter().enumerate() {
                assert_eq!(omega.get(i, a, *year), Some(m[(i, p)]), "cluster {i} amenity {a} year {year}");
            }
        }
    }

    let distances = ClusterDistances::from_partition(&partition);
    let panel = build_panel(&mapped, &omega, &distances, &config.amenities(), &PanelConfig::default()).unwrap();
    let n = config.n_peaks;
    assert_eq!(panel.rows.len(), n * n * config.n_amenities * years.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    write_panel(&path, &panel.rows).unwrap();
    let back = read_panel(&path).unwrap();
    assert_eq!(back.len(), panel.rows.len());
    assert!(back.iter().zip(&panel.rows).all(|(a, b)| a.count == b.count && a.omega == b.omega));

    for g in PeriodGroup::ALL {
        let yrs = config.periods.years(g);
        let net = build_flow_network(&mapped, &distances, &w.planted_types, g, yrs, 1.0).unwrap();
        let local: u64 = panel.rows.iter().filter(|r| yrs.contains(&r.year)).map(|r| r.count).sum();
        assert_eq!(net.total(), local);
    }
}

#[test]
fn noise_seed_redraws_counts_on_a_fixed_world() {
    let base = generate(&small(2)).unwrap();
    let again = generate(&small(2)).unwrap();
    assert_eq!(base.records, again.records);
    let redraw = generate(&SynthConfig {
        noise_seed: Some(77),
        ..small(2)
    })
    .unwrap();
    assert_eq!(redraw.world.stores, base.world.stores);
    assert_eq!(redraw.manifest.presence, base.manifest.presence);
    assert_ne!(redraw.records, base.records);
}
