//! Cluster typology, origin-destination flow networks and distance-band
//! amenity rankings.

pub mod flows;
pub mod kmeans;
pub mod rank;

pub use flows::{build_flow_network, FlowNetwork};
pub use kmeans::{kmeans, kmeans_typology, read_profiles, write_profiles, ClusterProfile, KMeansConfig, KMeansRun, Typology};
pub use rank::{distance_rank, distance_rank_from_counts, DistanceRank};
