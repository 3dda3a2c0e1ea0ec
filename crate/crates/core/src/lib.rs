//! Amenity-cluster detection, consumption-space metrics and fixed-effects
//! panel estimation for card-transaction data.

pub mod clusters;
pub mod complexity;
pub mod error;
pub mod fe;
pub mod geo;
pub mod gml;
pub mod panel;
pub mod synth;
pub mod table;
pub mod typology;

pub use error::{Error, Result};
