//! Road networks, travel-time matrices, property ingestion and the
//! synthetic-city generator.

mod matrix;
mod network;
mod properties;
mod synth;

pub use matrix::{travel_time_matrix, TravelTimeMatrix};
pub(crate) use network::{read_csv_rows, write_csv_rows};
pub use network::{haversine_m, load_stations, snap_to_network, write_stations, Edge, Node, RoadNetwork, Station};
pub use properties::{
    load_properties, IngestConfig, IngestReport, PropType, Property, PropertyTable, RejectRecord,
    FEATURE_NAMES, N_FEATURES, PROP_TYPE_FEATURE,
};
pub use synth::{synth_city, ClusterSpec, FeatureParams, RateModel, SynthCity, SynthParams};
