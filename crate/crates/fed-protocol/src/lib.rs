//! Federation protocol layer: binary FMX1 frames for coefficient exchange,
//! sample-weighted FedAvg aggregation, pluggable byte-stream transports,
//! synchronous round orchestration and the backbone size catalog.

pub mod aggregate;
pub mod catalog;
pub mod error;
pub mod round;
pub mod transport;
pub mod wire;

pub use aggregate::aggregate_fedavg;
pub use catalog::{backbone_stats, standard_catalog, BackboneCatalogEntry, Table1Row, PUBLISHED_ROWS};
pub use error::{FedError, Result};
pub use round::{
    apply_global, deploy, run_round, ClientMetrics, ClientSite, RoundConfig, RoundReport,
    ServerState,
};
pub use transport::{read_frame, stream_pair, write_frame, Stream, TransportKind};
pub use wire::{
    decode_client_update, decode_global, encode_client_update, encode_global, frame_len,
    ClientUpdate, GlobalCoefficients, FRAME_HEADER_LEN, GLOBAL_CLIENT_ID, MSG_CLIENT_UPDATE,
    MSG_GLOBAL, WIRE_MAGIC, WIRE_VERSION,
};
