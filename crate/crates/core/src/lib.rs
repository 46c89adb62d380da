//! GPS spoofing detection for fleet vehicles against a preprocessed road map.
//!
//! The backend keeps each vehicle's last validated fix and checks every new
//! report against the road graph: the distance travelled since the previous
//! fix must not exceed what the involved roads' speed limits allow. A flagged
//! vehicle has to sign its next packets with HMAC-SHA-512.
//!
//! ```
//! use std::sync::Arc;
//! use spoofguard::{load_roadmap, Detector, GeoPoint, KeyTable, LocationPacket};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let graph = Arc::new(load_roadmap(concat!(env!("CARGO_MANIFEST_DIR"), "/maps/grid5x5.json"))?);
//! let keys = Arc::new(KeyTable::generate([42], 1));
//! let detector = Detector::new(graph, keys, 10);
//! let first = detector.process_packet(&LocationPacket::new(42, GeoPoint::new(1.3, 103.8005), 90.0, 0))?;
//! assert!(first.seeded);
//! let jump = detector.process_packet(&LocationPacket::new(42, GeoPoint::new(1.3, 103.8015), 90.0, 1000))?;
//! assert!(jump.flagged && detector.auth_remaining(42) == 10);
//! # Ok(())
//! # }
//! ```

pub mod attacker;
pub mod cli;
pub mod detector;
pub mod geo;
pub mod maps;
pub mod packets;
pub mod roadmap;
pub mod simulator;

pub use detector::{CheckCase, DetectionOutcome, Detector, FlagReason, Verdict};
pub use geo::GeoPoint;
pub use packets::{KeyTable, LocationPacket, VehicleId, VehicleKey};
pub use roadmap::{load_roadmap, RoadGraph, RoadmapDoc};
