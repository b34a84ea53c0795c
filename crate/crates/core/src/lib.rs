//! Downlink weighted sum-rate maximization under a total power budget.
//!
//! The crate provides the problem model ([`problem`]), Perron-Frobenius
//! tools ([`pf`]), the block-coordinate-descent solver ([`bcd`]), ground
//! truth oracles ([`oracle`]), seeded instance generators ([`generate`]),
//! the text record format ([`record`]) and the joint beamforming extension
//! ([`beamforming`]).

pub mod bcd;
pub mod beamforming;
pub mod error;
pub mod generate;
pub mod oracle;
pub mod par;
pub mod pf;
pub mod problem;
pub mod record;

pub use error::{Result, WsrmError};
pub use nalgebra::{DMatrix, DVector};
pub use beamforming::{BeamformerPair, BeamformingInstance};
pub use par::Exec;
pub use problem::{DerivedOperators, Label, OracleTag, RatePoint, WsrmInstance};
