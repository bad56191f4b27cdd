//! Link-level simulator of a 28 GHz hybrid-beamforming massive MIMO base
//! station: 64 antennas in 16 butler subarrays feeding 16 TRx chains, with
//! per-subarray beam selection and multi-user zero-forcing uplink detection.

pub mod array;
pub mod beam_select;
pub mod channel;
pub mod error;
pub mod export;
pub mod frontend;
pub mod link_budget;
pub mod ofdm;
pub mod rf_chain;
pub mod scenario;

pub use error::{Error, ErrorCategory, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default carrier frequency, Hz.
pub const CARRIER_FREQUENCY_HZ: f64 = 27.95e9;

/// Largest number of simultaneously served UEs.
pub const MAX_UES: usize = 12;
