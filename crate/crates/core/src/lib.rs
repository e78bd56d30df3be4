//! User selection for downlink mmWave massive MU-MIMO with hybrid precoding.
//!
//! The crate covers the whole pipeline: geometric Saleh-Valenzuela channel
//! generation for a UPA transmitter, a two-stage hybrid precoder (analog
//! phase extraction followed by baseband zero-forcing), SINR and sum-rate
//! evaluation, the classical selection baselines (exhaustive search, greedy
//! augmentation, binary PSO), dataset generation labeled by exhaustive
//! search, and a small from-scratch CNN that learns to pick the
//! rate-maximizing user subset directly from the channel matrix.

pub mod channel;
pub mod cnn;
pub mod dataset;
pub mod experiment;
pub mod precoding;
pub mod rate;
pub mod rng;
pub mod selection;

pub use channel::{ArrayGeometry, ChannelConfig, ChannelMatrix};
pub use precoding::{PrecoderPair, SelectedChannel};
pub use rate::RateReport;
pub use selection::{ClassLabel, UserSubset};
