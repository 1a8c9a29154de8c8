//! Delay-Doppler domain multi-user massive MIMO OTFS downlink.
//!
//! The crate covers the DD-domain path operators and Gram matrices, the
//! DD precoder, the low-complexity per-symbol detector with its SINR and
//! spectral-efficiency analysis, the MMSE-SIC log-det bound, a discrete-time
//! OTFS waveform simulator used as an independent reference, uplink pilot
//! channel estimation, an OFDM-MRT baseline and a seeded Monte-Carlo runner.
//!
//! Indices are zero based throughout: DD element `(k, l)` sits at vector
//! position `k * M + l`.

pub mod chan_est;
pub mod channel;
pub mod dd_operator;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod ofdm_baseline;
pub mod precoder;
pub mod se_analysis;
pub mod waveform_oracle;

mod par;
pub mod seed;

pub use num_complex::Complex64;

pub use channel::{ChannelParams, PathlossMode, Placement, ProfileConfig, SystemConfig};
pub use dd_operator::{DdGrid, GramMatrix, GramMode, MultiUserChannel, SparseDdOperator};
pub use error::{Error, Result};
pub use se_analysis::SeReport;
