//! Orthonormal Weyl-Heisenberg sets for OFDM.
//!
//! The crate parameterizes every orthonormal OFDM modulating waveform through
//! the paraunitary polyphase blocks of the multiplexer, designs waveforms by
//! unconstrained optimization over that parameterization, builds biorthogonal
//! demultiplexing partners, and measures robustness in a simulated link.

pub mod error;
pub mod grid;
pub mod channel;
pub mod design;
pub mod laurent;
pub mod paraunitary;
pub mod transmux;
pub mod waveform;
pub mod weyl_heisenberg;

pub use error::{Error, Result};
pub use grid::{grid_params, index_maps, GridParams};
pub use laurent::{paraunitarity_defect, LaurentPoly, PolyMatrix};
pub use waveform::Waveform;
