//! Lengthening dynamics of linear chains of quantum scatterers.
//!
//! Chains are grown one scatterer at a time by concatenating unitary
//! scattering matrices ([`smatrix`]). The single-channel case reduces to a
//! two-dimensional map with closed-form fixed points ([`single_channel`]);
//! for `d` channels the transport class follows from the transfer spectrum
//! ([`multi_channel`]), whose statistics over Haar-random scatterers are
//! estimated in [`haar`] and fitted in [`fit`].

pub mod ensemble;
pub mod error;
pub mod fit;
pub mod haar;
pub mod linalg;
pub mod multi_channel;
pub mod single_channel;
pub mod smatrix;
pub mod stats;

pub use error::{Error, Result};
pub use haar::{HaarSampler, MeasureEstimate, SetId};
pub use multi_channel::{classify, SpectralClassification, TransportClass};
pub use single_channel::{ChainState1D, DisorderModel, SingleChannelParams};
pub use smatrix::{ScatteringMatrix, TransferMatrix, TransportStats};
pub use stats::{Binning, EnsembleStats};
