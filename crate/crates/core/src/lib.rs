//! Sparse OFDMA for asynchronous massive access.
//!
//! Devices hash onto a few subcarriers of a shared OFDM band and send an
//! identity/message subframe, a false-alarm-control subframe and a chip
//! sequence used for continuous delay estimation. The access point peels
//! singleton subcarriers, estimates each decoded device's delay and
//! amplitude, and cancels its contribution until no singleton remains.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

pub mod channel;
pub mod codebook;
pub mod delay;
pub mod detector;
pub mod error;
pub mod params;
pub mod scalar;
pub mod sic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SystemParams64 = params::SystemParams<f64>;
