//! Signal conditioning, spatial-temporal maps, classical rPPG estimators,
//! synthetic recordings and the map losses used to train the network.

pub mod error;
pub mod losses;
pub mod mstmap;
pub mod rppg;
pub mod synth;
pub mod timeseries;

pub use error::{Error, Result};
pub use timeseries::{FreqBand, Spectrum, TimeSeries};
