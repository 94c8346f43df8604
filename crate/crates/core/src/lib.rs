//! Synthetic camera-control datasets, a toy adapter-conditioned transformer
//! stack, drift probes and spectral diagnostics.

pub mod control;
pub mod error;
pub mod forge;
pub mod net;
pub mod probe;
pub mod rng;
pub mod spectra;
pub mod tensor_file;

pub use control::{ControlScalar, KelvinRange, LogRange, PyramidPlan, SampledCondition};
pub use error::{Error, Result};
