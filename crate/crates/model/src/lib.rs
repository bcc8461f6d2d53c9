//! Toy-scale windowed-attention U-Net for stacked signal maps, with a
//! heart-rate regression head, hand-written backward passes, a named
//! parameter store with freeze masks, and a binary checkpoint format.

pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod head;
pub mod layers;
pub mod net;
pub mod params;
pub mod swin;

pub use error::{ModelError, Result};
pub use net::{ForwardCache, Model, ModelConfig, ModelOutput};
pub use params::{Param, ParamId, ParameterStore};
