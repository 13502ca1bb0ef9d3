pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod real;
pub mod tensor;

pub use checkpoint::{Checkpoint, TrainingInfo};
pub use conv::{ConvSpec, PadMode};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Mode, Var};
pub use model::{cryonet_forward, cse, encoder_forward, init_params, nested_decoder_forward, scse, sse, CryoNet, ModelConfig, ScseMode};
pub use params::{ParamEntry, ParamStore, StatUpdate};
pub use real::Real;
pub use tensor::{softmax_channels, Tensor};
