//! Minimal tensor/network core: convolution, max pooling, dense layers,
//! reverse-mode gradients, Adam, weight serialization, and a
//! finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod net;
pub mod reference;
pub mod tensor;

pub use adam::{optimizer_step, OptState};
pub use gradcheck::{check_gradients, GradCheckReport, GradCheckSettings};
pub use io::{load_weights, load_weights_expecting, save_weights};
pub use net::{Activation, Cache, Gradients, LayerParams, LayerSpec, Network};
pub use tensor::Tensor;
