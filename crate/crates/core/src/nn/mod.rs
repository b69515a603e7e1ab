//! Encoder-decoder convolutional network with hand-written backpropagation,
//! RMSprop updates and activation taps.

mod io;
pub mod layers;
mod network;
mod optim;
mod tensor;
mod train;

pub use io::{read_weights, write_weights, WeightEntry, WeightManifest};
pub use network::{
    backward, build_network, dropout_mask, forward, infer, BlockGrad, BlockSpec, Cache, ForwardOutput, Gradients,
    LayerBlock, LayoutEntry, Mode, NetworkConfig, NetworkParameters, CONVS_PER_LEVEL,
};
pub use optim::{rmsprop_step, RmsState, TrainConfig};
pub use tensor::{mse_loss, Tensor4};
pub use train::{correct, read_loss_history, train, train_with, write_loss_history, Dataset, TrainOutcome};
