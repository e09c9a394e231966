//! Generator and discriminator architectures, forward passes and checkpoints.

pub mod architecture;
pub mod checkpoint;
pub mod forward;
pub mod variant;

pub use architecture::{
    build_discriminator, build_generator, discriminator_output_extent, receptive_field, LayerKind,
    LayerSpec, NetworkRole, NetworkSpec, NetworkState, DEFAULT_BASE_CHANNELS, GENERATOR_DEPTH,
};
pub use checkpoint::{checkpoint_file_name, parse_checkpoint_file_name, Checkpoint};
pub use forward::{
    discriminator_forward, discriminator_forward_graph, generate, generate_ablated,
    generator_forward, generator_forward_graph, trace_layers, BoundParams, ForwardMode,
};
pub use variant::{Variant, VariantConfig};
