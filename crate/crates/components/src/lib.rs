//! Reusable component library: layers and networks, dueling heads,
//! epsilon-greedy exploration, preprocessors, ring and prioritized replay
//! memories with a segment-tree subcomponent, TD losses, optimizers, and
//! target-network synchronization. Every component builds standalone from
//! declared input spaces under either backend.

pub mod cases;
pub mod dueling;
pub mod exploration;
pub mod layers;
pub mod loss;
pub mod memory;
pub mod optimizer;
pub mod policy;
pub mod preprocess;
pub mod segtree;
pub mod sync;

pub use cases::{compare_modes, run_case, standard_cases, ComponentCase};
pub use dueling::dueling_head;
pub use exploration::epsilon_greedy;
pub use layers::{dense_layer, network, Activation, LayerSpec};
pub use loss::{dqn_loss, DqnLossConfig};
pub use memory::{prioritized_replay, ring_buffer, PrioritizedReplayConfig};
pub use optimizer::{optimizer, OptimizerConfig, OptimizerKind};
pub use policy::policy;
pub use preprocess::{preprocessor_stack, PreprocessorSpec};
pub use segtree::{next_pow2, segment_tree};
pub use sync::target_sync;
