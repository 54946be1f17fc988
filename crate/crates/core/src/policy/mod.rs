//! Local control: the geometry-fusion adapter and the mode-switching
//! scored-candidate controller it conditions.

pub mod adapter;
pub mod control;

pub use adapter::{
    decode_weights, encode_weights, geometry_fuse, goal_alignment, AdapterParams,
    DEFAULT_HIDDEN_DIM, DEFAULT_OUTPUT_DIM, DEFAULT_POOL_FACTOR,
};
pub use control::{
    segment_collides, ActionChunk, ActionStep, AlignmentMode, ControlParams, LocalPolicy,
    PolicyState, MAX_HEADING_DELTA, MAX_STEP_LENGTH,
};
