//! Network compiler: model description, linear-layer fusion, lowering to
//! slot-level stages, metered execution and operation reports.

mod builtin;
mod execute;
mod fuse;
mod lower;
mod model;
mod report;

pub use builtin::{
    builtin, builtin_json, published, published_total, tally, PublishedRow, BUILTIN_NAMES, LOLA_MNIST_REFERENCE,
    REFERENCE_HS_ROTATIONS, REFERENCE_LOLA_STACKED_ROTATIONS, PUBLISHED_CE, PUBLISHED_CRYPTONETS_HS, PUBLISHED_ME,
};
pub use execute::{decode, execute, execute_random, fused_affine};
pub use fuse::{fuse_linear, unfused_stages, FusedStage, StageKind};
pub use lower::{lower, LowerOptions, LoweredProgram, Placement, Repr, Stage, StageOp};
pub use model::{
    random_input, read_input, KernelPolicy, LayerKind, LayerSpec, LayerWeights, ModelSpec, ModelWeights, TensorShape,
};
pub use report::{write_rows, OpReport, CSV_HEADER};
