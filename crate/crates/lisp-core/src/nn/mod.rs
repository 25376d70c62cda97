//! Function approximators: MLPs, a shared reverse-mode gradient tape, Adam,
//! squashed-Gaussian heads, and checkpoint serialization.

pub mod adam;
pub mod checkpoint;
pub mod head;
pub mod mlp;
pub mod policy;
pub mod tape;

pub use adam::Adam;
pub use head::{BatchSample, GaussianHead, HeadBatch, LogStdBounds, SQUASH_LIMIT};
pub use mlp::{Activation, Mlp};
pub use policy::{PolicyNet, PolicyTapeOut};
pub use tape::{NonFinite, Tape, Var};
