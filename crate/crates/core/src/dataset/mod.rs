//! Training-data plumbing: channel encoding, shards, DSC and images.

mod channels;
mod field;
mod generate;
mod image;
mod shard;

pub use channels::{encode_channels, ChannelTensor, CANVAS, R_MIN_SCALE};
pub use field::{binarize, dsc, Field, THRESHOLD};
pub use generate::{generate, GenerationSummary, SampleOutcome};
pub use image::{read_pgm, write_pgm};
pub use shard::{read_shard, Record, SampleMeta, Shard, ShardHeader, ShardWriter, SHARD_VERSION};
