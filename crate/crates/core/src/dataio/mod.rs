//! File formats, synthetic shapes and dataset directories.

pub mod checkpoint;
pub mod cloud_io;
pub mod dataset;
pub mod off;
pub mod ply;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use cloud_io::{decode_binary, decode_text, encode_binary, encode_text, read_cloud, write_cloud, CloudFormat};
pub use dataset::{Dataset, Split};
pub use off::{import_off_mesh, parse_off, read_off, TriangleMesh};
pub use ply::{encode_ply, write_ply};
pub use synth::{synth_generate, synth_raw, ShapeKind, SynthParams, SynthSpec};
