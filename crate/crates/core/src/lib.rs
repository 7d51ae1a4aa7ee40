//! Text-generation research tooling: a unified text-to-text corpus layer,
//! corpus-scale evaluation metrics, pre-training corruption objectives, a
//! pluggable decoding engine, a seed-repeated search harness, and analysis
//! and report rendering.

pub mod corpus;
pub mod metrics;
pub mod decode;
pub mod objectives;
pub mod parallel;
pub mod analysis;
pub mod harness;
