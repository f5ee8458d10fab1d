//! On-disk formats: the line-delimited dataset file, the binary
//! parameter checkpoint, the JSONL training trace, and the evaluation
//! record each sweep cell leaves behind.

pub mod checkpoint;
pub mod dataset;
pub mod trace;
