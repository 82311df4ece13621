//! File formats, remote backends, pipeline orchestration, and the command
//! line for the `augcap` dataset tooling.
//!
//! The deterministic building blocks (policies, rewrite rules, embedding and
//! thresholding, sampling, target composition, metrics, and the reference
//! n-gram model) live in `augcap-core`; this crate adds everything that
//! touches the outside world: JSONL and COCO files, HTTP clients for
//! chat-completion and embedding endpoints, parallel builds, and the CLI.

pub mod cli;
pub mod io;
pub mod pipeline;
pub mod remote;
