//! File formats, report artifacts, and the command-line front end for
//! `utmsim-core`: a JSON scenario schema with path-qualified validation,
//! on-disk run and sweep layouts, and the `utmsim` binary.

pub mod cli;
pub mod reportio;
pub mod schema;
