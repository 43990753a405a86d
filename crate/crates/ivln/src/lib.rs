//! File formats, the external policy protocol and the `ivln` command line
//! on top of `ivln-core`.

pub mod cli;
pub mod config;
pub mod external;
pub mod formats;
pub mod r2r;
