//! Desk-side tooling around `nae-core`: WAV and model files, project
//! bundles, the `nae` command-line tool and a local HTTP session service
//! for interactive editing.

pub mod bundle;
pub mod cli;
pub mod container;
mod error;
pub mod render;
pub mod service;
pub mod view;
pub mod wav;

pub use error::{Result, StudioError};
