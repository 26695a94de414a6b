//! File formats, corpus generation, checkpoints and the `rigforge`
//! command line on top of [`rigforge_core`].

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod fsio;
pub mod obj;
pub mod pipeline;
pub mod pts;
pub mod report;
pub mod rigfile;
pub mod skinfile;
pub mod tokfile;

pub use error::{Error, Result};
pub use rigfile::Rig;
