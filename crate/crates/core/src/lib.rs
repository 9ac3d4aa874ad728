pub mod cfpca;
pub mod clustering;
pub mod compdata;
pub mod error;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod smoothing;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
