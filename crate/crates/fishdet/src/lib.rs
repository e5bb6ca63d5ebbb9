//! File formats and the command-line front end of the `fishdet-core`
//! detector: VOC annotations, detection CSVs, split manifests, PNG images,
//! checkpoints, report rendering and the subcommand runners.

use std::path::{Path, PathBuf};

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod detections;
pub mod image_io;
pub mod layout;
pub mod manifest;
pub mod report;
pub mod voc;

pub use fishdet_core as core;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Voc(String),
    #[error("{}:{line}: {message}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("png: {0}")]
    Png(String),
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Core(#[from] fishdet_core::Error),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::Csv { .. } | Error::InFile { .. }) => e,
            other => Error::InFile {
                path: path.to_path_buf(),
                source: Box::new(other),
            },
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
