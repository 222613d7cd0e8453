//! Image I/O, paired-directory datasets and run configuration files.

mod config;
mod dataset;
mod io;

pub use config::RunConfig;
pub use dataset::{pair_directories, ImagePair, LoadedPairs, PairedDataset, Split};
pub use io::{load_gray, quantize, save_gray, save_gray16, IMAGE_EXTENSIONS};
