pub mod compare;
pub mod evaluate;
pub mod export;
pub mod gen;
pub mod gradcheck;
pub mod train;

use std::path::{Path, PathBuf};

use precipnet::Checkpoint;

use crate::failure::{Context, Failure};

/// A training output directory holds the selected model under `checkpoint/`;
/// a checkpoint directory itself is accepted too.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let dir: PathBuf = if path.join("checkpoint.json").is_file() {
        path.to_path_buf()
    } else {
        path.join("checkpoint")
    };
    Checkpoint::load(&dir).with(format!("cannot load checkpoint from {}", path.display()))
}
