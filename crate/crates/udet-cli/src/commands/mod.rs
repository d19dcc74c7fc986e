pub mod eval;
pub mod gradcheck;
pub mod params;
pub mod predict;
pub mod synth;
pub mod train;

use std::path::Path;

use crate::CliError;

pub(crate) fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Run(udet_core::UdetError::Io(e)))
}
