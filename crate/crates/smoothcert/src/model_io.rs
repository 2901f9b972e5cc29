//! Model files: the `SMCERT01` encoding of [`Mlp`] on disk.

use crate::error::{AppError, Result};
use smoothcert_core::Mlp;
use std::fs;
use std::path::Path;

pub fn save_model(path: &Path, net: &Mlp) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, net.to_bytes()).map_err(|e| AppError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Mlp> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Mlp::from_bytes(&bytes).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))
}
