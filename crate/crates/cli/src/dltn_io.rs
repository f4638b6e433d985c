//! Tensor file IO: the core's byte format bound to paths, with the path in
//! every error message.

use crate::{failed, CliResult};
use deltaproj_core::fixture;
use deltaproj_core::Tensor;
use std::path::Path;

pub fn read_tensor(path: &Path) -> CliResult<Tensor> {
    let bytes = std::fs::read(path)
        .map_err(|e| failed(format!("cannot read {}: {e}", path.display())))?;
    fixture::decode(&bytes).map_err(|e| failed(format!("{}: {e}", path.display())))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> CliResult<()> {
    std::fs::write(path, fixture::encode(t))
        .map_err(|e| failed(format!("cannot write {}: {e}", path.display())))
}
