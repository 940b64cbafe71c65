use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};

/// Write the architecture descriptor line (e.g. `linear dim=10`) followed by
/// the parameters as little-endian f64.
pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut bytes = format!("{}\n", params.arch()).into_bytes();
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format("missing architecture line".into()))?;
    let descriptor =
        std::str::from_utf8(&bytes[..newline]).map_err(|_| format("architecture line is not UTF-8".into()))?;
    let arch: Architecture = descriptor.parse().map_err(|e: Error| format(e.to_string()))?;
    let body = &bytes[newline + 1..];
    if body.len() != 8 * arch.param_count() {
        return Err(format(format!(
            "{arch} needs {} parameter bytes, found {}",
            8 * arch.param_count(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    ModelParams::from_values(arch, values)
}
