//! Artifact writers: CSV for density grids, JSON for reports and metadata.
//!
//! Every write goes to a temporary file in the target directory and is then
//! renamed into place, so readers never observe a partial file. Floats are
//! written with 17 significant digits, which round-trips every `f64`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{DensityField, Side};

/// `v` with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SLICE_HEADER: [&str; 9] = ["u1", "u2", "u3", "x1", "x2", "x3", "t", "p", "stderr"];

/// Writes `bytes` to `path` atomically. Refuses to replace an existing file
/// unless `force` is set.
pub fn write_atomic(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::WouldOverwrite(path.display().to_string()));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    if force {
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    } else {
        tmp.persist_noclobber(path).map_err(|e| {
            if e.error.kind() == std::io::ErrorKind::AlreadyExists {
                Error::WouldOverwrite(path.display().to_string())
            } else {
                Error::Io(e.error)
            }
        })?;
    }
    Ok(())
}

/// Slice CSV bytes. With `with_side` an extra `side` column holds
/// `in`, `out` or `na`.
pub fn density_csv(field: &DensityField, with_side: bool) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header: Vec<&str> = SLICE_HEADER.to_vec();
    if with_side {
        header.push("side");
    }
    w.write_record(&header)?;
    for n in &field.nodes {
        let mut rec: Vec<String> = n
            .u
            .iter()
            .chain(field.x.iter())
            .chain([field.t, n.value, n.stderr].iter())
            .map(|v| format_f64(*v))
            .collect();
        if with_side {
            rec.push(n.side.as_str().to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_density_csv(field: &DensityField, path: &Path, with_side: bool, force: bool) -> Result<()> {
    write_atomic(path, &density_csv(field, with_side)?, force)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path, force: bool) -> Result<()> {
    write_atomic(path, &json_bytes(value)?, force)
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::In => "in",
            Side::Out => "out",
            Side::Na => "na",
        }
    }
}
