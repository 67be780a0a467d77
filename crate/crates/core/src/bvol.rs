//! BVOL1: a plain-text header followed by raw little-endian `f32` voxels.
//!
//! ```text
//! BVOL1
//! dims X Y Z
//! spacing SX SY SZ
//! origin OX OY OZ
//! dtype f32le
//! <4·X·Y·Z bytes, x fastest, z slowest>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{FusionError, Result};
use crate::volume::Volume3D;

pub const MAGIC: &str = "BVOL1";

/// Serializes a volume. Spacing and origin are printed in shortest
/// round-trip form so reading back gives identical values.
pub fn encode(v: &Volume3D) -> Vec<u8> {
    let [x, y, z] = v.dims();
    let [sx, sy, sz] = v.spacing();
    let [ox, oy, oz] = v.origin();
    let header = format!("{MAGIC}\ndims {x} {y} {z}\nspacing {sx:?} {sy:?} {sz:?}\norigin {ox:?} {oy:?} {oz:?}\ndtype f32le\n");
    let mut out = Vec::with_capacity(header.len() + 4 * v.len());
    out.extend_from_slice(header.as_bytes());
    for value in v.data() {
        out.extend_from_slice(&value.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Volume3D> {
    let mut cursor = Cursor { bytes, pos: 0 };

    let (offset, magic) = cursor.line()?;
    if magic != MAGIC {
        return Err(format_error(offset, format!("expected magic `{MAGIC}`, found `{magic}`")));
    }
    let dims = cursor.field("dims", |s| s.parse::<usize>().ok())?;
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(FusionError::DimensionMismatch(format!("dims {dims:?} has a zero extent on axis {axis}")));
    }
    let spacing = cursor.field("spacing", |s| s.parse::<f64>().ok())?;
    let origin = cursor.field("origin", |s| s.parse::<f64>().ok())?;
    let (offset, dtype) = cursor.line()?;
    if dtype != "dtype f32le" {
        return Err(format_error(offset, format!("unsupported dtype line `{dtype}`")));
    }

    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FusionError::DimensionMismatch(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[cursor.pos..];
    if payload.len() != count {
        return Err(format_error(
            cursor.pos,
            format!("payload holds {} bytes, dims {dims:?} require {count}", payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3D::new(dims, spacing, origin, data)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FusionError::io(path, e))?;
    decode(&bytes)
}

pub fn write_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(v)).map_err(|e| FusionError::io(path, e))
}

fn format_error(offset: usize, message: String) -> FusionError {
    FusionError::Format { offset, message }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Next header line without its newline, with its starting offset.
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let len = rest
            .iter()
            .take(256)
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_error(start, "unterminated header line".into()))?;
        let text = std::str::from_utf8(&rest[..len])
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| format_error(start, "header is not ASCII".into()))?;
        self.pos = start + len + 1;
        Ok((start, text))
    }

    /// Parses `name A B C`.
    fn field<T>(&mut self, name: &str, parse: impl Fn(&str) -> Option<T>) -> Result<[T; 3]> {
        let (offset, text) = self.line()?;
        let mut words = text.split(' ');
        if words.next() != Some(name) {
            return Err(format_error(offset, format!("expected `{name}` line, found `{text}`")));
        }
        let values: Vec<T> = words
            .map(&parse)
            .collect::<Option<_>>()
            .ok_or_else(|| format_error(offset, format!("cannot parse `{text}`")))?;
        values
            .try_into()
            .map_err(|_| format_error(offset, format!("`{name}` needs three values, found `{text}`")))
    }
}
