//! Middlebury `.flo` optical-flow files: the magic float 202021.25, width
//! and height as little-endian i32, then row-major interleaved `(u, v)`
//! little-endian f32 values.

use std::fs;
use std::path::Path;

use bsst_core::{Flow, Tensor};

use crate::error::{CliError, Result};

pub const MAGIC: f32 = 202021.25;
const HEADER: usize = 12;

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Flow> {
    let bad = |offset: usize, reason: String| CliError::Flo {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER {
        return Err(bad(
            bytes.len(),
            format!("header needs {HEADER} bytes, file has {}", bytes.len()),
        ));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != MAGIC {
        return Err(bad(0, format!("bad magic {magic}, expected {MAGIC}")));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 {
        return Err(bad(4, format!("width {width} must be positive")));
    }
    if height <= 0 {
        return Err(bad(8, format!("height {height} must be positive")));
    }
    let (w, h) = (width as usize, height as usize);
    let need = HEADER + w * h * 8;
    if bytes.len() < need {
        return Err(bad(
            bytes.len(),
            format!(
                "truncated: {w}x{h} flow needs {need} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > need {
        return Err(bad(need, format!("{} trailing bytes", bytes.len() - need)));
    }
    let mut data = Vec::with_capacity(w * h * 2);
    for i in 0..w * h * 2 {
        let off = HEADER + 4 * i;
        let v = f32::from_le_bytes(word(off));
        if !v.is_finite() {
            return Err(bad(off, format!("non-finite flow value {v}")));
        }
        data.push(v);
    }
    Ok(Flow::new(Tensor::new([h, w, 2], data)?)?)
}

pub fn encode(flow: &Flow) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + flow.as_tensor().len() * 4);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.as_tensor().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read(path: &Path) -> Result<Flow> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(path, &bytes)
}

pub fn write(path: &Path, flow: &Flow) -> Result<()> {
    fs::write(path, encode(flow)).map_err(CliError::io(path))
}
