//! Binary parameter files.
//!
//! Layout: the 8-byte magic `GDPARAM1`, then `num_features`, `hidden_dim`
//! and `num_classes` as little-endian `u64`, then the first-layer and
//! second-layer weights as row-major little-endian `f64`.

use std::fs;
use std::path::Path;

use graphdefense_core::{GcnParams, Matrix};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;

pub const MAGIC: &[u8; 8] = b"GDPARAM1";
const HEADER_LEN: usize = 8 + 3 * 8;

pub fn encode_params(params: &GcnParams) -> Vec<u8> {
    let (f, h, c) = (
        params.num_features(),
        params.hidden_dim(),
        params.num_classes(),
    );
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (f * h + h * c));
    out.extend_from_slice(MAGIC);
    for d in [f, h, c] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in params.w1.as_slice().iter().chain(params.w2.as_slice()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a parameter file; `Err` carries a description of the defect.
pub fn decode_params(bytes: &[u8]) -> std::result::Result<GcnParams, String> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err("not a parameter file".into());
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    let dims = [dim(0), dim(1), dim(2)];
    let body = bytes.len() - HEADER_LEN;
    dims[0]
        .checked_mul(dims[1])
        .and_then(|a| dims[1].checked_mul(dims[2]).and_then(|b| a.checked_add(b)))
        .filter(|&n| n.checked_mul(8) == Some(body as u64))
        .ok_or_else(|| format!("header dims {dims:?} do not match a body of {body} bytes"))?;
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let (f, h, c) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let w1 =
        Matrix::from_vec(f, h, floats.by_ref().take(f * h).collect()).map_err(|e| e.to_string())?;
    let w2 = Matrix::from_vec(h, c, floats.collect()).map_err(|e| e.to_string())?;
    GcnParams::new(w1, w2).map_err(|e| e.to_string())
}

pub fn save_params(params: &GcnParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_params(params))
}

pub fn load_params(path: &Path) -> Result<GcnParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|m| Error::format(path, m))
}
