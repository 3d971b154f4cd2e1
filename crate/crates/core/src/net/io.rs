//! Binary parameter file, little-endian:
//!
//! ```text
//! magic[8] version:u32 z:u32 embed_dim:u32
//! 4 x (count:u32, widths:u32 * count)   fg, head, env, fusion hidden widths
//! f64 * num_params                       per layer: weights row-major, bias
//! ```

use std::fs;
use std::path::Path;

use super::{NetConfig, NetworkParams};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: [u8; 8] = *b"SEGTRKNT";
pub const PARAM_VERSION: u32 = 1;

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(&PARAM_MAGIC);
    for v in [PARAM_VERSION, c.z as u32, c.embed_dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for group in [&c.fg_hidden, &c.head_hidden, &c.env_hidden, &c.fusion_hidden] {
        out.extend_from_slice(&(group.len() as u32).to_le_bytes());
        for &w in group.iter() {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err("truncated".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path, expected: Option<&NetConfig>) -> Result<NetworkParams> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(corrupt)? != PARAM_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u32().map_err(corrupt)?;
    if version != PARAM_VERSION {
        return Err(Error::VersionMismatch(format!(
            "file version {version}, supported {PARAM_VERSION}"
        )));
    }
    let z = r.u32().map_err(corrupt)? as usize;
    let embed_dim = r.u32().map_err(corrupt)? as usize;
    let mut groups = Vec::with_capacity(4);
    for _ in 0..4 {
        let n = r.u32().map_err(corrupt)? as usize;
        if n > 64 {
            return Err(corrupt(format!("implausible layer count {n}")));
        }
        let g = (0..n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(corrupt)?;
        groups.push(g);
    }
    let config = NetConfig {
        z,
        fusion_hidden: groups.pop().unwrap(),
        env_hidden: groups.pop().unwrap(),
        head_hidden: groups.pop().unwrap(),
        fg_hidden: groups.pop().unwrap(),
        embed_dim,
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;
    if let Some(exp) = expected {
        if exp != &config {
            return Err(Error::VersionMismatch(format!(
                "file has z={} widths {:?}/{:?}/{:?}/{:?}->{}, expected z={}",
                config.z,
                config.fg_hidden,
                config.head_hidden,
                config.env_hidden,
                config.fusion_hidden,
                config.embed_dim,
                exp.z
            )));
        }
    }
    let mut params = NetworkParams::zeros(&config);
    let need = params.num_params() * 8;
    if bytes.len() - r.pos != need {
        return Err(corrupt(format!(
            "{} payload bytes, expected {need}",
            bytes.len() - r.pos
        )));
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(r.take(8).map_err(corrupt)?.try_into().unwrap());
        }
    }
    if !params.is_finite() {
        return Err(corrupt("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

/// Loads a parameter file; with `expected`, a file whose class count or layer
/// widths differ is rejected with `VersionMismatch`.
pub fn load_params(path: &Path, expected: Option<&NetConfig>) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path, expected)
}
