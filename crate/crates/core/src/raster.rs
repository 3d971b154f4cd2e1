//! RGB images (binary PPM) and 8-bit class maps (headerless raw bytes).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ppm(&bytes).map_err(|reason| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates header and pixel data
        pos += 1;
        if tokens[0] != "P6" {
            return Err(format!("unsupported magic {}", tokens[0]));
        }
        let parse = |s: &str| s.parse::<u32>().map_err(|e| format!("bad header field '{s}': {e}"));
        let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        let need = w as usize * h as usize * 3;
        if bytes.len() < pos || bytes.len() - pos != need {
            return Err(format!("expected {need} pixel bytes"));
        }
        Ok(RgbImage {
            width: w,
            height: h,
            data: bytes[pos..].to_vec(),
        })
    }
}

/// Per-pixel semantic class ids, row-major, background = 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub width: u32,
    pub height: u32,
    data: Vec<u8>,
}

impl ClassMap {
    pub fn filled(width: u32, height: u32, class: u8) -> Self {
        ClassMap {
            width,
            height,
            data: vec![class; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, class: u8) {
        self.data[y as usize * self.width as usize + x as usize] = class;
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.data).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path, width: u32, height: u32) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        if data.len() != width as usize * height as usize {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                reason: format!("{} bytes, expected {}x{}", data.len(), width, height),
            });
        }
        Ok(ClassMap { width, height, data })
    }
}

/// One video frame: color image plus class map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub image: RgbImage,
    pub classes: ClassMap,
}
