//! Middlebury `.flo` optical flow files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `"PIEH"` read as a little-endian float.
pub const FLO_TAG: f32 = 202021.25;

/// Dense per-pixel `(u, v)` displacement in pixels per frame, row-major and
/// interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FlowMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 2 * width * height {
            return Err(Error::InvalidArgument(format!(
                "flow of {width}x{height} needs {} values, got {}",
                2 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 2 * width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(&FLO_TAG.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("truncated .flo header".into()));
        }
        let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
        if f32::from_le_bytes(word(0)) != FLO_TAG {
            return Err(Error::Format("bad .flo magic".into()));
        }
        let w = i32::from_le_bytes(word(4));
        let h = i32::from_le_bytes(word(8));
        if w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16 {
            return Err(Error::Format(format!("implausible .flo size {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        let payload = &bytes[12..];
        if payload.len() != 8 * w * h {
            return Err(Error::Format(format!(
                ".flo payload has {} bytes, expected {}",
                payload.len(),
                8 * w * h
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

pub fn read_flo(path: &Path) -> Result<FlowMap> {
    FlowMap::from_bytes(&fs::read(path)?)
}

pub fn write_flo(map: &FlowMap, path: &Path) -> Result<()> {
    fs::write(path, map.to_bytes())?;
    Ok(())
}
