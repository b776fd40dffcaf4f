//! Binary PGM (`P5`) and PPM (`P6`) images with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (grey) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!(
                "bad image geometry {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument("image data length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            "P1" | "P2" | "P3" | "P4" => {
                return Err(Error::Format(format!("unsupported PNM variant {magic}")))
            }
            _ => return Err(Error::Format("not a PNM file".into())),
        };
        let mut number = |what: &str| -> Result<usize> {
            next_token(bytes, &mut pos)?
                .parse()
                .map_err(|_| Error::Format(format!("malformed PNM {what}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Format("empty PNM image".into()));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Format("malformed PNM header".into()));
        }
        pos += 1;
        let need = width * height * channels;
        if bytes.len() - pos != need {
            return Err(Error::Format(format!(
                "PNM raster has {} bytes, expected {need}",
                bytes.len() - pos
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: bytes[pos..].to_vec(),
        })
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && *pos - start < 16 {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PNM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    Image::from_bytes(&fs::read(path)?)
}

pub fn write_pnm(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, image.to_bytes())?;
    Ok(())
}
