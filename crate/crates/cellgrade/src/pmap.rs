//! Multi-channel probability maps and the `PMAP1` on-disk container.
//!
//! A [`PixelMap`] holds one or more named channels of per-pixel probabilities in
//! `[0, 1]`, stored row-major per channel (channel-major overall). The file
//! format is a single JSON header line followed by the raw little-endian `f32`
//! payload, so maps round-trip bit-exactly.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic string identifying the container format and its version.
pub const PMAP_MAGIC: &str = "PMAP1";

/// Payload element type tag; the only one the format defines.
pub const PMAP_DTYPE: &str = "f32le";

/// Names of the probability channels a map can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelName {
    Normal,
    Lymphocyte,
    Malignant,
    Background,
}

impl ChannelName {
    /// All four channels in canonical order.
    pub const ALL: [ChannelName; 4] = [
        ChannelName::Normal,
        ChannelName::Lymphocyte,
        ChannelName::Malignant,
        ChannelName::Background,
    ];

    /// The three nucleus-class channels (everything but `Background`).
    pub const NUCLEUS: [ChannelName; 3] = [
        ChannelName::Normal,
        ChannelName::Lymphocyte,
        ChannelName::Malignant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelName::Normal => "Normal",
            ChannelName::Lymphocyte => "Lymphocyte",
            ChannelName::Malignant => "Malignant",
            ChannelName::Background => "Background",
        }
    }
}

impl fmt::Display for ChannelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelName {
    type Err = PmapError;

    fn from_str(s: &str) -> Result<Self, PmapError> {
        match s {
            "Normal" => Ok(ChannelName::Normal),
            "Lymphocyte" => Ok(ChannelName::Lymphocyte),
            "Malignant" => Ok(ChannelName::Malignant),
            "Background" => Ok(ChannelName::Background),
            other => Err(PmapError::UnknownChannel(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum PmapError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown channel name {0:?}")]
    UnknownChannel(String),
    #[error("duplicate channel {0} in channel list")]
    DuplicateChannel(ChannelName),
    #[error("channel list is empty")]
    EmptyChannels,
    #[error("zero dimension: {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("payload length mismatch: header declares {expected} bytes, found {actual}")]
    PayloadLength { expected: u64, actual: u64 },
    #[error("value {value} outside [0, 1] at channel {channel}, index {index}")]
    ValueOutOfRange {
        channel: ChannelName,
        index: usize,
        value: f32,
    },
    #[error("data length {actual} does not match {channels} channel(s) of {width}x{height}")]
    DataLength {
        width: u32,
        height: u32,
        channels: usize,
        actual: usize,
    },
    #[error("channel {0} not present in map")]
    MissingChannel(ChannelName),
    #[error("dimensions must be even to halve, got {width}x{height}")]
    OddDimension { width: u32, height: u32 },
}

/// JSON header line of the container.
#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    width: u32,
    height: u32,
    channels: Vec<ChannelName>,
    dtype: String,
}

/// An in-memory multi-channel probability map.
///
/// Invariants (enforced at construction and load): width and height are
/// positive, channel names are unique, every value is finite and in `[0, 1]`.
/// Data is stored channel-major; each channel is row-major, `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    width: u32,
    height: u32,
    channels: Vec<ChannelName>,
    data: Vec<f32>,
}

impl PixelMap {
    /// Builds a map from raw channel-major data, validating all invariants.
    pub fn new(
        width: u32,
        height: u32,
        channels: Vec<ChannelName>,
        data: Vec<f32>,
    ) -> Result<Self, PmapError> {
        if width == 0 || height == 0 {
            return Err(PmapError::ZeroDimension { width, height });
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(PmapError::DuplicateChannel(*c));
            }
        }
        let expected = (width as usize) * (height as usize) * channels.len();
        if data.len() != expected {
            return Err(PmapError::DataLength {
                width,
                height,
                channels: channels.len(),
                actual: data.len(),
            });
        }
        let per = (width as usize) * (height as usize);
        for (ci, chunk) in data.chunks_exact(per.max(1)).enumerate() {
            if ci >= channels.len() {
                break;
            }
            for (i, &v) in chunk.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(PmapError::ValueOutOfRange {
                        channel: channels[ci],
                        index: i,
                        value: v,
                    });
                }
            }
        }
        Ok(PixelMap {
            width,
            height,
            channels,
            data,
        })
    }

    /// An all-zero map with the given channels.
    pub fn zeros(width: u32, height: u32, channels: Vec<ChannelName>) -> Result<Self, PmapError> {
        let len = (width as usize) * (height as usize) * channels.len();
        PixelMap::new(width, height, channels, vec![0.0; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Pixels per channel.
    pub fn pixel_count(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    pub fn channels(&self) -> &[ChannelName] {
        &self.channels
    }

    pub fn has_channel(&self, name: ChannelName) -> bool {
        self.channels.contains(&name)
    }

    /// Row-major values of one channel, if present.
    pub fn channel(&self, name: ChannelName) -> Option<&[f32]> {
        let ci = self.channels.iter().position(|c| *c == name)?;
        let per = self.pixel_count();
        Some(&self.data[ci * per..(ci + 1) * per])
    }

    /// Like [`PixelMap::channel`] but with a typed error.
    pub fn channel_or_err(&self, name: ChannelName) -> Result<&[f32], PmapError> {
        self.channel(name).ok_or(PmapError::MissingChannel(name))
    }

    /// One value; panics on out-of-bounds coordinates or a missing channel.
    pub fn get(&self, name: ChannelName, x: u32, y: u32) -> f32 {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        let ch = self.channel(name).expect("channel not present");
        ch[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Reads a map from a `PMAP1` file, validating header, payload length, and
    /// the `[0, 1]` range of every value.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PmapError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(PmapError::MalformedHeader(
                "missing newline after header".to_string(),
            ));
        }
        line.pop();
        let header: Header = serde_json::from_slice(&line)
            .map_err(|e| PmapError::MalformedHeader(e.to_string()))?;
        if header.magic != PMAP_MAGIC {
            return Err(PmapError::MalformedHeader(format!(
                "bad magic {:?}, expected {:?}",
                header.magic, PMAP_MAGIC
            )));
        }
        if header.dtype != PMAP_DTYPE {
            return Err(PmapError::MalformedHeader(format!(
                "unsupported dtype {:?}, expected {:?}",
                header.dtype, PMAP_DTYPE
            )));
        }
        if header.channels.is_empty() {
            return Err(PmapError::EmptyChannels);
        }
        if header.width == 0 || header.height == 0 {
            return Err(PmapError::ZeroDimension {
                width: header.width,
                height: header.height,
            });
        }
        let values = (header.width as u64) * (header.height as u64) * header.channels.len() as u64;
        let expected = values * 4;
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        if payload.len() as u64 != expected {
            return Err(PmapError::PayloadLength {
                expected,
                actual: payload.len() as u64,
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        PixelMap::new(header.width, header.height, header.channels, data)
    }

    /// Writes the map as a `PMAP1` file. `load(save(m)) == m` bit-exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PmapError> {
        if self.channels.is_empty() {
            return Err(PmapError::EmptyChannels);
        }
        let header = Header {
            magic: PMAP_MAGIC.to_string(),
            width: self.width,
            height: self.height,
            channels: self.channels.clone(),
            dtype: PMAP_DTYPE.to_string(),
        };
        let mut writer = BufWriter::new(File::create(path)?);
        let line =
            serde_json::to_string(&header).map_err(|e| PmapError::MalformedHeader(e.to_string()))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        for &v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Halves both dimensions by averaging disjoint 2x2 blocks per channel.
    /// Errors unless both dimensions are even.
    pub fn downscale2(&self) -> Result<PixelMap, PmapError> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(PmapError::OddDimension {
                width: self.width,
                height: self.height,
            });
        }
        let (w, h) = (self.width as usize, self.height as usize);
        let (ow, oh) = (w / 2, h / 2);
        let mut out = Vec::with_capacity(ow * oh * self.channels.len());
        for ci in 0..self.channels.len() {
            let ch = &self.data[ci * w * h..(ci + 1) * w * h];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (x, y) = (ox * 2, oy * 2);
                    let sum = ch[y * w + x] as f64
                        + ch[y * w + x + 1] as f64
                        + ch[(y + 1) * w + x] as f64
                        + ch[(y + 1) * w + x + 1] as f64;
                    out.push((sum / 4.0) as f32);
                }
            }
        }
        PixelMap::new(self.width / 2, self.height / 2, self.channels.clone(), out)
    }
}
