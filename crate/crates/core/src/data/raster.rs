//! Single-channel rasters, two-class masks, and their file formats.
//!
//! Two encodings are supported, chosen by file extension:
//!
//! * `.png`: 8- or 16-bit grayscale PNG.
//! * anything else: flat binary, a 14-byte header followed by samples
//!   (`u8`, or little-endian `u16`):
//!
//! ```text
//! magic "GRST" | version u8 = 1 | bit depth u8 (8|16) | width u32 | height u32
//! ```
//!
//! Mask files map ocean to gray 0 and glacier+rock to the full-scale value
//! (255 for 8-bit, 65535 for 16-bit).

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RASTER_MAGIC: &[u8; 4] = b"GRST";
pub const RASTER_VERSION: u8 = 1;
const HEADER_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    fn bytes_per_sample(self) -> usize {
        match self {
            BitDepth::Eight => 1,
            BitDepth::Sixteen => 2,
        }
    }
}

/// A grayscale grid of integer samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub depth: BitDepth,
    pub samples: Vec<u16>,
}

impl Raster {
    pub fn new(width: usize, height: usize, depth: BitDepth, samples: Vec<u16>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::shape(
                "raster",
                format!("{width}x{height} raster with {} samples", samples.len()),
            ));
        }
        if let Some(v) = samples.iter().find(|&&v| v > depth.max_value()) {
            return Err(Error::InvalidArgument(format!(
                "sample {v} exceeds {}-bit range",
                depth.bits()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            samples,
        })
    }

    /// Quantizes values in `[0, 1]` (clamped) to the given depth.
    pub fn from_unit(width: usize, height: usize, depth: BitDepth, values: &[f64]) -> Result<Self> {
        let max = depth.max_value() as f64;
        let samples = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * max).round() as u16)
            .collect();
        Self::new(width, height, depth, samples)
    }

    pub fn to_unit(&self) -> Vec<f64> {
        let max = self.depth.max_value() as f64;
        self.samples.iter().map(|&v| v as f64 / max).collect()
    }

    /// `1 × 1 × H × W` tensor with values mapped from `[0, 1]` to `[−1, 1]`.
    pub fn to_signed_tensor(&self) -> Tensor {
        let data = self.to_unit().into_iter().map(|v| 2.0 * v - 1.0).collect();
        Tensor::new(&[1, 1, self.height, self.width], data).expect("raster dims are consistent")
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Self {
        let mut samples = Vec::with_capacity(width * height);
        for y in top..top + height {
            samples.extend_from_slice(
                &self.samples[y * self.width + left..y * self.width + left + width],
            );
        }
        Self {
            width,
            height,
            depth: self.depth,
            samples,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if is_png(path) {
            encode_png(self).map_err(|e| {
                Error::InvalidArgument(format!("{}: png encode: {e}", path.display()))
            })?
        } else {
            encode_flat(self)
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if is_png(path) {
            decode_png(&bytes, path)
        } else {
            decode_flat(&bytes, path)
        }
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn encode_flat(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + r.samples.len() * r.depth.bytes_per_sample());
    out.extend_from_slice(RASTER_MAGIC);
    out.push(RASTER_VERSION);
    out.push(r.depth.bits());
    out.extend_from_slice(&(r.width as u32).to_le_bytes());
    out.extend_from_slice(&(r.height as u32).to_le_bytes());
    match r.depth {
        BitDepth::Eight => out.extend(r.samples.iter().map(|&v| v as u8)),
        BitDepth::Sixteen => r
            .samples
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn decode_flat(bytes: &[u8], path: &Path) -> Result<Raster> {
    let malformed = |offset: u64, detail: String| Error::Malformed {
        path: path.to_path_buf(),
        offset,
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != RASTER_MAGIC {
        return Err(malformed(0, format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != RASTER_VERSION {
        return Err(malformed(4, format!("unsupported version {}", bytes[4])));
    }
    let depth = match bytes[5] {
        8 => BitDepth::Eight,
        16 => BitDepth::Sixteen,
        d => return Err(malformed(5, format!("unsupported bit depth {d}"))),
    };
    let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = HEADER_LEN as u64 + (width * height * depth.bytes_per_sample()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let body = &bytes[HEADER_LEN..];
    let samples = match depth {
        BitDepth::Eight => body.iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect(),
    };
    Raster::new(width, height, depth, samples)
}

fn encode_png(r: &Raster) -> std::result::Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        let data: Vec<u8> = match r.depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                r.samples.iter().map(|&v| v as u8).collect()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                r.samples.iter().flat_map(|v| v.to_be_bytes()).collect()
            }
        };
        let mut writer = enc.write_header()?;
        writer.write_image_data(&data)?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Raster> {
    let malformed = |offset: u64, detail: String| Error::Malformed {
        path: path.to_path_buf(),
        offset,
        detail,
    };
    const SIGNATURE: [u8; 8] = [137, 80, 78, 71, 13, 10, 26, 10];
    if bytes.len() < 8 || bytes[..8] != SIGNATURE {
        return Err(malformed(0, "missing PNG signature".into()));
    }
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| malformed(8, format!("png header: {e}")))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.color_type != png::ColorType::Grayscale {
        return Err(malformed(
            25,
            format!(
                "color type {:?}; only grayscale is supported",
                info.color_type
            ),
        ));
    }
    let depth = match info.bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        d => {
            return Err(malformed(
                24,
                format!("bit depth {d:?}; only 8 and 16 are supported"),
            ))
        }
    };
    let size = width * height * depth.bytes_per_sample();
    let mut buf = vec![0u8; size];
    reader
        .next_frame(&mut buf)
        .map_err(|e| malformed(33, format!("png image data: {e}")))?;
    let samples = match depth {
        BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
    };
    Raster::new(width, height, depth, samples)
}

/// Class id of ocean pixels.
pub const OCEAN: u8 = 0;
/// Class id of glacier-and-rock pixels.
pub const GLACIER: u8 = 1;

/// Two-class map: [`OCEAN`] or [`GLACIER`] per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{width}x{height} mask with {} pixels", classes.len()),
            ));
        }
        if let Some(v) = classes.iter().find(|&&c| c > GLACIER) {
            return Err(Error::InvalidArgument(format!(
                "mask class {v} is not 0 or 1"
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Self {
        Self {
            width,
            height,
            classes: vec![class; width * height],
        }
    }

    pub fn glacier_fraction(&self) -> f64 {
        self.classes.iter().filter(|&&c| c == GLACIER).count() as f64 / self.classes.len() as f64
    }

    /// Gray encoding: ocean → 0, glacier → full scale.
    pub fn to_raster(&self, depth: BitDepth) -> Raster {
        let max = depth.max_value();
        Raster {
            width: self.width,
            height: self.height,
            depth,
            samples: self
                .classes
                .iter()
                .map(|&c| if c == GLACIER { max } else { 0 })
                .collect(),
        }
    }

    /// Inverse of [`Self::to_raster`]; any other gray value is an error
    /// listing the offending values.
    pub fn from_raster(r: &Raster) -> Result<Self> {
        let max = r.depth.max_value();
        let mut offending: Vec<u16> = r
            .samples
            .iter()
            .copied()
            .filter(|&v| v != 0 && v != max)
            .collect();
        if !offending.is_empty() {
            offending.sort_unstable();
            offending.dedup();
            let shown: Vec<String> = offending.iter().take(16).map(|v| v.to_string()).collect();
            return Err(Error::InvalidArgument(format!(
                "mask is not two-valued (expected 0 and {max}); offending values: {}{}",
                shown.join(", "),
                if offending.len() > 16 { ", ..." } else { "" }
            )));
        }
        Ok(Self {
            width: r.width,
            height: r.height,
            classes: r
                .samples
                .iter()
                .map(|&v| if v == max { GLACIER } else { OCEAN })
                .collect(),
        })
    }

    /// `1 × 1 × H × W` generator input: ocean → −1, glacier → +1.
    pub fn to_signed_tensor(&self) -> Tensor {
        let data = self
            .classes
            .iter()
            .map(|&c| if c == GLACIER { 1.0 } else { -1.0 })
            .collect();
        Tensor::new(&[1, 1, self.height, self.width], data).expect("mask dims are consistent")
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Self {
        let mut classes = Vec::with_capacity(width * height);
        for y in top..top + height {
            classes.extend_from_slice(
                &self.classes[y * self.width + left..y * self.width + left + width],
            );
        }
        Self {
            width,
            height,
            classes,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_raster(BitDepth::Eight).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raster(&Raster::load(path)?).map_err(|e| match e {
            Error::InvalidArgument(msg) => {
                Error::InvalidArgument(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }
}
