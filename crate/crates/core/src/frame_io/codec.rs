//! Still-image codecs for frame directories and overlay output.
//!
//! PGM (P5) and PPM (P6) are parsed natively, 8- and 16-bit. PNG goes
//! through the `png` crate with every colour type expanded to 8-bit.

use std::io::Cursor;

/// Decoded image with samples normalized to `[0, 1]`, interleaved by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedImage {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (rgb).
    pub channels: usize,
    pub samples: Vec<f32>,
}

/// Picks a decoder from the file extension (case-insensitive).
pub fn decode_by_extension(ext: &str, bytes: &[u8]) -> Result<DecodedImage, String> {
    match ext.to_ascii_lowercase().as_str() {
        "pgm" | "ppm" | "pnm" => decode_pnm(bytes),
        "png" => decode_png(bytes),
        other => Err(format!("unsupported extension .{other}")),
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8], String> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err("truncated header".into());
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize, String> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| format!("bad {what} in header"))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<DecodedImage, String> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let channels = match r.token()? {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(format!("unsupported magic {:?} (only binary P5/P6)", String::from_utf8_lossy(other))),
    };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    r.pos += 1;
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let count = width * height * channels;
    let raster = bytes.get(r.pos..).unwrap_or(&[]);
    if raster.len() < count * bytes_per_sample {
        return Err(format!("raster truncated: need {} bytes, have {}", count * bytes_per_sample, raster.len()));
    }
    let maxval = maxval as f32;
    let samples = if bytes_per_sample == 1 {
        raster[..count].iter().map(|&b| (b as f32 / maxval).min(1.0)).collect()
    } else {
        raster[..count * 2]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / maxval).min(1.0))
            .collect()
    };
    Ok(DecodedImage { width, height, channels, samples })
}

pub fn decode_png(bytes: &[u8]) -> Result<DecodedImage, String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (width, height) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let raw = &buf[..info.buffer_size()];

    let (channels, samples): (usize, Vec<f32>) = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
            (1, raw.chunks_exact(src_channels).map(|px| px[0] as f32 / 255.0).collect())
        }
        png::ColorType::Rgb | png::ColorType::Rgba => {
            (3, raw.chunks_exact(src_channels).flat_map(|px| [px[0], px[1], px[2]]).map(|v| v as f32 / 255.0).collect())
        }
        png::ColorType::Indexed => return Err("palette not expanded".into()),
    };
    Ok(DecodedImage { width, height, channels, samples })
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6) from interleaved 8-bit RGB.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Binary PGM (P5) from `[0,1]` samples.
pub fn encode_pgm(width: usize, height: usize, gray: &[f32]) -> Vec<u8> {
    debug_assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(gray.iter().map(|&v| quantize(v)));
    out
}

/// 8-bit PNG, gray (`channels == 1`) or RGB (`channels == 3`).
pub fn encode_png(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(if channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(data).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Quantizes `[0,1]` samples to bytes.
pub fn to_bytes(samples: &[f32]) -> Vec<u8> {
    samples.iter().map(|&v| quantize(v)).collect()
}
