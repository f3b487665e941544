//! 8-bit image codecs: binary and ASCII PNM (P2/P3/P5/P6) and PNG.

use std::io::Cursor;
use std::path::Path;

use conncrack_nn::Tensor;

use crate::error::{config, dimension, Error, Result};
use crate::mask::BinaryMask;

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_vec(height, width, channels, vec![0; height * width * channels])
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return dimension(format!("images have 1 or 3 channels, got {channels}"));
        }
        if data.len() != height * width * channels {
            return dimension(format!(
                "{height}×{width}×{channels} image needs {} bytes, got {}",
                height * width * channels,
                data.len()
            ));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Crack pixels white (255) on black.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let data = mask.data().iter().map(|&v| v * 255).collect();
        Self { height: mask.height(), width: mask.width(), channels: 1, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// RGB triple at `(y, x)`; gray images repeat their value.
    pub fn rgb(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            [self.data[i]; 3]
        } else {
            [self.data[i], self.data[i + 1], self.data[i + 2]]
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { height: self.height, width: self.width, channels: 3, data }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
        if y0 + height > self.height || x0 + width > self.width {
            return dimension(format!("crop {height}×{width} at ({y0},{x0}) exceeds {}×{}", self.height, self.width));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Image { height, width, channels: c, data })
    }
}

/// `3×H×W` tensor with values mapped from `[0, 255]` to `[-1, 1]`.
pub fn image_to_tensor(image: &Image) -> Tensor<f32> {
    let (h, w) = (image.height, image.width);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = image.rgb(y, x);
            for c in 0..3 {
                data[(c * h + y) * w + x] = f32::from(px[c]) / 127.5 - 1.0;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("shape matches data")
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl PnmCursor<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format { context: self.context.to_string(), offset: self.pos, message: message.into() })
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err(format!("{what} out of range"))
            }
        }
    }
}

/// Decode a PNM image. `context` names the source in error messages.
pub fn decode_pnm(bytes: &[u8], context: &str) -> Result<Image> {
    let mut cur = PnmCursor { bytes, pos: 0, context };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return cur.err("missing PNM magic");
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        _ => {
            cur.pos = 1;
            return cur.err("unsupported PNM variant");
        }
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maximum value")?;
    if maxval == 0 || maxval > 255 {
        cur.pos = maxval_at;
        return cur.err(format!("maximum value {maxval} unsupported, expected 1..=255"));
    }
    let len = width.checked_mul(height).and_then(|n| n.checked_mul(channels)).filter(|&n| n <= 1 << 32);
    let Some(len) = len else {
        return cur.err("image dimensions too large");
    };
    let rescale = |v: usize| if maxval == 255 { v as u8 } else { ((v * 255 + maxval / 2) / maxval) as u8 };
    let mut data = Vec::with_capacity(len);
    if binary {
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return cur.err("expected a single whitespace byte before the raster"),
        }
        let raster = &bytes[cur.pos..];
        if raster.len() < len {
            cur.pos = bytes.len();
            return cur.err(format!("raster truncated: need {len} bytes, found {}", raster.len()));
        }
        for (i, &v) in raster[..len].iter().enumerate() {
            if usize::from(v) > maxval {
                cur.pos += i;
                return cur.err(format!("sample {v} exceeds maximum {maxval}"));
            }
            data.push(rescale(usize::from(v)));
        }
    } else {
        for _ in 0..len {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                cur.pos = at;
                return cur.err(format!("sample {v} exceeds maximum {maxval}"));
            }
            data.push(rescale(v));
        }
    }
    Image::from_vec(height, width, channels, data)
}

/// Binary PGM (P5) for gray images, PPM (P6) for RGB.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn decode_png(bytes: &[u8], context: &str) -> Result<Image> {
    let format_err =
        |e: png::DecodingError| Error::Format { context: context.to_string(), offset: 0, message: e.to_string() };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(format_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Format {
        context: context.to_string(),
        offset: 0,
        message: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(format_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let src_channels = info.color_type.samples();
    let channels = if src_channels <= 2 { 1 } else { 3 };
    let mut data = Vec::with_capacity(w * h * channels);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * src_channels];
        for px in row.chunks_exact(src_channels) {
            data.extend_from_slice(&px[..channels]);
        }
    }
    Image::from_vec(h, w, channels, data)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(if image.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Config(format!("png encoding failed: {e}")))?;
        writer.write_image_data(&image.data).map_err(|e| Error::Config(format!("png encoding failed: {e}")))?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Codec {
    Pnm,
    Png,
}

fn codec_for(path: &Path) -> Result<Codec> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => Ok(Codec::Pnm),
        Some("png") => Ok(Codec::Png),
        _ => config(format!("{}: unsupported image extension, expected .pgm, .ppm, .pnm or .png", path.display())),
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let codec = codec_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    match codec {
        Codec::Pnm => decode_pnm(&bytes, &context),
        Codec::Png => decode_png(&bytes, &context),
    }
}

/// Encode by extension and write atomically.
pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    let bytes = match codec_for(path)? {
        Codec::Pnm => encode_pnm(image),
        Codec::Png => encode_png(image)?,
    };
    crate::write_atomic(path, &bytes)
}

/// Any nonzero sample marks a crack pixel.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let image = load_image(path)?;
    Ok(image_to_mask(&image))
}

pub fn image_to_mask(image: &Image) -> BinaryMask {
    BinaryMask::from_fn(image.height, image.width, |y, x| image.rgb(y, x).iter().any(|&v| v != 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_ppm_pixel() {
        let img = decode_pnm(b"P6\n1 1\n255\n\xff\xff\xff", "t").unwrap();
        assert_eq!(img.rgb(0, 0), [255, 255, 255]);
    }

    #[test]
    fn ascii_and_comments() {
        let img = decode_pnm(b"P2 # gray\n2 1\n# max\n15\n0 15\n", "t").unwrap();
        assert_eq!(img.data(), &[0, 255]);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        match decode_pnm(b"P5\n4 4\n255\n\x00\x01", "t") {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, 13);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pnm(b"P7\n", "t"), Err(Error::Format { offset: 1, .. })));
        assert!(matches!(decode_pnm(b"P5\n4 x", "t"), Err(Error::Format { offset: 5, .. })));
        assert!(matches!(decode_pnm(b"", "t"), Err(Error::Format { offset: 0, .. })));
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00", "t").is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = Image::from_vec(2, 3, 3, (0..18).map(|v| v * 13).collect()).unwrap();
        let back = decode_png(&encode_png(&img).unwrap(), "t").unwrap();
        assert_eq!(back, img);
        let gray = Image::from_vec(3, 1, 1, vec![0, 7, 255]).unwrap();
        assert_eq!(decode_png(&encode_png(&gray).unwrap(), "t").unwrap(), gray);
    }

    #[test]
    fn corrupt_png_is_format_error() {
        assert!(matches!(decode_png(b"\x89PNG\r\n\x1a\nxx", "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn tensor_range() {
        let img = Image::from_vec(1, 2, 1, vec![0, 255]).unwrap();
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
    }
}
