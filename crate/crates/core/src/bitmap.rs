//! In-memory RGB images and PNG round-tripping, including text chunks.

use std::collections::BTreeMap;
use std::io::Cursor;

#[derive(Debug, thiserror::Error)]
pub enum BitmapError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    /// UTF-8 text chunks, written in key order.
    pub text: BTreeMap<String, String>,
}

impl Bitmap {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let mut rgb = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            rgb.extend_from_slice(&color);
        }
        Self { width, height, rgb, text: BTreeMap::new() }
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, color: Rgb) {
        if x < self.width && y < self.height {
            let o = self.offset(x, y);
            self.rgb[o..o + 3].copy_from_slice(&color);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32, Rgb)> + '_ {
        let w = self.width;
        self.rgb
            .chunks_exact(3)
            .enumerate()
            .map(move |(i, p)| ((i as u32) % w, (i as u32) / w, [p[0], p[1], p[2]]))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, BitmapError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Fast);
            for (k, v) in &self.text {
                enc.add_itxt_chunk(k.clone(), v.clone())?;
            }
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.rgb)?;
            writer.finish()?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, BitmapError> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| BitmapError::Unsupported("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        let rgb = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => {
                buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()
            }
            other => return Err(BitmapError::Unsupported(format!("{other:?}"))),
        };
        let mut text = BTreeMap::new();
        let meta = reader.info();
        for chunk in &meta.uncompressed_latin1_text {
            text.insert(chunk.keyword.clone(), chunk.text.clone());
        }
        for chunk in &meta.utf8_text {
            text.insert(chunk.keyword.clone(), chunk.get_text()?);
        }
        Ok(Self { width: info.width, height: info.height, rgb, text })
    }
}
