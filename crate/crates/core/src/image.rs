//! Image containers and the on-disk formats the renderer speaks:
//! binary PPM (bit-exact), PNG (convenience) and `BUF1` float dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Interleaved (height × width × channels) float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Pastes `other` with its top-left corner at `(x0, y0)`; both must be RGB.
    pub fn blit(&mut self, other: &Image, x0: usize, y0: usize) {
        assert_eq!(self.channels, other.channels);
        for y in 0..other.height {
            for x in 0..other.width {
                let src = other.pixel(x, y).to_vec();
                self.pixel_mut(x0 + x, y0 + y).copy_from_slice(&src);
            }
        }
    }
}

/// Channel-major (3 × side × side) array, the layout used for the shape
/// image, texture and background.
#[derive(Clone, Debug, PartialEq)]
pub struct Planar {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Planar {
    pub fn zeros(side: usize) -> Self {
        Self { side, data: vec![0.0; 3 * side * side] }
    }

    pub fn constant(side: usize, value: [f64; 3]) -> Self {
        let mut p = Self::zeros(side);
        for (c, v) in value.iter().enumerate() {
            p.plane_mut(c).fill(*v);
        }
        p
    }

    pub fn from_data(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * side * side {
            return invalid(format!("expected {} values for side {side}, got {}", 3 * side * side, data.len()));
        }
        Ok(Self { side, data })
    }

    #[inline]
    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.side + row) * self.side + col]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, row: usize, col: usize) -> &mut f64 {
        &mut self.data[(c * self.side + row) * self.side + col]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.side * self.side;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn to_image(&self) -> Image {
        let mut img = Image::new(self.side, self.side, 3);
        for row in 0..self.side {
            for col in 0..self.side {
                let px = img.pixel_mut(col, row);
                for (c, v) in px.iter_mut().enumerate() {
                    *v = self.at(c, row, col);
                }
            }
        }
        img
    }

    pub fn axpy(&mut self, a: f64, x: &Planar) {
        assert_eq!(self.data.len(), x.data.len());
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }

    pub fn dot(&self, other: &Planar) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Rounds every entry through `f32`, i.e. the precision stored on disk.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return invalid("PPM output needs a 3-channel image");
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| to_u8(v)));
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Parse("bad PPM header".into()))?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::Parse(format!("unsupported PPM magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PPM field {s:?}")));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported PPM maxval {maxval}")));
    }
    let raster = bytes.get(pos..pos + width * height * 3).ok_or_else(|| Error::Parse("truncated PPM raster".into()))?;
    Ok(Image { width, height, channels: 3, data: raster.iter().map(|&b| b as f64 / 255.0).collect() })
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Writes PNG when the path ends in `.png`, binary PPM otherwise.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    if has_ext(path, "png") {
        let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
        let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
            .ok_or_else(|| Error::InvalidArgument("image buffer size mismatch".into()))?;
        buf.save(path).map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(())
    } else {
        write_atomic(path, &encode_ppm(img)?)
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    if has_ext(path, "png") {
        let img = image::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            channels: 3,
            data: img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        })
    } else {
        decode_ppm(&fs::read(path)?)
    }
}

/// `BUF1`: 16-byte header (magic, rows, cols, channels as u32 LE) then f32 LE.
pub fn encode_buf1(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.data.len() * 4);
    out.extend_from_slice(b"BUF1");
    for v in [img.height, img.width, img.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in &img.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_buf1(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..4] != b"BUF1" {
        return Err(Error::Parse("missing BUF1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (height, width, channels) = (word(4), word(8), word(12));
    let count = height * width * channels;
    if bytes.len() != 16 + 4 * count {
        return Err(Error::Parse("BUF1 payload length mismatch".into()));
    }
    let data = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(Image { width, height, channels, data })
}

/// Write-to-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
