//! Dense grids: images, feature maps and depth maps, with bilinear sampling,
//! the fixed feature filter bank, depth upsampling and file I/O.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pixel;

/// Row-major multi-channel grid of `f64` values.
pub trait Grid {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn channels(&self) -> usize;
    fn data(&self) -> &[f64];

    fn at(&self, x: usize, y: usize) -> &[f64] {
        let c = self.channels();
        let i = (y * self.width() + x) * c;
        &self.data()[i..i + c]
    }
}

/// Bilinear interpolation weights for a continuous position, or `None` when
/// the position falls outside `[0, w-1] x [0, h-1]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bilinear {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Bilinear {
    pub fn new(width: usize, height: usize, pos: Pixel) -> Option<Self> {
        let (x, y) = (pos.u, pos.v);
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
        if x < 0.0 || y < 0.0 || x > xmax || y > ymax {
            return None;
        }
        let (x0, fx) = split_axis(x, width);
        let (y0, fy) = split_axis(y, height);
        Some(Self {
            x0,
            y0,
            x1: (x0 + 1).min(width - 1),
            y1: (y0 + 1).min(height - 1),
            fx,
            fy,
        })
    }

    /// The four corners with their weights.
    pub fn corners(&self) -> [(usize, usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.x0, self.y0, (1.0 - fx) * (1.0 - fy)),
            (self.x1, self.y0, fx * (1.0 - fy)),
            (self.x0, self.y1, (1.0 - fx) * fy),
            (self.x1, self.y1, fx * fy),
        ]
    }
}

fn split_axis(x: f64, len: usize) -> (usize, f64) {
    if len == 1 {
        return (0, 0.0);
    }
    let x0 = (x.floor() as usize).min(len - 2);
    (x0, x - x0 as f64)
}

/// Bilinearly interpolates `grid` at `pos` into `out`; returns false (leaving
/// `out` untouched) when `pos` is outside the grid.
pub fn bilinear_sample_into<G: Grid + ?Sized>(grid: &G, pos: Pixel, out: &mut [f64]) -> bool {
    let Some(b) = Bilinear::new(grid.width(), grid.height(), pos) else {
        return false;
    };
    let c = grid.channels();
    debug_assert_eq!(out.len(), c);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (x, y, w) in b.corners() {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(grid.at(x, y)) {
            *o += w * v;
        }
    }
    true
}

/// Bilinear interpolation of `grid` at `pos`; `None` outside the grid.
pub fn bilinear_sample<G: Grid + ?Sized>(grid: &G, pos: Pixel) -> Option<Vec<f64>> {
    let mut out = vec![0.0; grid.channels()];
    bilinear_sample_into(grid, pos, &mut out).then_some(out)
}

/// Image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be at least 1x1"));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height * channels),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "image intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

impl Grid for Image {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel feature vectors on a grid downsampled from an image by `stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    stride: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        stride: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("feature stride must be at least 1"));
        }
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("feature map must be non-empty"));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height * channels),
                got: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            stride,
            data,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Channel `c` as a strided iterator over all cells.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(self.channels).copied()
    }

    /// Standardizes each channel to zero mean and unit variance over the
    /// grid. Constant channels become all-zero.
    pub fn z_normalized(&self) -> FeatureMap {
        let n = (self.width * self.height) as f64;
        let mut data = self.data.clone();
        for c in 0..self.channels {
            let mean = self.channel(c).sum::<f64>() / n;
            let var = self.channel(c).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = if std > 1e-12 { 1.0 / std } else { 0.0 };
            for v in data.iter_mut().skip(c).step_by(self.channels) {
                *v = (*v - mean) * scale;
            }
        }
        FeatureMap { data, ..self.clone() }
    }
}

impl Grid for FeatureMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Number of feature channels produced per image channel.
pub const FEATURES_PER_CHANNEL: usize = 4;

/// Fixed filter bank: for every `stride x stride` block and image channel,
/// `[mean, horizontal gradient, vertical gradient, standard deviation]`.
///
/// Gradients are central differences of neighbouring block means (one-sided
/// at the borders), so a ramp of slope `s` per pixel yields `s * stride`.
pub fn extract_features(img: &Image, stride: usize) -> Result<FeatureMap> {
    if stride == 0 || img.width % stride != 0 || img.height % stride != 0 {
        return Err(Error::invalid(format!(
            "stride {stride} must divide image size {}x{}",
            img.width, img.height
        )));
    }
    let (w, h, ch) = (img.width / stride, img.height / stride, img.channels);
    let area = (stride * stride) as f64;
    let mut means = vec![0.0; w * h * ch];
    let mut stds = vec![0.0; w * h * ch];
    for by in 0..h {
        for bx in 0..w {
            for c in 0..ch {
                let (mut s, mut s2) = (0.0, 0.0);
                for y in by * stride..(by + 1) * stride {
                    for x in bx * stride..(bx + 1) * stride {
                        let v = img.at(x, y)[c];
                        s += v;
                        s2 += v * v;
                    }
                }
                let mean = s / area;
                let i = (by * w + bx) * ch + c;
                means[i] = mean;
                stds[i] = (s2 / area - mean * mean).max(0.0).sqrt();
            }
        }
    }
    let mean_at = |x: usize, y: usize, c: usize| means[(y * w + x) * ch + c];
    let diff = |lo: usize, hi: usize, get: &dyn Fn(usize) -> f64| {
        if hi == lo {
            0.0
        } else {
            (get(hi) - get(lo)) / (hi - lo) as f64
        }
    };
    let fc = ch * FEATURES_PER_CHANNEL;
    let mut data = vec![0.0; w * h * fc];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let gx = diff(x.saturating_sub(1), (x + 1).min(w - 1), &|xx| {
                    mean_at(xx, y, c)
                });
                let gy = diff(y.saturating_sub(1), (y + 1).min(h - 1), &|yy| {
                    mean_at(x, yy, c)
                });
                let o = (y * w + x) * fc + c * FEATURES_PER_CHANNEL;
                let i = (y * w + x) * ch + c;
                data[o..o + 4].copy_from_slice(&[means[i], gx, gy, stds[i]]);
            }
        }
    }
    FeatureMap::new(w, h, fc, stride, data)
}

/// Per-pixel depth with an explicit validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map; pixels are valid where the depth is positive and finite.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::with_validity(width, height, values, valid)
    }

    pub fn with_validity(
        width: usize,
        height: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", width * height),
                got: format!("{} values / {} flags", values.len(), valid.len()),
            });
        }
        if let Some(i) = (0..values.len()).find(|&i| valid[i] && !(values[i].is_finite() && values[i] > 0.0)) {
            return Err(Error::invalid(format!(
                "valid pixel {i} has non-positive depth {}",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::from_values(width, height, vec![depth; width * height])
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![f64::NAN; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_size(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear depth at `pos`; `None` if outside or if any corner with
    /// non-zero weight is invalid.
    pub fn sample(&self, pos: Pixel) -> Option<f64> {
        let b = Bilinear::new(self.width, self.height, pos)?;
        let mut acc = 0.0;
        for (x, y, w) in b.corners() {
            if w == 0.0 {
                continue;
            }
            acc += w * self.get(x, y)?;
        }
        Some(acc)
    }

    /// Depth map with every depth multiplied by `s`.
    pub fn scaled(&self, s: f64) -> DepthMap {
        DepthMap {
            values: self.values.iter().map(|d| d * s).collect(),
            ..self.clone()
        }
    }

    /// Values with invalid pixels replaced by NaN, as stored in PFM files.
    pub fn to_f32_with_nan(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(d, ok)| if *ok { *d as f32 } else { f32::NAN })
            .collect()
    }
}

/// Ground-truth depth with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDepth {
    pub depth: DepthMap,
    mask: Vec<bool>,
}

impl GroundTruthDepth {
    pub fn new(depth: DepthMap, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != depth.values.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} mask entries", depth.values.len()),
                got: format!("{}", mask.len()),
            });
        }
        if mask.iter().zip(&depth.valid).any(|(m, v)| *m && !*v) {
            return Err(Error::invalid("ground-truth mask covers an invalid depth"));
        }
        Ok(Self { depth, mask })
    }

    /// Mask equal to the depth map's own validity.
    pub fn from_depth(depth: DepthMap) -> Self {
        let mask = depth.valid.clone();
        Self { depth, mask }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            depth: self.depth.scaled(s),
            mask: self.mask.clone(),
        }
    }
}

/// Bilinear upsampling by an integer factor with pixel-center alignment:
/// fine pixel `x` maps to coarse coordinate `(x - (f-1)/2) / f`, clamped to
/// the grid. A fine pixel is valid only if every coarse pixel contributing
/// to it with non-zero weight is valid.
pub fn upsample_depth(d: &DepthMap, factor: usize) -> Result<DepthMap> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(d.clone());
    }
    let (w, h) = (d.width * factor, d.height * factor);
    let f = factor as f64;
    let off = (f - 1.0) / 2.0;
    let coarse = |x: usize, len: usize| ((x as f64 - off) / f).clamp(0.0, (len - 1) as f64);
    let mut values = vec![f64::NAN; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        let cy = coarse(y, d.height);
        for x in 0..w {
            let cx = coarse(x, d.width);
            if let Some(v) = d.sample(Pixel::new(cx, cy)) {
                values[y * w + x] = v;
                valid[y * w + x] = true;
            }
        }
    }
    DepthMap::with_validity(w, h, values, valid)
}

fn malformed(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads a PPM (P5/P6) or PNG image with intensities normalized to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else {
        decode_pnm(&bytes, path)
    }
}

/// Saves an image as PNG when the extension is `.png`, otherwise as binary PPM/PGM.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(img, path)?
    } else {
        encode_pnm(img)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| quantize(*v)));
    out
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |r: &str| malformed("PPM image", path, r);
    let mut pos = 0;
    let mut tokens = Vec::new();
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
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(bad(&format!("unsupported magic {other:?}"))),
    };
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(&format!("bad {what} {s:?}")))
    };
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(bad(&format!("only 8-bit maxval 255 is supported, got {maxval}")));
    }
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| bad(&format!("expected {n} raster bytes")))?;
    let data = raster.iter().map(|b| *b as f64 / 255.0).collect();
    Image::new(width, height, channels, data).map_err(|e| bad(&e.to_string()))
}

fn encode_png(img: &Image, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        enc.set_depth(png::BitDepth::Eight);
        let raster: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
        enc.write_header()
            .and_then(|mut w| w.write_image_data(&raster))
            .map_err(|e| malformed("PNG image", path, e.to_string()))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |r: String| malformed("PNG image", path, r);
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let buf = &buf[..info.buffer_size()];
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_ch, dst_ch) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    let data = buf
        .chunks_exact(src_ch)
        .flat_map(|px| px[..dst_ch].iter().map(|b| *b as f64 / 255.0))
        .collect();
    Image::new(w, h, dst_ch, data).map_err(|e| bad(e.to_string()))
}

/// Raw contents of a PFM file, rows ordered top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Writes a little-endian PFM (negative scale). PFM stores the bottom row
/// first; `data` is given top row first.
pub fn save_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    let magic = match pfm.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    let row = pfm.width * pfm.channels;
    if pfm.data.len() != row * pfm.height {
        return Err(Error::DimensionMismatch {
            expected: format!("{} floats", row * pfm.height),
            got: format!("{}", pfm.data.len()),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(w, "{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height)?;
        for y in (0..pfm.height).rev() {
            for v in &pfm.data[y * row..(y + 1) * row] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_pfm(path: &Path) -> Result<Pfm> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| malformed("PFM file", path, reason);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(malformed("PFM file", path, "truncated header"));
        }
        Ok(line.trim().to_string())
    };
    let channels = match next_line(&mut r)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(format!("bad magic {other:?}"))),
    };
    let dims = next_line(&mut r)?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad dimensions {dims:?}"))))
        .collect::<Result<_>>()?;
    let [width, height] = dims[..] else {
        return Err(bad(format!("expected two dimensions, got {}", dims.len())));
    };
    let scale_line = next_line(&mut r)?;
    let scale: f64 = scale_line
        .parse()
        .map_err(|_| bad(format!("bad scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("bad scale {scale}")));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut raw = vec![0u8; row * height * 4];
    r.read_exact(&mut raw)
        .map_err(|_| bad(format!("expected {} bytes of float data", raw.len())))?;
    let floats: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(floats.len());
    for y in (0..height).rev() {
        data.extend_from_slice(&floats[y * row..(y + 1) * row]);
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Writes a depth map as single-channel PFM with NaN marking invalid pixels.
pub fn save_depth_pfm(path: &Path, d: &DepthMap) -> Result<()> {
    save_pfm(
        path,
        &Pfm {
            width: d.width,
            height: d.height,
            channels: 1,
            data: d.to_f32_with_nan(),
        },
    )
}

/// Reads a single-channel PFM depth map; NaN and non-positive values are invalid.
pub fn load_depth_pfm(path: &Path) -> Result<DepthMap> {
    let pfm = load_pfm(path)?;
    if pfm.channels != 1 {
        return Err(malformed("PFM depth map", path, "depth maps must be single-channel"));
    }
    DepthMap::from_values(
        pfm.width,
        pfm.height,
        pfm.data.iter().map(|v| *v as f64).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Image::new(width, height, 1, data).unwrap()
    }

    #[test]
    fn bilinear_lattice_midpoint_and_bounds() {
        let img = gray(2, 2, |x, y| (x + 2 * y) as f64 / 3.0);
        assert_eq!(bilinear_sample(&img, Pixel::new(1.0, 0.0)).unwrap(), vec![1.0 / 3.0]);
        // Corner values {0,1,2,3}/3 average to 1.5/3.
        let mid = bilinear_sample(&img, Pixel::new(0.5, 0.5)).unwrap()[0];
        assert_abs_diff_eq!(mid * 3.0, 1.5, epsilon = 1e-15);
        assert!(bilinear_sample(&img, Pixel::new(-0.5, 0.0)).is_none());
        assert!(bilinear_sample(&img, Pixel::new(1.0, 1.0 + 1e-12)).is_none());
        assert!(bilinear_sample(&img, Pixel::new(f64::NAN, 0.0)).is_none());
        // The far corner is inside.
        assert!(bilinear_sample(&img, Pixel::new(1.0, 1.0)).is_some());
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, 1, 1, vec![0.0, 1.5]).is_err());
        assert!(Image::new(2, 1, 2, vec![0.0; 4]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn features_of_constant_image() {
        let img = Image::filled(16, 8, 3, 0.4).unwrap();
        let f = extract_features(&img, 4).unwrap();
        assert_eq!((f.width(), f.height(), f.channels()), (4, 2, 12));
        for cell in f.data().chunks(4) {
            assert_abs_diff_eq!(cell[0], 0.4, epsilon = 1e-12);
            assert_eq!(&cell[1..3], &[0.0, 0.0]);
            assert_abs_diff_eq!(cell[3], 0.0, epsilon = 1e-7);
        }
        assert!(extract_features(&img, 3).is_err());
        assert!(extract_features(&img, 0).is_err());
    }

    #[test]
    fn features_of_ramp() {
        // Finite-difference oracle: block means of s*x differ by s*stride per cell.
        let s = 0.01;
        let img = gray(32, 8, |x, _| s * x as f64);
        let stride = 4;
        let f = extract_features(&img, stride).unwrap();
        for y in 0..f.height() {
            for x in 1..f.width() - 1 {
                assert_abs_diff_eq!(f.at(x, y)[1], s * stride as f64, epsilon = 1e-12);
                assert_abs_diff_eq!(f.at(x, y)[2], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn z_normalization() {
        let img = gray(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let f = extract_features(&img, 2).unwrap().z_normalized();
        let n = (f.width() * f.height()) as f64;
        for c in 0..f.channels() {
            let mean = f.channel(c).sum::<f64>() / n;
            let var = f.channel(c).map(|v| v * v).sum::<f64>() / n;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn upsample_examples() {
        let d = DepthMap::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample_depth(&d, 1).unwrap(), d);

        let up = upsample_depth(&d, 2).unwrap();
        assert_eq!((up.width(), up.height()), (4, 4));
        // Independent oracle: fine pixel x sits at coarse coordinate (x - 0.5)/2,
        // clamped; bilinear over [[1,2],[3,4]] is 1 + u + 2v.
        for y in 0..4 {
            for x in 0..4 {
                let u = ((x as f64 - 0.5) / 2.0).clamp(0.0, 1.0);
                let v = ((y as f64 - 0.5) / 2.0).clamp(0.0, 1.0);
                assert_abs_diff_eq!(up.get(x, y).unwrap(), 1.0 + u + 2.0 * v, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(up.get(1, 1).unwrap(), 1.75, epsilon = 1e-15);

        let c = DepthMap::constant(3, 2, 7.5).unwrap();
        let up = upsample_depth(&c, 4).unwrap();
        assert!(up.values().iter().all(|v| *v == 7.5));
        assert_eq!(up.valid_count(), 12 * 8);
    }

    #[test]
    fn upsample_validity_is_conservative() {
        let d = DepthMap::from_values(3, 1, vec![1.0, f64::NAN, 3.0]).unwrap();
        let up = upsample_depth(&d, 2).unwrap();
        // Fine pixels 0 and 5 only touch valid coarse pixels through clamping.
        let flags: Vec<bool> = (0..6).map(|x| up.get(x, 0).is_some()).collect();
        assert_eq!(flags, vec![true, false, false, false, false, true]);
    }

    #[test]
    fn upsample_then_average_recovers_smooth_map() {
        let (w, h, f) = (8, 6, 4);
        let vals = (0..w * h)
            .map(|i| 3.0 + ((i % w) as f64 * 0.3).sin() + (i / w) as f64 * 0.1)
            .collect();
        let d = DepthMap::from_values(w, h, vals).unwrap();
        let up = upsample_depth(&d, f).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut acc = (0.0, 0);
                for yy in y * f..(y + 1) * f {
                    for xx in x * f..(x + 1) * f {
                        if let Some(v) = up.get(xx, yy) {
                            acc = (acc.0 + v, acc.1 + 1);
                        }
                    }
                }
                let avg = acc.0 / acc.1 as f64;
                let orig = d.get(x, y).unwrap();
                assert!((avg - orig).abs() / orig < 0.25);
            }
        }
    }

    #[test]
    fn ppm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut seed = 12345u64;
        let data: Vec<f64> = (0..7 * 5 * 3)
            .map(|_| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 33) % 256) as f64 / 255.0
            })
            .collect();
        let img = Image::new(7, 5, 3, data).unwrap();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&p, &img).unwrap();
            assert_eq!(load_image(&p).unwrap(), img, "{name}");
        }
        let g = gray(5, 3, |x, y| (x * 3 + y) as f64 / 255.0);
        let p = dir.path().join("g.pgm");
        save_image(&p, &g).unwrap();
        assert_eq!(load_image(&p).unwrap(), g);
    }

    #[test]
    fn malformed_ppm_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ppm");
        std::fs::write(&p, b"P6\n4 4\n255\n\x00\x01").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");
        std::fs::write(&p, b"P3\n1 1\n255\n0 0 0").unwrap();
        assert!(load_image(&p).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn pfm_header_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let mut bytes = b"Pf\n4 3\n-1.0\n".to_vec();
        // Bottom row first: rows (bottom..top) hold 2, 1, 0.
        for row in [2.0f32, 1.0, 0.0] {
            for x in 0..4 {
                let v = if row == 0.0 && x == 1 { f32::NAN } else { row * 10.0 + x as f32 };
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&p, &bytes).unwrap();
        let pfm = load_pfm(&p).unwrap();
        assert_eq!((pfm.width, pfm.height, pfm.channels), (4, 3, 1));
        assert_eq!(pfm.data[4..8], [10.0, 11.0, 12.0, 13.0]);
        let d = load_depth_pfm(&p).unwrap();
        assert!(d.get(1, 0).is_none());
        assert_eq!(d.get(2, 2), Some(22.0));
        // x=0 of the top row stores 0.0, which is not a valid depth either.
        assert!(d.get(0, 0).is_none());
    }

    #[test]
    fn pfm_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        std::fs::write(&p, b"PX\n1 1\n-1.0\n\0\0\0\0").unwrap();
        assert!(load_pfm(&p).unwrap_err().to_string().contains("bad magic"));
        std::fs::write(&p, b"Pf\n2 2\n-1.0\n\0\0\0\0").unwrap();
        assert!(load_pfm(&p).is_err());
        std::fs::write(&p, b"Pf\n2\n-1.0\n").unwrap();
        assert!(load_pfm(&p).is_err());
    }

    proptest! {
        #[test]
        fn pfm_round_trip_bit_exact(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.pfm");
            let data: Vec<f32> = (0..w * h)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 7) as u32 & 0x7f7f_ffff))
                .collect();
            let pfm = Pfm { width: w, height: h, channels: 1, data };
            save_pfm(&p, &pfm).unwrap();
            let back = load_pfm(&p).unwrap();
            prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            pfm.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn bilinear_linear_along_axes(a in -1.0f64..1.0, b in -1.0f64..1.0,
                                      x in 0.0f64..7.0, y in 0.0f64..5.0) {
            // Bilinear interpolation reproduces affine functions exactly.
            let f = FeatureMap::new(8, 6, 1, 1,
                (0..48).map(|i| a * (i % 8) as f64 + b * (i / 8) as f64).collect()).unwrap();
            let v = bilinear_sample(&f, Pixel::new(x, y)).unwrap()[0];
            prop_assert!((v - (a * x + b * y)).abs() < 1e-12);
        }

        #[test]
        fn gradients_ignore_intensity_shift(seed in any::<u64>(), shift in 0.0f64..0.3) {
            let base = gray(16, 16, |x, y| {
                let h = seed ^ ((x as u64) << 8 | y as u64);
                (h.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) as f64 / (1u64 << 24) as f64 * 0.7
            });
            let shifted = Image::new(16, 16, 1, base.data().iter().map(|v| v + shift).collect()).unwrap();
            let fa = extract_features(&base, 4).unwrap();
            let fb = extract_features(&shifted, 4).unwrap();
            for (ca, cb) in fa.data().chunks(4).zip(fb.data().chunks(4)) {
                prop_assert!((ca[1] - cb[1]).abs() < 1e-12);
                prop_assert!((ca[2] - cb[2]).abs() < 1e-12);
            }
        }
    }
}
