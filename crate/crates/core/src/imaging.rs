//! Image containers, bit-depth conversion, resampling and RL state construction.
//!
//! Images are stored planar (channel-major): the value of channel `c` at row
//! `y`, column `x` lives at `data[(c * height + y) * width + x]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image file not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported PNG color type or depth: {0}")]
    UnsupportedColorType(String),
    #[error("failed to decode PNG: {0}")]
    Decode(String),
    #[error("failed to encode PNG: {0}")]
    Encode(String),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Largest level representable at `bit_depth`.
pub fn max_level(bit_depth: u32) -> u32 {
    (1u32 << bit_depth) - 1
}

/// Normalized value of an integer level. Shared by image conversion and the
/// identity LUT so both produce identical floats.
#[inline]
pub fn level_to_unit(level: u32, bit_depth: u32) -> f32 {
    (f64::from(level) / f64::from(max_level(bit_depth))) as f32
}

/// Round-half-away-from-zero quantization, clamped to the valid level range.
#[inline]
pub fn unit_to_level(value: f32, bit_depth: u32) -> u16 {
    let max = f64::from(max_level(bit_depth));
    let v = f64::from(value);
    if v.is_nan() {
        return 0;
    }
    (v * max).round().clamp(0.0, max) as u16
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ImagingError::InvalidDimensions(format!(
                "{channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(ImagingError::InvalidDimensions(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Same shape, every value passed through `f`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> FloatImage {
        FloatImage {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Per-pixel luminance `(R + G + B) / 3`, or the single plane for grayscale.
    pub fn luminance(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0f64; n];
        for c in 0..self.channels {
            for (o, &v) in out.iter_mut().zip(self.plane(c)) {
                *o += f64::from(v);
            }
        }
        let inv = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    pub fn mean_luminance(&self) -> f64 {
        let lum = self.luminance();
        lum.iter().sum::<f64>() / lum.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    channels: usize,
    height: usize,
    width: usize,
    bit_depth: u32,
    data: Vec<u16>,
}

impl QuantizedImage {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        bit_depth: u32,
        data: Vec<u16>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ImagingError::InvalidDimensions(format!(
                "{channels}x{height}x{width}"
            )));
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(ImagingError::InvalidDimensions(format!(
                "bit depth {bit_depth} outside 1..=16"
            )));
        }
        if data.len() != channels * height * width {
            return Err(ImagingError::InvalidDimensions(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        let max = max_level(bit_depth);
        if let Some(&bad) = data.iter().find(|&&v| u32::from(v) > max) {
            return Err(ImagingError::InvalidDimensions(format!(
                "level {bad} exceeds {max} at {bit_depth} bits"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            bit_depth,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }
}

pub fn to_float(image: &QuantizedImage) -> FloatImage {
    let depth = image.bit_depth;
    // Levels repeat heavily; a per-depth table avoids a division per value.
    let table: Vec<f32> = (0..=max_level(depth))
        .map(|l| level_to_unit(l, depth))
        .collect();
    FloatImage {
        channels: image.channels,
        height: image.height,
        width: image.width,
        data: image.data.iter().map(|&l| table[l as usize]).collect(),
    }
}

pub fn quantize(image: &FloatImage, bit_depth: u32) -> QuantizedImage {
    assert!((1..=16).contains(&bit_depth), "bit depth {bit_depth} outside 1..=16");
    QuantizedImage {
        channels: image.channels,
        height: image.height,
        width: image.width,
        bit_depth,
        data: image
            .data
            .iter()
            .map(|&v| unit_to_level(v, bit_depth))
            .collect(),
    }
}

/// Reads an 8-bit PNG. Grayscale is replicated to three channels, alpha is
/// dropped, palettes and sub-byte depths are expanded.
pub fn load_image(path: impl AsRef<Path>) -> Result<QuantizedImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImagingError::NotFound(path.display().to_string()),
        _ => ImagingError::Io {
            path: path.display().to_string(),
            source: e,
        },
    })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(ImagingError::UnsupportedColorType(format!(
            "{color:?} at {depth:?} bits (only 8-bit is supported)"
        )));
    }
    let src_channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(ImagingError::UnsupportedColorType(format!("{other:?}")));
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImagingError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let plane = width * height;
    let mut data = vec![0u16; 3 * plane];
    for y in 0..height {
        let row = &buf[y * stride..y * stride + width * src_channels];
        for x in 0..width {
            let px = &row[x * src_channels..(x + 1) * src_channels];
            let (r, g, b) = if src_channels < 3 {
                (px[0], px[0], px[0])
            } else {
                (px[0], px[1], px[2])
            };
            let i = y * width + x;
            data[i] = u16::from(r);
            data[plane + i] = u16::from(g);
            data[2 * plane + i] = u16::from(b);
        }
    }
    QuantizedImage::new(3, height, width, 8, data)
}

/// Writes an 8-bit grayscale (1 channel) or RGB (3 channel) PNG.
pub fn save_image(path: impl AsRef<Path>, image: &QuantizedImage) -> Result<()> {
    let path = path.as_ref();
    if image.bit_depth != 8 {
        return Err(ImagingError::UnsupportedColorType(format!(
            "cannot write {}-bit images",
            image.bit_depth
        )));
    }
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(ImagingError::UnsupportedColorType(format!(
                "cannot write {c}-channel images"
            )))
        }
    };
    let io_err = |source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width as u32,
        image.height as u32,
    );
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    let plane = image.width * image.height;
    let mut bytes = Vec::with_capacity(plane * image.channels);
    for i in 0..plane {
        for c in 0..image.channels {
            bytes.push(image.data[c * plane + i] as u8);
        }
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    writer
        .finish()
        .map_err(|e| ImagingError::Encode(e.to_string()))
}

/// Encodes to an in-memory PNG (used by the remote reward transport).
pub fn encode_png(image: &QuantizedImage) -> Result<Vec<u8>> {
    if image.bit_depth != 8 || image.channels != 3 {
        return Err(ImagingError::UnsupportedColorType(format!(
            "in-memory encoding expects 8-bit RGB, got {} channels at {} bits",
            image.channels, image.bit_depth
        )));
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
        let plane = image.width * image.height;
        let mut bytes = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                bytes.push(image.data[c * plane + i] as u8);
            }
        }
        writer
            .write_image_data(&bytes)
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
    }
    Ok(out)
}

/// Source taps `(index, weight)` for one output coordinate of an area resample.
/// Weights are normalized to sum to one.
fn area_taps(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(in_len);
            let mut taps = Vec::with_capacity(last - first);
            for i in first..last {
                let lo = start.max(i as f64);
                let hi = end.min((i + 1) as f64);
                if hi > lo {
                    taps.push((i, (hi - lo) / scale));
                }
            }
            taps
        })
        .collect()
}

/// Area-average resample: each output pixel is the mean of the input
/// rectangle it covers (fractional coverage weighted).
pub fn downsample(image: &FloatImage, out_h: usize, out_w: usize) -> Result<FloatImage> {
    let (c, h, w) = image.dims();
    if (h, w) == (out_h, out_w) && out_h > 0 && out_w > 0 {
        return Ok(image.clone());
    }
    area_resample(&image.data, (c, h, w), |v| f64::from(v), out_h, out_w)
}

/// [`downsample`] of [`to_float`]`(image)`, without materializing the float
/// copy. Results are identical.
pub fn downsample_quantized(image: &QuantizedImage, out_h: usize, out_w: usize) -> Result<FloatImage> {
    let (c, h, w) = image.dims();
    if (h, w) == (out_h, out_w) && out_h > 0 && out_w > 0 {
        return Ok(to_float(image));
    }
    let depth = image.bit_depth;
    let table: Vec<f64> = (0..=max_level(depth))
        .map(|l| f64::from(level_to_unit(l, depth)))
        .collect();
    area_resample(&image.data, (c, h, w), |l| table[l as usize], out_h, out_w)
}

fn area_resample<V: Copy>(
    data: &[V],
    (c, h, w): (usize, usize, usize),
    value: impl Fn(V) -> f64,
    out_h: usize,
    out_w: usize,
) -> Result<FloatImage> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::InvalidDimensions(format!(
            "target size {out_h}x{out_w}"
        )));
    }
    let col_taps = area_taps(w, out_w);
    let row_taps = area_taps(h, out_h);
    let mut out = vec![0f32; c * out_h * out_w];
    let mut row_acc = vec![0f64; out_w];
    let mut horiz = vec![0f64; h * out_w];
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        // Horizontal pass for every input row, then the vertical weights.
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            let dst = &mut horiz[y * out_w..(y + 1) * out_w];
            for (d, taps) in dst.iter_mut().zip(&col_taps) {
                *d = taps.iter().map(|&(i, wt)| value(src[i]) * wt).sum();
            }
        }
        for (oy, taps) in row_taps.iter().enumerate() {
            row_acc.iter_mut().for_each(|v| *v = 0.0);
            for &(y, wt) in taps {
                let src = &horiz[y * out_w..(y + 1) * out_w];
                for (a, &s) in row_acc.iter_mut().zip(src) {
                    *a += s * wt;
                }
            }
            let dst = &mut out[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
            for (d, &a) in dst.iter_mut().zip(&row_acc) {
                *d = a as f32;
            }
        }
    }
    FloatImage::new(c, out_h, out_w, out)
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(image: &FloatImage, out_h: usize, out_w: usize) -> Result<FloatImage> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::InvalidDimensions(format!(
            "target size {out_h}x{out_w}"
        )));
    }
    let (c, h, w) = image.dims();
    let coords = |in_len: usize, out_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = coords(h, out_h);
    let xs = coords(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = image.plane(ch);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    FloatImage::new(c, out_h, out_w, out)
}

/// Centered `out_h x out_w` window. Images smaller than the window along
/// either axis are first upscaled bilinearly (aspect preserved) until both
/// sides cover it.
pub fn center_crop(image: &FloatImage, out_h: usize, out_w: usize) -> Result<FloatImage> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::InvalidDimensions(format!(
            "crop size {out_h}x{out_w}"
        )));
    }
    let (_, h, w) = image.dims();
    if h < out_h || w < out_w {
        let scale = (out_h as f64 / h as f64).max(out_w as f64 / w as f64);
        let new_h = ((h as f64 * scale).ceil() as usize).max(out_h);
        let new_w = ((w as f64 * scale).ceil() as usize).max(out_w);
        let resized = resize_bilinear(image, new_h, new_w)?;
        return center_crop(&resized, out_h, out_w);
    }
    let (c, h, w) = image.dims();
    let top = (h - out_h) / 2;
    let left = (w - out_w) / 2;
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = image.plane(ch);
        for y in top..top + out_h {
            out.extend_from_slice(&p[y * w + left..y * w + left + out_w]);
        }
    }
    FloatImage::new(c, out_h, out_w, out)
}

/// RL observation: the downsampled current image and its temporal
/// difference, concatenated along channels (`x` first, `v` second).
///
/// The difference is kept implicit as the previous frame and derived on
/// demand, so consecutive states of an episode share their frames.
#[derive(Debug, Clone)]
pub struct ImageState {
    x: Arc<FloatImage>,
    prev: Option<Arc<FloatImage>>,
}

impl ImageState {
    pub fn x(&self) -> &FloatImage {
        &self.x
    }

    pub fn x_shared(&self) -> Arc<FloatImage> {
        Arc::clone(&self.x)
    }

    pub fn prev(&self) -> Option<&FloatImage> {
        self.prev.as_deref()
    }

    /// `v = x_t - x_{t-1}`, all zeros when there is no previous frame.
    pub fn v(&self) -> FloatImage {
        let (c, h, w) = self.x.dims();
        let data = match &self.prev {
            None => vec![0.0; c * h * w],
            Some(p) => self
                .x
                .data()
                .iter()
                .zip(p.data())
                .map(|(&a, &b)| a - b)
                .collect(),
        };
        FloatImage {
            channels: c,
            height: h,
            width: w,
            data,
        }
    }

    /// Channel count of the combined tensor (always `2C`).
    pub fn channels(&self) -> usize {
        2 * self.x.channels()
    }

    /// Height and width of the state planes.
    pub fn spatial(&self) -> (usize, usize) {
        (self.x.height(), self.x.width())
    }

    pub fn len(&self) -> usize {
        2 * self.x.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.data().is_empty()
    }

    /// Writes the `2C x h x w` combined tensor into `out`.
    pub fn write_combined(&self, out: &mut [f32]) {
        let n = self.x.data().len();
        assert_eq!(out.len(), 2 * n, "state buffer has the wrong length");
        let (xs, vs) = out.split_at_mut(n);
        xs.copy_from_slice(self.x.data());
        match &self.prev {
            None => vs.iter_mut().for_each(|v| *v = 0.0),
            Some(p) => {
                for ((v, &a), &b) in vs.iter_mut().zip(self.x.data()).zip(p.data()) {
                    *v = a - b;
                }
            }
        }
    }

    pub fn combined(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.len()];
        self.write_combined(&mut out);
        out
    }
}

pub fn build_state(x_t: &FloatImage, x_prev: Option<&FloatImage>) -> Result<ImageState> {
    build_state_shared(
        Arc::new(x_t.clone()),
        x_prev.map(|p| Arc::new(p.clone())),
    )
}

/// Like [`build_state`] but reuses already shared frames.
pub fn build_state_shared(
    x_t: Arc<FloatImage>,
    x_prev: Option<Arc<FloatImage>>,
) -> Result<ImageState> {
    if let Some(p) = &x_prev {
        if p.dims() != x_t.dims() {
            return Err(ImagingError::ShapeMismatch {
                left: x_t.dims(),
                right: p.dims(),
            });
        }
    }
    Ok(ImageState {
        x: x_t,
        prev: x_prev,
    })
}
