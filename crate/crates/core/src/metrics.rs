//! Full-reference quality metrics.
//!
//! SSIM is single-scale on the per-pixel channel mean, with an 11x11
//! Gaussian window (sigma 1.5), `C1 = 0.01^2`, `C2 = 0.03^2`, evaluated at
//! every fully contained window position and averaged.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::imaging::FloatImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("images differ in shape: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("{height}x{width} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { height: usize, width: usize },
    #[error("no images to aggregate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn same_shape(a: &FloatImage, b: &FloatImage) -> Result<()> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch {
            left: a.dims(),
            right: b.dims(),
        })
    }
}

pub fn mse(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` in decibels; `+inf` for identical images.
pub fn psnr(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn gray(image: &FloatImage) -> Vec<f64> {
    image.luminance()
}

pub fn ssim(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    same_shape(a, b)?;
    let (_, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall { height: h, width: w });
    }
    let taps = gaussian_taps();
    let ga = gray(a);
    let gb = gray(b);
    let aa: Vec<f64> = ga.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&ga, h, w, &taps);
    let mu_b = filter_valid(&gb, h, w, &taps);
    let e_aa = filter_valid(&aa, h, w, &taps);
    let e_bb = filter_valid(&bb, h, w, &taps);
    let e_ab = filter_valid(&ab, h, w, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub path: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores plus their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = rows.len() as f64;
        let mean_psnr_db = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Ok(Self {
            rows,
            mean_psnr_db,
            mean_ssim,
        })
    }

    /// `path,psnr_db,ssim` with one row per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", csv_field(&r.path), r.psnr_db, r.ssim);
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> FloatImage {
        let mut data = Vec::with_capacity(3 * h * w);
        for _ in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(y, x));
                }
            }
        }
        FloatImage::new(3, h, w, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = img(8, 8, |y, x| ((y * 8 + x) as f32) / 100.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-5, "{p}");
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = img(8, 9, |_, _| 0.0);
        assert!(matches!(psnr(&a, &c), Err(MetricsError::ShapeMismatch { .. })));
    }

    #[test]
    fn ssim_examples() {
        let a = img(32, 32, |y, x| ((y * 7 + x * 3) % 17) as f32 / 16.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let b = a.map(|v| (v * 0.8 + 0.05).min(1.0));
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 1.0);
        let small = img(10, 40, |_, _| 0.5);
        assert!(matches!(ssim(&small, &small), Err(MetricsError::TooSmall { .. })));
    }

    #[test]
    fn report_and_csv() {
        let rows = vec![
            MetricRow {
                path: "a.png".into(),
                psnr_db: 20.0,
                ssim: 0.5,
            },
            MetricRow {
                path: "b,c.png".into(),
                psnr_db: 30.0,
                ssim: 0.7,
            },
        ];
        let r = MetricReport::from_rows(rows).unwrap();
        assert_eq!(r.mean_psnr_db, 25.0);
        assert!((r.mean_ssim - 0.6).abs() < 1e-12);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("path,psnr_db,ssim\n"));
        assert!(csv.contains("\"b,c.png\",30,0.7"));
        assert!(MetricReport::from_rows(vec![]).is_err());
    }
}
